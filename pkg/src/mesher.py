"""Iso-surface extraction of scalar fields over the padded unit cube."""

import logging
from typing import Callable

import numpy as np
from skimage import measure
from tqdm.auto import tqdm

from .geometry import PADDED_HALF_EXTENT, TriangleMesh

logger = logging.getLogger(__name__)

ScalarField = Callable[[np.ndarray], np.ndarray]


def cell_size(resolution: int, bound: float = PADDED_HALF_EXTENT) -> float:
    """Spacing between grid samples for a ``resolution``^3 grid over [-bound, bound]^3."""
    return 2.0 * bound / (resolution - 1)


def grid_axis(resolution: int, bound: float = PADDED_HALF_EXTENT) -> np.ndarray:
    return np.linspace(-bound, bound, resolution)


def evaluate_grid(field: ScalarField, resolution: int, bound: float = PADDED_HALF_EXTENT,
                  progress: bool = False) -> np.ndarray:
    """Sample ``field`` on a regular grid, one x-slab per call."""
    axis = grid_axis(resolution, bound)
    yy, zz = np.meshgrid(axis, axis, indexing="ij")
    slab = np.stack([np.zeros(yy.size), yy.ravel(), zz.ravel()], axis=1)
    volume = np.empty((resolution, resolution, resolution), dtype=np.float64)
    for i in tqdm(range(resolution), desc="grid", unit="slab", disable=not progress, leave=False):
        slab[:, 0] = axis[i]
        volume[i] = np.asarray(field(slab), dtype=np.float64).reshape(resolution, resolution)
    return volume


def marching_cubes(field: ScalarField, resolution: int, iso: float = 0.0,
                   bound: float = PADDED_HALF_EXTENT, progress: bool = False) -> TriangleMesh:
    """Triangle mesh of the ``iso`` level set of ``field`` over [-bound, bound]^3.

    Faces are oriented so normals point toward increasing field values
    (outward for an SDF). A field with uniform sign relative to ``iso`` yields
    an empty mesh. The volume is padded with one outside layer so the result
    stays closed even when the level set reaches the grid boundary.

    Args:
        field: Vectorized scalar field ``(N, 3) -> (N,)``.
        resolution: Grid samples per axis (>= 2).
        iso: Level to extract.
        bound: Half extent of the sampled cube.
        progress: Show a progress bar while sampling.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    volume = evaluate_grid(field, resolution, bound, progress=progress)
    if not np.all(np.isfinite(volume)):
        raise ValueError("Field is not finite on the extraction grid")
    return mesh_from_volume(volume, bound, iso)


def mesh_from_volume(volume: np.ndarray, bound: float = PADDED_HALF_EXTENT,
                     iso: float = 0.0) -> TriangleMesh:
    """Extract the ``iso`` level set of a pre-sampled cubic volume."""
    if volume.min() >= iso or volume.max() <= iso:
        return TriangleMesh.empty()
    resolution = volume.shape[0]
    cell = cell_size(resolution, bound)
    outside = max(abs(volume.max()), abs(iso)) + 1.0
    padded = np.pad(volume, 1, mode="constant", constant_values=iso + outside)

    verts, faces, _, _ = measure.marching_cubes(
        padded, level=iso, spacing=(cell, cell, cell), allow_degenerate=False
    )
    verts = verts - (bound + cell)
    mesh = TriangleMesh(verts, faces).cleaned(area_eps=0.0)
    if mesh.is_empty:
        return mesh
    return _orient_outward(mesh, padded, bound + cell, cell)


def _orient_outward(mesh: TriangleMesh, padded: np.ndarray, origin: float,
                    cell: float) -> TriangleMesh:
    gradient = np.stack(np.gradient(padded, cell), axis=-1)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    index = np.clip(np.rint((centroids + origin) / cell).astype(int), 0, padded.shape[0] - 1)
    grad_at = gradient[index[:, 0], index[:, 1], index[:, 2]]
    agreement = np.einsum("ij,ij->i", mesh.face_normals(), grad_at).sum()
    if agreement < 0:
        return TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1].copy())
    return mesh
