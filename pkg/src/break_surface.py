"""Thin-plate-spline break surfaces and the break-shape field they induce.

The surface is a height field ``h(u, v)`` over a least-squares plane fitted
to the fracture region. The side function ``g(p) = (p - o) . w - h(u, v)``
is positive on the restoration side; the break shape B is ``g < 0`` clipped
to the padded unit cube.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import DegenerateInputError, EmptySurfaceError
from .fields import JointFieldSample, Provenance, ShapeField
from .geometry import (
    BOUNDARY_EPS,
    PADDED_HALF_EXTENT,
    as_points,
    cube_primitive,
    normalize_vectors,
    primitive_field,
)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_TPS = 1e-6
MAX_CONTROL_POINTS = 400
SURFACE_GRID = 200
SURFACE_HALF_SPAN = 1.04
_EVAL_CHUNK = 4096


def tps_kernel(r: np.ndarray) -> np.ndarray:
    """``U(r) = r^2 log r`` with ``U(0) = 0``."""
    r = np.asarray(r, dtype=np.float64)
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, r * r * np.log(safe), 0.0)


@dataclass
class BreakSurface:
    """Fitted base plane plus thin-plate-spline height field.

    Attributes:
        origin: Plane origin (centroid of the fitted points).
        frame: Rows ``u, v, w``; right-handed orthonormal, ``w`` the plane normal
            pointing to the restoration side.
        control_uv: ``(K, 2)`` control point plane coordinates.
        control_heights: ``(K,)`` heights along ``w`` at the control points.
        weights: ``(K,)`` kernel coefficients.
        affine: ``(a0, a1, a2)`` for ``a0 + a1 u + a2 v``.
        lambda_tps: Ridge regularization used in the fit.
    """

    origin: np.ndarray
    frame: np.ndarray
    control_uv: np.ndarray
    control_heights: np.ndarray
    weights: np.ndarray
    affine: np.ndarray
    lambda_tps: float = DEFAULT_LAMBDA_TPS

    @property
    def normal(self) -> np.ndarray:
        return self.frame[2]

    def plane_coords(self, points: Any) -> np.ndarray:
        """``(N, 3)`` coordinates ``(u, v, height above plane)`` of world points."""
        return (as_points(points) - self.origin) @ self.frame.T

    def height(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        out = np.empty(len(uv))
        for start in range(0, len(uv), _EVAL_CHUNK):
            chunk = uv[start:start + _EVAL_CHUNK]
            kernel = tps_kernel(cdist(chunk, self.control_uv))
            out[start:start + _EVAL_CHUNK] = (
                self.affine[0] + chunk @ self.affine[1:] + kernel @ self.weights
            )
        return out

    def height_gradient(self, uv: np.ndarray) -> np.ndarray:
        """``(N, 2)`` partial derivatives ``(dh/du, dh/dv)``."""
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        out = np.empty((len(uv), 2))
        for start in range(0, len(uv), _EVAL_CHUNK):
            chunk = uv[start:start + _EVAL_CHUNK]
            diff = chunk[:, None, :] - self.control_uv[None, :, :]
            r = np.linalg.norm(diff, axis=2)
            # dU/dx = (2 log r + 1) * (x - c), zero at r = 0
            factor = np.where(r > 0, 2.0 * np.log(np.where(r > 0, r, 1.0)) + 1.0, 0.0)
            out[start:start + _EVAL_CHUNK] = self.affine[1:] + np.einsum(
                "nk,nkd,k->nd", factor, diff, self.weights
            )
        return out

    def side(self, points: Any) -> np.ndarray:
        """Side function g: positive on the restoration side, negative on the fractured side."""
        local = self.plane_coords(points)
        return local[:, 2] - self.height(local[:, :2])

    def surface_normals(self, uv: np.ndarray) -> np.ndarray:
        grad = self.height_gradient(uv)
        normals = self.frame[2] - grad[:, :1] * self.frame[0] - grad[:, 1:] * self.frame[1]
        return normalize_vectors(normals)

    def sample_surface(self, grid: int = SURFACE_GRID, half_span: float = SURFACE_HALF_SPAN,
                       bound: float = PADDED_HALF_EXTENT) -> Tuple[np.ndarray, np.ndarray]:
        """Dense surface points and normals clipped to the padded cube.

        The ``grid`` x ``grid`` parameter lattice is centred on the projection
        of the cube centre onto the plane.
        """
        centre = -self.origin @ self.frame[:2].T
        axis = np.linspace(-half_span, half_span, grid)
        uu, vv = np.meshgrid(axis + centre[0], axis + centre[1], indexing="ij")
        uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
        heights = self.height(uv)
        points = self.origin + uv @ self.frame[:2] + heights[:, None] * self.frame[2]
        keep = np.all(np.abs(points) <= bound, axis=1)
        return points[keep], self.surface_normals(uv[keep])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "origin": self.origin.tolist(),
            "frame": self.frame.tolist(),
            "control_uv": self.control_uv.tolist(),
            "control_heights": self.control_heights.tolist(),
            "weights": self.weights.tolist(),
            "affine": self.affine.tolist(),
            "lambda_tps": self.lambda_tps,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BreakSurface":
        return cls(
            origin=np.asarray(data["origin"], dtype=np.float64),
            frame=np.asarray(data["frame"], dtype=np.float64),
            control_uv=np.asarray(data["control_uv"], dtype=np.float64).reshape(-1, 2),
            control_heights=np.asarray(data["control_heights"], dtype=np.float64),
            weights=np.asarray(data["weights"], dtype=np.float64),
            affine=np.asarray(data["affine"], dtype=np.float64),
            lambda_tps=float(data["lambda_tps"]),
        )


def fit_break_surface(points: Any, lambda_tps: float = DEFAULT_LAMBDA_TPS,
                      restoration_reference: Optional[np.ndarray] = None,
                      max_control_points: int = MAX_CONTROL_POINTS,
                      seed: int = 0) -> BreakSurface:
    """Fit a plane to fracture-region points and a TPS height field over it.

    The plane normal is the smallest principal direction, flipped to point
    toward ``restoration_reference`` when one is given. With more than
    ``max_control_points`` points a seeded subsample is used.

    Raises:
        DegenerateInputError: Fewer than 4 points, or collinear points.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise DegenerateInputError(f"Break surface fit needs at least 4 points, got {len(pts)}")
    origin = pts.mean(axis=0)
    _, singular, vt = np.linalg.svd(pts - origin, full_matrices=False)
    if singular[0] <= 1e-12 or singular[1] <= 1e-9 * singular[0]:
        raise DegenerateInputError(
            f"Break surface fit points are collinear (singular values {singular.tolist()})"
        )
    u, w = vt[0], vt[2]
    if restoration_reference is not None and np.dot(np.asarray(restoration_reference) - origin, w) < 0:
        w = -w
    v = np.cross(w, u)
    frame = np.stack([u, v, w])

    if len(pts) > max_control_points:
        rng = np.random.default_rng(seed)
        pts = pts[np.sort(rng.choice(len(pts), size=max_control_points, replace=False))]
    local = (pts - origin) @ frame.T
    _, unique_index = np.unique(np.round(local[:, :2], 12), axis=0, return_index=True)
    local = local[np.sort(unique_index)]
    uv, heights = local[:, :2], local[:, 2]

    n = len(uv)
    basis = np.hstack([np.ones((n, 1)), uv])
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = tps_kernel(cdist(uv, uv)) + lambda_tps * np.eye(n)
    system[:n, n:] = basis
    system[n:, :n] = basis.T
    rhs = np.concatenate([heights, np.zeros(3)])
    try:
        solution = linalg.solve(system, rhs)
    except linalg.LinAlgError as e:
        raise DegenerateInputError(f"Thin-plate spline system is singular: {e}") from e

    logger.debug("Fitted break surface over %d control points", n)
    return BreakSurface(
        origin=origin,
        frame=frame,
        control_uv=uv,
        control_heights=heights,
        weights=solution[:n],
        affine=solution[n:],
        lambda_tps=float(lambda_tps),
    )


class BreakField:
    """Break-shape field: SDF to dense break-surface samples, signed by the side function.

    The break shape is intersected with the padded cube, so outside the cube
    the cube's SDF and normal take over.
    """

    def __init__(self, surface: BreakSurface, samples: Optional[np.ndarray] = None,
                 normals: Optional[np.ndarray] = None, bound: float = PADDED_HALF_EXTENT):
        if samples is None:
            samples, normals = surface.sample_surface(bound=bound)
        samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
        if len(samples) == 0:
            raise EmptySurfaceError("Break field needs at least one fracture-surface sample")
        self.surface = surface
        self.samples = samples
        self.normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        self.cube = cube_primitive(bound)
        self._tree = cKDTree(samples)

    def evaluate(self, points: Any) -> JointFieldSample:
        pts = as_points(points)
        dist, index = self._tree.query(pts)
        g = self.surface.side(pts)
        sdf = np.where(g < 0, -dist, dist)
        nf = self.normals[index]
        _, cube_sdf, cube_nf = primitive_field(self.cube, pts)
        clip = cube_sdf > sdf
        sdf = np.where(clip, cube_sdf, sdf)
        nf = np.where(clip[:, None], cube_nf, nf)
        occ = ((sdf < 0) & (np.abs(sdf) > BOUNDARY_EPS)).astype(np.float64)
        return JointFieldSample(occ, sdf, nf)

    def shape(self) -> ShapeField:
        return ShapeField(self.evaluate, Provenance.ANALYTIC, "break")


def break_field(surface: BreakSurface, fracture_surface: Tuple[np.ndarray, np.ndarray],
                points: Any) -> JointFieldSample:
    """Evaluate the break shape of ``surface`` given its ``(points, normals)`` samples.

    Raises:
        EmptySurfaceError: If no samples are given.
    """
    samples, normals = fracture_surface
    return BreakField(surface, samples, normals).evaluate(points)
