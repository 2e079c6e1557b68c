"""Probe-point generation, ground-truth labeling and the binary sample file."""

import logging
import os
import struct
from dataclasses import dataclass
from typing import Any, Tuple

import numpy as np

from .errors import MeshIOError, ParseError
from .fields import JointFieldSample, Target, compose
from .fracture import ShapeTuple
from .geometry import BOUNDARY_EPS, PADDED_HALF_EXTENT

logger = logging.getLogger(__name__)

SAMPLE_MAGIC = b"DJSAMP1"
SDF_CLAMP = 0.1
SHAPE_KEYS = ("c", "b", "f", "r")
SAMPLE_DTYPE = np.dtype(
    [("pos", "<f4", (3,))]
    + [field for key in SHAPE_KEYS
       for field in ((f"{key}_occ", "u1"), (f"{key}_sdf", "<f4"), (f"{key}_nf", "<f4", (3,)))]
)


@dataclass
class ProbeSet:
    """Probe points with C/B/F/R labels stored as packed little-endian records."""

    records: np.ndarray

    def __post_init__(self):
        if self.records.dtype != SAMPLE_DTYPE:
            raise ValueError(f"ProbeSet records must have dtype {SAMPLE_DTYPE}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def points(self) -> np.ndarray:
        return self.records["pos"].astype(np.float64)

    def label(self, key: str) -> JointFieldSample:
        """Labels of one shape: ``"c"``, ``"b"``, ``"f"`` or ``"r"``."""
        if key not in SHAPE_KEYS:
            raise KeyError(f"Unknown shape key {key!r}; expected one of {SHAPE_KEYS}")
        return JointFieldSample(
            self.records[f"{key}_occ"].astype(np.float64),
            self.records[f"{key}_sdf"].astype(np.float64),
            self.records[f"{key}_nf"].astype(np.float64),
        )

    def subset(self, index: Any) -> "ProbeSet":
        return ProbeSet(self.records[index])

    def to_bytes(self) -> bytes:
        return SAMPLE_MAGIC + struct.pack("<I", len(self.records)) + self.records.tobytes()


def sample_points(tuple_: ShapeTuple, n_total: int, surface_fraction: float = 0.9,
                  noise_sigmas: Tuple[float, float] = (0.012, 0.0025), seed: Any = 0,
                  ) -> np.ndarray:
    """Near-surface and uniform probe points for one ShapeTuple.

    ``surface_fraction`` of the points start on surfaces: half on the fractured
    mesh, half on break-surface samples inside the complete shape (all on the
    fractured mesh when there are none). The first half of the surface points
    gets Gaussian noise ``sigma1``, the rest ``sigma2``. The remainder is
    uniform in the padded cube.
    """
    if n_total <= 0:
        raise ValueError(f"n_total must be positive, got {n_total}")
    if not 0 <= surface_fraction <= 1:
        raise ValueError(f"surface_fraction must lie in [0, 1], got {surface_fraction}")
    rng = np.random.default_rng(seed)
    n_surface = int(round(n_total * surface_fraction))
    n_uniform = n_total - n_surface

    chunks = []
    if n_surface:
        fracture_points = tuple_.fracture_surface[0]
        if len(fracture_points):
            fracture_points = fracture_points[tuple_.complete.sdf(fracture_points) < 0]
        n_break = n_surface // 2 if len(fracture_points) else 0
        mesh_points, _ = tuple_.fractured_mesh.sample_surface(
            n_surface - n_break, seed=int(rng.integers(2**31))
        )
        break_points = fracture_points[rng.integers(len(fracture_points), size=n_break)] \
            if n_break else np.zeros((0, 3))
        surface = np.concatenate([mesh_points, break_points])
        surface = surface[rng.permutation(len(surface))]
        half = n_surface // 2
        sigma1, sigma2 = noise_sigmas
        surface[:half] += rng.normal(scale=sigma1, size=(half, 3)) if sigma1 > 0 else 0.0
        surface[half:] += rng.normal(scale=sigma2, size=(n_surface - half, 3)) if sigma2 > 0 else 0.0
        chunks.append(surface)
    chunks.append(rng.uniform(-PADDED_HALF_EXTENT, PADDED_HALF_EXTENT, size=(n_uniform, 3)))
    return np.clip(np.concatenate(chunks), -PADDED_HALF_EXTENT, PADDED_HALF_EXTENT)


def _stored(sample: JointFieldSample) -> JointFieldSample:
    occ = np.where(np.abs(sample.sdf) < BOUNDARY_EPS, 0.0, sample.occ)
    sdf = np.clip(sample.sdf, -SDF_CLAMP, SDF_CLAMP).astype(np.float32)
    return JointFieldSample(occ.astype(np.uint8), sdf, sample.nf.astype(np.float32))


def label_points(tuple_: ShapeTuple, points: Any) -> ProbeSet:
    """Ground-truth C/B/F/R labels at ``points``.

    C, F and R come from the complete field and its primitive cuts, B from the
    fitted break field. Boundary points (|sdf| < 1e-9) get occupancy 0 and
    SDFs are clamped to ±0.1.
    """
    pts = np.asarray(points, dtype=np.float32).astype(np.float64).reshape(-1, 3)
    labels = {
        "c": _stored(tuple_.complete(pts)),
        "b": _stored(tuple_.break_shape(pts)),
        "f": _stored(tuple_.fractured(pts)),
        "r": _stored(tuple_.restoration(pts)),
    }
    records = np.zeros(len(pts), dtype=SAMPLE_DTYPE)
    records["pos"] = pts.astype(np.float32)
    for key, sample in labels.items():
        records[f"{key}_occ"] = sample.occ.astype(np.uint8)
        records[f"{key}_sdf"] = sample.sdf.astype(np.float32)
        records[f"{key}_nf"] = sample.nf.astype(np.float32)
    return ProbeSet(records)


def label_agreement(probes: ProbeSet, eps: float = 1e-3) -> float:
    """Share of off-surface probes whose F/R occupancies recombine from the C/B labels.

    A probe counts when its C, F and R labels are all farther than ``eps``
    from their surfaces.
    """
    c, b, f, r = (probes.label(key) for key in SHAPE_KEYS)
    clear = (np.abs(c.sdf) > eps) & (np.abs(f.sdf) > eps) & (np.abs(r.sdf) > eps)
    if not clear.any():
        return 1.0
    agree = (compose(c, b, Target.FRACTURED).occ == f.occ) & \
        (compose(c, b, Target.RESTORATION).occ == r.occ)
    return float(np.mean(agree[clear]))


def write_samples(path: str, probes: ProbeSet) -> None:
    try:
        directory = os.path.dirname(str(path))
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as handle:
            handle.write(probes.to_bytes())
    except OSError as e:
        raise MeshIOError(f"Cannot write sample file {path}: {e}") from e


def read_samples(path: str) -> ProbeSet:
    """Read a sample file written by :func:`write_samples`.

    Raises:
        ParseError: Bad magic or a size that does not match the record count.
    """
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as e:
        raise MeshIOError(f"Cannot read sample file {path}: {e}") from e
    header = len(SAMPLE_MAGIC) + 4
    if len(data) < header or not data.startswith(SAMPLE_MAGIC):
        raise ParseError("not a sample file (bad magic)", path=str(path), offset=0)
    (count,) = struct.unpack_from("<I", data, len(SAMPLE_MAGIC))
    expected = header + count * SAMPLE_DTYPE.itemsize
    if len(data) != expected:
        raise ParseError(
            f"sample file holds {len(data)} bytes, expected {expected} for {count} records",
            path=str(path), offset=len(SAMPLE_MAGIC),
        )
    records = np.frombuffer(data, dtype=SAMPLE_DTYPE, count=count, offset=header).copy()
    return ProbeSet(records)
