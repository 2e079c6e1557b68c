"""Synthetic fracturing: primitive cuts, the retention test and ShapeTuple assembly."""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .break_surface import DEFAULT_LAMBDA_TPS, BreakField, BreakSurface, fit_break_surface
from .errors import DegenerateInputError, EmptySurfaceError
from .fields import ShapeField, Target, boolean_shape, compose_occupancy, primitive_shape
from .geometry import (
    AnalyticPrimitive,
    TriangleMesh,
    normalize_vectors,
    random_rotation,
)
from .mesher import marching_cubes

logger = logging.getLogger(__name__)

CUTTER_KINDS = ("sphere", "box", "half-space")


def frame_from_normal(normal: np.ndarray) -> np.ndarray:
    """Rotation whose third column is ``normal``."""
    n = normalize_vectors(np.asarray(normal, dtype=np.float64).reshape(1, 3))[0]
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    a = np.cross(helper, n)
    a /= np.linalg.norm(a)
    b = np.cross(n, a)
    return np.stack([a, b, n], axis=1)


@dataclass
class FracturePrimitiveSpec:
    """Distribution of cutting primitives.

    Attributes:
        kinds: Primitive kinds to draw from.
        kind_weights: Optional probabilities for ``kinds`` (uniform when None).
        scale_range: Range of radii / half extents / cut depths.
        seed: Base seed; attempt ``k`` of shape ``i`` uses ``(seed, i, k)``.
        fixed: When set, every attempt uses this primitive.
    """

    kinds: Tuple[str, ...] = CUTTER_KINDS
    kind_weights: Optional[Tuple[float, ...]] = None
    scale_range: Tuple[float, float] = (0.15, 0.45)
    seed: int = 0
    fixed: Optional[AnalyticPrimitive] = None

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        unknown = [k for k in self.kinds if k not in CUTTER_KINDS]
        if unknown or not self.kinds:
            raise ValueError(f"Cutter kinds must be a non-empty subset of {CUTTER_KINDS}, got {self.kinds}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.kind_weights is not None:
            weights = np.asarray(self.kind_weights, dtype=np.float64)
            if len(weights) != len(self.kinds) or np.any(weights < 0) or weights.sum() <= 0:
                raise ValueError(f"kind_weights {self.kind_weights} do not match kinds {self.kinds}")

    def draw(self, rng: np.random.Generator, anchor: np.ndarray,
             anchor_normal: np.ndarray) -> AnalyticPrimitive:
        """Random primitive posed around a surface point of the complete shape."""
        if self.fixed is not None:
            return self.fixed
        probs = None
        if self.kind_weights is not None:
            probs = np.asarray(self.kind_weights, dtype=np.float64)
            probs = probs / probs.sum()
        kind = self.kinds[rng.choice(len(self.kinds), p=probs)]
        lo, hi = self.scale_range
        if kind == "sphere":
            radius = rng.uniform(lo, hi)
            centre = anchor + anchor_normal * radius * rng.uniform(-0.3, 0.5)
            return AnalyticPrimitive("sphere", {"radius": radius}, translation=centre)
        if kind == "box":
            hx, hy, hz = rng.uniform(lo, hi, size=3)
            rotation = random_rotation(rng)
            centre = anchor + anchor_normal * min(hx, hy, hz) * rng.uniform(-0.3, 0.5)
            return AnalyticPrimitive("box", {"hx": hx, "hy": hy, "hz": hz},
                                     rotation=rotation, translation=centre)
        # Half-space removing everything beyond a tilted plane below the anchor.
        tilt = normalize_vectors((anchor_normal + 0.4 * rng.normal(size=3)).reshape(1, 3))[0]
        depth = 0.5 * rng.uniform(lo, hi)
        return AnalyticPrimitive("half-space", {}, rotation=frame_from_normal(-tilt),
                                 translation=anchor - tilt * depth)


@dataclass
class FractureConfig:
    max_attempts: int = 15
    retention_lo: float = 0.05
    retention_hi: float = 0.20
    region_eps: float = 1e-3
    lambda_tps: float = DEFAULT_LAMBDA_TPS
    resolution: int = 64
    min_agreement: float = 0.99
    agreement_points: int = 10000

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be positive, got {self.max_attempts}")
        if not 0 <= self.retention_lo <= self.retention_hi <= 1:
            raise ValueError(
                f"Retention bounds must satisfy 0 <= lo <= hi <= 1, "
                f"got ({self.retention_lo}, {self.retention_hi})"
            )
        if not 0 <= self.min_agreement <= 1 or self.agreement_points < 1:
            raise ValueError(
                f"min_agreement must lie in [0, 1] and agreement_points be positive, "
                f"got ({self.min_agreement}, {self.agreement_points})"
            )


@dataclass
class ShapeTuple:
    """The training quadruple {C, F, R, B} of one accepted fracture.

    ``fractured`` and ``restoration`` are the primitive cuts ``C minus P`` and
    ``C intersect P``; labels and ground-truth meshes both come from them.
    ``break_shape`` is the fitted break field, whose composition with the
    complete field reproduces the cuts on at least ``min_agreement`` of the
    points checked at acceptance.
    """

    shape_id: str
    complete: ShapeField
    fractured: ShapeField
    restoration: ShapeField
    break_shape: ShapeField
    break_surface: BreakSurface
    fracture_surface: Tuple[np.ndarray, np.ndarray]
    primitive: AnalyticPrimitive
    complete_mesh: TriangleMesh
    fractured_mesh: TriangleMesh
    restoration_mesh: TriangleMesh
    fracture_region: np.ndarray
    attempt: int = 0
    removed_fraction: float = 0.0
    agreement: float = 1.0

    def fracture_region_faces(self) -> np.ndarray:
        """Faces of the fractured mesh whose three vertices are all in the fracture region."""
        return self.fracture_region[self.fractured_mesh.triangles].all(axis=1)


@dataclass
class Rejected:
    """A shape that failed the retention test on every attempt."""

    shape_id: str
    attempts: int
    reason: str
    fractions: List[float] = field(default_factory=list)


def cut_by_primitive(complete: ShapeField, primitive: AnalyticPrimitive) -> Tuple[ShapeField, ShapeField]:
    """Cut a complete field by a primitive: ``(C minus P, C intersect P)``."""
    cutter = primitive_shape(primitive)
    fractured = boolean_shape(complete, cutter, "subtract", name="fractured")
    restoration = boolean_shape(complete, cutter, "intersect", name="restoration")
    return fractured, restoration


def fracture_shape(complete: ShapeField, spec: FracturePrimitiveSpec, seed: Any,
                  ) -> Tuple[ShapeField, ShapeField, AnalyticPrimitive]:
    """Draw a primitive from ``spec`` with ``seed`` and cut ``complete`` with it."""
    rng = np.random.default_rng(seed)
    anchor, normal = surface_anchor(complete, rng)
    primitive = spec.draw(rng, anchor, normal)
    fractured, restoration = cut_by_primitive(complete, primitive)
    return fractured, restoration, primitive


def surface_anchor(complete: ShapeField, rng: np.random.Generator,
                   iterations: int = 6) -> Tuple[np.ndarray, np.ndarray]:
    """Random point projected onto the complete surface along its normal field."""
    point = rng.uniform(-0.5, 0.5, size=(1, 3))
    for _ in range(iterations):
        sample = complete(point)
        point = point - sample.sdf[:, None] * sample.nf
    return point[0], complete(point).nf[0]


def removed_fraction(complete_mesh: TriangleMesh, fractured: ShapeField,
                     eps: float = 1e-3) -> float:
    """Fraction of complete-mesh vertices lying outside the fractured shape by more than ``eps``."""
    if len(complete_mesh.vertices) == 0:
        raise ValueError("Retention test needs a non-empty complete mesh")
    return float(np.mean(fractured.sdf(complete_mesh.vertices) > eps))


def retention_test(complete_mesh: TriangleMesh, fractured: ShapeField, lo: float = 0.05,
                   hi: float = 0.20, eps: float = 1e-3) -> bool:
    """True iff the removed vertex fraction lies in ``[lo, hi]``."""
    return lo <= removed_fraction(complete_mesh, fractured, eps) <= hi


def fracture_region_mask(fractured_mesh: TriangleMesh, complete_mesh: TriangleMesh,
                         eps: float = 1e-3) -> np.ndarray:
    """Fractured-mesh vertices farther than ``eps`` from the complete surface."""
    return complete_mesh.surface_distance(fractured_mesh.vertices) > eps


def composition_agreement(complete: ShapeField, break_shape: ShapeField, fractured: ShapeField,
                          restoration: ShapeField, points: Any, eps: float = 1e-3) -> float:
    """Share of points inside C where the composed F and R occupancies match the cut.

    Points within ``eps`` of the complete, fractured or restoration surface
    are ignored. Returns 1.0 when no point qualifies.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c, b = complete(pts), break_shape(pts)
    f, r = fractured(pts), restoration(pts)
    clear = (c.sdf < -eps) & (np.abs(f.sdf) > eps) & (np.abs(r.sdf) > eps)
    if not clear.any():
        return 1.0
    composed_f = compose_occupancy(c, b, Target.FRACTURED) > 0.5
    composed_r = compose_occupancy(c, b, Target.RESTORATION) > 0.5
    agree = (composed_f == (f.occ > 0.5)) & (composed_r == (r.occ > 0.5))
    return float(np.mean(agree[clear]))


def _agreement_points(complete_mesh: TriangleMesh, count: int, seed: Any) -> np.ndarray:
    lo, hi = complete_mesh.bounds
    return np.random.default_rng(seed).uniform(lo, hi, size=(count, 3))


def attempt_fracture(shape_id: str, complete: ShapeField, spec: FracturePrimitiveSpec,
                     config: Optional[FractureConfig] = None,
                     complete_mesh: Optional[TriangleMesh] = None,
                     stream: Sequence[int] = ()) -> Union[ShapeTuple, Rejected]:
    """Fracture ``complete`` until an attempt passes the retention test.

    Attempt ``k`` draws from ``default_rng((spec.seed, *stream, k))`` so
    results do not depend on processing order. An attempt whose fitted break
    field, composed with the complete field, reproduces the cut on fewer than
    ``min_agreement`` of the points inside C is discarded as well.

    Returns:
        The first accepted ShapeTuple, or Rejected after ``max_attempts``.
    """
    config = config or FractureConfig()
    if complete_mesh is None:
        complete_mesh = marching_cubes(complete.sdf, config.resolution)
    if complete_mesh.is_empty:
        return Rejected(shape_id, 0, "complete shape has an empty surface")

    fractions: List[float] = []
    reason = "retention test failed"
    for attempt in range(config.max_attempts):
        seed = (spec.seed, *stream, attempt)
        cut_f, cut_r, primitive = fracture_shape(complete, spec, seed)
        fraction = removed_fraction(complete_mesh, cut_f, config.region_eps)
        fractions.append(fraction)
        if not config.retention_lo <= fraction <= config.retention_hi:
            logger.debug("%s attempt %d removed %.3f of vertices", shape_id, attempt, fraction)
            continue

        fractured_mesh = marching_cubes(cut_f.sdf, config.resolution)
        restoration_mesh = marching_cubes(cut_r.sdf, config.resolution)
        if fractured_mesh.is_empty or restoration_mesh.is_empty:
            reason = "empty fractured or restoration mesh"
            continue
        region = fracture_region_mask(fractured_mesh, complete_mesh, config.region_eps)
        rng = np.random.default_rng(seed)
        try:
            surface = fit_break_surface(
                fractured_mesh.vertices[region],
                lambda_tps=config.lambda_tps,
                restoration_reference=restoration_mesh.vertices.mean(axis=0),
                seed=int(rng.integers(2**31)),
            )
            breaker = BreakField(surface)
        except (DegenerateInputError, EmptySurfaceError) as e:
            reason = str(e)
            logger.debug("%s attempt %d: %s", shape_id, attempt, e)
            continue

        break_shape = breaker.shape()
        points = _agreement_points(complete_mesh, config.agreement_points, int(rng.integers(2**31)))
        agreement = composition_agreement(complete, break_shape, cut_f, cut_r, points,
                                          config.region_eps)
        if agreement < config.min_agreement:
            reason = f"break field reproduces the cut on only {agreement:.3f} of points inside C"
            logger.debug("%s attempt %d: %s", shape_id, attempt, reason)
            continue

        return ShapeTuple(
            shape_id=shape_id,
            complete=complete,
            fractured=cut_f,
            restoration=cut_r,
            break_shape=break_shape,
            break_surface=surface,
            fracture_surface=(breaker.samples, breaker.normals),
            primitive=primitive,
            complete_mesh=complete_mesh,
            fractured_mesh=fractured_mesh,
            restoration_mesh=restoration_mesh,
            fracture_region=region,
            attempt=attempt,
            removed_fraction=fraction,
            agreement=agreement,
        )
    return Rejected(shape_id, config.max_attempts, reason, fractions)


def rebuild_tuple(shape_id: str, complete: ShapeField, primitive: AnalyticPrimitive,
                  surface: BreakSurface, meshes: Dict[str, TriangleMesh],
                  fracture_region: np.ndarray, attempt: int = 0,
                  fraction: float = 0.0, agreement: float = 1.0) -> ShapeTuple:
    """Reassemble a ShapeTuple from stored artifacts."""
    breaker = BreakField(surface)
    cut_f, cut_r = cut_by_primitive(complete, primitive)
    return ShapeTuple(
        shape_id=shape_id,
        complete=complete,
        fractured=cut_f,
        restoration=cut_r,
        break_shape=breaker.shape(),
        break_surface=surface,
        fracture_surface=(breaker.samples, breaker.normals),
        primitive=primitive,
        complete_mesh=meshes["complete"],
        fractured_mesh=meshes["fractured"],
        restoration_mesh=meshes["restoration"],
        fracture_region=np.asarray(fracture_region, dtype=bool),
        attempt=attempt,
        removed_fraction=fraction,
        agreement=agreement,
    )
