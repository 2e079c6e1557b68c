"""Joint occupancy / SDF / normal fields and their CSG composition rules.

A fractured shape is the complete shape carved by the break shape
(F = C ∩ B) and the restoration is the complete shape on the other side
(R = C ∩ B'). Occupancies combine with the product T-norm; SDF and normal
fields pick the break or complete value by a branch test in which relaxed
occupancies are binarized at ``mu``.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np

from .geometry import (
    AnalyticPrimitive,
    MeshQuery,
    TriangleMesh,
    as_points,
    normalize_vectors,
    primitive_field,
)

logger = logging.getLogger(__name__)

DEFAULT_MU = 0.5


class Target(str, Enum):
    """Which shape a composition derives from the complete and break fields."""

    FRACTURED = "fractured"
    RESTORATION = "restoration"


class Provenance(str, Enum):
    ANALYTIC = "analytic"
    MESH = "mesh"
    COMPOSED = "composed"


@dataclass
class JointFieldSample:
    """Batched (occ, sdf, nf) values; scalars are promoted to length-1 batches."""

    occ: np.ndarray
    sdf: np.ndarray
    nf: np.ndarray

    def __post_init__(self):
        self.occ = np.atleast_1d(np.asarray(self.occ, dtype=np.float64))
        self.sdf = np.atleast_1d(np.asarray(self.sdf, dtype=np.float64))
        self.nf = np.asarray(self.nf, dtype=np.float64).reshape(-1, 3)
        if not (len(self.occ) == len(self.sdf) == len(self.nf)):
            raise ValueError(
                f"Field sample lengths differ: occ={len(self.occ)}, sdf={len(self.sdf)}, "
                f"nf={len(self.nf)}"
            )

    def __len__(self) -> int:
        return len(self.sdf)

    def take(self, index: Any) -> "JointFieldSample":
        return JointFieldSample(self.occ[index], self.sdf[index], self.nf[index])


def break_branch(b_occ: np.ndarray, s_b: np.ndarray, s_c: np.ndarray, target: Target,
                 mu: float = DEFAULT_MU) -> np.ndarray:
    """Mask of points where the composed SDF/NF take the break shape's value.

    Fractured: ``o_B <= mu or s_B > s_C``. Restoration: ``o_B > mu or -s_B > s_C``.
    Inequalities are strict, so ties fall to the complete shape.
    """
    b_occ = np.asarray(b_occ)
    s_b = np.asarray(s_b)
    s_c = np.asarray(s_c)
    if Target(target) is Target.FRACTURED:
        return (b_occ <= mu) | (s_b > s_c)
    return (b_occ > mu) | (-s_b > s_c)


def compose_occupancy(c: JointFieldSample, b: JointFieldSample, target: Target) -> np.ndarray:
    """Product T-norm: ``o_C o_B`` for the fractured shape, ``o_C (1 - o_B)`` for the restoration."""
    if Target(target) is Target.FRACTURED:
        return c.occ * b.occ
    return c.occ * (1.0 - b.occ)


def compose_sdf(c: JointFieldSample, b: JointFieldSample, target: Target,
                mu: float = DEFAULT_MU) -> np.ndarray:
    """Break SDF (negated for the restoration) where ``break_branch`` holds, else ``s_C``."""
    branch = break_branch(b.occ, b.sdf, c.sdf, target, mu)
    s_b = b.sdf if Target(target) is Target.FRACTURED else -b.sdf
    return np.where(branch, s_b, c.sdf)


def compose_nf(c: JointFieldSample, b: JointFieldSample, target: Target,
               mu: float = DEFAULT_MU) -> np.ndarray:
    """Unit normals chosen by the same branch as ``compose_sdf``."""
    branch = break_branch(b.occ, b.sdf, c.sdf, target, mu)
    n_b = b.nf if Target(target) is Target.FRACTURED else -b.nf
    return normalize_vectors(np.where(branch[:, None], n_b, c.nf))


def compose(c: JointFieldSample, b: JointFieldSample, target: Target,
            mu: float = DEFAULT_MU) -> JointFieldSample:
    """Fractured or restoration sample from complete and break samples."""
    return JointFieldSample(
        compose_occupancy(c, b, target),
        compose_sdf(c, b, target, mu),
        compose_nf(c, b, target, mu),
    )


def subtract_sdf(s_c: Any, s_b: Any) -> np.ndarray:
    """Boolean subtraction ``max(s_c, -s_b)``."""
    return np.maximum(s_c, -np.asarray(s_b))


Evaluator = Callable[[np.ndarray], JointFieldSample]


@dataclass
class ShapeField:
    """A deterministic point -> JointFieldSample evaluator with its provenance."""

    evaluator: Evaluator
    provenance: Provenance
    name: str = ""

    def __call__(self, points: Any) -> JointFieldSample:
        return self.evaluator(as_points(points))

    def sdf(self, points: Any) -> np.ndarray:
        return self(points).sdf


def primitive_shape(prim: AnalyticPrimitive, name: str = "") -> ShapeField:
    """Exact analytic field of ``prim``."""
    return ShapeField(
        lambda pts: JointFieldSample(*primitive_field(prim, pts)),
        Provenance.ANALYTIC,
        name or prim.kind,
    )


def mesh_shape(mesh: TriangleMesh, name: str = "mesh") -> ShapeField:
    """Field of a closed mesh; raises OpenMeshError for open meshes."""
    query = MeshQuery(mesh)
    return ShapeField(lambda pts: JointFieldSample(*query.evaluate(pts)), Provenance.MESH, name)


def composed_shape(complete: ShapeField, break_shape: ShapeField, target: Target,
                   mu: float = DEFAULT_MU) -> ShapeField:
    def _evaluate(pts: np.ndarray) -> JointFieldSample:
        return compose(complete(pts), break_shape(pts), target, mu)

    return ShapeField(_evaluate, Provenance.COMPOSED, Target(target).value)


def _boolean(a: JointFieldSample, b: JointFieldSample, kind: str) -> JointFieldSample:
    if kind == "union":
        take_a = a.sdf <= b.sdf
        sdf = np.where(take_a, a.sdf, b.sdf)
        nf = np.where(take_a[:, None], a.nf, b.nf)
    elif kind == "intersect":
        take_a = a.sdf >= b.sdf
        sdf = np.where(take_a, a.sdf, b.sdf)
        nf = np.where(take_a[:, None], a.nf, b.nf)
    elif kind == "subtract":
        take_a = a.sdf >= -b.sdf
        sdf = subtract_sdf(a.sdf, b.sdf)
        nf = np.where(take_a[:, None], a.nf, -b.nf)
    else:
        raise ValueError(f"Unknown boolean {kind!r}; expected union, intersect or subtract")
    return JointFieldSample((sdf < 0).astype(np.float64), sdf, nf)


def boolean_shape(a: ShapeField, b: ShapeField, kind: str, name: str = "") -> ShapeField:
    """Min/max SDF Boolean of two fields (``union``, ``intersect`` or ``subtract``).

    Results are bounds on the true distance away from the surface; the
    zero set and the sign are exact.
    """
    return ShapeField(
        lambda pts: _boolean(a(pts), b(pts), kind),
        Provenance.COMPOSED,
        name or f"{a.name}-{kind}-{b.name}",
    )


def transformed_shape(field: ShapeField, rotation: np.ndarray,
                      translation: Optional[np.ndarray] = None) -> ShapeField:
    """Rigidly moved field: ``p -> field(R^T (p - t))`` with normals rotated by R."""
    rotation = np.asarray(rotation, dtype=np.float64)
    translation = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)

    def _evaluate(pts: np.ndarray) -> JointFieldSample:
        sample = field((pts - translation) @ rotation)
        return JointFieldSample(sample.occ, sample.sdf, sample.nf @ rotation.T)

    return ShapeField(_evaluate, field.provenance, field.name)
