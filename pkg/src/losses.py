"""Training and inference loss terms with gradients with respect to the network heads.

Every loss returns its value together with ``HeadGrads`` for the complete
and the break network, so callers can backpropagate both nets at once.
Branch predicates are computed from predictions but never differentiated.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .fields import DEFAULT_MU, JointFieldSample, Target, break_branch
from .neural import HeadGrads, NetOutput

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7


@dataclass
class LossWeights:
    """Coefficients of the SDF, normal and code-regularization terms and the occupancy threshold."""

    lambda_s: float = 1.0
    lambda_n: float = 0.1
    lambda_reg: float = 1e-4
    mu: float = DEFAULT_MU

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_n, self.lambda_reg) < 0:
            raise ValueError(
                f"Loss weights must be non-negative, got lambda_s={self.lambda_s}, "
                f"lambda_n={self.lambda_n}, lambda_reg={self.lambda_reg}"
            )
        if not 0 < self.mu < 1:
            raise ValueError(f"mu must lie in (0, 1), got {self.mu}")


@dataclass
class LossResult:
    value: float
    grads_c: HeadGrads
    grads_b: HeadGrads
    parts: Dict[str, float] = field(default_factory=dict)


def bce(q: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-point binary cross-entropy and its derivative in ``q``.

    ``q`` is clipped to ``[1e-7, 1 - 1e-7]``; the derivative is zero where
    clipping is active.
    """
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    qc = np.clip(q, BCE_EPS, 1.0 - BCE_EPS)
    value = -(y * np.log(qc) + (1.0 - y) * np.log(1.0 - qc))
    grad = np.where(qc == q, (qc - y) / (qc * (1.0 - qc)), 0.0)
    return value, grad


def _l1(pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    diff = np.asarray(pred, dtype=np.float64) - target
    return np.abs(diff), np.sign(diff)


def _l2(pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    diff = np.asarray(pred, dtype=np.float64) - target
    norm = np.linalg.norm(diff, axis=1)
    grad = np.divide(diff, norm[:, None], out=np.zeros_like(diff), where=norm[:, None] > 0)
    return norm, grad


def _add(grads: HeadGrads, head: str, value: np.ndarray) -> None:
    current = getattr(grads, head)
    setattr(grads, head, value if current is None else current + value)


def _as64(value: Optional[np.ndarray]) -> Optional[np.ndarray]:
    return None if value is None else np.asarray(value, dtype=np.float64)


def loss_cb(preds_c: NetOutput, preds_b: NetOutput, labels_c: JointFieldSample,
            labels_b: JointFieldSample, w: LossWeights) -> LossResult:
    """Direct supervision of both networks, averaged over points and over the two shapes."""
    result = LossResult(0.0, HeadGrads(), HeadGrads())
    for key, preds, labels, grads in (
        ("c", preds_c, labels_c, result.grads_c),
        ("b", preds_b, labels_b, result.grads_b),
    ):
        n = len(labels)
        scale = 0.5 / n
        if preds.occ is not None:
            value, grad = bce(preds.occ, labels.occ)
            result.parts[f"{key}_occ"] = float(value.mean())
            result.value += 0.5 * float(value.mean())
            _add(grads, "occ", scale * grad)
        if preds.sdf is not None and w.lambda_s > 0:
            value, grad = _l1(preds.sdf, labels.sdf)
            result.parts[f"{key}_sdf"] = float(value.mean())
            result.value += 0.5 * w.lambda_s * float(value.mean())
            _add(grads, "sdf", scale * w.lambda_s * grad)
        if preds.nf is not None and w.lambda_n > 0:
            value, grad = _l2(preds.nf, labels.nf)
            result.parts[f"{key}_nf"] = float(value.mean())
            result.value += 0.5 * w.lambda_n * float(value.mean())
            _add(grads, "nf", scale * w.lambda_n * grad)
    return result


def branch_mask(preds_c: NetOutput, preds_b: NetOutput, target: Target,
                mu: float = DEFAULT_MU) -> np.ndarray:
    """Detached break-branch predicate from predicted heads.

    Without an occupancy head, "inside the break shape" is ``f^B_s < 0``.
    Without SDF heads only the occupancy test is used.
    """
    occ_b = _as64(preds_b.occ)
    if occ_b is None:
        if preds_b.sdf is None:
            raise ValueError("Branch predicates need an occupancy or an SDF head")
        occ_b = (np.asarray(preds_b.sdf) < 0).astype(np.float64)
    if preds_b.sdf is None or preds_c.sdf is None:
        if Target(target) is Target.FRACTURED:
            return occ_b <= mu
        return occ_b > mu
    return break_branch(occ_b, _as64(preds_b.sdf), _as64(preds_c.sdf), target, mu)


def _composed_loss(preds_c: NetOutput, preds_b: NetOutput, labels: JointFieldSample,
                   w: LossWeights, target: Target) -> LossResult:
    target = Target(target)
    sign = 1.0 if target is Target.FRACTURED else -1.0
    result = LossResult(0.0, HeadGrads(), HeadGrads())
    n = len(labels)

    if preds_c.occ is not None and preds_b.occ is not None:
        o_c, o_b = _as64(preds_c.occ), _as64(preds_b.occ)
        o_b_side = o_b if target is Target.FRACTURED else 1.0 - o_b
        value, grad = bce(o_c * o_b_side, labels.occ)
        result.parts["occ"] = float(value.mean())
        result.value += float(value.mean())
        _add(result.grads_c, "occ", grad * o_b_side / n)
        _add(result.grads_b, "occ", sign * grad * o_c / n)

    need_branch = (preds_c.sdf is not None and w.lambda_s > 0) or \
        (preds_c.nf is not None and w.lambda_n > 0)
    if not need_branch:
        return result
    branch = branch_mask(preds_c, preds_b, target, w.mu)

    if preds_c.sdf is not None and preds_b.sdf is not None and w.lambda_s > 0:
        pred = np.where(branch, sign * _as64(preds_b.sdf), _as64(preds_c.sdf))
        value, grad = _l1(pred, labels.sdf)
        result.parts["sdf"] = float(value.mean())
        result.value += w.lambda_s * float(value.mean())
        grad = w.lambda_s * grad / n
        _add(result.grads_b, "sdf", np.where(branch, sign * grad, 0.0))
        _add(result.grads_c, "sdf", np.where(branch, 0.0, grad))

    if preds_c.nf is not None and preds_b.nf is not None and w.lambda_n > 0:
        pred = np.where(branch[:, None], sign * _as64(preds_b.nf), _as64(preds_c.nf))
        value, grad = _l2(pred, labels.nf)
        result.parts["nf"] = float(value.mean())
        result.value += w.lambda_n * float(value.mean())
        grad = w.lambda_n * grad / n
        _add(result.grads_b, "nf", np.where(branch[:, None], sign * grad, 0.0))
        _add(result.grads_c, "nf", np.where(branch[:, None], 0.0, grad))
    return result


def loss_f(preds_c: NetOutput, preds_b: NetOutput, labels_f: JointFieldSample,
           w: LossWeights) -> LossResult:
    """Fractured-shape loss: BCE of ``o_C o_B`` plus branch-selected SDF and normal terms."""
    return _composed_loss(preds_c, preds_b, labels_f, w, Target.FRACTURED)


def loss_r(preds_c: NetOutput, preds_b: NetOutput, labels_r: JointFieldSample,
           w: LossWeights) -> LossResult:
    """Restoration loss: BCE of ``o_C (1 - o_B)``; the break branch compares ``-f^B``."""
    return _composed_loss(preds_c, preds_b, labels_r, w, Target.RESTORATION)


def loss_reg(z_c: np.ndarray, z_b: np.ndarray,
             lambda_reg: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Laplacian code prior ``lambda_reg (|z_B|_1 + |z_C|_1)`` and its subgradients (sign(0) = 0)."""
    z_c = np.asarray(z_c, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    value = lambda_reg * (np.abs(z_b).sum() + np.abs(z_c).sum())
    return float(value), lambda_reg * np.sign(z_c), lambda_reg * np.sign(z_b)
