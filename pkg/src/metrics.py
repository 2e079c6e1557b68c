"""Evaluation metrics for predicted restorations and the report they aggregate into."""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .errors import EmptyMeshError
from .geometry import TriangleMesh

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 30000
DEFAULT_ETA = 0.02
METRIC_COLUMNS = ("cd", "nc", "nfre")


def _nearest(source: np.ndarray, target: np.ndarray):
    return cKDTree(target).query(source)


def chamfer_points(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared nearest-neighbour distance from a to b plus from b to a."""
    d_ab, _ = _nearest(np.asarray(a).reshape(-1, 3), np.asarray(b).reshape(-1, 3))
    d_ba, _ = _nearest(np.asarray(b).reshape(-1, 3), np.asarray(a).reshape(-1, 3))
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def normal_consistency_points(points_a: np.ndarray, normals_a: np.ndarray,
                              points_b: np.ndarray, normals_b: np.ndarray) -> float:
    """Symmetrized mean |<n, n_NN>| between two oriented point sets."""
    _, idx_ab = _nearest(points_a, points_b)
    _, idx_ba = _nearest(points_b, points_a)
    ab = np.abs(np.einsum("ij,ij->i", normals_a, normals_b[idx_ab]))
    ba = np.abs(np.einsum("ij,ij->i", normals_b, normals_a[idx_ba]))
    return float(0.5 * (ab.mean() + ba.mean()))


def nfre_points(intact_points: np.ndarray, predicted_points: np.ndarray,
                gt_points: np.ndarray, eta: float = DEFAULT_ETA) -> float:
    """Fraction of intact-surface points near the prediction (< eta) but far from the truth (> eta)."""
    d_pred, _ = _nearest(intact_points, predicted_points)
    d_gt, _ = _nearest(intact_points, gt_points)
    return float(np.mean((d_pred < eta) & (d_gt > eta)))


def _require(mesh: TriangleMesh, role: str) -> None:
    if mesh.is_empty:
        raise EmptyMeshError(f"{role} mesh is empty")


def chamfer_distance(a: TriangleMesh, b: TriangleMesh, n_samples: int = DEFAULT_SAMPLES,
                     seed: int = 0) -> float:
    """Chamfer distance between area-weighted surface samples of two meshes.

    Both meshes are sampled with the same seed, so ``chamfer_distance(a, a) == 0``.

    Raises:
        EmptyMeshError: If either mesh is empty.
    """
    _require(a, "First")
    _require(b, "Second")
    points_a, _ = a.sample_surface(n_samples, seed)
    points_b, _ = b.sample_surface(n_samples, seed)
    return chamfer_points(points_a, points_b)


def normal_consistency(a: TriangleMesh, b: TriangleMesh, n_samples: int = DEFAULT_SAMPLES,
                       seed: int = 0) -> float:
    """Normal consistency in [0, 1] using absolute dot products of face normals."""
    _require(a, "First")
    _require(b, "Second")
    points_a, normals_a = a.sample_surface(n_samples, seed)
    points_b, normals_b = b.sample_surface(n_samples, seed)
    return normal_consistency_points(points_a, normals_a, points_b, normals_b)


def nfre(fractured: TriangleMesh, fracture_region_faces: np.ndarray, predicted: TriangleMesh,
         gt: TriangleMesh, n: int = DEFAULT_SAMPLES, eta: float = DEFAULT_ETA,
         seed: int = 0) -> float:
    """Non-fractured region error.

    Samples ``n`` points on the faces of ``fractured`` outside the fracture
    region and returns the fraction whose nearest predicted-restoration
    sample is closer than ``eta`` while the nearest ground-truth sample is
    farther than ``eta``. An empty prediction scores 0.

    Raises:
        EmptyMeshError: If the fractured or ground-truth mesh is empty.
    """
    _require(fractured, "Fractured")
    _require(gt, "Ground-truth restoration")
    if predicted.is_empty:
        return 0.0
    intact = fractured.submesh(~np.asarray(fracture_region_faces, dtype=bool))
    if intact.is_empty:
        logger.warning("Fractured mesh has no faces outside the fracture region")
        return 0.0
    intact_points, _ = intact.sample_surface(n, seed)
    predicted_points, _ = predicted.sample_surface(n, seed + 1)
    gt_points, _ = gt.sample_surface(n, seed + 1)
    return nfre_points(intact_points, predicted_points, gt_points, eta)


def non_empty_pct(results: Sequence[Any]) -> float:
    """Percentage of results with a non-empty restoration.

    Accepts InferenceResult-like objects (``is_empty`` attribute) or booleans
    meaning "is empty".
    """
    if len(results) == 0:
        raise ValueError("non_empty_pct needs at least one result")
    empty = [bool(getattr(r, "is_empty", r)) for r in results]
    return 100.0 * (len(empty) - sum(empty)) / len(empty)


def _clean(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


@dataclass
class EvalReport:
    """Per-shape metric records with per-class and overall aggregates.

    ``records`` has columns ``shape_id``, ``family``, ``cd``, ``nc``, ``nfre``
    and ``empty``. Means use non-empty restorations only; NE% counts all.
    """

    records: pd.DataFrame

    @classmethod
    def from_records(cls, rows: Iterable[Dict[str, Any]]) -> "EvalReport":
        frame = pd.DataFrame(list(rows), columns=["shape_id", "family", *METRIC_COLUMNS, "empty"])
        frame = frame.sort_values("shape_id", kind="mergesort").reset_index(drop=True)
        frame["empty"] = frame["empty"].astype(bool)
        for column in METRIC_COLUMNS:
            frame[column] = frame[column].astype(float)
        return cls(frame)

    @property
    def ne_pct(self) -> Optional[float]:
        if self.records.empty:
            return None
        return non_empty_pct(self.records["empty"].tolist())

    def class_means(self) -> pd.DataFrame:
        families = sorted(self.records["family"].unique())
        valid = self.records[~self.records["empty"]]
        means = valid.groupby("family")[list(METRIC_COLUMNS)].mean()
        means = means.reindex(families)
        means["ne_pct"] = [
            non_empty_pct(self.records.loc[self.records["family"] == f, "empty"].tolist())
            for f in families
        ]
        return means

    def mean_of_class_means(self) -> Dict[str, Optional[float]]:
        means = self.class_means()
        return {column: _clean(float(means[column].mean())) if len(means) else None
                for column in [*METRIC_COLUMNS, "ne_pct"]}

    def to_dict(self) -> Dict[str, Any]:
        means = self.class_means()
        return {
            "records": [
                {key: _clean(value) for key, value in row.items()}
                for row in self.records.to_dict("records")
            ],
            "class_means": {
                family: {key: _clean(float(value)) for key, value in row.items()}
                for family, row in means.to_dict("index").items()
            },
            "mean": self.mean_of_class_means(),
            "ne_pct": self.ne_pct,
        }

    def table(self) -> pd.DataFrame:
        """Metric rows (CD, NC, NFRE, NE%) by class columns plus the mean of class means."""
        means = self.class_means()
        table = means.rename(columns={"cd": "CD", "nc": "NC", "nfre": "NFRE", "ne_pct": "NE%"}).T
        table["Mean"] = table.mean(axis=1)
        table.index.name = "metric"
        return table


def summarize(rows: List[Dict[str, Any]]) -> EvalReport:
    report = EvalReport.from_records(rows)
    logger.info("Evaluated %d restorations; NE%% = %s", len(report.records), report.ne_pct)
    return report
