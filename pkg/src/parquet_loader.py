"""Helper functions to store and load per-shape evaluation records as parquet."""

import os
from typing import Any, Dict, List, Optional

import pandas as pd

from .config import runtime

RECORDS_FILE = os.path.join("eval", "records.parquet")


def get_parquet_path(out_dir: Optional[str] = None) -> str:
    """Path of the records file under ``out_dir`` (default: the configured artifact root)."""
    return os.path.join(out_dir or runtime.out_dir, RECORDS_FILE)


def save_to_parquet(records: pd.DataFrame, parquet_path: str) -> str:
    """Write evaluation records without the index.

    Returns:
        The path written.
    """
    os.makedirs(os.path.dirname(parquet_path) or ".", exist_ok=True)
    records.to_parquet(parquet_path, index=False)
    return parquet_path


def load_from_parquet(parquet_path: Optional[str] = None) -> Optional[pd.DataFrame]:
    """Load evaluation records.

    Args:
        parquet_path: Path to parquet file. If None, uses the default path from config.

    Returns:
        DataFrame with one row per evaluated shape, or None if the file doesn't exist.
    """
    if parquet_path is None:
        parquet_path = get_parquet_path()

    if not os.path.exists(parquet_path):
        return None

    try:
        return pd.read_parquet(parquet_path)
    except Exception:
        return None


def extract_summary_from_parquet(parquet_path: Optional[str] = None) -> Optional[Dict[str, Any]]:
    """Summarize stored records: counts, families and non-empty percentage.

    Returns:
        Dictionary with the summary, or None if there are no records.
    """
    df = load_from_parquet(parquet_path)
    if df is None or df.empty:
        return None

    non_empty = int((~df["empty"].astype(bool)).sum())
    return {
        "total_records": len(df),
        "columns": list(df.columns),
        "families": sorted(df["family"].unique().tolist()),
        "non_empty": non_empty,
        "ne_pct": 100.0 * non_empty / len(df),
    }


def extract_empty_from_parquet(parquet_path: Optional[str] = None) -> Optional[List[str]]:
    """Shape ids whose predicted restoration was empty, or None if there are no records."""
    df = load_from_parquet(parquet_path)
    if df is None or df.empty:
        return None
    return df.loc[df["empty"].astype(bool), "shape_id"].tolist()
