"""Pipeline module: dataset fracturing, sampling, training, inference and evaluation.

Each ``cmd_*`` function reads its upstream artifacts from an output
directory, writes its own, and returns a summary dict. The layout is::

    <out>/dataset/manifest.json, summary.json
    <out>/dataset/<shape_id>/{complete,fractured,restoration}.ply,
                             break_surface.json, fracture_region.npy
    <out>/samples/<shape_id>.bin, summary.json
    <run>/model/checkpoint.bin, train_log.jsonl, summary.json
    <run>/inference/<shape_id>/{restoration,complete,fallback}.ply, codes.npz
    <run>/inference/summary.json
    <run>/eval/report.json, table.csv, records.parquet

``<run>`` is ``<out>`` except for ablation runs, which share the dataset and
samples of ``<out>`` and keep their own model, inference and evaluation.
"""

import dataclasses
import glob
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from .break_surface import BreakSurface
from .config import PipelineConfig, runtime
from .errors import ConfigError, MissingArtifactError, OpenMeshError, ShapeRepairError
from .fields import ShapeField, mesh_shape, transformed_shape
from .fracture import (
    FractureConfig,
    FracturePrimitiveSpec,
    Rejected,
    ShapeTuple,
    attempt_fracture,
    rebuild_tuple,
)
from .geometry import AnalyticPrimitive, MeshQuery, TriangleMesh, normalize_to_unit_cube, rotation_about_z
from .learn import (
    ABLATION_CONFIGS,
    InferenceConfig,
    RepairModel,
    TrainConfig,
    infer_shape,
    train,
)
from .losses import LossWeights
from .mesh_io import mesh_read, mesh_write
from .metrics import chamfer_distance, nfre, normal_consistency, summarize
from .parquet_loader import (
    extract_empty_from_parquet,
    extract_summary_from_parquet,
    get_parquet_path,
    load_from_parquet,
    save_to_parquet,
)
from .sampling import label_agreement, label_points, read_samples, sample_points, write_samples
from .shapes import ShapeRecipe, make_shape

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MESH_SUFFIXES = (".obj", ".ply")


@dataclass(frozen=True)
class ArtifactPaths:
    """Artifact locations for one pipeline run."""

    out_dir: str
    run_dir: Optional[str] = None

    @property
    def run(self) -> str:
        return self.run_dir or self.out_dir

    @property
    def manifest(self) -> str:
        return os.path.join(self.out_dir, "dataset", "manifest.json")

    def shape_dir(self, shape_id: str) -> str:
        return os.path.join(self.out_dir, "dataset", shape_id)

    def samples(self, shape_id: str) -> str:
        return os.path.join(self.out_dir, "samples", f"{shape_id}.bin")

    @property
    def checkpoint(self) -> str:
        return os.path.join(self.run, "model", "checkpoint.bin")

    @property
    def train_log(self) -> str:
        return os.path.join(self.run, "model", "train_log.jsonl")

    def inference_dir(self, shape_id: str) -> str:
        return os.path.join(self.run, "inference", shape_id)

    @property
    def inference_summary(self) -> str:
        return os.path.join(self.run, "inference", "summary.json")

    @property
    def eval_dir(self) -> str:
        return os.path.join(self.run, "eval")


@dataclass
class ShapeJob:
    """One complete shape to fracture: where it comes from and its seed stream."""

    shape_id: str
    family: str
    split: str
    stream: Tuple[int, ...]
    recipe: Optional[ShapeRecipe] = None
    mesh_path: Optional[str] = None
    quarter_turns: int = 0

    def source(self) -> Dict[str, Any]:
        if self.recipe is not None:
            return {"kind": "procedural", "recipe": self.recipe.to_dict(),
                    "quarter_turns": self.quarter_turns}
        return {"kind": "mesh", "path": self.mesh_path, "quarter_turns": self.quarter_turns}


# ---------------------------------------------------------------------------
# helpers


def write_json(path: str, data: Any) -> str:
    """Write JSON with sorted keys; returns the sha256 of the bytes written."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    payload = (json.dumps(data, sort_keys=True, indent=2) + "\n").encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(payload)
    return hashlib.sha256(payload).hexdigest()


def read_json(path: str, producer: str) -> Any:
    if not os.path.exists(path):
        raise MissingArtifactError(path, producer)
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def _map(fn: Callable[[Any], Any], items: Sequence[Any], threads: int, desc: str) -> List[Any]:
    """Ordered map over ``items``, threaded when ``threads > 1``."""
    bar = tqdm(total=len(items), desc=desc, unit="shape", disable=not runtime.progress)
    try:
        if threads <= 1:
            results = []
            for item in items:
                results.append(fn(item))
                bar.update()
            return results
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = []
            for result in pool.map(fn, items):
                results.append(result)
                bar.update()
            return results
    finally:
        bar.close()


def _split_of(rank: int, total: int, fractions: Sequence[float]) -> str:
    n_train = int(round(total * fractions[0]))
    n_val = int(round(total * fractions[1]))
    if rank < n_train:
        return "train"
    if rank < n_train + n_val:
        return "val"
    return "test"


def _assign_splits(keys: Sequence[str], fractions: Sequence[float], seed: int) -> Dict[str, str]:
    """Split base shapes by a seeded permutation; every fracture of a shape shares its split."""
    order = np.random.default_rng([seed, 1]).permutation(len(keys))
    return {keys[index]: _split_of(rank, len(keys), fractions) for rank, index in enumerate(order)}


def _fracture_count(config: PipelineConfig, family: str) -> int:
    return config.dataset.fractures_per_shape * int(config.dataset.class_multiplicity.get(family, 1))


def _mesh_sources(mesh_dir: str) -> List[Tuple[str, str]]:
    """``(family, path)`` for every mesh under ``mesh_dir``; subdirectory names are families."""
    found = []
    for path in sorted(glob.glob(os.path.join(mesh_dir, "**", "*"), recursive=True)):
        if os.path.isfile(path) and path.lower().endswith(MESH_SUFFIXES):
            parent = os.path.relpath(os.path.dirname(path), mesh_dir)
            family = "mesh" if parent in ("", ".") else parent.replace(os.sep, "_")
            found.append((family, path))
    return found


def plan_jobs(config: PipelineConfig) -> List[ShapeJob]:
    """Deterministic list of fracture jobs for the dataset section."""
    dataset = config.dataset
    bases: List[Tuple[str, str, Optional[ShapeRecipe], Optional[str]]] = []
    if dataset.source == "procedural":
        for family_index, family in enumerate(dataset.families):
            for i in range(dataset.shapes_per_family):
                try:
                    recipe = make_shape(family, np.random.default_rng([dataset.seed, family_index, i]))
                except ValueError as e:
                    raise ConfigError(str(e)) from e
                bases.append((f"{family}_{i:03d}", family, recipe, None))
    else:
        for i, (family, path) in enumerate(_mesh_sources(dataset.mesh_dir)):
            stem = os.path.splitext(os.path.basename(path))[0]
            bases.append((f"{family}_{stem}", family, None, path))

    splits = _assign_splits([key for key, *_ in bases], dataset.splits, dataset.seed)
    jobs = []
    for base_index, (key, family, recipe, path) in enumerate(bases):
        for k in range(_fracture_count(config, family)):
            jobs.append(ShapeJob(
                shape_id=f"{key}_f{k}",
                family=family,
                split=splits[key],
                stream=(base_index, k),
                recipe=recipe,
                mesh_path=path,
                quarter_turns=k % 4 if dataset.rotate_90 else 0,
            ))
    return jobs


def complete_field(source: Dict[str, Any]) -> ShapeField:
    """Complete-shape field of a manifest source entry.

    Raises:
        OpenMeshError: If a mesh source is not closed.
    """
    if source["kind"] == "procedural":
        shape = ShapeRecipe.from_dict(source["recipe"]).field()
    else:
        mesh, _, _ = normalize_to_unit_cube(mesh_read(source["path"]))
        shape = mesh_shape(mesh, name=os.path.basename(source["path"]))
    turns = int(source.get("quarter_turns", 0))
    if turns:
        shape = transformed_shape(shape, rotation_about_z(turns))
    return shape


def fracture_settings(config: PipelineConfig,
                      resolution: Optional[int] = None) -> Tuple[FracturePrimitiveSpec, FractureConfig]:
    section = config.fracture
    try:
        spec = FracturePrimitiveSpec(
            kinds=tuple(section.primitive.kinds),
            kind_weights=None if section.primitive.kind_weights is None
            else tuple(section.primitive.kind_weights),
            scale_range=tuple(section.primitive.scale_range),
            seed=section.seed,
        )
        settings = FractureConfig(
            max_attempts=section.max_attempts,
            retention_lo=section.retention_lo,
            retention_hi=section.retention_hi,
            region_eps=section.region_eps,
            lambda_tps=section.lambda_tps,
            resolution=resolution or section.resolution,
            min_agreement=section.min_agreement,
        )
    except ValueError as e:
        raise ConfigError(f"Invalid [fracture] section: {e}") from e
    return spec, settings


def train_settings(config: PipelineConfig) -> TrainConfig:
    net, training = config.network, config.training
    return TrainConfig(
        epochs=training.epochs,
        shapes_per_batch=training.shapes_per_batch,
        points_per_shape=training.points_per_shape,
        lr_net=training.lr_net,
        lr_codes=training.lr_codes,
        heads=tuple(net.heads),
        code_dim_complete=net.code_dim_complete,
        code_dim_break=net.code_dim_break,
        hidden=net.hidden,
        depth=net.depth,
        skip_layer=net.skip_layer or None,
        seed=training.seed,
        snapshot_every=training.snapshot_every,
        dtype=training.dtype,
        progress=runtime.progress,
    )


def loss_weights(config: PipelineConfig) -> LossWeights:
    try:
        return LossWeights(**dataclasses.asdict(config.loss))
    except ValueError as e:
        raise ConfigError(f"Invalid [loss] section: {e}") from e


def inference_settings(config: PipelineConfig, resolution: Optional[int] = None,
                       progress: bool = True) -> InferenceConfig:
    section = config.inference
    return InferenceConfig(
        steps=section.steps,
        lr=section.lr,
        points=section.points,
        resolution=resolution or section.resolution,
        seed=section.seed,
        fallback=section.fallback,
        fallback_resolution=section.fallback_resolution,
        progress=progress,
    )


def load_manifest(paths: ArtifactPaths) -> Dict[str, Any]:
    return read_json(paths.manifest, "fracture")


def accepted_entries(manifest: Dict[str, Any], split: Optional[str] = None) -> List[Dict[str, Any]]:
    return [
        entry for entry in manifest["shapes"]
        if entry["status"] == "accepted" and (split is None or entry["split"] == split)
    ]


def load_tuple(paths: ArtifactPaths, entry: Dict[str, Any]) -> ShapeTuple:
    """Rebuild the ShapeTuple of an accepted manifest entry from its stored artifacts."""
    files = {name: os.path.join(paths.out_dir, rel) for name, rel in entry["files"].items()}
    for path in files.values():
        if not os.path.exists(path):
            raise MissingArtifactError(path, "fracture")
    with open(files["break_surface"], "r", encoding="utf-8") as handle:
        surface = BreakSurface.from_dict(json.load(handle))
    meshes = {name: mesh_read(files[name]) for name in ("complete", "fractured", "restoration")}
    return rebuild_tuple(
        entry["shape_id"],
        complete_field(entry["source"]),
        AnalyticPrimitive.from_dict(entry["primitive"]),
        surface,
        meshes,
        np.load(files["fracture_region"]),
        attempt=entry["attempt"],
        fraction=entry["removed_fraction"],
        agreement=entry.get("agreement", 1.0),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_fracture(config: PipelineConfig, out_dir: str, threads: int = 1,
                 resolution: Optional[int] = None) -> Dict[str, Any]:
    """Fracture every complete shape of the dataset and write the manifest.

    Shapes that fail (open meshes, unreadable files) or are rejected by the
    retention test are recorded in the manifest and skipped.
    """
    paths = ArtifactPaths(out_dir)
    spec, settings = fracture_settings(config, resolution)
    jobs = plan_jobs(config)
    logger.info("Fracturing %d shapes", len(jobs))

    def _run(job: ShapeJob) -> Dict[str, Any]:
        entry: Dict[str, Any] = {
            "shape_id": job.shape_id,
            "family": job.family,
            "split": job.split,
            "seed": [spec.seed, *job.stream],
            "source": job.source(),
        }
        try:
            complete = complete_field(entry["source"])
            outcome = attempt_fracture(job.shape_id, complete, spec, settings, stream=job.stream)
        except ShapeRepairError as e:
            logger.warning("Skipping %s: %s", job.shape_id, e)
            entry.update(status="failed", error=f"{type(e).__name__}: {e}")
            return entry
        if isinstance(outcome, Rejected):
            logger.warning("Rejected %s after %d attempts: %s", job.shape_id, outcome.attempts,
                           outcome.reason)
            entry.update(status="rejected", attempts=outcome.attempts, reason=outcome.reason,
                         fractions=[round(f, 6) for f in outcome.fractions])
            return entry
        entry.update(status="accepted", **_write_tuple(paths, outcome))
        return entry

    entries = _map(_run, jobs, threads, "fracture")
    manifest = {"version": 1, "shapes": entries}
    digest = write_json(paths.manifest, manifest)
    counts = {status: sum(e["status"] == status for e in entries)
              for status in ("accepted", "rejected", "failed")}
    summary = {"counts": counts, "manifest_sha256": digest,
               "splits": {s: len(accepted_entries(manifest, s)) for s in SPLITS}}
    write_json(os.path.join(out_dir, "dataset", "summary.json"), summary)
    logger.info("Accepted %d, rejected %d, failed %d fractures; manifest %s",
                counts["accepted"], counts["rejected"], counts["failed"], digest[:12])
    if counts["accepted"] == 0:
        logger.warning("No fracture passed the retention test")
    return {"manifest": manifest, **summary}


def _write_tuple(paths: ArtifactPaths, tuple_: ShapeTuple) -> Dict[str, Any]:
    directory = paths.shape_dir(tuple_.shape_id)
    os.makedirs(directory, exist_ok=True)
    files = {}
    for name, mesh in (("complete", tuple_.complete_mesh), ("fractured", tuple_.fractured_mesh),
                       ("restoration", tuple_.restoration_mesh)):
        mesh_write(os.path.join(directory, f"{name}.ply"), mesh)
        files[name] = f"{name}.ply"
    write_json(os.path.join(directory, "break_surface.json"), tuple_.break_surface.to_dict())
    files["break_surface"] = "break_surface.json"
    np.save(os.path.join(directory, "fracture_region.npy"), tuple_.fracture_region)
    files["fracture_region"] = "fracture_region.npy"
    rel = os.path.relpath(directory, paths.out_dir)
    return {
        "attempt": tuple_.attempt,
        "removed_fraction": round(float(tuple_.removed_fraction), 6),
        "agreement": round(float(tuple_.agreement), 6),
        "primitive": tuple_.primitive.to_dict(),
        "files": {name: os.path.join(rel, f) for name, f in files.items()},
    }


def cmd_sample(config: PipelineConfig, out_dir: str, threads: int = 1) -> Dict[str, Any]:
    """Draw and label probe points for every accepted fracture."""
    paths = ArtifactPaths(out_dir)
    manifest = load_manifest(paths)
    entries = accepted_entries(manifest)
    section = config.sampling
    order = {entry["shape_id"]: i for i, entry in enumerate(manifest["shapes"])}

    def _run(entry: Dict[str, Any]) -> Dict[str, Any]:
        shape_id = entry["shape_id"]
        try:
            tuple_ = load_tuple(paths, entry)
            points = sample_points(tuple_, section.n_total, section.surface_fraction,
                                   (section.sigma1, section.sigma2),
                                   seed=[section.seed, order[shape_id]])
            probes = label_points(tuple_, points)
            write_samples(paths.samples(shape_id), probes)
        except MissingArtifactError:
            raise
        except ShapeRepairError as e:
            logger.warning("Skipping samples for %s: %s", shape_id, e)
            return {"shape_id": shape_id, "status": "failed", "error": str(e)}
        agreement = label_agreement(probes)
        if agreement < config.fracture.min_agreement:
            logger.warning("Labels of %s recombine on only %.3f of sample points", shape_id, agreement)
        return {"shape_id": shape_id, "status": "ok", "count": len(probes),
                "label_agreement": round(agreement, 6)}

    results = _map(_run, entries, threads, "sample")
    summary = {"shapes": results, "written": sum(r["status"] == "ok" for r in results)}
    write_json(os.path.join(out_dir, "samples", "summary.json"), summary)
    logger.info("Wrote samples for %d of %d shapes", summary["written"], len(entries))
    return summary


def _load_probes(paths: ArtifactPaths, entries: Sequence[Dict[str, Any]]):
    dataset = []
    for entry in entries:
        path = paths.samples(entry["shape_id"])
        if not os.path.exists(path):
            raise MissingArtifactError(path, "sample")
        dataset.append((entry["shape_id"], read_samples(path)))
    return dataset


def cmd_train(config: PipelineConfig, out_dir: str, run_dir: Optional[str] = None) -> Dict[str, Any]:
    """Train both autodecoders on the training split."""
    paths = ArtifactPaths(out_dir, run_dir)
    cfg = train_settings(config)
    weights = loss_weights(config)
    entries = accepted_entries(load_manifest(paths), "train")[:config.training.max_shapes]
    if not entries:
        raise ConfigError("The training split holds no accepted fractures")
    dataset = _load_probes(paths, entries)
    logger.info("Training on %d shapes with heads %s", len(dataset), "+".join(cfg.heads))
    result = train(dataset, cfg, weights, checkpoint_path=paths.checkpoint, log_path=paths.train_log)
    summary = {
        "shapes": [shape_id for shape_id, _ in dataset],
        "heads": list(cfg.heads),
        "epochs": result.model.epoch,
        "final": {k: v for k, v in result.log[-1].items() if k != "wall_time"} if result.log else None,
    }
    write_json(os.path.join(paths.run, "model", "summary.json"), summary)
    return summary


def _fractured_sdf(mesh: TriangleMesh) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    try:
        query = MeshQuery(mesh)
    except (OpenMeshError, ValueError) as e:
        logger.warning("No subtraction fallback: %s", e)
        return None
    return lambda points: query.evaluate(points)[1]


def cmd_infer(config: PipelineConfig, out_dir: str, threads: int = 1,
              resolution: Optional[int] = None, run_dir: Optional[str] = None) -> Dict[str, Any]:
    """Infer codes and extract restorations for the configured split.

    Raises:
        ArchitectureMismatchError: If the checkpoint was trained with other heads or sizes.
    """
    paths = ArtifactPaths(out_dir, run_dir)
    if not os.path.exists(paths.checkpoint):
        raise MissingArtifactError(paths.checkpoint, "train")
    cfg = train_settings(config)
    model, _ = RepairModel.load(paths.checkpoint, expected=cfg.net_specs(), dtype=np.dtype(cfg.dtype))
    weights = loss_weights(config)
    manifest = load_manifest(paths)
    order = {entry["shape_id"]: i for i, entry in enumerate(manifest["shapes"])}
    entries = accepted_entries(manifest, config.inference.split)
    settings = inference_settings(config, resolution, progress=runtime.progress and threads <= 1)
    probes = dict(_load_probes(paths, entries))

    def _run(entry: Dict[str, Any]) -> Dict[str, Any]:
        shape_id = entry["shape_id"]
        fractured_mesh = mesh_read(os.path.join(out_dir, entry["files"]["fractured"]))
        result = infer_shape(model, shape_id, probes[shape_id], weights, settings,
                             seed=[settings.seed, order[shape_id]],
                             fractured_sdf=_fractured_sdf(fractured_mesh))
        directory = paths.inference_dir(shape_id)
        os.makedirs(directory, exist_ok=True)
        if not result.is_empty:
            mesh_write(os.path.join(directory, "restoration.ply"), result.restoration_mesh)
        if not result.complete_mesh.is_empty:
            mesh_write(os.path.join(directory, "complete.ply"), result.complete_mesh)
        has_fallback = result.fallback_mesh is not None and not result.fallback_mesh.is_empty
        if has_fallback:
            mesh_write(os.path.join(directory, "fallback.ply"), result.fallback_mesh)
        np.savez(os.path.join(directory, "codes.npz"), z_c=result.z_c, z_b=result.z_b)
        return {
            "shape_id": shape_id,
            "family": entry["family"],
            "empty": result.is_empty,
            "fallback": has_fallback,
            "final_loss": result.trace[-1] if result.trace else None,
        }

    records = _map(_run, entries, threads, "infer")
    empty = sum(r["empty"] for r in records)
    summary = {"split": config.inference.split, "shapes": records,
               "ne_pct": 100.0 * (len(records) - empty) / len(records) if records else None}
    write_json(paths.inference_summary, summary)
    logger.info("Inferred %d restorations, %d empty", len(records), empty)
    return summary


def evaluate_entry(paths: ArtifactPaths, entry: Dict[str, Any], record: Dict[str, Any],
                   config: PipelineConfig) -> Dict[str, Any]:
    """Metric row of one inferred shape; empty restorations get null metrics."""
    row = {"shape_id": entry["shape_id"], "family": entry["family"],
           "cd": np.nan, "nc": np.nan, "nfre": np.nan, "empty": bool(record["empty"])}
    if row["empty"]:
        return row
    predicted_path = os.path.join(paths.inference_dir(entry["shape_id"]), "restoration.ply")
    if not os.path.exists(predicted_path):
        raise MissingArtifactError(predicted_path, "infer")
    predicted = mesh_read(predicted_path)
    gt = mesh_read(os.path.join(paths.out_dir, entry["files"]["restoration"]))
    fractured = mesh_read(os.path.join(paths.out_dir, entry["files"]["fractured"]))
    region = np.load(os.path.join(paths.out_dir, entry["files"]["fracture_region"]))
    region_faces = region[fractured.triangles].all(axis=1)
    section = config.eval
    row["cd"] = chamfer_distance(predicted, gt, section.n_samples, section.seed)
    row["nc"] = normal_consistency(predicted, gt, section.n_samples, section.seed)
    row["nfre"] = nfre(fractured, region_faces, predicted, gt, section.n_samples, section.eta,
                       section.seed)
    return row


def cmd_eval(config: PipelineConfig, out_dir: str, threads: int = 1,
             run_dir: Optional[str] = None) -> Dict[str, Any]:
    """Score inferred restorations against ground truth and write the report."""
    paths = ArtifactPaths(out_dir, run_dir)
    inferred = read_json(paths.inference_summary, "infer")
    entries = {entry["shape_id"]: entry for entry in load_manifest(paths)["shapes"]}

    def _run(record: Dict[str, Any]) -> Optional[Dict[str, Any]]:
        try:
            return evaluate_entry(paths, entries[record["shape_id"]], record, config)
        except MissingArtifactError:
            raise
        except ShapeRepairError as e:
            logger.warning("Skipping evaluation of %s: %s", record["shape_id"], e)
            return None

    rows = [row for row in _map(_run, inferred["shapes"], threads, "eval") if row is not None]
    report = summarize(rows)
    os.makedirs(paths.eval_dir, exist_ok=True)
    write_json(os.path.join(paths.eval_dir, "report.json"), report.to_dict())
    report.table().to_csv(os.path.join(paths.eval_dir, "table.csv"), float_format="%.6f")
    save_to_parquet(report.records, get_parquet_path(paths.run))
    return report.to_dict()


def cmd_report(out_dir: str, run_dir: Optional[str] = None) -> Dict[str, Any]:
    """Summarize stored evaluation records: counts, families, NE% and empty restorations."""
    parquet_path = get_parquet_path(ArtifactPaths(out_dir, run_dir).run)
    summary = extract_summary_from_parquet(parquet_path)
    if summary is None:
        raise MissingArtifactError(parquet_path, "eval")
    summary["empty_shapes"] = extract_empty_from_parquet(parquet_path) or []
    records = load_from_parquet(parquet_path)
    summary["ne_pct_by_family"] = (
        records.groupby("family")["empty"].apply(lambda e: 100.0 * float((~e.astype(bool)).mean()))
        .round(2).to_dict()
    )
    return summary


def cmd_export(source: str, destination: str, fmt: Optional[str] = None,
               binary: bool = True) -> str:
    """Convert a mesh between OBJ and PLY."""
    mesh = mesh_read(source)
    mesh_write(destination, mesh, fmt=fmt, binary=binary)
    logger.info("Exported %s (%d vertices, %d triangles) to %s",
                source, len(mesh.vertices), len(mesh.triangles), destination)
    return destination


def cmd_ablate(config: PipelineConfig, out_dir: str, threads: int = 1,
               resolution: Optional[int] = None,
               names: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Train, infer and evaluate once per head configuration on the shared dataset.

    Returns:
        One row per configuration with the mean-of-class-means metrics and NE%.
    """
    names = list(names or ABLATION_CONFIGS)
    unknown = [name for name in names if name not in ABLATION_CONFIGS]
    if unknown:
        raise ConfigError(f"Unknown ablation configs {unknown}; known: {list(ABLATION_CONFIGS)}")
    rows = []
    for name in names:
        variant = dataclasses.replace(
            config, network=dataclasses.replace(config.network, heads=list(ABLATION_CONFIGS[name]))
        )
        run_dir = os.path.join(out_dir, "ablation", name.replace("+", "_"))
        logger.info("Ablation %s", name)
        cmd_train(variant, out_dir, run_dir=run_dir)
        cmd_infer(variant, out_dir, threads, resolution, run_dir=run_dir)
        report = cmd_eval(variant, out_dir, threads, run_dir=run_dir)
        rows.append({"config": name, **report["mean"], "overall_ne_pct": report["ne_pct"]})
    table = pd.DataFrame(rows)
    table.to_csv(os.path.join(out_dir, "ablation", "table.csv"), index=False, float_format="%.6f")
    write_json(os.path.join(out_dir, "ablation", "summary.json"), rows)
    return table


def run_full_pipeline(config: PipelineConfig, out_dir: str, threads: int = 1,
                      resolution: Optional[int] = None) -> Dict[str, Any]:
    """Run fracture, sample, train, infer and eval in order.

    Returns:
        Dictionary containing the summary of every stage.
    """
    return {
        "fracture": cmd_fracture(config, out_dir, threads, resolution),
        "sample": cmd_sample(config, out_dir, threads),
        "train": cmd_train(config, out_dir),
        "infer": cmd_infer(config, out_dir, threads, resolution),
        "eval": cmd_eval(config, out_dir, threads),
    }
