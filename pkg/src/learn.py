"""Training of the complete/break autodecoders, code inference and restoration extraction."""

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm.auto import tqdm

from .errors import ConfigError, NonFiniteLossError
from .fields import subtract_sdf
from .geometry import TriangleMesh
from .losses import LossResult, LossWeights, loss_cb, loss_f, loss_r, loss_reg
from .mesher import marching_cubes
from .neural import (
    AdamState,
    AutodecoderNet,
    HeadGrads,
    NetOutput,
    NetSpec,
    adam_step,
    init_codes,
    load_checkpoint,
    save_checkpoint,
)
from .sampling import ProbeSet, write_samples

logger = logging.getLogger(__name__)

ABLATION_CONFIGS: Dict[str, Tuple[str, ...]] = {
    "Occ": ("occ",),
    "SDF": ("sdf",),
    "SDF+NF": ("sdf", "nf"),
    "Occ+SDF": ("occ", "sdf"),
    "Occ+SDF+NF": ("occ", "sdf", "nf"),
}


def validate_heads(heads: Sequence[str]) -> Tuple[str, ...]:
    """Reject empty feature masks and normal heads without a branch predicate."""
    heads = tuple(heads)
    if not heads:
        raise ConfigError("Feature mask is empty; enable at least one of occ, sdf, nf")
    unknown = [h for h in heads if h not in ("occ", "sdf", "nf")]
    if unknown:
        raise ConfigError(f"Unknown heads {unknown} in feature mask {heads}")
    if "nf" in heads and "occ" not in heads and "sdf" not in heads:
        raise ConfigError("A normal head needs an occupancy or SDF head for its branch test")
    return heads


@dataclass
class TrainConfig:
    """Training schedule and architecture.

    ``shapes_per_batch`` x ``points_per_shape`` points make one optimization
    step; every shape is visited once per epoch.
    """

    epochs: int = 2000
    shapes_per_batch: int = 4
    points_per_shape: int = 8192
    lr_net: float = 5e-4
    lr_codes: float = 1e-3
    heads: Tuple[str, ...] = ("occ", "sdf", "nf")
    code_dim_complete: int = 128
    code_dim_break: int = 64
    hidden: int = 512
    depth: int = 8
    skip_layer: Optional[int] = 4
    seed: int = 0
    snapshot_every: int = 0
    dtype: str = "float32"
    progress: bool = True

    def __post_init__(self):
        self.heads = validate_heads(self.heads)
        for name in ("epochs", "shapes_per_batch", "points_per_shape", "hidden", "depth",
                     "code_dim_complete", "code_dim_break"):
            if getattr(self, name) < 1:
                raise ConfigError(f"training.{name} must be positive, got {getattr(self, name)}")
        if self.snapshot_every < 0:
            raise ConfigError(f"training.snapshot_every must be >= 0, got {self.snapshot_every}")

    def net_specs(self) -> Tuple[NetSpec, NetSpec]:
        common = dict(hidden=self.hidden, depth=self.depth, skip_layer=self.skip_layer,
                      heads=self.heads)
        return (NetSpec(code_dim=self.code_dim_complete, **common),
                NetSpec(code_dim=self.code_dim_break, **common))


@dataclass
class InferenceConfig:
    steps: int = 800
    lr: float = 1e-3
    points: int = 8192
    resolution: int = 128
    seed: int = 0
    fallback: bool = True
    fallback_resolution: int = 48
    progress: bool = True

    def __post_init__(self):
        if self.steps < 0 or self.points < 1 or self.resolution < 2:
            raise ConfigError(
                f"inference needs steps >= 0, points >= 1 and resolution >= 2, got "
                f"{self.steps}, {self.points}, {self.resolution}"
            )


class RepairModel:
    """The two autodecoders, their code tables and optimizer state."""

    def __init__(self, spec_c: NetSpec, spec_b: NetSpec, shape_ids: Sequence[str],
                 seed: int = 0, dtype: Any = np.float32, lr_net: float = 5e-4,
                 lr_codes: float = 1e-3):
        rng = np.random.default_rng([seed, 0])
        self.net_c = AutodecoderNet(spec_c, seed=[seed, 1], dtype=dtype)
        self.net_b = AutodecoderNet(spec_b, seed=[seed, 2], dtype=dtype)
        self.shape_ids = list(shape_ids)
        self.codes_c = init_codes(len(self.shape_ids), spec_c.code_dim, rng)
        self.codes_b = init_codes(len(self.shape_ids), spec_b.code_dim, rng)
        self.adam_net = AdamState(lr=lr_net)
        self.adam_codes = AdamState(lr=lr_codes)
        self.epoch = 0

    @property
    def heads(self) -> Tuple[str, ...]:
        return self.net_c.spec.heads

    def net_params(self) -> Dict[str, np.ndarray]:
        params = {f"c/{k}": v for k, v in self.net_c.params.items()}
        params.update({f"b/{k}": v for k, v in self.net_b.params.items()})
        return params

    def set_net_params(self, params: Dict[str, np.ndarray]) -> None:
        for key, value in params.items():
            net = self.net_c if key.startswith("c/") else self.net_b
            net.params[key[2:]] = value

    def code_index(self, shape_id: str) -> int:
        return self.shape_ids.index(shape_id)

    def save(self, path: str, extra: Optional[Dict[str, Any]] = None) -> None:
        arrays: Dict[str, np.ndarray] = dict(self.net_params())
        arrays["codes/c"] = self.codes_c
        arrays["codes/b"] = self.codes_b
        for tag, state in (("net", self.adam_net), ("codes", self.adam_codes)):
            for moment in ("m", "v"):
                for key, value in getattr(state, moment).items():
                    arrays[f"adam/{tag}/{moment}/{key}"] = value
        meta = {
            "specs": {"complete": self.net_c.spec.to_dict(), "break": self.net_b.spec.to_dict()},
            "shape_ids": self.shape_ids,
            "adam": {
                tag: {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "step": s.step}
                for tag, s in (("net", self.adam_net), ("codes", self.adam_codes))
            },
            "epoch": self.epoch,
        }
        meta.update(extra or {})
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path: str, expected: Optional[Tuple[NetSpec, NetSpec]] = None,
             dtype: Any = np.float32) -> Tuple["RepairModel", Dict[str, Any]]:
        """Restore a model; ``expected`` specs must match the stored architecture."""
        specs = None if expected is None else {"complete": expected[0], "break": expected[1]}
        arrays, meta = load_checkpoint(path, specs)
        spec_c = NetSpec.from_dict(meta["specs"]["complete"])
        spec_b = NetSpec.from_dict(meta["specs"]["break"])
        model = cls.__new__(cls)
        model.net_c = AutodecoderNet(spec_c, dtype=dtype, params={
            k[2:]: v for k, v in arrays.items() if k.startswith("c/")})
        model.net_b = AutodecoderNet(spec_b, dtype=dtype, params={
            k[2:]: v for k, v in arrays.items() if k.startswith("b/")})
        model.shape_ids = list(meta["shape_ids"])
        model.codes_c = arrays["codes/c"].astype(np.float64)
        model.codes_b = arrays["codes/b"].astype(np.float64)
        states = {}
        for tag in ("net", "codes"):
            info = meta["adam"][tag]
            state = AdamState(lr=info["lr"], beta1=info["beta1"], beta2=info["beta2"],
                              eps=info["eps"], step=info["step"])
            prefix = f"adam/{tag}/"
            for key, value in arrays.items():
                if key.startswith(prefix):
                    moment, name = key[len(prefix):].split("/", 1)
                    getattr(state, moment)[name] = value.astype(np.float64)
            states[tag] = state
        model.adam_net, model.adam_codes = states["net"], states["codes"]
        model.epoch = int(meta.get("epoch", 0))
        return model, meta


@dataclass
class TrainResult:
    model: RepairModel
    log: List[Dict[str, float]] = field(default_factory=list)


def _combine(*results: LossResult) -> Tuple[HeadGrads, HeadGrads]:
    grads_c, grads_b = HeadGrads(), HeadGrads()
    for result in results:
        for total, part in ((grads_c, result.grads_c), (grads_b, result.grads_b)):
            for head in ("occ", "sdf", "nf"):
                value = getattr(part, head)
                if value is not None:
                    current = getattr(total, head)
                    setattr(total, head, value if current is None else current + value)
    return grads_c, grads_b


def _draw_points(rng: np.random.Generator, size: int, count: int) -> np.ndarray:
    if size >= count:
        return np.sort(rng.choice(size, size=count, replace=False))
    return np.sort(rng.integers(size, size=count))


def train_step(model: RepairModel, batch: ProbeSet, rows: np.ndarray,
               weights: LossWeights) -> Dict[str, float]:
    """One optimization step over a batch of points; ``rows[i]`` is the code row of point i.

    Returns the loss parts ``L_CB``, ``L_F``, ``L_R``, ``L_reg`` and ``total``.
    """
    points = batch.points
    out_c, cache_c = model.net_c.forward(model.codes_c[rows], points)
    out_b, cache_b = model.net_b.forward(model.codes_b[rows], points)
    l_cb = loss_cb(out_c, out_b, batch.label("c"), batch.label("b"), weights)
    l_f = loss_f(out_c, out_b, batch.label("f"), weights)
    l_r = loss_r(out_c, out_b, batch.label("r"), weights)

    shapes = np.unique(rows)
    reg_value, reg_c, reg_b = loss_reg(model.codes_c[shapes], model.codes_b[shapes],
                                       weights.lambda_reg)
    reg_value /= len(shapes)
    total = l_cb.value + l_f.value + l_r.value + reg_value
    if not np.isfinite(total):
        raise NonFiniteLossError(f"Training loss is {total}")

    grads_c, grads_b = _combine(l_cb, l_f, l_r)
    pgrad_c, zgrad_c = model.net_c.backward(cache_c, grads_c)
    pgrad_b, zgrad_b = model.net_b.backward(cache_b, grads_b)

    code_grads = {"c": np.zeros_like(model.codes_c), "b": np.zeros_like(model.codes_b)}
    np.add.at(code_grads["c"], rows, zgrad_c.astype(np.float64))
    np.add.at(code_grads["b"], rows, zgrad_b.astype(np.float64))
    code_grads["c"][shapes] += reg_c / len(shapes)
    code_grads["b"][shapes] += reg_b / len(shapes)

    params = model.net_params()
    grads = {f"c/{k}": v for k, v in pgrad_c.items()}
    grads.update({f"b/{k}": v for k, v in pgrad_b.items()})
    model.set_net_params(adam_step(model.adam_net, params, grads))
    codes = adam_step(model.adam_codes, {"c": model.codes_c, "b": model.codes_b}, code_grads)
    model.codes_c, model.codes_b = codes["c"], codes["b"]
    return {"L_CB": l_cb.value, "L_F": l_f.value, "L_R": l_r.value, "L_reg": reg_value,
            "total": total}


def train(dataset: Sequence[Tuple[str, ProbeSet]], cfg: TrainConfig,
          weights: Optional[LossWeights] = None, checkpoint_path: Optional[str] = None,
          log_path: Optional[str] = None, model: Optional[RepairModel] = None) -> TrainResult:
    """Jointly optimize both networks and all latent codes.

    Args:
        dataset: ``(shape_id, probes)`` pairs.
        cfg: Training schedule.
        weights: Loss weights (defaults when None).
        checkpoint_path: Where snapshots and the final checkpoint are written.
        log_path: JSON-lines training log, one record per epoch.
        model: Resume from this model instead of a fresh one.

    Raises:
        ValueError: If the dataset is empty.
        NonFiniteLossError: If a loss becomes NaN or infinite; the batch is
            dumped next to the log when ``log_path`` is set.
    """
    if not dataset:
        raise ValueError("Training needs at least one shape")
    weights = weights or LossWeights()
    ids = [shape_id for shape_id, _ in dataset]
    if model is None:
        spec_c, spec_b = cfg.net_specs()
        model = RepairModel(spec_c, spec_b, ids, seed=cfg.seed, dtype=np.dtype(cfg.dtype),
                            lr_net=cfg.lr_net, lr_codes=cfg.lr_codes)
    result = TrainResult(model)
    log_handle = None
    if log_path:
        os.makedirs(os.path.dirname(log_path) or ".", exist_ok=True)
        log_handle = open(log_path, "w", encoding="utf-8")

    try:
        epochs = range(model.epoch, cfg.epochs)
        for epoch in tqdm(epochs, desc="train", unit="epoch", disable=not cfg.progress):
            started = time.perf_counter()
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(len(dataset))
            sums: Dict[str, float] = {}
            batches = 0
            for start in range(0, len(order), cfg.shapes_per_batch):
                members = order[start:start + cfg.shapes_per_batch]
                parts, rows = [], []
                for member in members:
                    shape_id, probes = dataset[member]
                    parts.append(probes.records[_draw_points(rng, len(probes), cfg.points_per_shape)])
                    rows.append(np.full(cfg.points_per_shape, model.code_index(shape_id)))
                batch = ProbeSet(np.concatenate(parts))
                try:
                    losses = train_step(model, batch, np.concatenate(rows), weights)
                except NonFiniteLossError as e:
                    dump = None
                    if log_path:
                        dump = os.path.join(os.path.dirname(log_path), "nonfinite_batch.bin")
                        write_samples(dump, batch)
                    raise NonFiniteLossError(f"{e} at epoch {epoch}", dump_path=dump) from e
                for key, value in losses.items():
                    sums[key] = sums.get(key, 0.0) + value
                batches += 1
            record = {"epoch": epoch}
            record.update({key: sums[key] / batches for key in ("L_CB", "L_F", "L_R", "L_reg")})
            record["wall_time"] = time.perf_counter() - started
            result.log.append(record)
            if log_handle:
                log_handle.write(json.dumps(record, sort_keys=True) + "\n")
                log_handle.flush()
            model.epoch = epoch + 1
            if checkpoint_path and cfg.snapshot_every and model.epoch % cfg.snapshot_every == 0:
                model.save(checkpoint_path)
    finally:
        if log_handle:
            log_handle.close()

    if checkpoint_path:
        model.save(checkpoint_path)
    if result.log:
        logger.info("Trained %d epochs; final L_CB=%.5f L_F=%.5f L_R=%.5f",
                    len(result.log), result.log[-1]["L_CB"], result.log[-1]["L_F"],
                    result.log[-1]["L_R"])
    return result


def infer_codes(model: RepairModel, fractured: ProbeSet, weights: Optional[LossWeights] = None,
                cfg: Optional[InferenceConfig] = None, seed: Any = None,
                ) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """Fit fresh complete and break codes to fractured-shape samples with frozen networks.

    Only the ``f`` labels of ``fractured`` are used. The objective is the
    fractured loss plus the code prior.

    Returns:
        ``(z_c, z_b, trace)`` with one loss value per step.
    """
    weights = weights or LossWeights()
    cfg = cfg or InferenceConfig()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    z_c = init_codes(1, model.net_c.spec.code_dim, rng)[0]
    z_b = init_codes(1, model.net_b.spec.code_dim, rng)[0]
    trace: List[float] = []
    state = AdamState(lr=cfg.lr)
    for step in tqdm(range(cfg.steps), desc="infer", unit="step", leave=False,
                     disable=not cfg.progress):
        batch = fractured.subset(_draw_points(rng, len(fractured), min(cfg.points, len(fractured))))
        points = batch.points
        out_c, cache_c = model.net_c.forward(z_c, points)
        out_b, cache_b = model.net_b.forward(z_b, points)
        result = loss_f(out_c, out_b, batch.label("f"), weights)
        reg_value, reg_c, reg_b = loss_reg(z_c, z_b, weights.lambda_reg)
        total = result.value + reg_value
        if not np.isfinite(total):
            raise NonFiniteLossError(f"Inference loss is {total} at step {step}")
        trace.append(float(total))
        _, zgrad_c = model.net_c.backward(cache_c, result.grads_c, need_param_grads=False)
        _, zgrad_b = model.net_b.backward(cache_b, result.grads_b, need_param_grads=False)
        grads = {"c": zgrad_c.sum(axis=0, dtype=np.float64) + reg_c,
                 "b": zgrad_b.sum(axis=0, dtype=np.float64) + reg_b}
        codes = adam_step(state, {"c": z_c, "b": z_b}, grads)
        z_c, z_b = codes["c"], codes["b"]
    return z_c, z_b, trace


Predictor = Callable[[np.ndarray], Any]


def code_predictor(net: AutodecoderNet, code: np.ndarray, chunk: int = 65536) -> Predictor:
    """Point evaluator of one network at a fixed code, in chunks."""
    def _predict(points: np.ndarray) -> NetOutput:
        outputs = [net(code, points[i:i + chunk]) for i in range(0, len(points), chunk)]
        merged = NetOutput()
        for head in ("occ", "sdf", "nf"):
            values = [getattr(o, head) for o in outputs]
            if values and values[0] is not None:
                setattr(merged, head, np.concatenate(values).astype(np.float64))
        return merged

    return _predict


def restoration_field(complete: Predictor, break_: Predictor) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar field whose zero level set is the restoration.

    Uses ``max(f^C_s, -f^B_s)`` when both predictors expose an SDF and the
    relaxed occupancy ``0.5 - o_C (1 - o_B)`` otherwise.
    """
    def _field(points: np.ndarray) -> np.ndarray:
        c, b = complete(points), break_(points)
        if c.sdf is not None and b.sdf is not None:
            return subtract_sdf(np.asarray(c.sdf, dtype=np.float64), np.asarray(b.sdf, dtype=np.float64))
        return 0.5 - np.asarray(c.occ, dtype=np.float64) * (1.0 - np.asarray(b.occ, dtype=np.float64))

    return _field


def complete_field(complete: Predictor) -> Callable[[np.ndarray], np.ndarray]:
    def _field(points: np.ndarray) -> np.ndarray:
        c = complete(points)
        if c.sdf is not None:
            return np.asarray(c.sdf, dtype=np.float64)
        return 0.5 - np.asarray(c.occ, dtype=np.float64)

    return _field


def extract_restoration(complete: Predictor, break_: Predictor, resolution: int,
                        progress: bool = False) -> TriangleMesh:
    """Marching cubes of the restoration field; an empty mesh is a valid result.

    ``complete`` and ``break_`` map points to anything with ``sdf`` / ``occ``
    attributes: network predictors or analytic fields.
    """
    return marching_cubes(restoration_field(complete, break_), resolution, progress=progress)


@dataclass
class InferenceResult:
    shape_id: str
    z_c: np.ndarray
    z_b: np.ndarray
    restoration_mesh: TriangleMesh
    complete_mesh: TriangleMesh
    trace: List[float] = field(default_factory=list)
    fallback_mesh: Optional[TriangleMesh] = None

    @property
    def is_empty(self) -> bool:
        return self.restoration_mesh.is_empty


def fallback_restoration(complete: Predictor, fractured_sdf: Callable[[np.ndarray], np.ndarray],
                         resolution: int) -> TriangleMesh:
    """Subtract the fractured input from the predicted complete shape: ``max(f^C, -s_F)``."""
    c_field = complete_field(complete)
    return marching_cubes(lambda p: subtract_sdf(c_field(p), fractured_sdf(p)), resolution)


def infer_shape(model: RepairModel, shape_id: str, fractured: ProbeSet,
                weights: Optional[LossWeights] = None, cfg: Optional[InferenceConfig] = None,
                seed: Any = None,
                fractured_sdf: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                ) -> InferenceResult:
    """Infer codes for one fractured shape and extract its restoration and complete meshes."""
    cfg = cfg or InferenceConfig()
    z_c, z_b, trace = infer_codes(model, fractured, weights, cfg, seed)
    complete = code_predictor(model.net_c, z_c)
    break_ = code_predictor(model.net_b, z_b)
    restoration = extract_restoration(complete, break_, cfg.resolution)
    complete_mesh = marching_cubes(complete_field(complete), cfg.resolution)
    fallback = None
    if restoration.is_empty and cfg.fallback and fractured_sdf is not None:
        fallback = fallback_restoration(complete, fractured_sdf, cfg.fallback_resolution)
    if restoration.is_empty:
        logger.warning("Empty restoration for %s", shape_id)
    return InferenceResult(shape_id, z_c, z_b, restoration, complete_mesh, trace, fallback)
