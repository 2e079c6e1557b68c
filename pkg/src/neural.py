"""Autodecoder MLPs with hand-derived gradients, latent codes, Adam and checkpoints.

Each network maps ``(code, point)`` to occupancy, SDF and normal heads::

    x0 = [z, p] -> (Linear, ReLU) x depth, with x0 concatenated back in at
    ``skip_layer`` -> occ = sigmoid(.), sdf = scale * tanh(.), nf = v / max(|v|, 1e-8)

Gradients are derived by hand for this fixed architecture.
"""

import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import ArchitectureMismatchError, DimensionMismatchError, MeshIOError, ParseError

logger = logging.getLogger(__name__)

HEADS = ("occ", "sdf", "nf")
HEAD_DIMS = {"occ": 1, "sdf": 1, "nf": 3}
NF_EPS = 1e-8
CODE_INIT_STD = 0.01

CHECKPOINT_MAGIC = b"SRCKPT\x00\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetSpec:
    """Architecture of one autodecoder network.

    Attributes:
        code_dim: Latent code length (128 for complete, 64 for break shapes).
        hidden: Width of every hidden layer.
        depth: Number of hidden layers.
        skip_layer: Hidden layer whose input is concatenated with ``[z, p]``;
            ``None`` or out of range disables the skip.
        heads: Enabled output heads, a non-empty subset of ``occ, sdf, nf``.
        sdf_scale: Output range of the tanh-scaled SDF head.
    """

    code_dim: int = 128
    hidden: int = 512
    depth: int = 8
    skip_layer: Optional[int] = 4
    heads: Tuple[str, ...] = HEADS
    sdf_scale: float = 0.1

    def __post_init__(self):
        heads = tuple(h for h in HEADS if h in self.heads)
        unknown = [h for h in self.heads if h not in HEADS]
        if unknown or not heads:
            raise ValueError(f"heads must be a non-empty subset of {HEADS}, got {self.heads}")
        object.__setattr__(self, "heads", heads)
        if self.code_dim < 1 or self.hidden < 1 or self.depth < 1:
            raise ValueError(
                f"code_dim, hidden and depth must be positive, got "
                f"{self.code_dim}, {self.hidden}, {self.depth}"
            )

    @property
    def input_dim(self) -> int:
        return self.code_dim + 3

    @property
    def has_skip(self) -> bool:
        return self.skip_layer is not None and 0 < self.skip_layer < self.depth

    def layer_input_dim(self, k: int) -> int:
        if k == 0:
            return self.input_dim
        if self.has_skip and k == self.skip_layer:
            return self.hidden + self.input_dim
        return self.hidden

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["heads"] = list(self.heads)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetSpec":
        return cls(**dict(data, heads=tuple(data["heads"])))


@dataclass
class NetOutput:
    """Head outputs; disabled heads are ``None``."""

    occ: Optional[np.ndarray] = None
    sdf: Optional[np.ndarray] = None
    nf: Optional[np.ndarray] = None


@dataclass
class HeadGrads:
    """Loss gradients with respect to the head outputs; ``None`` means zero."""

    occ: Optional[np.ndarray] = None
    sdf: Optional[np.ndarray] = None
    nf: Optional[np.ndarray] = None


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    hidden: np.ndarray
    output: NetOutput
    sdf_tanh: Optional[np.ndarray] = None
    nf_raw_norm: Optional[np.ndarray] = None


class AutodecoderNet:
    """MLP ``f(z, p) -> (occ, sdf, nf)`` with exact reverse-mode gradients."""

    def __init__(self, spec: NetSpec, seed: Any = 0, dtype: Any = np.float32,
                 params: Optional[Dict[str, np.ndarray]] = None):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params = self._init_params(np.random.default_rng(seed)) if params is None else {
            name: np.asarray(value, dtype=self.dtype) for name, value in params.items()
        }
        expected = self.param_shapes()
        for name, shape in expected.items():
            if name not in self.params or self.params[name].shape != shape:
                got = self.params[name].shape if name in self.params else None
                raise DimensionMismatchError(f"Parameter {name} expected shape {shape}, got {got}")

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes: Dict[str, Tuple[int, ...]] = {}
        for k in range(self.spec.depth):
            shapes[f"W{k}"] = (self.spec.layer_input_dim(k), self.spec.hidden)
            shapes[f"b{k}"] = (self.spec.hidden,)
        for head in HEADS:
            shapes[f"{head}_W"] = (self.spec.hidden, HEAD_DIMS[head])
            shapes[f"{head}_b"] = (HEAD_DIMS[head],)
        return shapes

    def _init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = {}
        for name, shape in self.param_shapes().items():
            if name.startswith("W"):
                params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
            elif name.endswith("_W"):
                params[name] = rng.normal(0.0, np.sqrt(1.0 / shape[0]), size=shape)
            else:
                params[name] = np.zeros(shape)
            params[name] = params[name].astype(self.dtype)
        return params

    def zero_grads(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def _inputs(self, codes: np.ndarray, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=self.dtype).reshape(-1, 3)
        codes = np.asarray(codes, dtype=self.dtype)
        if codes.ndim == 1:
            codes = np.broadcast_to(codes, (len(points), len(codes)))
        if codes.shape != (len(points), self.spec.code_dim):
            raise DimensionMismatchError(
                f"Expected codes of length {self.spec.code_dim} for {len(points)} points, "
                f"got shape {codes.shape}"
            )
        return np.concatenate([codes, points], axis=1)

    def forward(self, codes: np.ndarray, points: np.ndarray,
                heads: Optional[Tuple[str, ...]] = None) -> Tuple[NetOutput, ForwardCache]:
        """Evaluate the enabled heads.

        Args:
            codes: One code ``(p,)`` shared by all points, or one per point ``(N, p)``.
            points: ``(N, 3)`` query points.
            heads: Subset of the network's heads to evaluate (default: all enabled).

        Raises:
            DimensionMismatchError: If the code length does not match ``NetSpec.code_dim``.
        """
        active = self.spec.heads if heads is None else tuple(h for h in self.spec.heads if h in heads)
        x0 = self._inputs(codes, points)
        h = x0
        inputs, pre = [], []
        for k in range(self.spec.depth):
            inp = np.concatenate([h, x0], axis=1) if self.spec.has_skip and k == self.spec.skip_layer else h
            a = inp @ self.params[f"W{k}"] + self.params[f"b{k}"]
            inputs.append(inp)
            pre.append(a)
            h = np.maximum(a, 0)

        out = NetOutput()
        cache = ForwardCache(inputs, pre, h, out)
        if "occ" in active:
            out.occ = expit(h @ self.params["occ_W"] + self.params["occ_b"])[:, 0]
        if "sdf" in active:
            cache.sdf_tanh = np.tanh(h @ self.params["sdf_W"] + self.params["sdf_b"])[:, 0]
            out.sdf = self.spec.sdf_scale * cache.sdf_tanh
        if "nf" in active:
            raw = h @ self.params["nf_W"] + self.params["nf_b"]
            norm = np.linalg.norm(raw, axis=1)
            cache.nf_raw_norm = norm
            out.nf = raw / np.maximum(norm, NF_EPS)[:, None]
        return out, cache

    def __call__(self, codes: np.ndarray, points: np.ndarray) -> NetOutput:
        return self.forward(codes, points)[0]

    def backward(self, cache: ForwardCache, grads: HeadGrads,
                 need_param_grads: bool = True) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        """Backpropagate head gradients.

        Returns:
            ``(param_grads, code_grads)``; ``code_grads`` is per point ``(N, p)``.
            Parameter gradients are all zero when ``need_param_grads`` is False.
        """
        out = cache.output
        h = cache.hidden
        param_grads = self.zero_grads()
        d_h = np.zeros_like(h)

        head_terms = []
        if grads.occ is not None and out.occ is not None:
            head_terms.append(("occ", (grads.occ * out.occ * (1.0 - out.occ))[:, None]))
        if grads.sdf is not None and out.sdf is not None:
            head_terms.append(
                ("sdf", (grads.sdf * self.spec.sdf_scale * (1.0 - cache.sdf_tanh ** 2))[:, None])
            )
        if grads.nf is not None and out.nf is not None:
            norm = cache.nf_raw_norm
            g = np.asarray(grads.nf)
            projected = g - out.nf * np.einsum("ij,ij->i", out.nf, g)[:, None]
            # Below NF_EPS the divisor is a constant, so the Jacobian is 1 / NF_EPS.
            d_raw = np.where((norm > NF_EPS)[:, None], projected, g) / np.maximum(norm, NF_EPS)[:, None]
            head_terms.append(("nf", d_raw))
        for head, d_raw in head_terms:
            d_raw = d_raw.astype(self.dtype)
            if need_param_grads:
                param_grads[f"{head}_W"] = h.T @ d_raw
                param_grads[f"{head}_b"] = d_raw.sum(axis=0)
            d_h += d_raw @ self.params[f"{head}_W"].T

        d_x0 = np.zeros_like(cache.inputs[0])
        for k in reversed(range(self.spec.depth)):
            d_a = d_h * (cache.pre_activations[k] > 0)
            if need_param_grads:
                param_grads[f"W{k}"] = cache.inputs[k].T @ d_a
                param_grads[f"b{k}"] = d_a.sum(axis=0)
            d_inp = d_a @ self.params[f"W{k}"].T
            if k == 0:
                d_x0 += d_inp
            elif self.spec.has_skip and k == self.spec.skip_layer:
                d_h = d_inp[:, :self.spec.hidden]
                d_x0 += d_inp[:, self.spec.hidden:]
            else:
                d_h = d_inp
        return param_grads, d_x0[:, :self.spec.code_dim]


def init_codes(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` codes drawn i.i.d. from Normal(0, 0.01^2)."""
    return rng.normal(0.0, CODE_INIT_STD, size=(count, dim))


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, np.ndarray],
              grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Bias-corrected Adam update of ``params`` in place.

    Raises:
        DimensionMismatchError: If a gradient does not match its parameter.
    """
    for name, value in params.items():
        if name not in grads or np.shape(grads[name]) != value.shape:
            raise DimensionMismatchError(
                f"Gradient for {name} has shape {np.shape(grads.get(name))}, expected {value.shape}"
            )
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        m = np.zeros(value.shape) if m is None else m
        v = np.zeros(value.shape) if v is None else v
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        params[name] = (value - update).astype(value.dtype)
    return params


def save_checkpoint(path: str, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> None:
    """Write a deterministic checkpoint: magic, version, JSON header, float32 arrays.

    Array order follows ``arrays``; the header stores names and shapes next to
    ``meta`` with sorted keys so identical inputs give identical bytes.
    """
    header = dict(meta)
    header["arrays"] = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays.items()]
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays.values())
    payload = (
        CHECKPOINT_MAGIC
        + struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes))
        + header_bytes
        + body
    )
    try:
        directory = os.path.dirname(str(path))
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as handle:
            handle.write(payload)
    except OSError as e:
        raise MeshIOError(f"Cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path: str, expected_specs: Optional[Dict[str, NetSpec]] = None,
                    ) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Args:
        path: Checkpoint file.
        expected_specs: Architecture specs the caller requires, keyed like the
            ``specs`` entry of the header (for example ``{"complete": ..., "break": ...}``).

    Raises:
        ParseError: Bad magic, unknown version or truncated body.
        ArchitectureMismatchError: A stored spec differs from ``expected_specs``.
    """
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as e:
        raise MeshIOError(f"Cannot read checkpoint {path}: {e}") from e
    fixed = len(CHECKPOINT_MAGIC) + 8
    if len(data) < fixed or not data.startswith(CHECKPOINT_MAGIC):
        raise ParseError("not a checkpoint file (bad magic)", path=str(path), offset=0)
    version, header_len = struct.unpack_from("<II", data, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path=str(path),
                         offset=len(CHECKPOINT_MAGIC))
    try:
        header = json.loads(data[fixed:fixed + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"bad checkpoint header: {e}", path=str(path), offset=fixed) from e

    if expected_specs:
        stored = header.get("specs", {})
        for key, spec in expected_specs.items():
            if stored.get(key) != spec.to_dict():
                raise ArchitectureMismatchError(
                    f"Checkpoint {path} has {key} architecture {stored.get(key)}, "
                    f"expected {spec.to_dict()}"
                )

    arrays: Dict[str, np.ndarray] = {}
    offset = fixed + header_len
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + 4 * count > len(data):
            raise ParseError(f"truncated array {entry['name']}", path=str(path), offset=offset)
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f4", count=count, offset=offset) \
            .reshape(shape).copy()
        offset += 4 * count
    if offset != len(data):
        raise ParseError(f"{len(data) - offset} trailing bytes", path=str(path), offset=offset)
    return arrays, header
