"""Configuration module for the shape repair pipeline.

Two layers: process settings from the environment (``.env`` supported) and
the pipeline document, a TOML file whose sections map onto dataclasses.
"""

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Load environment variables from .env file
load_dotenv()


@dataclass
class RuntimeConfig:
    """Process-level settings that are not part of an experiment."""

    out_dir: str
    threads: int
    log_level: str
    progress: bool

    @classmethod
    def from_env(cls) -> "RuntimeConfig":
        """Create RuntimeConfig from environment variables."""
        return cls(
            out_dir=os.getenv("SHAPE_REPAIR_OUT_DIR", "runs"),
            threads=int(os.getenv("SHAPE_REPAIR_THREADS", "1")),
            log_level=os.getenv("SHAPE_REPAIR_LOG_LEVEL", "INFO").upper(),
            progress=os.getenv("SHAPE_REPAIR_PROGRESS", "true").lower() == "true",
        )


@dataclass
class DatasetConfig:
    """Where complete shapes come from and how they are split."""

    source: str = "procedural"
    families: List[str] = field(default_factory=lambda: ["sphere", "mug"])
    shapes_per_family: int = 25
    mesh_dir: Optional[str] = None
    fractures_per_shape: int = 1
    class_multiplicity: Dict[str, int] = field(default_factory=dict)
    rotate_90: bool = False
    splits: List[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    seed: int = 0


@dataclass
class PrimitiveConfig:
    kinds: List[str] = field(default_factory=lambda: ["sphere", "box", "half-space"])
    kind_weights: Optional[List[float]] = None
    scale_range: List[float] = field(default_factory=lambda: [0.15, 0.45])


@dataclass
class FractureSection:
    max_attempts: int = 15
    retention_lo: float = 0.05
    retention_hi: float = 0.20
    region_eps: float = 1e-3
    lambda_tps: float = 1e-6
    resolution: int = 64
    min_agreement: float = 0.99
    seed: int = 0
    primitive: PrimitiveConfig = field(default_factory=PrimitiveConfig)


@dataclass
class SamplingConfig:
    n_total: int = 30000
    surface_fraction: float = 0.9
    sigma1: float = 0.012
    sigma2: float = 0.0025
    seed: int = 0


@dataclass
class NetworkConfig:
    code_dim_complete: int = 128
    code_dim_break: int = 64
    hidden: int = 512
    depth: int = 8
    skip_layer: int = 4
    heads: List[str] = field(default_factory=lambda: ["occ", "sdf", "nf"])


@dataclass
class TrainingSection:
    epochs: int = 2000
    shapes_per_batch: int = 4
    points_per_shape: int = 8192
    lr_net: float = 5e-4
    lr_codes: float = 1e-3
    snapshot_every: int = 0
    dtype: str = "float32"
    max_shapes: int = 300
    seed: int = 0


@dataclass
class LossSection:
    lambda_s: float = 1.0
    lambda_n: float = 0.1
    lambda_reg: float = 1e-4
    mu: float = 0.5


@dataclass
class InferenceSection:
    steps: int = 800
    lr: float = 1e-3
    points: int = 8192
    resolution: int = 128
    fallback: bool = True
    fallback_resolution: int = 48
    split: str = "test"
    seed: int = 0


@dataclass
class EvalSection:
    n_samples: int = 30000
    eta: float = 0.02
    seed: int = 0


SECTIONS = {
    "dataset": DatasetConfig,
    "fracture": FractureSection,
    "sampling": SamplingConfig,
    "network": NetworkConfig,
    "training": TrainingSection,
    "loss": LossSection,
    "inference": InferenceSection,
    "eval": EvalSection,
}


@dataclass
class PipelineConfig:
    """Main pipeline configuration aggregating all sections."""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    fracture: FractureSection = field(default_factory=FractureSection)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    loss: LossSection = field(default_factory=LossSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    eval: EvalSection = field(default_factory=EvalSection)
    source: Optional[str] = None

    @classmethod
    def from_toml(cls, path: str) -> "PipelineConfig":
        """Load and validate a TOML pipeline document."""
        try:
            with open(path, "rb") as handle:
                document = tomllib.load(handle)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file {path} does not exist") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid TOML: {e}") from e
        config = cls.from_dict(document)
        config.source = str(path)
        return config

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "PipelineConfig":
        unknown = sorted(set(document) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"Unknown config section(s) {unknown}; known sections: {sorted(SECTIONS)}")
        sections = {name: _build(SECTIONS[name], document.get(name, {}), name) for name in SECTIONS}
        config = cls(**sections)
        config.validate()
        return config

    def validate(self) -> None:
        """Check cross-field constraints.

        Raises:
            ConfigError: On the first violated constraint.
        """
        dataset = self.dataset
        if len(dataset.splits) != 3 or abs(sum(dataset.splits) - 1.0) > 1e-9:
            raise ConfigError(
                f"dataset.splits must be three fractions summing to 1, got {dataset.splits}"
            )
        if any(s < 0 for s in dataset.splits):
            raise ConfigError(f"dataset.splits must be non-negative, got {dataset.splits}")
        if dataset.source not in ("procedural", "mesh_dir"):
            raise ConfigError(f"dataset.source must be 'procedural' or 'mesh_dir', got {dataset.source!r}")
        if dataset.source == "mesh_dir" and (not dataset.mesh_dir or not os.path.isdir(dataset.mesh_dir)):
            raise ConfigError(f"dataset.mesh_dir {dataset.mesh_dir!r} does not exist")
        if dataset.fractures_per_shape < 1 or dataset.shapes_per_family < 0:
            raise ConfigError("dataset.fractures_per_shape must be >= 1 and shapes_per_family >= 0")
        if any(int(v) < 1 for v in dataset.class_multiplicity.values()):
            raise ConfigError(f"dataset.class_multiplicity values must be >= 1, got {dataset.class_multiplicity}")
        if len(self.fracture.primitive.scale_range) != 2:
            raise ConfigError("fracture.primitive.scale_range must hold two numbers")
        if not 0 <= self.sampling.surface_fraction <= 1:
            raise ConfigError(f"sampling.surface_fraction must lie in [0, 1], got {self.sampling.surface_fraction}")
        if self.sampling.n_total < 1:
            raise ConfigError(f"sampling.n_total must be positive, got {self.sampling.n_total}")
        if self.inference.split not in ("train", "val", "test"):
            raise ConfigError(f"inference.split must be train, val or test, got {self.inference.split!r}")

    def with_seed(self, seed: Optional[int]) -> "PipelineConfig":
        """Copy with every section seed offset by ``seed``."""
        if seed is None:
            return self
        updated = dataclasses.replace(self)
        for name in SECTIONS:
            section = getattr(self, name)
            if hasattr(section, "seed"):
                setattr(updated, name, dataclasses.replace(section, seed=section.seed + int(seed)))
        return updated

    def to_dict(self) -> Dict[str, Any]:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def _build(cls: Any, values: Dict[str, Any], section: str) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f"[{section}] must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(f"Unknown key(s) {unknown} in [{section}]; allowed: {sorted(fields)}")
    kwargs = dict(values)
    for name, value in values.items():
        factory = fields[name].default_factory
        if isinstance(factory, type) and dataclasses.is_dataclass(factory):
            kwargs[name] = _build(factory, value, f"{section}.{name}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid [{section}] section: {e}") from e


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """Pipeline config from ``path``, or the defaults when no path is given."""
    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_toml(path)


# Global runtime configuration instance
runtime = RuntimeConfig.from_env()
