"""Run configuration: sectioned YAML defaults, merging and validation."""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from .errors import ConfigError
from .recon import ReconConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent / "config.yaml"

FP_BITS = 32
WEIGHT_ACT_BITS = frozenset(range(2, 9)) | {FP_BITS}
SOFTMAX_BITS = frozenset({4, 6, 8, FP_BITS})
EVAL_REFERENCES = ("dataset", "fp")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

# Default clamp range R for the TCR scaling vector at low weight bit widths
LOW_BIT_WEIGHTS = 4
LOW_BIT_CLAMP = 5.0


@dataclass
class RunSection:
    seed: int = 0
    out: str = "runs/default"
    model: Optional[str] = None


@dataclass
class LoggingSection:
    level: str = "INFO"
    run_log: bool = True


@dataclass
class DatasetSection:
    n: int = 2048
    contrast: float = 1.0


@dataclass
class TrainSection:
    steps: int = 3000
    lr: float = 1e-3
    batch: int = 32


@dataclass
class SamplingSection:
    inference_steps: int = 20
    eta: float = 0.0
    n_samples: int = 64


@dataclass
class CalibrationSection:
    n_chains: int = 32


@dataclass
class QuantSection:
    bits_w: int = 4
    bits_a: int = 8
    bits_s: int = 8
    search_grid: int = 100
    max_search_samples: Optional[int] = 65536


@dataclass
class TcrSection:
    enabled: bool = True
    groups: int = 20
    clamp: Optional[float] = None
    auto_clamp: bool = True

    def effective_clamp(self, weight_bits: int) -> Optional[float]:
        """An explicit clamp wins; otherwise R = 5 for weights at 4 bits or fewer."""
        if self.clamp is not None:
            return float(self.clamp)
        if self.auto_clamp and weight_bits <= LOW_BIT_WEIGHTS:
            return LOW_BIT_CLAMP
        return None


@dataclass
class DaqSection:
    enabled: bool = True
    max_fit_samples: Optional[int] = 8192
    min_tail: int = 50


@dataclass
class ReconSection:
    init_iters: int = 2000
    par_iters: int = 1000
    rounds: int = 2
    batch: int = 16
    lr: float = 1e-2
    reg_weight: float = 0.01
    beta_start: float = 20.0
    beta_end: float = 2.0
    warmup: float = 0.2
    patience: int = 200
    quantize_activations: bool = True
    full_scale: bool = False

    def to_recon_config(self, seed: int) -> ReconConfig:
        cfg = ReconConfig(
            init_iters=self.init_iters,
            par_iters=self.par_iters,
            rounds=self.rounds,
            batch=self.batch,
            lr=self.lr,
            reg_weight=self.reg_weight,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            warmup=self.warmup,
            patience=self.patience,
            quantize_activations=self.quantize_activations,
            seed=seed,
        )
        return cfg.full_scale() if self.full_scale else cfg


@dataclass
class EvaluateSection:
    n_samples: int = 512
    seed: int = 1234
    reference: str = "dataset"


@dataclass
class AblationSection:
    bit_settings: list[list[int]] = field(default_factory=lambda: [[4, 8, 8], [4, 4, 8]])
    clamp_sweep: list[float] = field(default_factory=lambda: [3.0, 5.0, 10.0, 50.0, 100.0])
    softmax_sweep: list[int] = field(default_factory=lambda: [4, 6, 8])
    par_sweep: list[list[int]] = field(default_factory=list)


@dataclass
class ReportSection:
    record_timings: bool = False
    name: str = "report.json"


SECTIONS = {
    "run": RunSection,
    "logging": LoggingSection,
    "dataset": DatasetSection,
    "train": TrainSection,
    "sampling": SamplingSection,
    "calibration": CalibrationSection,
    "quant": QuantSection,
    "tcr": TcrSection,
    "daq": DaqSection,
    "recon": ReconSection,
    "evaluate": EvaluateSection,
    "ablation": AblationSection,
    "report": ReportSection,
}

# CLI flag -> (section, key). Flags outside this table (--config, --verbose)
# do not correspond to config values.
FLAG_TO_KEY: dict[str, tuple[str, str]] = {
    "--bits-w": ("quant", "bits_w"),
    "--bits-a": ("quant", "bits_a"),
    "--bits-s": ("quant", "bits_s"),
    "--no-tcr": ("tcr", "enabled"),
    "--no-daq": ("daq", "enabled"),
    "--par-rounds": ("recon", "rounds"),
    "--clamp": ("tcr", "clamp"),
    "--groups": ("tcr", "groups"),
    "--seed": ("run", "seed"),
    "--full-scale": ("recon", "full_scale"),
    "--out": ("run", "out"),
}


@dataclass
class RunConfig:
    """The effective configuration of one command."""
    run: RunSection = field(default_factory=RunSection)
    logging: LoggingSection = field(default_factory=LoggingSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    train: TrainSection = field(default_factory=TrainSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    quant: QuantSection = field(default_factory=QuantSection)
    tcr: TcrSection = field(default_factory=TcrSection)
    daq: DaqSection = field(default_factory=DaqSection)
    recon: ReconSection = field(default_factory=ReconSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    report: ReportSection = field(default_factory=ReportSection)

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> "RunConfig":
        """Merge a (partial) sectioned mapping over the defaults."""
        config = cls()
        for section, values in (data or {}).items():
            if section not in SECTIONS:
                raise ConfigError(f"Unknown config section '{section}'; known: {sorted(SECTIONS)}")
            if values is None:
                continue
            if not isinstance(values, Mapping):
                raise ConfigError(f"Config section '{section}' must be a mapping")
            current = getattr(config, section)
            known = {f.name for f in fields(current)}
            unknown = sorted(set(values) - known)
            if unknown:
                raise ConfigError(f"Unknown key(s) {unknown} in section '{section}'; known: {sorted(known)}")
            setattr(config, section, replace(current, **values))
        return config

    def to_dict(self) -> dict[str, Any]:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def set_value(self, section: str, key: str, value: Any) -> None:
        current = getattr(self, section)
        setattr(self, section, replace(current, **{key: value}))

    # -------------------------------------------------------------------------
    # Derived values
    # -------------------------------------------------------------------------

    @property
    def out_dir(self) -> Path:
        return Path(self.run.out)

    @property
    def model_path(self) -> Path:
        return Path(self.run.model) if self.run.model else self.out_dir / "model.tcaq"

    def recon_config(self) -> ReconConfig:
        return self.recon.to_recon_config(self.run.seed)

    # -------------------------------------------------------------------------
    # Validation
    # -------------------------------------------------------------------------

    def validate(self) -> "RunConfig":
        """
        Check every constraint; returns self for chaining.

        Raises:
            ConfigError: On the first violated constraint.
        """
        q = self.quant
        _check_bits("quant.bits_w", q.bits_w, WEIGHT_ACT_BITS)
        _check_bits("quant.bits_a", q.bits_a, WEIGHT_ACT_BITS)
        _check_bits("quant.bits_s", q.bits_s, SOFTMAX_BITS)
        for i, setting in enumerate(self.ablation.bit_settings):
            if len(setting) != 3:
                raise ConfigError(f"ablation.bit_settings[{i}] must be [W, A, S], got {setting}")
            _check_bits(f"ablation.bit_settings[{i}] W", setting[0], WEIGHT_ACT_BITS)
            _check_bits(f"ablation.bit_settings[{i}] A", setting[1], WEIGHT_ACT_BITS)
            _check_bits(f"ablation.bit_settings[{i}] S", setting[2], SOFTMAX_BITS)
        for s in self.ablation.softmax_sweep:
            _check_bits("ablation.softmax_sweep", s, SOFTMAX_BITS)

        steps = self.sampling.inference_steps
        if steps < 1:
            raise ConfigError(f"sampling.inference_steps must be at least 1, got {steps}")
        if not 1 <= self.tcr.groups <= steps:
            raise ConfigError(f"tcr.groups must be in [1, {steps}], got {self.tcr.groups}")
        for name, clamp in [("tcr.clamp", self.tcr.clamp)] + [("ablation.clamp_sweep", c) for c in self.ablation.clamp_sweep]:
            if clamp is not None and clamp < 1:
                raise ConfigError(f"{name} must be at least 1 or unset, got {clamp}")

        try:
            self.recon_config().validate()
        except ConfigError as e:
            raise ConfigError(f"recon: {e}") from e
        for i, pair in enumerate(self.ablation.par_sweep):
            if len(pair) != 2:
                raise ConfigError(f"ablation.par_sweep[{i}] must be [par_iters, rounds], got {pair}")
            swept = replace(self.recon_config(), par_iters=int(pair[0]), rounds=int(pair[1]))
            try:
                swept.validate()
            except ConfigError as e:
                raise ConfigError(f"ablation.par_sweep[{i}]: {e}") from e

        if self.calibration.n_chains < 1:
            raise ConfigError(f"calibration.n_chains must be at least 1, got {self.calibration.n_chains}")
        if self.evaluate.reference not in EVAL_REFERENCES:
            raise ConfigError(f"evaluate.reference must be one of {EVAL_REFERENCES}, got '{self.evaluate.reference}'")
        if self.logging.level.upper() not in LOG_LEVELS:
            raise ConfigError(f"logging.level must be one of {LOG_LEVELS}, got '{self.logging.level}'")
        for name, value in (("train.steps", self.train.steps), ("dataset.n", self.dataset.n),
                            ("train.batch", self.train.batch), ("quant.search_grid", self.quant.search_grid)):
            if value < 1:
                raise ConfigError(f"{name} must be at least 1, got {value}")
        return self


def _check_bits(name: str, bits: int, allowed: frozenset) -> None:
    if bits not in allowed:
        raise ConfigError(f"{name} must be one of {sorted(allowed)}, got {bits}")


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Read a config file over the built-in defaults.

    Raises:
        ConfigError: If the file is missing, not YAML or has unknown keys.
    """
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}") from e
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError(f"Config file {path} must hold a mapping of sections")
    logger.info(f"Loaded configuration from {path}")
    return RunConfig.from_dict(data)


def dump_config(config: RunConfig, path: Optional[Union[str, Path]] = None) -> str:
    """Emit the full config as YAML; also written to ``path`` when given."""
    text = yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return text


def parse_config(text: str) -> RunConfig:
    """Inverse of :func:`dump_config`."""
    try:
        return RunConfig.from_dict(yaml.safe_load(text))
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse config text: {e}") from e
