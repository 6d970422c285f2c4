"""Experiment configuration: YAML sections mapped onto dataclasses.

Every field has a default, so an empty file is a valid SM run. Command-line
flags are applied as overrides after loading. ``validate`` collects every
problem before raising so the user sees the full report at once.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .models import PHModelSpec, SMModelSpec

MODEL_KINDS = ("sm", "ph", "sm_control", "ph_control")
MODES = ("exact", "shots-pure", "shots-noisy")
OPTIMIZERS = ("adam", "spsa")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class ModelConfig:
    kind: str = "sm"
    n_qubits: int = 9
    seed: int = 0
    J: float = 1.0
    delta: float = 0.7
    b: float = 1.0
    D: int = 4
    chi: int = 1
    pert_strength: float = 0.1

    def spec(self):
        if self.kind in ("sm", "sm_control"):
            return SMModelSpec(self.n_qubits, self.J, self.delta, self.b, self.seed)
        return PHModelSpec(self.n_qubits, self.D, self.chi, self.seed, self.pert_strength)


@dataclass
class AnsatzConfig:
    depth: int = 3
    init_scale: float = 1e-3


@dataclass
class CostConfig:
    a: float = 0.5
    b: float = 0.5
    e_target: float = 0.0


@dataclass
class EvaluatorConfig:
    mode: str = "exact"
    shots: int = 0
    p1: float = 0.0
    p2: float = 0.0
    readout_flip: float = 0.0
    # target circuit fidelity for automatic p2 tuning; null keeps p1/p2 as given
    calibrate_fidelity: float | None = None


@dataclass
class OptimizerConfig:
    name: str = "adam"
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    calibrate: bool = True
    a0: float | None = None
    c0: float | None = None
    A: float | None = None
    gamma: float = 0.101
    alpha: float = 0.602


@dataclass
class RunConfig:
    iterations: int = 300
    seed: int = 0
    out: str = "results"
    record_timing: bool = False
    workers: int = 1


@dataclass
class SweepConfig:
    e_min: float = -5.0
    e_max: float = 5.0
    points: int = 21
    grid: list[float] | None = None

    def values(self) -> list[float]:
        if self.grid is not None:
            return [float(e) for e in self.grid]
        if self.points == 1:
            return [0.5 * (self.e_min + self.e_max)]
        step = (self.e_max - self.e_min) / (self.points - 1)
        return [self.e_min + k * step for k in range(self.points)]


@dataclass
class StudyConfig:
    shots: list[int] = field(default_factory=lambda: [10_000, 100_000, 1_000_000])
    repetitions: int = 5
    include_exact: bool = True
    total_budget: int = 535_000
    audit_repetitions: int = 10_000
    audit_shots: int = 1000
    variance_shots: list[int] = field(default_factory=lambda: [1000, 10_000])


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    ansatz: AnsatzConfig = field(default_factory=AnsatzConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    run: RunConfig = field(default_factory=RunConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    study: StudyConfig = field(default_factory=StudyConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section field overrides, e.g. ``replace(cost={"e_target": 1.0})``."""
        out = copy.deepcopy(self)
        for name, values in sections.items():
            section = getattr(out, name)
            for key, value in values.items():
                if not hasattr(section, key):
                    raise ConfigError([f"{name}.{key}: unknown field"])
                setattr(section, key, value)
        return out


def _coerce(section_cls, name: str, raw: Any, problems: list[str]):
    if raw is None:
        return section_cls()
    if not isinstance(raw, dict):
        problems.append(f"{name}: expected a mapping, got {type(raw).__name__}")
        return section_cls()
    known = {f.name: f for f in fields(section_cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            problems.append(f"{name}.{key}: unknown field")
            continue
        kwargs[key] = value
    return section_cls(**kwargs)


def from_dict(data: dict | None) -> ExperimentConfig:
    data = data or {}
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a mapping of sections"])
    sections = {f.name: f.default_factory for f in fields(ExperimentConfig)}
    for key in data:
        if key not in sections:
            problems.append(f"{key}: unknown section")
    built = {name: _coerce(factory, name, data.get(name), problems) for name, factory in sections.items()}
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(**built)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError([f"config file {str(p)!r} does not exist"])
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError([f"config file is not valid YAML: {exc}"]) from None
    cfg = from_dict(data)
    if overrides:
        cfg = cfg.replace(**overrides)
    validate(cfg)
    return cfg


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def validate(cfg: ExperimentConfig) -> None:
    p: list[str] = []
    m = cfg.model
    if m.kind not in MODEL_KINDS:
        p.append(f"model.kind: must be one of {MODEL_KINDS}, got {m.kind!r}")
    if not _is_int(m.n_qubits) or m.n_qubits < 2:
        p.append("model.n_qubits: must be an integer >= 2")
    if not _is_int(m.seed) or m.seed < 0:
        p.append("model.seed: must be a nonnegative integer")
    if m.kind in ("ph", "ph_control"):
        if not _is_int(m.D) or not 1 <= m.D <= m.n_qubits:
            p.append("model.D: must be an integer in [1, n_qubits]")
        elif not _is_int(m.chi) or m.chi < 1:
            p.append("model.chi: must be a positive integer")
        elif 2 ** m.D <= m.chi ** 2:
            p.append(f"model: complement space is empty, need 2^D > chi^2 (D={m.D}, chi={m.chi})")
        if m.pert_strength < 0:
            p.append("model.pert_strength: must be >= 0")
    if not _is_int(cfg.ansatz.depth) or cfg.ansatz.depth < 0:
        p.append("ansatz.depth: must be a nonnegative integer")
    if cfg.ansatz.init_scale <= 0:
        p.append("ansatz.init_scale: must be positive")
    c = cfg.cost
    if c.a < 0 or c.b < 0 or abs(c.a + c.b - 1.0) > 1e-12:
        p.append(f"cost: need a, b >= 0 with a + b = 1 (got a={c.a}, b={c.b})")
    e = cfg.evaluator
    if e.mode not in MODES:
        p.append(f"evaluator.mode: must be one of {MODES}, got {e.mode!r}")
    elif e.mode != "exact" and (not _is_int(e.shots) or e.shots < 2):
        p.append("evaluator.shots: shot modes need an integer S >= 2")
    if not (0 <= e.p1 <= 1 and 0 <= e.p2 <= 1 and 0 <= e.readout_flip <= 0.5):
        p.append("evaluator: need p1, p2 in [0, 1] and readout_flip in [0, 0.5]")
    if e.calibrate_fidelity is not None and not 0 < e.calibrate_fidelity < 1:
        p.append("evaluator.calibrate_fidelity: must lie in (0, 1)")
    o = cfg.optimizer
    if o.name not in OPTIMIZERS:
        p.append(f"optimizer.name: must be one of {OPTIMIZERS}, got {o.name!r}")
    if o.lr <= 0:
        p.append("optimizer.lr: must be positive")
    if o.name == "spsa" and not o.calibrate and None in (o.a0, o.c0, o.A):
        p.append("optimizer: SPSA without calibration needs a0, c0 and A")
    r = cfg.run
    if not _is_int(r.iterations) or r.iterations < 0:
        p.append("run.iterations: must be a nonnegative integer")
    if not _is_int(r.seed) or not 0 <= r.seed < 2 ** 64:
        p.append("run.seed: must be an integer in [0, 2^64)")
    if not _is_int(r.workers) or r.workers < 1:
        p.append("run.workers: must be a positive integer")
    s = cfg.sweep
    if s.grid is not None and len(s.grid) == 0:
        p.append("sweep.grid: must be nonempty")
    if s.grid is None and (not _is_int(s.points) or s.points < 1):
        p.append("sweep.points: must be a positive integer")
    st = cfg.study
    if any((not _is_int(v)) or v < 2 for v in st.shots):
        p.append("study.shots: every entry must be an integer >= 2")
    if not _is_int(st.repetitions) or st.repetitions < 1:
        p.append("study.repetitions: must be a positive integer")
    if not _is_int(st.audit_repetitions) or st.audit_repetitions < 1:
        p.append("study.audit_repetitions: must be a positive integer")
    if p:
        raise ConfigError(p)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
