"""Experiment configuration: sectioned ``key = value`` text with JSON values.

    [schedule]
    kind = "power"
    N = 8

Strings may be written bare (``kind = power``). Unknown sections and keys
are rejected, and every error names the offending line.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
import re
import typing
from dataclasses import dataclass, field


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.detail = message
        self.key = None
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


@dataclass
class TargetConfig:
    weights: list = field(default_factory=lambda: [1.0 / 8] * 8)
    means: list = field(default_factory=lambda: [[2.0 * math.cos(2 * math.pi * k / 8), 2.0 * math.sin(2 * math.pi * k / 8)] for k in range(8)])
    variances: list = field(default_factory=lambda: [[0.04, 0.04]] * 8)


@dataclass
class ModelConfig:
    # mixture weights of the sampler's denoiser when it differs from the expert
    weights: typing.Optional[list] = None


@dataclass
class ScheduleConfig:
    kind: str = "power"
    N: int = 8
    sigma_min: float = 0.02
    sigma_max: float = 10.0
    rho: float = 7.0
    prior_check: float = 10.0


@dataclass
class MDPConfig:
    strategy: str = "gamma"
    horizon: typing.Optional[int] = None
    nfe_budget: typing.Optional[int] = None
    gamma_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0])
    omega_grid: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    M: int = 4


@dataclass
class ObjectiveConfig:
    divergence: str = "kl"
    w_e_terminal_mass: typing.Optional[float] = None


@dataclass
class LearnerConfig:
    n_epoch: int = 40
    K: int = 4
    n_traj: int = 1024
    ppo_epsilon: float = 0.2
    lr: float = 0.03
    minibatch: int = 2048
    ema_decay: float = 0.9
    normalize_signals: bool = False
    optimizer: str = "adam"
    estimator: str = "ppo"
    ratio_refresh: str = "stale"
    workers: int = 1
    chunk_size: int = 256


@dataclass
class DiscriminatorConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    iters: int = 200
    dre_init_iters: int = 500
    batch_size: int = 512
    lr: float = 0.001
    label_smoothing: float = 0.05
    smoothing_threshold: float = 0.5
    ratio_min: float = 0.001
    ratio_max: float = 1000.0
    weight_decay: float = 0.0
    n_expert: int = 4096


@dataclass
class PolicyConfig:
    family: str = "sigma_only"
    hidden: list = field(default_factory=lambda: [64, 64])
    heuristic: str = "default"
    stationary: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    n_eval: int = 10000


SECTIONS = {
    "target": TargetConfig,
    "model": ModelConfig,
    "schedule": ScheduleConfig,
    "mdp": MDPConfig,
    "objective": ObjectiveConfig,
    "learner": LearnerConfig,
    "discriminator": DiscriminatorConfig,
    "policy": PolicyConfig,
    "run": RunConfig,
}


@dataclass
class ExperimentConfig:
    target: TargetConfig = field(default_factory=TargetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    mdp: MDPConfig = field(default_factory=MDPConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def replace(self, **sections) -> ExperimentConfig:
        """Copy with per-section overrides, e.g. ``cfg.replace(learner={"n_epoch": 5})``."""
        out = from_dict(to_dict(self))
        for name, values in sections.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            sec = getattr(out, name)
            for key, value in values.items():
                if not hasattr(sec, key):
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                setattr(sec, key, value)
        validate(out)
        return out

    @property
    def horizon(self) -> int:
        if self.mdp.horizon is not None:
            return self.mdp.horizon
        return 2 * self.schedule.N if self.mdp.strategy == "renoise" else self.schedule.N


def _resolve(tp):
    """(base type, optional)"""
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0], True
    return tp, False


def _coerce(value, tp, where: str):
    base, optional = _resolve(tp)
    if value is None:
        if optional:
            return None
        raise ValueError(f"{where} may not be null")
    if base is bool:
        if isinstance(value, bool):
            return value
    elif base is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif base is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif base is str:
        if isinstance(value, str):
            return value
    elif base is list:
        if isinstance(value, list):
            return value
    raise ValueError(f"{where} expects {base.__name__}, got {json.dumps(value)}")


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.\-/]*", raw):
            return raw
        raise


def _key_lines(text: str) -> dict:
    """(section, key) -> line number, plus (section, None) for headers."""
    lines: dict = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
        elif "=" in s and section is not None and not line[:1].isspace():
            lines.setdefault((section, s.split("=", 1)[0].strip()), no)
    return lines


def parse(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"duplicate key {e.option!r} in [{e.section}]", e.lineno, source) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]", e.lineno, source) from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside of any [section]", e.lineno, source) from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ConfigError("malformed line (expected key = value)", lineno, source) from None

    lines = _key_lines(text)
    cfg = ExperimentConfig()
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]", lines.get((name, None)), source)
        sec = getattr(cfg, name)
        hints = typing.get_type_hints(type(sec))
        for key, raw in cp.items(name):
            line = lines.get((name, key))
            if key not in hints:
                raise ConfigError(f"unknown key {key!r} in [{name}]", line, source)
            try:
                value = _coerce(_parse_value(raw), hints[key], f"[{name}] {key}")
            except (json.JSONDecodeError, ValueError) as e:
                msg = str(e) if not isinstance(e, json.JSONDecodeError) else f"cannot parse value of [{name}] {key}: {raw!r}"
                raise ConfigError(msg, line, source) from None
            setattr(sec, key, value)
    try:
        validate(cfg)
    except ConfigError as e:
        key = e.key
        line = lines.get(key) or lines.get((key[0], None)) if key else None
        raise ConfigError(e.detail, line, source) from None
    return cfg


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), source=str(path))


def _invalid(section: str, key: str, message: str) -> ConfigError:
    err = ConfigError(f"[{section}] {key}: {message}")
    err.key = (section, key)
    return err


def validate(cfg: ExperimentConfig) -> None:
    t = cfg.target
    K = len(t.weights)
    if K == 0:
        raise _invalid("target", "weights", "must be non-empty")
    if len(t.means) != K or len(t.variances) != K:
        raise _invalid("target", "means", "means and variances need one row per weight")
    if cfg.model.weights is not None and len(cfg.model.weights) != K:
        raise _invalid("model", "weights", f"needs {K} entries")
    s = cfg.schedule
    if s.kind not in ("power", "geometric"):
        raise _invalid("schedule", "kind", "must be 'power' or 'geometric'")
    if s.N < 1:
        raise _invalid("schedule", "N", "must be at least 1")
    m = cfg.mdp
    if m.strategy not in ("gamma", "guidance", "renoise"):
        raise _invalid("mdp", "strategy", "must be gamma, guidance or renoise")
    for key in ("gamma_grid", "omega_grid"):
        grid = getattr(m, key)
        if not grid:
            raise _invalid("mdp", key, "must be non-empty")
        if 0 not in grid:
            raise _invalid("mdp", key, "must contain 0")
    if m.M < 1:
        raise _invalid("mdp", "M", "must be at least 1")
    o = cfg.objective
    if o.divergence not in ("kl", "rkl"):
        raise _invalid("objective", "divergence", "must be 'kl' or 'rkl'")
    if o.w_e_terminal_mass is not None and not 0 < o.w_e_terminal_mass < 1:
        raise _invalid("objective", "w_e_terminal_mass", "must lie in (0, 1)")
    L = cfg.learner
    for key in ("n_epoch", "K", "minibatch", "workers", "chunk_size"):
        if getattr(L, key) < 1:
            raise _invalid("learner", key, "must be at least 1")
    if L.n_traj < 2:
        raise _invalid("learner", "n_traj", "must be at least 2")
    if not 0 <= L.ppo_epsilon:
        raise _invalid("learner", "ppo_epsilon", "must be non-negative")
    if not 0 <= L.ema_decay <= 1:
        raise _invalid("learner", "ema_decay", "must lie in [0, 1]")
    if L.optimizer not in ("adam", "sgd"):
        raise _invalid("learner", "optimizer", "must be 'adam' or 'sgd'")
    if L.estimator not in ("ppo", "is"):
        raise _invalid("learner", "estimator", "must be 'ppo' or 'is'")
    if L.ratio_refresh not in ("stale", "every_update"):
        raise _invalid("learner", "ratio_refresh", "must be 'stale' or 'every_update'")
    D = cfg.discriminator
    if not D.hidden:
        raise _invalid("discriminator", "hidden", "must be non-empty")
    if not 0 < D.ratio_min < D.ratio_max:
        raise _invalid("discriminator", "ratio_min", "need 0 < ratio_min < ratio_max")
    if not 0 <= D.label_smoothing < 0.5:
        raise _invalid("discriminator", "label_smoothing", "must lie in [0, 0.5)")
    P = cfg.policy
    if P.family not in ("sigma_only", "state_dependent"):
        raise _invalid("policy", "family", "must be sigma_only or state_dependent")
    if P.family == "state_dependent" and not P.hidden:
        raise _invalid("policy", "hidden", "must be non-empty")
    if P.heuristic not in ("default", "uniform"):
        raise _invalid("policy", "heuristic", "must be default or uniform")


def to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def from_dict(d: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for name, values in d.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        setattr(cfg, name, SECTIONS[name](**values))
    return cfg


def emit(cfg: ExperimentConfig) -> str:
    out = []
    for name in SECTIONS:
        out.append(f"[{name}]")
        for f in dataclasses.fields(SECTIONS[name]):
            out.append(f"{f.name} = {json.dumps(getattr(getattr(cfg, name), f.name))}")
        out.append("")
    return "\n".join(out)
