"""Experiment configuration: a sectioned YAML document.

Unknown keys and missing required fields are rejected with the line number
of the offending entry.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .agents import PpoConfig, PretrainConfig
from .genetic import GaConfig

REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


@dataclass
class CodeSection:
    N: int = 32
    L: int = 8
    decoder: str = "SCL_PM"


@dataclass
class ChannelSection:
    esn0_db: float = REQUIRED
    seed: int = 0


@dataclass
class EvaluatorSection:
    error_events: int = 1000
    max_trials: int = 1_000_000
    reward_schedule: Union[str, list] = "all"
    esn0_mode: str = "fixed"
    calibration_target_bler: float = 1e-2
    calibration_error_events: int = 100


@dataclass
class NetworkSection:
    hidden: Optional[int] = None


@dataclass
class GaSection:
    population_size: int = 32
    generations: int = 50
    mutation_swaps: int = 1
    crossover_rate: float = 0.9
    elitism_count: int = 2
    tournament_size: int = 2
    seed_with_dega: bool = False
    k_values: Union[str, list] = "schedule"


@dataclass
class CompareSection:
    k_values: Union[str, list] = "every_4"
    target_bler: float = 1e-2
    error_events: int = 100
    max_trials: int = 200_000
    bracket: list = field(default_factory=lambda: [-4.0, 6.0])
    tol_db: float = 0.05
    dega_design_snr_db: Optional[float] = None
    grid: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 4.0])
    # Evaluation noise is drawn independently of the training noise.
    seed: int = 1


@dataclass
class OutputSection:
    directory: str = "runs/default"


def _ppo_section():
    return {f.name: f.default for f in dataclasses.fields(PpoConfig)}


def _pre_section():
    return {f.name: f.default for f in dataclasses.fields(PretrainConfig)}


SECTIONS = {
    "code": CodeSection,
    "channel": ChannelSection,
    "evaluator": EvaluatorSection,
    "network": NetworkSection,
    "ga": GaSection,
    "compare": CompareSection,
    "output": OutputSection,
}
DICT_SECTIONS = {"ppo": (PpoConfig, _ppo_section), "pretrain": (PretrainConfig, _pre_section)}
TOP_LEVEL = {"mode": "rl", "workers": 1}


@dataclass
class ExperimentConfig:
    mode: str
    workers: int
    code: CodeSection
    channel: ChannelSection
    evaluator: EvaluatorSection
    network: NetworkSection
    ga: GaSection
    compare: CompareSection
    output: OutputSection
    ppo: PpoConfig
    pretrain: PretrainConfig

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "workers": self.workers}
        for name in SECTIONS:
            out[name] = dataclasses.asdict(getattr(self, name))
        for name in DICT_SECTIONS:
            out[name] = dataclasses.asdict(getattr(self, name))
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def k_list(self, spec: Union[str, list]) -> list:
        if spec == "schedule":
            spec = self.evaluator.reward_schedule
        return resolve_k_values(spec, self.code.N)

    def ga_config(self) -> GaConfig:
        g = self.ga
        return GaConfig(g.population_size, g.generations, g.mutation_swaps, g.crossover_rate,
                        g.elitism_count, g.tournament_size)

    def schedule(self) -> Optional[frozenset]:
        if self.evaluator.reward_schedule == "all":
            return None
        return frozenset(self.k_list(self.evaluator.reward_schedule))


def resolve_k_values(spec, n_bits: int) -> list:
    """``"all"``, ``"every_<m>"`` or an explicit list, as sorted K values in [1, N-1]."""
    if isinstance(spec, list):
        ks = sorted({int(k) for k in spec})
    elif spec == "all":
        ks = list(range(1, n_bits))
    elif isinstance(spec, str) and spec.startswith("every_"):
        m = int(spec[len("every_"):])
        ks = list(range(m, n_bits, m))
    else:
        raise ValueError(f"bad K specification {spec!r}")
    if any(not 1 <= k <= n_bits - 1 for k in ks):
        raise ValueError(f"K values must lie in [1, {n_bits - 1}]")
    return ks


def _collect_lines(node, lines: dict, path: tuple) -> None:
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        seen = set()
        for knode, vnode in node.value:
            key = knode.value
            if key in seen:
                raise ConfigError(f"duplicate key '{'.'.join(path + (key,))}'",
                                  knode.start_mark.line + 1)
            seen.add(key)
            _collect_lines(vnode, lines, path + (key,))
            lines[path + (key,)] = knode.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _collect_lines(v, lines, path + (i,))


def _coerce(name, value, default, line, source):
    if default is REQUIRED or default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{name}' must be true or false", line, source)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{name}' must be an integer", line, source)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{name}' must be a number", line, source)
        return float(value)
    return value


def _build_section(name, raw, defaults: dict, lines, source, root_line):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping", lines.get((name,), root_line), source)
    values = {}
    for key, val in raw.items():
        if key not in defaults:
            raise ConfigError(f"unknown key '{name}.{key}'", lines.get((name, key)), source)
        values[key] = _coerce(f"{name}.{key}", val, defaults[key], lines.get((name, key)), source)
    for key, default in defaults.items():
        if key not in values:
            if default is REQUIRED:
                raise ConfigError(f"missing required field '{name}.{key}'",
                                  lines.get((name,), root_line), source)
            values[key] = default
    return values


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    lines: dict = {}
    if root is not None:
        try:
            _collect_lines(root, lines, ())
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[1], exc.line, source) from None
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    known = set(SECTIONS) | set(DICT_SECTIONS) | set(TOP_LEVEL)
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key '{key}'", lines.get((key,)), source)
    root_line = 1
    kwargs: dict = {}
    for key, default in TOP_LEVEL.items():
        kwargs[key] = _coerce(key, raw.get(key, default), default, lines.get((key,)), source)
    if kwargs["mode"] not in ("rl", "integrated"):
        raise ConfigError("mode must be 'rl' or 'integrated'", lines.get(("mode",)), source)
    if kwargs["workers"] < 1:
        raise ConfigError("workers must be >= 1", lines.get(("workers",)), source)
    if "channel" not in raw:
        raise ConfigError("missing required field 'channel.esn0_db'", root_line, source)
    for name, cls in SECTIONS.items():
        defaults = {f.name: (f.default if f.default is not dataclasses.MISSING
                             else f.default_factory()) for f in dataclasses.fields(cls)}
        values = _build_section(name, raw.get(name), defaults, lines, source, root_line)
        kwargs[name] = cls(**values)
    for name, (cls, defaults_fn) in DICT_SECTIONS.items():
        values = _build_section(name, raw.get(name), defaults_fn(), lines, source, root_line)
        try:
            kwargs[name] = cls(**values)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}", lines.get((name,)), source) from None
    cfg = ExperimentConfig(**kwargs)
    _validate(cfg, lines, source)
    return cfg


def _validate(cfg: ExperimentConfig, lines, source) -> None:
    def fail(msg, *path):
        raise ConfigError(msg, lines.get(path) or lines.get(path[:1]), source)

    n = cfg.code.N
    if n < 2 or n & (n - 1):
        fail("code.N must be a power of two >= 2", "code", "N")
    if cfg.code.L < 1:
        fail("code.L must be >= 1", "code", "L")
    if cfg.code.decoder not in ("SCL_PM", "SCL_GENIE"):
        fail("code.decoder must be SCL_PM or SCL_GENIE", "code", "decoder")
    if not isinstance(cfg.channel.esn0_db, (int, float)) or isinstance(cfg.channel.esn0_db, bool):
        fail("channel.esn0_db must be a number", "channel", "esn0_db")
    cfg.channel.esn0_db = float(cfg.channel.esn0_db)
    if not 0 <= cfg.channel.seed < 2**64:
        fail("channel.seed must be a 64-bit unsigned integer", "channel", "seed")
    ev = cfg.evaluator
    if ev.error_events < 1:
        fail("evaluator.error_events must be >= 1", "evaluator", "error_events")
    if ev.max_trials < ev.error_events:
        fail("evaluator.max_trials must be >= error_events", "evaluator", "max_trials")
    if ev.esn0_mode not in ("fixed", "per_k_dega"):
        fail("evaluator.esn0_mode must be 'fixed' or 'per_k_dega'", "evaluator", "esn0_mode")
    for sec, key in (("evaluator", "reward_schedule"), ("compare", "k_values")):
        try:
            resolve_k_values(getattr(getattr(cfg, sec), key), n)
        except (ValueError, TypeError) as exc:
            fail(f"{sec}.{key}: {exc}", sec, key)
    if cfg.ga.k_values != "schedule":
        try:
            resolve_k_values(cfg.ga.k_values, n)
        except (ValueError, TypeError) as exc:
            fail(f"ga.k_values: {exc}", "ga", "k_values")
    try:
        cfg.ga_config()
    except ValueError as exc:
        fail(f"ga: {exc}", "ga")
    if len(cfg.compare.bracket) != 2:
        fail("compare.bracket must be [low_db, high_db]", "compare", "bracket")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
