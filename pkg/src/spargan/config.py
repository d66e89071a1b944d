"""Experiment configuration: strict JSON in, frozen dataclasses out."""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .data import WorldConfig
from .metrics import ARMS
from .spl import SplConfig
from .tcgan import GanConfig, GanTrainConfig


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the culprit."""

    def __init__(self, field, detail):
        self.field = field
        super().__init__(f"{field}: {detail}")


def _section(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(path, f"expected an object, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown field")
    for key, value in raw.items():
        default = known[key].default
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}.{key}", "expected a boolean")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{path}.{key}", "expected an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{key}", "expected a number")
            raw = {**raw, key: float(value)}
    try:
        return cls(**raw)
    except ValueError as exc:
        name, _, detail = str(exc).partition(": ")
        raise ConfigError(f"{path}.{name}" if detail else path, detail or str(exc)) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    train: GanTrainConfig = field(default_factory=GanTrainConfig)
    spl: SplConfig = field(default_factory=SplConfig)
    n_shots: tuple = (1, 2, 5)
    seeds: tuple = (0, 1, 2, 3, 4)
    arms: tuple = ARMS
    oracle_epochs: int = 60
    output_dir: str | None = None

    def to_dict(self):
        d = asdict(self)
        d["n_shots"], d["seeds"], d["arms"] = list(self.n_shots), list(self.seeds), list(self.arms)
        return d

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_seed(self, seed):
        from dataclasses import replace
        return replace(self, seeds=(seed,))


REQUIRED = ("world", "train", "spl", "n_shots", "seeds")
_SECTIONS = {"world": WorldConfig, "gan": GanConfig, "train": GanTrainConfig, "spl": SplConfig}


def from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    allowed = {f.name for f in fields(ExperimentConfig)}
    for key in raw:
        if key not in allowed:
            raise ConfigError(key, "unknown field")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(key, "missing required field")
    kw = {name: _section(cls, raw[name], name) for name, cls in _SECTIONS.items() if name in raw}

    def int_list(key, lo, hi=None):
        v = raw[key]
        if not isinstance(v, list) or not v:
            raise ConfigError(key, "expected a non-empty list of integers")
        for x in v:
            if isinstance(x, bool) or not isinstance(x, int) or x < lo or (hi is not None and x >= hi):
                raise ConfigError(key, f"invalid entry {x!r}")
        if len(set(v)) != len(v):
            raise ConfigError(key, "duplicate entries")
        return tuple(v)

    kw["seeds"] = int_list("seeds", 0, 2**64)
    world = kw["world"]
    kw["n_shots"] = int_list("n_shots", 1, world.samples_per_novel_train + 1)
    if "arms" in raw:
        arms = raw["arms"]
        if not isinstance(arms, list) or not arms or any(a not in ARMS for a in arms):
            raise ConfigError("arms", f"expected a non-empty subset of {list(ARMS)}")
        kw["arms"] = tuple(a for a in ARMS if a in arms)
    if "oracle_epochs" in raw:
        v = raw["oracle_epochs"]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError("oracle_epochs", "expected a positive integer")
        kw["oracle_epochs"] = v
    if "output_dir" in raw:
        if raw["output_dir"] is not None and not isinstance(raw["output_dir"], str):
            raise ConfigError("output_dir", "expected a string")
        kw["output_dir"] = raw["output_dir"]
    return ExperimentConfig(**kw)


def load(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
    return from_dict(raw)
