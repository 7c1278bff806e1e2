"""Sectioned run configuration: INI file + dotted command-line overrides.

One file drives every subcommand. Unknown sections or keys are hard
errors so a typo cannot silently fall back to a default, and every run
can write back the fully resolved configuration it actually used.
"""

import configparser
from dataclasses import dataclass, fields

from .errors import ValidationError
from .model_core import ModelConfig
from .trainer import TrainConfig


@dataclass
class GraphSection:
    threshold_km: float = 200.0

    def validate(self) -> None:
        if self.threshold_km <= 0:
            raise ValidationError(
                f"graph.threshold_km must be positive, got {self.threshold_km}")


@dataclass
class OracleSection:
    n_stations: int = 10
    steps: int = 2000
    seed: int = 0
    wind_speed: float = 3.0
    emission_scale: float = 1.0
    local_utc_offset: int = 8
    wind_obs_sigma: float = 0.2
    aloft_exchange: float = 0.30
    event_sigma: float = 0.0

    def validate(self) -> None:
        if self.n_stations < 2:
            raise ValidationError(
                f"oracle.n_stations must be >= 2, got {self.n_stations}")
        if self.steps < 10:
            raise ValidationError(f"oracle.steps must be >= 10, got {self.steps}")
        if self.wind_speed < 0 or self.emission_scale < 0:
            raise ValidationError("oracle forcing scales must be nonnegative")
        if self.wind_obs_sigma < 0:
            raise ValidationError(
                f"oracle.wind_obs_sigma must be >= 0, got {self.wind_obs_sigma}")
        if self.aloft_exchange < 0:
            raise ValidationError(
                f"oracle.aloft_exchange must be >= 0, got {self.aloft_exchange}")
        if self.event_sigma < 0:
            raise ValidationError(
                f"oracle.event_sigma must be >= 0, got {self.event_sigma}")


@dataclass
class DatasetSection:
    t_hist: int = 24
    t_fore: int = 24
    stride: int = 1
    train_frac: float = 0.6
    val_frac: float = 0.2

    def validate(self) -> None:
        if self.t_hist < 2:
            raise ValidationError(
                f"dataset.t_hist must be >= 2, got {self.t_hist}")
        if self.t_fore < 1:
            raise ValidationError(
                f"dataset.t_fore must be >= 1, got {self.t_fore}")
        if self.stride < 1:
            raise ValidationError(
                f"dataset.stride must be >= 1, got {self.stride}")
        if not (0 < self.train_frac < 1 and 0 < self.val_frac < 1
                and self.train_frac + self.val_frac < 1):
            raise ValidationError("dataset split fractions must leave room "
                                  "for train, val, and test")


@dataclass
class SweepSection:
    groups: tuple = ("ablation",)
    seeds: tuple = (0, 1, 2)
    jobs: int = 1
    eval_split: str = "test"

    def validate(self) -> None:
        if not self.groups:
            raise ValidationError("sweep.groups must name at least one group")
        if not self.seeds:
            raise ValidationError("sweep.seeds must list at least one seed")
        if self.jobs < 1:
            raise ValidationError(f"sweep.jobs must be >= 1, got {self.jobs}")
        if self.eval_split not in ("train", "val", "test"):
            raise ValidationError(
                f"sweep.eval_split must be train/val/test, got {self.eval_split!r}")


SECTION_ORDER = ("graph", "oracle", "dataset", "model", "train", "sweep")


@dataclass
class AppConfig:
    graph: GraphSection
    oracle: OracleSection
    dataset: DatasetSection
    model: ModelConfig
    train: TrainConfig
    sweep: SweepSection

    def section(self, name: str):
        if name not in SECTION_ORDER:
            raise ValidationError(f"unknown config section {name!r}; "
                                  f"expected one of {', '.join(SECTION_ORDER)}")
        return getattr(self, name)

    def validate(self) -> None:
        for name in SECTION_ORDER:
            self.section(name).validate()


def default_config() -> AppConfig:
    return AppConfig(graph=GraphSection(), oracle=OracleSection(),
                     dataset=DatasetSection(), model=ModelConfig(),
                     train=TrainConfig(), sweep=SweepSection())


def _parse_bool(raw: str, where: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"{where}: cannot parse {raw!r} as a boolean")


def _coerce(current, raw: str, where: str):
    """Parse `raw` to the type of the current (default) value."""
    try:
        if isinstance(current, bool):
            return _parse_bool(raw, where)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if current and isinstance(current[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        return raw
    except ValueError as exc:
        raise ValidationError(f"{where}: cannot parse {raw!r}: {exc}") from exc


def _set_key(cfg: AppConfig, section: str, key: str, raw: str) -> None:
    obj = cfg.section(section)
    names = {f.name for f in fields(obj)}
    if key not in names:
        raise ValidationError(
            f"unknown key {key!r} in [{section}]; valid keys: "
            f"{', '.join(sorted(names))}")
    where = f"{section}.{key}"
    setattr(obj, key, _coerce(getattr(obj, key), raw, where))


def apply_override(cfg: AppConfig, spec: str) -> None:
    """Apply one dotted override of the form section.key=value."""
    if "=" not in spec:
        raise ValidationError(f"override {spec!r} must look like section.key=value")
    dotted, raw = spec.split("=", 1)
    if "." not in dotted:
        raise ValidationError(f"override key {dotted!r} must be section.key")
    section, key = dotted.split(".", 1)
    _set_key(cfg, section.strip(), key.strip(), raw)


def load_config(path=None, overrides=()) -> AppConfig:
    """Defaults, then the INI file (if any), then overrides; validated."""
    cfg = default_config()
    if path is not None:
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set_key(cfg, section, key, raw)
    for spec in overrides:
        apply_override(cfg, spec)
    cfg.validate()
    return cfg


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def write_resolved(cfg: AppConfig, path) -> None:
    """Snapshot every resolved key so a run's provenance is one file."""
    lines = []
    for name in SECTION_ORDER:
        obj = cfg.section(name)
        lines.append(f"[{name}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
