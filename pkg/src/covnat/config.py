"""Run configuration and its ``section.key = value`` text format.

One file holds everything a run needs to be repeated: data generation,
model and teacher shapes, both training schedules, decoding settings, the
seed and the ablation switches. Blank lines and ``#`` comments are ignored.

    seed = 1
    disable_tcir = false
    model.d_model = 64
    train.beta = 0.5
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import LexiconParams
from .errors import ConfigurationError
from .io_utils import atomic_write_text, read_lines
from .model import ModelConfig
from .teacher import TeacherConfig, TeacherTrainConfig
from .training import TrainConfig

SECTIONS = {
    "data": LexiconParams,
    "model": ModelConfig,
    "teacher": TeacherConfig,
    "teacher_train": TeacherTrainConfig,
    "train": TrainConfig,
}

# filled from the data or from the switches, never from the file
_DERIVED = {("model", "vocab_size"), ("teacher", "vocab_size"), ("model", "use_tcir"),
            ("train", "seed"), ("teacher_train", "seed")}


@dataclass
class RunConfig:
    seed: int = 0
    task: str = "multi-synonym"
    train_size: int = 20000
    dev_size: int = 500
    train_prefix: str = ""
    dev_prefix: str = ""
    vocab_path: str = ""
    k_dec: int = 0              # 0: use model.k_train
    lpd_radius: int = 0
    disable_tcir: bool = False
    disable_sca: bool = False
    data: LexiconParams = field(default_factory=LexiconParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    teacher_train: TeacherTrainConfig = field(default_factory=TeacherTrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    # -- resolution ------------------------------------------------------------

    def model_config(self, vocab_size: int) -> ModelConfig:
        return replace(self.model, vocab_size=vocab_size, use_tcir=not self.disable_tcir)

    def teacher_config(self, vocab_size: int) -> TeacherConfig:
        return replace(self.teacher, vocab_size=vocab_size)

    def train_config(self) -> TrainConfig:
        beta = 0.0 if self.disable_sca else self.train.beta
        return replace(self.train, beta=beta, seed=self.seed)

    def teacher_train_config(self) -> TeacherTrainConfig:
        return replace(self.teacher_train, seed=self.seed)

    # -- text form -------------------------------------------------------------

    def items(self) -> list[tuple[str, object]]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in SECTIONS:
                for sub in fields(value):
                    if (f.name, sub.name) not in _DERIVED:
                        out.append((f"{f.name}.{sub.name}", getattr(value, sub.name)))
            else:
                out.append((f.name, value))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    def save(self, path) -> None:
        atomic_write_text(path, self.to_text())

    def with_overrides(self, assignments: dict[str, str]) -> "RunConfig":
        cfg = self
        for key, raw in assignments.items():
            cfg = _assign(cfg, key, raw)
        return cfg

    @classmethod
    def from_text(cls, text: str, origin: str = "<config>") -> "RunConfig":
        return cls().with_overrides(parse_assignments(text.splitlines(), origin))

    @classmethod
    def load(cls, path) -> "RunConfig":
        if not Path(path).exists():
            raise FileNotFoundError(f"config file {path} not found")
        return cls.from_text("\n".join(read_lines(path)), str(path))


def parse_assignments(lines, origin: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{origin}:{no}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, current, key: str):
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value {raw!r} for {key} (expected {type(current).__name__})") from None
    return raw


def _assign(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    section, _, name = key.rpartition(".")
    if section:
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section {section!r} in {key!r}")
        if (section, name) in _DERIVED:
            raise ConfigurationError(f"{key} is derived and cannot be set")
        sub = getattr(cfg, section)
        if name not in {f.name for f in fields(sub)}:
            raise ConfigurationError(f"unknown config key {key!r}")
        try:
            new_sub = replace(sub, **{name: _coerce(raw, getattr(sub, name), key)})
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"{key} = {raw}: {exc}") from None
        return replace(cfg, **{section: new_sub})
    if name not in {f.name for f in fields(cfg)} or name in SECTIONS:
        raise ConfigurationError(f"unknown config key {key!r}")
    return replace(cfg, **{name: _coerce(raw, getattr(cfg, name), key)})
