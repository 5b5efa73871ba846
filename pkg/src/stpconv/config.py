"""Run configuration: one INI-style file with a section per component.

    [model]      ModelSpec fields
    [train]      TrainConfig fields
    [gaps]       GapConfig fields (artificial gaps for training and validation)
    [synthetic]  SyntheticConfig fields (used by ``generate``)
    [run]        paths, seeds, sizes and the thread count

Values are Python literals (``3``, ``0.005``, ``(2, 2, 2)``, ``None``); anything
that does not parse as a literal is kept as a string.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .blocks import SyntheticConfig
from .errors import ConfigError
from .maskgen import GapConfig
from .model import ModelSpec
from .train import TrainConfig


@dataclass
class RunSettings:
    data_dir: str = "data"
    output_dir: str = "out"
    model_dir: str = "model"
    raster: str = ""  # BlockFile holding a large raster, for ``stitch``
    threads: int | None = None  # None: all cores for prediction, 1 for training
    model_seed: int = 0
    data_seed: int = 0
    n_blocks: int = 48
    block_shape: tuple = (64, 64, 16, 1)
    margin: tuple = (4, 4, 0)
    render_vmin: float | None = None
    render_vmax: float | None = None


SECTIONS = {
    "model": ModelSpec,
    "train": TrainConfig,
    "gaps": GapConfig,
    "synthetic": SyntheticConfig,
    "run": RunSettings,
}


def _parse(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _build(cls, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"[{section}]: {e}") from e


@dataclass
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    gaps: GapConfig = field(default_factory=GapConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @classmethod
    def from_sections(cls, sections: dict) -> "RunConfig":
        unknown = sorted(set(sections) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        return cls(**{name: _build(kind, sections.get(name, {}), name) for name, kind in SECTIONS.items()})

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        """Read ``path`` (optional) and apply ``section.key=value`` overrides."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            try:
                parser.read(path)
            except configparser.Error as e:
                raise ConfigError(f"cannot parse {path}: {e}") from e
        sections = {s: {k: _parse(v) for k, v in parser[s].items()} for s in parser.sections()}
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot or not name:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            sections.setdefault(section, {})[name] = _parse(value.strip())
        return cls.from_sections(sections)

    def to_sections(self) -> dict:
        out = {}
        for name in SECTIONS:
            obj = getattr(self, name)
            out[name] = obj.to_dict() if isinstance(obj, ModelSpec) else dataclasses.asdict(obj)
        return out

    def to_text(self) -> str:
        lines = []
        for name, values in self.to_sections().items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v!r}" for k, v in values.items())
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path
