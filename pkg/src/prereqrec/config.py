"""Experiment configuration: one INI section per stage, every key defaulted."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .concepts import ExtractionConfig
from .pdrs import BemConfig, KemConfig, PdrsConfig
from .prereq import PklConfig

OUTPUT_ENV = "PREREQREC_OUTPUT"


@dataclass
class DataConfig:
    interactions: str = "interactions.tsv"
    documents: str = "documents.tsv"
    embeddings: str = "embeddings.tsv"
    wiki: str = "wiki_refs.tsv"
    annotations: str = "annotations.tsv"
    rating_threshold: float = 3.0
    min_interactions: int = 4
    prior_frac: float = 0.3
    target_frac: float = 0.2
    split: str = "leave-one-out"
    lenient: bool = False


@dataclass
class EvalConfig:
    negatives: int = 99
    ks: str = "2,10"
    cold: str = "cold-user"  # extra cold-start scenario; "none" to skip
    layers: str = "1,2,3,4,5,6"
    grid_d: str = "32,64,128,256"
    grid_d_concept: str = "16,32,64,128"
    kem_dims: str = "8,16,32,64"

    def k_list(self):
        return tuple(int(k) for k in self.ks.split(",") if k.strip())


def int_list(text: str):
    return [int(x) for x in text.split(",") if x.strip()]


SECTIONS = {
    "data": DataConfig,
    "extraction": ExtractionConfig,
    "pkl": PklConfig,
    "kem": KemConfig,
    "bem": BemConfig,
    "pdrs": PdrsConfig,
    "eval": EvalConfig,
}


def default_output() -> str:
    return os.environ.get(OUTPUT_ENV, "prereqrec-out")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    pkl: PklConfig = field(default_factory=PklConfig)
    kem: KemConfig = field(default_factory=KemConfig)
    bem: BemConfig = field(default_factory=BemConfig)
    pdrs: PdrsConfig = field(default_factory=PdrsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    output: str = field(default_factory=default_output)
    base_dir: str = "."  # relative input paths resolve against this

    def as_dict(self, with_output: bool = True) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}
        out["run"] = {"seed": self.seed}
        if with_output:
            out["run"]["output"] = self.output
        return out

    def hash(self) -> str:
        """Stable digest over every setting except where outputs go."""
        d = self.as_dict(with_output=False)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def input_path(self, key: str) -> Path:
        p = Path(getattr(self.data, key))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``replace(pdrs={"layers": 2})``."""
        new = dataclasses.replace(self)
        for name, values in sections.items():
            if name in SECTIONS:
                setattr(new, name, dataclasses.replace(getattr(self, name), **values))
            else:
                setattr(new, name, values)
        return new

    def write(self, path):
        parser = configparser.ConfigParser()
        for section, values in self.as_dict().items():
            parser[section] = {k: _fmt(v) for k, v in values.items()}
        with open(path, "w", encoding="utf-8") as fh:
            parser.write(fh)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def coerce(value: str, kind):
    if kind is bool or kind == "bool":
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int or kind == "int":
        return int(value)
    if kind is float or kind == "float":
        return float(value)
    return str(value)


def field_types(cls) -> dict:
    return {f.name: (f.type if isinstance(f.type, str) else f.type.__name__) for f in dataclasses.fields(cls)}


def apply_overrides(cfg: ExperimentConfig, section: str, values: dict):
    if section == "run":
        for key, v in values.items():
            if key == "seed":
                cfg.seed = int(v)
            elif key == "output":
                cfg.output = str(v)
            else:
                raise ValueError(f"unknown key {key!r} in section [run]")
        return
    if section not in SECTIONS:
        raise ValueError(f"unknown config section [{section}]")
    obj = getattr(cfg, section)
    types = field_types(SECTIONS[section])
    for key, v in values.items():
        if key not in types:
            raise ValueError(f"unknown key {key!r} in section [{section}]")
        setattr(obj, key, coerce(v, types[key]))


def load_config(path=None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    for section in parser.sections():
        apply_overrides(cfg, section, dict(parser[section]))
    cfg.base_dir = str(path.parent)
    return cfg
