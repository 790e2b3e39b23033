"""Typed flat configuration with sectioned key-value files.

Every field has a default; flags and environment variables mirror keys
one-to-one (env prefix ``EHREMBED_``, upper-cased key). Unknown keys or
sections are rejected so manifests stay diffable. parse -> serialize ->
parse is the identity.
"""

import configparser
import io
import os
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigurationError

ENV_PREFIX = "EHREMBED_"


@dataclass
class PathsConfig:
    data_dir: str = "data"
    out_dir: str = "runs"
    cohort: str = ""
    cohort_b: str = ""
    mapping: str = ""
    init_checkpoint: str = ""
    source_run: str = ""
    hospital_dir: str = ""
    style: str = "auto"  # auto | item_id | text


@dataclass
class ExperimentConfig:
    task: str = "mort"
    encoder: str = "desc_birnn"
    strategy: str = "dsva"
    seed: int = 0
    dropout: float = 0.3
    embed_dim: int = 128
    hidden_dim: int = 256
    value_dim: int = 16
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 10
    few_shot_ratios: str = "0,0.01,0.1,0.5,1.0"
    mlm_steps: int = 300
    w2v_steps: int = 1500
    dx_average: str = "micro"


@dataclass
class SynthConfig:
    patients: int = 500
    concepts: int = 60
    data_seed: int = 1234
    events_lo: int = 8
    events_hi: int = 40


@dataclass
class VocabConfig:
    vocab_max_size: int = 4096
    vocab_min_freq: int = 1


@dataclass
class Config:
    paths: PathsConfig = field(default_factory=PathsConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    vocab: VocabConfig = field(default_factory=VocabConfig)

    SECTIONS = ("paths", "experiment", "synth", "vocab")

    def section(self, name: str):
        return getattr(self, name)

    def flat_items(self):
        for section in self.SECTIONS:
            for f in fields(self.section(section)):
                yield section, f.name, getattr(self.section(section), f.name)

    def set_key(self, key: str, raw):
        for section in self.SECTIONS:
            obj = self.section(section)
            for f in fields(obj):
                if f.name == key:
                    setattr(obj, key, _convert(raw, f.type, key))
                    return
        raise ConfigurationError(f"unknown configuration key '{key}'")

    def to_text(self) -> str:
        parser = configparser.ConfigParser()
        for section in self.SECTIONS:
            parser[section] = {}
            for f in fields(self.section(section)):
                parser[section][f.name] = str(getattr(self.section(section), f.name))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "Config":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        config = cls()
        known = {section: {f.name: f.type for f in fields(config.section(section))}
                 for section in cls.SECTIONS}
        for section in parser.sections():
            if section not in known:
                raise ConfigurationError(f"unknown configuration section '{section}'")
            for key, raw in parser[section].items():
                if key not in known[section]:
                    raise ConfigurationError(
                        f"unknown key '{key}' in section [{section}]")
                setattr(config.section(section), key,
                        _convert(raw, known[section][key], key))
        return config

    @classmethod
    def load(cls, path) -> "Config":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def apply_env(self, environ=None):
        environ = os.environ if environ is None else environ
        for section in self.SECTIONS:
            for f in fields(self.section(section)):
                env_key = ENV_PREFIX + f.name.upper()
                if env_key in environ:
                    self.set_key(f.name, environ[env_key])

    def as_dict(self) -> dict:
        return {section: asdict(self.section(section)) for section in self.SECTIONS}

    def ratios(self) -> tuple:
        try:
            return tuple(float(r) for r in
                         self.experiment.few_shot_ratios.split(",") if r.strip() != "")
        except ValueError:
            raise ConfigurationError(
                f"few_shot_ratios must be comma-separated numbers, "
                f"got '{self.experiment.few_shot_ratios}'")


def _convert(raw, target_type, key: str):
    if isinstance(target_type, str):
        target_type = {"str": str, "int": int, "float": float, "bool": bool}[target_type]
    if target_type is bool:
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes", "on"):
            return True
        if str(raw).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"key '{key}': cannot parse boolean from '{raw}'")
    try:
        return target_type(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(
            f"key '{key}': cannot parse {target_type.__name__} from '{raw}'")
