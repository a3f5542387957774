"""Run configuration: flat key=value files with CLI overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

MODES = ("harmonicflow", "flowsite")
POCKET_MODES = ("distance", "radius")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "harmonicflow"
    pocket_mode: str = "distance"
    sigma: float = 0.5
    steps: int = 20          # Euler integration steps
    layers: int = 6          # refinement layers
    n_scalar: int = 32
    n_vector: int = 8
    inv_layers: int = 4
    hidden: int = 64
    w_cfm: float = 1.0
    w_refine: float = 1.0
    w_type: float = 0.2
    w_torsion: float = 0.5
    lr: float = 0.001
    batch_size: int = 4
    epochs: int = 100
    fake_ligand_prob: float = 0.2
    val_every: int = 5       # epochs between validation inference passes
    seed: int = 0
    manifest: str = ""
    out_dir: str = "out"
    checkpoint: str = ""

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.pocket_mode not in POCKET_MODES:
            raise ConfigError(
                f"pocket_mode must be one of {POCKET_MODES}, got {self.pocket_mode!r}"
            )
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 <= self.fake_ligand_prob <= 1.0:
            raise ConfigError(
                f"fake_ligand_prob must be in [0, 1], got {self.fake_ligand_prob}"
            )
        for name in ("layers", "n_scalar", "n_vector", "inv_layers", "hidden",
                     "batch_size", "epochs", "val_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        return self

    def weights(self):
        return {
            "l_cfm": self.w_cfm,
            "l_refine": self.w_refine,
            "l_type": self.w_type,
            "l_torsion": self.w_torsion,
        }

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELDS = {f.name: f.type for f in fields(RunConfig)}
_STR_FIELDS = ("mode", "pocket_mode", "manifest", "out_dir", "checkpoint")
_FLOAT_FIELDS = ("sigma", "w_cfm", "w_refine", "w_type", "w_torsion", "lr",
                 "fake_ligand_prob")


def _convert(name, raw):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config field {name!r}")
    if name in _STR_FIELDS:
        return raw
    try:
        return float(raw) if name in _FLOAT_FIELDS else int(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for field {name}")


def parse_config(text):
    """key = value lines; '#' starts a comment (units go there)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#")[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        out[key.strip()] = _convert(key.strip(), raw.strip())
    return out


def load_config(path=None, overrides=None):
    values = {}
    if path:
        with open(path) as fh:
            values.update(parse_config(fh.read()))
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = _convert(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values).validate()
