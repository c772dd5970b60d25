"""Run configuration: presets, INI round trip and a stable hash."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .channel import ChannelParams, generation_rate
from .security import ProtocolParams

__all__ = ["CONFIG_DIR_ENV", "PRESETS", "RunConfig", "load_config", "preset", "resolve_config_path"]

CONFIG_DIR_ENV = "HDQKD_CONFIG_DIR"

_SECTIONS = {
    "protocol": ("d", "mu1", "mu2", "p_mu1", "P_Z", "c_overlap", "base_rate", "rate_scaling",
                 "eps_sec", "eps_cor", "f_e", "eps2_source", "hoeffding_log_base"),
    "channel": ("loss_db", "P_DC", "P_err", "t_DT", "include_postselection", "error_model"),
    "run": ("n_Z", "seed"),
}


@dataclass(frozen=True)
class RunConfig:
    """Flat parameter set shared by all commands.

    ``c_overlap = None`` means the ideal ``log2 d``. ``base_rate`` is the 2D
    symbol rate; with ``rate_scaling`` dimension ``d`` runs at
    ``base_rate * 2 / d``.
    """

    d: int = 4
    mu1: float = 0.37
    mu2: float = 0.13
    p_mu1: float = 0.76
    P_Z: float = 0.9
    c_overlap: float | None = None
    base_rate: float = 500e6
    rate_scaling: bool = True
    eps_sec: float = 1e-15
    eps_cor: float = 1e-9
    f_e: float = 1.08
    eps2_source: str = "cor"
    hoeffding_log_base: float = math.e
    loss_db: float = 25.0
    P_DC: float = 4e-7
    P_err: float = 0.01
    t_DT: float = 5e-8
    include_postselection: bool = True
    error_model: str = "corrected"
    n_Z: float = 1e7
    seed: int = 0

    def __post_init__(self):
        # re-validate through the domain types
        self.protocol()
        self.channel()
        if not self.n_Z > 0:
            raise ValueError("n_Z must be positive")

    @property
    def R(self) -> float:
        return generation_rate(self.d, self.base_rate, self.rate_scaling)

    def protocol(self) -> ProtocolParams:
        return ProtocolParams(d=self.d, mu1=self.mu1, mu2=self.mu2, p_mu1=self.p_mu1,
                              P_Z=self.P_Z, c_overlap=self.c_overlap, R=self.R,
                              eps_sec=self.eps_sec, eps_cor=self.eps_cor, f_e=self.f_e,
                              eps2_source=self.eps2_source,
                              hoeffding_log_base=self.hoeffding_log_base)

    def channel(self) -> ChannelParams:
        return ChannelParams(loss_db=self.loss_db, P_DC=self.P_DC, P_err=self.P_err,
                             t_DT=self.t_DT, include_postselection=self.include_postselection,
                             error_model=self.error_model)

    def updated(self, **overrides) -> "RunConfig":
        """Copy with the non-None entries of ``overrides`` applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        values = asdict(self)
        for section, keys in _SECTIONS.items():
            cp[section] = {k: _fmt(values[k]) for k in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_string(text)
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for section in cp.sections():
            if section not in _SECTIONS:
                raise ValueError(f"unknown section [{section}]")
            for key, raw in cp[section].items():
                if key not in _SECTIONS[section]:
                    raise ValueError(f"unknown key {key!r} in [{section}]")
                kw[key] = _parse(raw, types[key])
        return cls(**kw)

    def config_hash(self) -> str:
        blob = json.dumps({k: _fmt(v) for k, v in asdict(self).items()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, typ: str):
    raw = raw.strip()
    if "None" in typ and raw == "":
        return None
    if typ.startswith("bool"):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if typ.startswith("int"):
        return int(raw)
    if typ.startswith("float"):
        return float(raw)
    return raw


_FIG4 = dict(d=4, mu1=0.37, mu2=0.13, p_mu1=0.76, P_Z=0.9, c_overlap=1.75, loss_db=25.0,
             P_DC=4e-7, P_err=0.01, t_DT=5e-8, n_Z=1e7, f_e=1.08, base_rate=500e6)

PRESETS: dict[str, dict] = {
    "fig4": _FIG4,
    "table2-4d": _FIG4,
    "table2-2d": {**_FIG4, "d": 2, "mu1": 0.35, "p_mu1": 0.73, "c_overlap": 0.93, "loss_db": 23.5},
    # dimension study: ideal overlap, same experimental detector figures
    "fig5": {**_FIG4, "c_overlap": None, "loss_db": 0.0},
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig(**PRESETS[name])


def resolve_config_path(path: str | os.PathLike) -> Path:
    """Relative paths that do not exist are looked up in ``$HDQKD_CONFIG_DIR``."""
    p = Path(path)
    if not p.is_absolute() and not p.exists() and os.environ.get(CONFIG_DIR_ENV):
        p = Path(os.environ[CONFIG_DIR_ENV]) / p
    if not p.exists():
        raise FileNotFoundError(f"config file {path} not found")
    return p


def load_config(path: str | os.PathLike) -> RunConfig:
    return RunConfig.from_ini(resolve_config_path(path).read_text())
