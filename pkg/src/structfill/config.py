"""Job configuration: defaults, flat key = value files and command-line overrides."""

from __future__ import annotations

import argparse
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from .structure.matching import DELTA_H, EPS_L


class ConfigError(Exception):
    """Malformed configuration or out-of-range value."""


def _rng(lo=None, hi=None, lo_open=False, hi_open=False, odd=False, choices=None):
    return {"lo": lo, "hi": hi, "lo_open": lo_open, "hi_open": hi_open, "odd": odd, "choices": choices}


@dataclass(frozen=True)
class JobConfig:
    input: Optional[str] = None
    mask: Optional[str] = None
    output: Optional[str] = None
    patch_size: int = field(default=9, metadata=_rng(5, 101, odd=True))
    # contour detection
    sigma: float = field(default=2.0, metadata=_rng(0.0, 20.0, lo_open=True))
    beta: float = field(default=1.0, metadata=_rng(0.0, 100.0))
    gamma: float = field(default=0.0, metadata=_rng(0.0, 100.0))
    orientations: int = field(default=8, metadata=_rng(4, 32))
    radius: int = field(default=5, metadata=_rng(2, 32))
    # terminal sweep and pairing
    dt: float = field(default=0.05, metadata=_rng(0.0, 1.0, lo_open=True))
    delta_T: float = field(default=0.1, metadata=_rng(0.0, 1.0, lo_open=True, hi_open=True))
    delta_H: float = field(default=DELTA_H, metadata=_rng(0.0, 2 * math.log(2.0), lo_open=True))
    eps_L: float = field(default=EPS_L, metadata=_rng(0.0, 1.0))
    kappa_u: Optional[float] = field(default=None, metadata=_rng(0.0, 100.0))  # None: 1.5 * delta_H
    max_turn: float = field(default=120.0, metadata=_rng(0.0, 180.0, lo_open=True))  # degrees
    # propagation
    m_max: int = field(default=400, metadata=_rng(1, 100000))
    band: Optional[int] = field(default=None, metadata=_rng(1, 100000))  # None: 4 * patch_size
    delta: float = field(default=1e-3, metadata=_rng(0.0, 1.0, lo_open=True))
    max_iter: int = field(default=50, metadata=_rng(1, 10000))
    damping: float = field(default=0.5, metadata=_rng(0.0, 1.0, hi_open=True))
    literal_energy: bool = False
    # fill
    search: str = field(default="full", metadata=_rng(choices=("full", "band")))
    snapshot_every: int = field(default=25, metadata=_rng(1, 1000000))
    seed: int = field(default=0, metadata=_rng(0, 2**32 - 1))
    debug_dir: Optional[str] = None
    structure: bool = True

    def __post_init__(self):
        for f in fields(self):
            check_value(f.name, getattr(self, f.name))
        if self.delta_T >= 1.0:
            raise ConfigError("delta_T must be below the initial sweep level 1.0")
        band = self.effective_band
        if band < self.patch_size:
            raise ConfigError(f"band must be >= patch_size ({self.patch_size}), got {band}")

    @property
    def effective_band(self) -> int:
        return 4 * self.patch_size if self.band is None else self.band

    @property
    def effective_kappa_u(self) -> float:
        return 1.5 * self.delta_H if self.kappa_u is None else self.kappa_u

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "JobConfig | None" = None) -> "JobConfig":
        return apply_overrides(base or cls(), parse_text(text))


_FIELDS = {f.name: f for f in fields(JobConfig)}


def _kind(name: str) -> type:
    default = _FIELDS[name].default
    if name in ("kappa_u",):
        return float
    if name in ("band",):
        return int
    if name in ("input", "mask", "output", "debug_dir"):
        return str
    return type(default)


def _format(v: Any) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def convert(name: str, raw: str) -> Any:
    if name not in _FIELDS:
        raise ConfigError(f"unknown key {name!r}")
    raw = raw.strip()
    kind = _kind(name)
    if raw.lower() in ("auto", "none", "") and (_FIELDS[name].default is None):
        return None
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def check_value(name: str, v: Any) -> None:
    meta = _FIELDS[name].metadata
    if v is None or not meta:
        return
    if meta.get("choices"):
        if v not in meta["choices"]:
            raise ConfigError(f"{name} must be one of {', '.join(meta['choices'])}; got {v!r}")
        return
    lo, hi = meta["lo"], meta["hi"]
    lo_b = "(" if meta["lo_open"] else "["
    hi_b = ")" if meta["hi_open"] else "]"
    span = f"{lo_b}{lo}, {hi}{hi_b}"
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (isinstance(v, float) and not math.isfinite(v)):
        raise ConfigError(f"{name} must be a number in {span}; got {v!r}")
    bad = (v <= lo if meta["lo_open"] else v < lo) or (v >= hi if meta["hi_open"] else v > hi)
    if bad:
        raise ConfigError(f"{name} must lie in {span}; got {v}")
    if meta["odd"] and v % 2 == 0:
        raise ConfigError(f"{name} must be an odd integer in {span}; got {v}")


def parse_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for num, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {num}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {num}: unknown key {key!r}")
        out[key] = convert(key, raw)
    return out


def apply_overrides(base: JobConfig, values: dict[str, Any]) -> JobConfig:
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    return replace(base, **values)


def load_config_file(path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_text(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="structfill",
        description="Remove a masked object from an image and fill the hole, continuing broken edges first.",
    )
    p.add_argument("--input", help="input image (PNG or JPEG)")
    p.add_argument("--mask", help="mask PNG, pixels > 127 are removed")
    p.add_argument("--output", help="output PNG")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--no-structure", dest="structure", action="store_const", const=False,
                   help="skip structure estimation and propagation (plain exemplar fill)")
    p.add_argument("--debug-dir", dest="debug_dir")
    p.add_argument("--seed", type=int)
    tun = p.add_argument_group("tuning")
    flagged = {"input", "mask", "output", "patch_size", "structure", "debug_dir", "seed"}
    for f in fields(JobConfig):
        if f.name in flagged:
            continue
        tun.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=str, metavar="V")
    return p


def parse_config(argv: Sequence[str] | None = None) -> JobConfig:
    """Defaults, then the config file, then command-line flags."""
    args = build_parser().parse_args(argv)
    values: dict[str, Any] = {}
    if args.config:
        values.update(load_config_file(args.config))
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is None:
            continue
        values[name] = convert(name, v) if isinstance(v, str) and _kind(name) is not str else v
    cfg = apply_overrides(JobConfig(), values)
    missing = [k for k in ("input", "mask", "output") if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(missing)}")
    return cfg
