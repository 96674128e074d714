"""TOML run configurations for the batch front end.

Configs carry a `scenario` discriminator (scan, tags, analyze, tomo, sweep)
and parameter blocks in the units the source material reports: MHz for
frequencies (converted internally to rad/s), °C for temperatures, mW for
powers, and ns/ps as labeled per field.  Every referenced input file must
exist and every parameter must validate before any computation starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .atomic import (
    ThreeLevelParams,
    VaporParams,
    default_velocity_grid,
)
from .streams import PairStreamParams
from .tomography import read_counts_csv, validate_counts

__all__ = [
    "SCENARIOS",
    "ConfigError",
    "AnalyzeOptions",
    "ScanJob",
    "TagsJob",
    "AnalyzeJob",
    "TomoJob",
    "SweepJob",
    "load_config",
]

SCENARIOS = ("scan", "tags", "analyze", "tomo", "sweep")

MHZ = 2 * np.pi * 1e6
CELSIUS_OFFSET = 273.15
AMU = 1.66053906660e-27


class ConfigError(ValueError):
    """Configuration failed validation; the message names the parameter."""


@dataclass
class AnalyzeOptions:
    """Histogram/window/detector settings shared by analyze and sweep."""

    bin_width_ps: int = 100
    span_ps: int = 40_000
    window_ps: float = 4000.0
    duration_s: float | None = None
    dead_signal_s: float | None = None
    dead_idler_s: float | None = None
    eff_signal: float | None = None
    eff_idler: float | None = None
    jitter_signal_s: float | None = None
    jitter_idler_s: float | None = None


@dataclass
class ScanJob:
    params: ThreeLevelParams
    vapor: VaporParams
    grid: np.ndarray
    normalize: bool
    seed: int


@dataclass
class TagsJob:
    pairs: PairStreamParams
    fmt: str  # "binary" or "csv"


@dataclass
class AnalyzeJob:
    tags_path: Path
    fmt: str
    options: AnalyzeOptions


@dataclass
class TomoJob:
    counts_path: Path
    restarts: int
    seed: int


@dataclass
class SweepJob:
    axes: list[tuple[str, list[float]]]  # name-sorted, values ascending
    base_pairs: dict  # PairStreamParams keywords minus pair_rate/seed
    rate_constant: float | None  # /s/mW^2 for power axes
    fixed_pump_mw: float
    fixed_coupling_mw: float
    options: AnalyzeOptions
    seed: int

    def grid_points(self) -> list[tuple[float, ...]]:
        """Cartesian product in lexicographic coordinate order."""
        points = [()]
        for _, values in self.axes:
            points = [p + (v,) for p in points for v in values]
        return points

    def pair_rate_for(self, point: tuple[float, ...]) -> float:
        coords = dict(zip([name for name, _ in self.axes], point))
        if "pair_rate_per_s" in coords:
            return coords["pair_rate_per_s"]
        pump = coords.get("pump_power_mw", self.fixed_pump_mw)
        coupling = coords.get("coupling_power_mw", self.fixed_coupling_mw)
        return self.rate_constant * pump * coupling


def _section(data: dict, name: str, required: bool = True) -> dict:
    block = data.get(name)
    if block is None:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    if not isinstance(block, dict):
        raise ConfigError(f"[{name}] must be a table")
    return block


_MISSING = object()


def _number(section: dict, ctx: str, key: str, default=_MISSING) -> float:
    value = section.get(key, _MISSING)
    if value is _MISSING:
        if default is _MISSING:
            raise ConfigError(f"missing {ctx}.{key}")
        return default
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{ctx}.{key} must be a number")
    if not math.isfinite(float(value)):
        raise ConfigError(f"{ctx}.{key} must be finite")
    return float(value)


def _integer(section: dict, ctx: str, key: str, default=_MISSING) -> int:
    value = _number(section, ctx, key, default)
    if value != int(value):
        raise ConfigError(f"{ctx}.{key} must be an integer")
    return int(value)


def _string(section: dict, ctx: str, key: str, default=_MISSING, choices=None) -> str:
    value = section.get(key, _MISSING)
    if value is _MISSING:
        if default is _MISSING:
            raise ConfigError(f"missing {ctx}.{key}")
        return default
    if not isinstance(value, str):
        raise ConfigError(f"{ctx}.{key} must be a string")
    if choices is not None and value not in choices:
        raise ConfigError(f"{ctx}.{key} must be one of {choices}, got {value!r}")
    return value


def _known_keys(section: dict, ctx: str, allowed: set[str]) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key {ctx}.{sorted(unknown)[0]}")


def _atomic_params(data: dict) -> ThreeLevelParams:
    sec = _section(data, "atomic")
    _known_keys(sec, "atomic", {
        "omega_p_mhz", "omega_c_mhz", "delta_1_mhz", "delta_2_mhz",
        "lambda_p_nm", "lambda_c_nm", "gamma_e_mhz", "gamma_t_mhz", "branch_te",
    })
    kwargs = dict(
        omega_p=_number(sec, "atomic", "omega_p_mhz") * MHZ,
        omega_c=_number(sec, "atomic", "omega_c_mhz") * MHZ,
        delta_1=_number(sec, "atomic", "delta_1_mhz") * MHZ,
        delta_2=_number(sec, "atomic", "delta_2_mhz") * MHZ,
        lambda_p=_number(sec, "atomic", "lambda_p_nm") * 1e-9,
        lambda_c=_number(sec, "atomic", "lambda_c_nm") * 1e-9,
    )
    if "gamma_e_mhz" in sec:
        kwargs["gamma_e"] = _number(sec, "atomic", "gamma_e_mhz") * MHZ
    if "gamma_t_mhz" in sec:
        kwargs["gamma_t"] = _number(sec, "atomic", "gamma_t_mhz") * MHZ
    if "branch_te" in sec:
        kwargs["branch_te"] = _number(sec, "atomic", "branch_te")
    try:
        return ThreeLevelParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"atomic parameters invalid: {exc}") from exc


def _vapor_params(data: dict) -> VaporParams:
    sec = _section(data, "vapor")
    _known_keys(sec, "vapor", {"temperature_c", "atomic_mass_amu"})
    kwargs = dict(temperature=_number(sec, "vapor", "temperature_c") + CELSIUS_OFFSET)
    if "atomic_mass_amu" in sec:
        kwargs["atomic_mass"] = _number(sec, "vapor", "atomic_mass_amu") * AMU
    try:
        return VaporParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"vapor parameters invalid: {exc}") from exc


def _velocity_grid(data: dict, vapor: VaporParams) -> np.ndarray:
    sec = _section(data, "grid", required=False)
    _known_keys(sec, "grid", {"n_sigma", "points", "v_min_mps", "v_max_mps"})
    points = _integer(sec, "grid", "points", 2001)
    if points < 1:
        raise ConfigError("grid.points must be positive")
    if "v_min_mps" in sec or "v_max_mps" in sec:
        v_min = _number(sec, "grid", "v_min_mps")
        v_max = _number(sec, "grid", "v_max_mps")
        if v_max <= v_min:
            raise ConfigError("grid.v_max_mps must exceed grid.v_min_mps")
        return np.linspace(v_min, v_max, points)
    n_sigma = _number(sec, "grid", "n_sigma", 6.0)
    if n_sigma <= 0:
        raise ConfigError("grid.n_sigma must be positive")
    return default_velocity_grid(vapor, n_sigma=n_sigma, points=points)


_PAIR_KEYS = {
    "pair_rate_per_s", "duration_s", "corr_sigma_ps", "eff_signal", "eff_idler",
    "jitter_signal_ps", "jitter_idler_ps", "dead_signal_ns", "dead_idler_ns",
    "bg_signal_per_s", "bg_idler_per_s",
}


def _pair_kwargs(sec: dict, ctx: str, require_rate: bool) -> dict:
    _known_keys(sec, ctx, _PAIR_KEYS)
    kwargs = {
        "duration": _number(sec, ctx, "duration_s"),
        "corr_sigma": _number(sec, ctx, "corr_sigma_ps", 0.0) * 1e-12,
        "eff_signal": _number(sec, ctx, "eff_signal", 1.0),
        "eff_idler": _number(sec, ctx, "eff_idler", 1.0),
        "jitter_signal": _number(sec, ctx, "jitter_signal_ps", 0.0) * 1e-12,
        "jitter_idler": _number(sec, ctx, "jitter_idler_ps", 0.0) * 1e-12,
        "dead_signal": _number(sec, ctx, "dead_signal_ns", 0.0) * 1e-9,
        "dead_idler": _number(sec, ctx, "dead_idler_ns", 0.0) * 1e-9,
        "bg_signal": _number(sec, ctx, "bg_signal_per_s", 0.0),
        "bg_idler": _number(sec, ctx, "bg_idler_per_s", 0.0),
    }
    if require_rate:
        kwargs["pair_rate"] = _number(sec, ctx, "pair_rate_per_s")
    elif "pair_rate_per_s" in sec:
        raise ConfigError(f"{ctx}.pair_rate_per_s is set by the sweep axes")
    return kwargs


def _analyze_options(data: dict) -> AnalyzeOptions:
    opts = AnalyzeOptions()
    hsec = _section(data, "histogram", required=False)
    _known_keys(hsec, "histogram", {"bin_width_ps", "span_ns", "window_ns", "duration_s"})
    opts.bin_width_ps = _integer(hsec, "histogram", "bin_width_ps", 100)
    if opts.bin_width_ps < 1:
        raise ConfigError("histogram.bin_width_ps must be >= 1")
    span_ns = _number(hsec, "histogram", "span_ns", 40.0)
    opts.span_ps = int(round(span_ns * 1000))
    if opts.span_ps <= 0 or opts.span_ps % opts.bin_width_ps:
        raise ConfigError("histogram.span_ns must be a positive multiple of bin_width_ps")
    opts.window_ps = _number(hsec, "histogram", "window_ns", 4.0) * 1000
    if opts.window_ps <= 0:
        raise ConfigError("histogram.window_ns must be positive")
    if "duration_s" in hsec:
        opts.duration_s = _number(hsec, "histogram", "duration_s")
        if opts.duration_s <= 0:
            raise ConfigError("histogram.duration_s must be positive")

    dsec = _section(data, "detectors", required=False)
    _known_keys(dsec, "detectors", {
        "dead_signal_ns", "dead_idler_ns", "eff_signal", "eff_idler",
        "jitter_signal_ps", "jitter_idler_ps",
    })
    if "dead_signal_ns" in dsec:
        opts.dead_signal_s = _number(dsec, "detectors", "dead_signal_ns") * 1e-9
    if "dead_idler_ns" in dsec:
        opts.dead_idler_s = _number(dsec, "detectors", "dead_idler_ns") * 1e-9
    if "eff_signal" in dsec:
        opts.eff_signal = _number(dsec, "detectors", "eff_signal")
    if "eff_idler" in dsec:
        opts.eff_idler = _number(dsec, "detectors", "eff_idler")
    for name in ("eff_signal", "eff_idler"):
        value = getattr(opts, name)
        if value is not None and not 0.0 < value <= 1.0:
            raise ConfigError(f"detectors.{name} must lie in (0, 1]")
    for name in ("dead_signal_s", "dead_idler_s"):
        value = getattr(opts, name)
        if value is not None and value < 0:
            raise ConfigError(f"detectors.{name.replace('_s', '_ns')} must be non-negative")
    if "jitter_signal_ps" in dsec:
        opts.jitter_signal_s = _number(dsec, "detectors", "jitter_signal_ps") * 1e-12
    if "jitter_idler_ps" in dsec:
        opts.jitter_idler_s = _number(dsec, "detectors", "jitter_idler_ps") * 1e-12
    for name in ("jitter_signal_s", "jitter_idler_s"):
        value = getattr(opts, name)
        if value is not None and value < 0:
            raise ConfigError(f"detectors.{name.replace('_s', '_ps')} must be non-negative")
    return opts


def _input_path(data: dict, base_dir: Path, key: str) -> Path:
    sec = _section(data, "input")
    raw = _string(sec, "input", key)
    path = Path(raw)
    if not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise ConfigError(f"input.{key} does not exist: {path}")
    return path


_SWEEP_AXES = ("coupling_power_mw", "pair_rate_per_s", "pump_power_mw")


def _sweep_job(data: dict, seed: int) -> SweepJob:
    sec = _section(data, "axes")
    _known_keys(sec, "axes", set(_SWEEP_AXES))
    axes = []
    for name in _SWEEP_AXES:  # name-sorted by construction
        if name not in sec:
            continue
        values = sec[name]
        if not isinstance(values, list) or not values:
            raise ConfigError(f"axes.{name} must be a non-empty list")
        cleaned = []
        for v in values:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or float(v) <= 0:
                raise ConfigError(f"axes.{name} values must be positive numbers")
            cleaned.append(float(v))
        axes.append((name, sorted(cleaned)))
    if not axes:
        raise ConfigError("sweep needs at least one axis")
    names = [n for n, _ in axes]
    power_axes = [n for n in names if n.endswith("_power_mw")]
    if "pair_rate_per_s" in names and power_axes:
        raise ConfigError("axes cannot mix pair_rate_per_s with power axes")

    rsec = _section(data, "rate_model", required=False)
    _known_keys(rsec, "rate_model", {"k_per_s_mw2", "pump_power_mw", "coupling_power_mw"})
    rate_constant = None
    if "k_per_s_mw2" in rsec:
        rate_constant = _number(rsec, "rate_model", "k_per_s_mw2")
        if rate_constant <= 0:
            raise ConfigError("rate_model.k_per_s_mw2 must be positive")
    if power_axes and rate_constant is None:
        raise ConfigError("power axes require rate_model.k_per_s_mw2")

    base_pairs = _pair_kwargs(_section(data, "pairs"), "pairs", require_rate=False)
    return SweepJob(
        axes=axes,
        base_pairs=base_pairs,
        rate_constant=rate_constant,
        fixed_pump_mw=_number(rsec, "rate_model", "pump_power_mw", 1.0),
        fixed_coupling_mw=_number(rsec, "rate_model", "coupling_power_mw", 1.0),
        options=_analyze_options(data),
        seed=seed,
    )


def load_config(path: str | Path, expected_scenario: str | None = None,
                seed_override: int | None = None):
    """Parse and fully validate a run config; returns the scenario job.

    Raises ConfigError naming the offending parameter; nothing is computed or
    written on failure.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc

    scenario = _string(data, "config", "scenario", choices=SCENARIOS)
    if expected_scenario is not None and scenario != expected_scenario:
        raise ConfigError(
            f"config scenario is {scenario!r} but the {expected_scenario!r} command was invoked"
        )
    seed = _integer(data, "config", "seed", 0)
    if seed_override is not None:
        seed = seed_override
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    base_dir = path.parent

    if scenario == "scan":
        vapor = _vapor_params(data)
        sec = _section(data, "grid", required=False)
        normalize = sec.get("normalize", True) if isinstance(sec, dict) else True
        if not isinstance(normalize, bool):
            raise ConfigError("grid.normalize must be a boolean")
        return ScanJob(
            params=_atomic_params(data),
            vapor=vapor,
            grid=_velocity_grid(data, vapor),
            normalize=normalize,
            seed=seed,
        )
    if scenario == "tags":
        sec = _section(data, "pairs")
        kwargs = _pair_kwargs(sec, "pairs", require_rate=True)
        osec = _section(data, "output", required=False)
        _known_keys(osec, "output", {"format"})
        fmt = _string(osec, "output", "format", "binary", choices=("binary", "csv"))
        try:
            pairs = PairStreamParams(seed=seed, **kwargs)
        except ValueError as exc:
            raise ConfigError(f"pairs parameters invalid: {exc}") from exc
        return TagsJob(pairs=pairs, fmt=fmt)
    if scenario == "analyze":
        tags_path = _input_path(data, base_dir, "tags_path")
        fmt = _string(_section(data, "input"), "input", "format",
                      "csv" if tags_path.suffix == ".csv" else "binary",
                      choices=("binary", "csv"))
        _check_tags_file(tags_path, fmt)
        return AnalyzeJob(tags_path=tags_path, fmt=fmt, options=_analyze_options(data))
    if scenario == "tomo":
        counts_path = _input_path(data, base_dir, "counts_path")
        try:
            counts = read_counts_csv(counts_path)
            validate_counts(counts)
        except ValueError as exc:
            raise ConfigError(f"input.counts_path invalid: {exc}") from exc
        rsec = _section(data, "reconstruction", required=False)
        _known_keys(rsec, "reconstruction", {"restarts"})
        restarts = _integer(rsec, "reconstruction", "restarts", 32)
        if restarts < 1:
            raise ConfigError("reconstruction.restarts must be >= 1")
        return TomoJob(counts_path=counts_path, restarts=restarts, seed=seed)
    return _sweep_job(data, seed)


def _check_tags_file(path: Path, fmt: str) -> None:
    """Cheap structural sanity so malformed inputs fail at validation time."""
    if fmt == "binary":
        if path.stat().st_size % 9:
            raise ConfigError(f"input.tags_path is not a whole number of 9-byte records: {path}")
    else:
        with open(path) as fh:
            header = fh.readline().rstrip("\r\n")
        if header != "channel,time_ps":
            raise ConfigError(f"input.tags_path has an unexpected CSV header: {header!r}")
