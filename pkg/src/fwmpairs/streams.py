"""Synthetic signal/idler detector time tags and their file formats.

Pair emission is a homogeneous Poisson process; the idler copy of each pair is
delayed by a Gaussian correlation spread, each photon independently survives
its detection efficiency, surviving tags pick up Gaussian channel jitter, get
merged with uncorrelated Poisson background tags, and are finally thinned by a
non-paralyzable dead time (a tag closer than the dead time to the previously
*accepted* tag on its channel is dropped).  Timestamps are integer picoseconds
inside the acquisition window [0, duration).

Synthesis is bit-reproducible for a fixed seed and parameter set: the random
draws happen in a fixed order with a fixed count per stage.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - exercised implicitly where numba is absent
    _njit = None

__all__ = [
    "SIGNAL",
    "IDLER",
    "PS_PER_S",
    "MAX_EXPECTED_EVENTS",
    "CapacityExceeded",
    "UnsortedStream",
    "PairStreamParams",
    "TimeTagStream",
    "apply_dead_time",
    "synthesize_time_tags",
    "write_time_tags_binary",
    "read_time_tags_binary",
    "write_time_tags_csv",
    "read_time_tags_csv",
]

SIGNAL = 0
IDLER = 1
PS_PER_S = 1_000_000_000_000
MAX_EXPECTED_EVENTS = 1e9

# Binary tag record: 1 unsigned channel byte (0 = signal, 1 = idler) followed
# by an 8-byte little-endian unsigned picosecond timestamp, packed.
_TAG_DTYPE = np.dtype([("channel", "u1"), ("time", "<u8")])


class CapacityExceeded(RuntimeError):
    """Requested synthesis would exceed the in-memory event budget."""


class UnsortedStream(ValueError):
    """Tag times are not non-decreasing."""


@dataclass(frozen=True)
class PairStreamParams:
    """Generator and detector-chain parameters for one synthetic run."""

    pair_rate: float  # true generated pairs per second
    duration: float  # acquisition length, s
    corr_sigma: float = 0.0  # signal-idler delay spread, s
    eff_signal: float = 1.0  # detection efficiency in [0, 1]
    eff_idler: float = 1.0
    jitter_signal: float = 0.0  # Gaussian timing jitter sigma, s
    jitter_idler: float = 0.0
    dead_signal: float = 0.0  # non-paralyzable dead time, s
    dead_idler: float = 0.0
    bg_signal: float = 0.0  # uncorrelated background rate, counts/s
    bg_idler: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("pair_rate", "duration", "corr_sigma", "jitter_signal",
                     "jitter_idler", "dead_signal", "dead_idler", "bg_signal", "bg_idler"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("eff_signal", "eff_idler"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def expected_events(self) -> float:
        return self.duration * (self.pair_rate + self.bg_signal + self.bg_idler)


@dataclass
class TimeTagStream:
    """Single-channel click record: integer picosecond times, non-decreasing."""

    channel: int
    times: np.ndarray

    def __post_init__(self) -> None:
        if self.channel not in (SIGNAL, IDLER):
            raise ValueError("channel must be SIGNAL (0) or IDLER (1)")
        self.times = np.asarray(self.times, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.times.size)

    def is_sorted(self) -> bool:
        return bool(self.times.size < 2 or np.all(np.diff(self.times) >= 0))


def _dead_time_mask_py(times: np.ndarray, dead_ps: np.int64) -> np.ndarray:
    keep = np.ones(times.size, dtype=np.bool_)
    last = np.int64(-(1 << 62))
    for k in range(times.size):
        t = times[k]
        if t - last >= dead_ps:
            last = t
        else:
            keep[k] = False
    return keep


_dead_time_mask = _dead_time_mask_py if _njit is None else _njit(cache=True)(_dead_time_mask_py)


def apply_dead_time(times: np.ndarray, dead_ps: int) -> np.ndarray:
    """Non-paralyzable dead-time filter on sorted integer-ps times.

    A tag is kept iff it is at least dead_ps after the previous kept tag, so
    the output never contains two tags closer than dead_ps.
    """
    times = np.asarray(times, dtype=np.int64)
    if dead_ps <= 0 or times.size == 0:
        return times
    return times[_dead_time_mask(times, np.int64(dead_ps))]


def _finalize_channel(times_s: np.ndarray, duration_ps: int, dead_ps: int) -> np.ndarray:
    """Round float-second tags to int ps, window, sort, dead-time filter."""
    ps = np.rint(times_s * PS_PER_S).astype(np.int64)
    ps = ps[(ps >= 0) & (ps < duration_ps)]
    ps.sort(kind="stable")
    return apply_dead_time(ps, dead_ps)


def synthesize_time_tags(params: PairStreamParams) -> tuple[TimeTagStream, TimeTagStream]:
    """Generate one correlated (signal, idler) tag-stream pair.

    Raises CapacityExceeded when duration*(pair_rate + backgrounds) would
    produce 1e9 or more expected events.
    """
    if params.expected_events >= MAX_EXPECTED_EVENTS:
        raise CapacityExceeded(
            f"expected {params.expected_events:.3g} events >= {MAX_EXPECTED_EVENTS:.0g}"
        )
    rng = np.random.default_rng(params.seed)
    duration_ps = int(round(params.duration * PS_PER_S))

    n_pairs = int(rng.poisson(params.pair_rate * params.duration))
    emission = rng.uniform(0.0, params.duration, n_pairs)
    idler_emission = emission + params.corr_sigma * rng.standard_normal(n_pairs)
    keep_signal = rng.random(n_pairs) < params.eff_signal
    keep_idler = rng.random(n_pairs) < params.eff_idler

    signal = emission[keep_signal]
    idler = idler_emission[keep_idler]
    signal = signal + params.jitter_signal * rng.standard_normal(signal.size)
    idler = idler + params.jitter_idler * rng.standard_normal(idler.size)

    n_bg_signal = int(rng.poisson(params.bg_signal * params.duration))
    signal = np.concatenate([signal, rng.uniform(0.0, params.duration, n_bg_signal)])
    n_bg_idler = int(rng.poisson(params.bg_idler * params.duration))
    idler = np.concatenate([idler, rng.uniform(0.0, params.duration, n_bg_idler)])

    dead_signal_ps = int(round(params.dead_signal * PS_PER_S))
    dead_idler_ps = int(round(params.dead_idler * PS_PER_S))
    return (
        TimeTagStream(SIGNAL, _finalize_channel(signal, duration_ps, dead_signal_ps)),
        TimeTagStream(IDLER, _finalize_channel(idler, duration_ps, dead_idler_ps)),
    )


def _merged_records(signal: TimeTagStream, idler: TimeTagStream) -> np.ndarray:
    times = np.concatenate([signal.times, idler.times])
    channels = np.concatenate([
        np.full(len(signal), SIGNAL, dtype=np.uint8),
        np.full(len(idler), IDLER, dtype=np.uint8),
    ])
    order = np.lexsort((channels, times))  # chronological, signal before idler on ties
    records = np.empty(times.size, dtype=_TAG_DTYPE)
    records["channel"] = channels[order]
    records["time"] = times[order].astype(np.uint64)
    return records


def _split_records(channels: np.ndarray, times: np.ndarray) -> tuple[TimeTagStream, TimeTagStream]:
    bad = ~np.isin(channels, (SIGNAL, IDLER))
    if np.any(bad):
        raise ValueError(f"invalid channel value {int(channels[bad][0])} in tag data")
    return (
        TimeTagStream(SIGNAL, times[channels == SIGNAL].astype(np.int64)),
        TimeTagStream(IDLER, times[channels == IDLER].astype(np.int64)),
    )


def write_time_tags_binary(path: str | Path, signal: TimeTagStream, idler: TimeTagStream) -> None:
    """Write both channels as packed binary records, chronologically merged."""
    _merged_records(signal, idler).tofile(str(path))


def read_time_tags_binary(path: str | Path) -> tuple[TimeTagStream, TimeTagStream]:
    size = Path(path).stat().st_size
    if size % _TAG_DTYPE.itemsize:
        raise ValueError(
            f"truncated tag file: {size} bytes is not a multiple of {_TAG_DTYPE.itemsize}"
        )
    records = np.fromfile(str(path), dtype=_TAG_DTYPE)
    return _split_records(records["channel"], records["time"])


def write_time_tags_csv(path: str | Path, signal: TimeTagStream, idler: TimeTagStream) -> None:
    """CSV alternative to the binary format, header channel,time_ps."""
    records = _merged_records(signal, idler)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "time_ps"])
        for rec in records:
            writer.writerow([int(rec["channel"]), int(rec["time"])])


def read_time_tags_csv(path: str | Path) -> tuple[TimeTagStream, TimeTagStream]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["channel", "time_ps"]:
            raise ValueError(f"unexpected tag header: {header}")
        rows = [(int(c), int(t)) for c, t in reader]
    channels = np.array([r[0] for r in rows], dtype=np.uint8)
    times = np.array([r[1] for r in rows], dtype=np.uint64)
    return _split_records(channels, times)
