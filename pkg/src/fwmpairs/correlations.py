"""Coincidence, cross-correlation, dead-time, and scaling statistics.

The normalized signal-idler cross-correlation estimator used throughout is

    g(tau_k) = counts[k] * T / (S_s * S_i * bin_width)

with T the acquisition duration and S_s, S_i the total singles, which is 1 for
uncorrelated streams (finite-duration edge corrections are ignored; span << T
keeps the bias below 1e-6 at all scales used here).  Dead-time corrections use
the non-paralyzable model observed = true / (1 + true*dead).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .streams import TimeTagStream, UnsortedStream

__all__ = [
    "GAUSSIAN_FWHM_FACTOR",
    "GAUSSIAN_TIME_BANDWIDTH",
    "EmptyStream",
    "SaturatedRate",
    "InvalidCounts",
    "InsufficientData",
    "UnresolvedPeak",
    "OverDeconvolved",
    "CoincidenceHistogram",
    "GsiCurve",
    "PowerScalingFit",
    "GsiRateFit",
    "coincidence_histogram",
    "gsi_from_histogram",
    "heralding_efficiency",
    "dead_time_observed_rate",
    "dead_time_true_rate",
    "fit_power_scaling",
    "fit_gsi_vs_rate",
    "gsi_rate_model",
    "deconvolved_fwhm",
    "biphoton_linewidth",
    "write_histogram_csv",
    "write_gsi_csv",
]

GAUSSIAN_FWHM_FACTOR = 2.0 * np.sqrt(2.0 * np.log(2.0))  # FWHM = 2.3548 * sigma
# Gaussian transform-pair convention: FWHM(t) * FWHM(nu) = 0.44, i.e. an
# angular linewidth of 2*pi*0.44 / FWHM(t).
GAUSSIAN_TIME_BANDWIDTH = 0.44


class EmptyStream(ValueError):
    """Normalization impossible: zero singles or duration."""


class SaturatedRate(ValueError):
    """observed*dead >= 1: no finite true rate reproduces this observation."""


class InvalidCounts(ValueError):
    """Count arithmetic got impossible inputs."""


class InsufficientData(ValueError):
    """Too few points for the requested fit."""


class UnresolvedPeak(ValueError):
    """Correlation curve has no usable peak above its baseline."""


class OverDeconvolved(ValueError):
    """Detector response quadrature meets or exceeds the measured width."""


@dataclass
class CoincidenceHistogram:
    """Signal-idler delay histogram plus the normalization metadata."""

    bin_width: int  # ps
    delays: np.ndarray  # bin centers, ps
    counts: np.ndarray
    singles_signal: int
    singles_idler: int
    duration: float  # s

    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class GsiCurve:
    """Normalized cross-correlation per delay bin."""

    delays: np.ndarray  # ps
    g: np.ndarray
    peak: float
    peak_delay: float  # ps


@dataclass
class PowerScalingFit:
    """rate = k * P_pump * P_coupling least-squares result."""

    k: float  # /s/mW^2
    rms_residual: float
    used: np.ndarray  # mask of points inside the linear regime


@dataclass
class GsiRateFit:
    """g = a / R_true fit with R_true the dead-time-corrected rate."""

    amplitude: float  # a, /s
    dead_time: float  # effective tau, s
    rms_log_residual: float
    improved_over_inverse: bool  # False reports FitDiverged (never thrown)


def _stream_times(stream) -> np.ndarray:
    times = stream.times if isinstance(stream, TimeTagStream) else np.asarray(stream)
    times = times.astype(np.int64, copy=False)
    if times.size > 1 and np.any(np.diff(times) < 0):
        raise UnsortedStream("tag times must be non-decreasing")
    return times


def coincidence_histogram(
    signal,
    idler,
    bin_width: int,
    span: int,
    duration: float | None = None,
) -> CoincidenceHistogram:
    """Histogram of idler-minus-signal delays over [-span/2, +span/2).

    bin_width and span are picoseconds, span a multiple of bin_width.  A delay
    exactly on a bin edge goes to the higher bin, which places the +span/2
    edge itself just outside the histogram.  When duration is omitted it is
    estimated from the merged tag extent.
    """
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1 ps")
    if span % bin_width != 0 or span <= 0:
        raise ValueError("span must be a positive multiple of bin_width")
    s = _stream_times(signal)
    i = _stream_times(idler)

    if duration is None:
        if s.size + i.size:
            merged_max = max(s[-1] if s.size else 0, i[-1] if i.size else 0)
            merged_min = min(s[0] if s.size else merged_max, i[0] if i.size else merged_max)
            duration = float(merged_max - merged_min + 1) / 1e12
        else:
            duration = 0.0

    n_bins = span // bin_width
    half = span // 2
    counts = np.zeros(n_bins, dtype=np.int64)
    if s.size and i.size:
        lo = np.searchsorted(i, s - half, side="left")
        hi = np.searchsorted(i, s + half, side="left")
        per = hi - lo
        total = int(per.sum())
        if total:
            starts = np.repeat(lo, per)
            offsets = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(per) - per, per)
            delays = i[starts + offsets] - np.repeat(s, per)
            counts = np.bincount((delays + half) // bin_width, minlength=n_bins)

    centers = -half + (np.arange(n_bins) + 0.5) * bin_width
    return CoincidenceHistogram(
        bin_width=int(bin_width),
        delays=centers,
        counts=counts.astype(np.int64),
        singles_signal=int(s.size),
        singles_idler=int(i.size),
        duration=float(duration),
    )


def _peak_index(delays: np.ndarray, values: np.ndarray) -> int:
    """Index of the maximum; ties break toward smallest |delay|, then delay."""
    top = np.flatnonzero(values == values.max())
    order = np.lexsort((delays[top], np.abs(delays[top])))
    return int(top[order[0]])


def gsi_from_histogram(histogram: CoincidenceHistogram) -> GsiCurve:
    """Normalized cross-correlation curve from a delay histogram."""
    if histogram.singles_signal <= 0 or histogram.singles_idler <= 0:
        raise EmptyStream("cross-correlation needs nonzero singles on both channels")
    if histogram.duration <= 0:
        raise EmptyStream("cross-correlation needs a positive duration")
    bin_s = histogram.bin_width * 1e-12
    g = histogram.counts * histogram.duration / (
        histogram.singles_signal * histogram.singles_idler * bin_s
    )
    ipk = _peak_index(histogram.delays, g)
    return GsiCurve(
        delays=histogram.delays,
        g=g,
        peak=float(g[ipk]),
        peak_delay=float(histogram.delays[ipk]),
    )


def heralding_efficiency(
    coincidences: int,
    signal_singles: int,
    eff_idler_correction: float | None = None,
) -> float:
    """Probability of an idler detection given a signal detection.

    With a correction efficiency supplied the raw ratio is divided by it and
    the report is capped at 1.
    """
    if signal_singles <= 0:
        raise InvalidCounts("signal_singles must be positive")
    if coincidences < 0 or coincidences > signal_singles:
        raise InvalidCounts("coincidences must lie in [0, signal_singles]")
    eta = coincidences / signal_singles
    if eff_idler_correction is not None:
        if not 0.0 < eff_idler_correction <= 1.0:
            raise InvalidCounts("correction efficiency must lie in (0, 1]")
        eta = min(eta / eff_idler_correction, 1.0)
    return float(eta)


def dead_time_observed_rate(true_rate: float, dead: float) -> float:
    """Non-paralyzable dead-time response: observed = true / (1 + true*dead)."""
    if true_rate < 0 or dead < 0:
        raise ValueError("rates and dead times must be non-negative")
    return true_rate / (1.0 + true_rate * dead)


def dead_time_true_rate(observed: float, dead: float) -> float:
    """Invert the non-paralyzable model: true = observed / (1 - observed*dead)."""
    if observed < 0 or dead < 0:
        raise ValueError("rates and dead times must be non-negative")
    loss = observed * dead
    if loss >= 1.0:
        raise SaturatedRate(f"observed*dead = {loss:.3g} >= 1")
    return observed / (1.0 - loss)


def fit_power_scaling(
    points,
    mask=None,
    correction_fractions=None,
    max_correction: float = 0.1,
) -> PowerScalingFit:
    """Least-squares k for rate = k * P_pump * P_coupling.

    `points` is an iterable of (pump_mW, coupling_mW, rate_per_s).  Points are
    restricted to the linear regime either by an explicit mask or, when the
    per-point relative dead-time corrections are supplied, by dropping points
    corrected by more than `max_correction`.
    """
    pts = np.asarray(list(points), dtype=float).reshape(-1, 3)
    if pts.shape[0] < 2:
        raise InsufficientData("need at least 2 points")
    if np.any(pts[:, :2] <= 0):
        raise ValueError("powers must be positive")

    if mask is not None:
        used = np.asarray(mask, dtype=bool)
    elif correction_fractions is not None:
        used = np.abs(np.asarray(correction_fractions, dtype=float)) <= max_correction
    else:
        used = np.ones(pts.shape[0], dtype=bool)
    if used.sum() < 2:
        raise InsufficientData("fewer than 2 points left in the linear regime")

    x = pts[used, 0] * pts[used, 1]
    y = pts[used, 2]
    k = float(np.sum(x * y) / np.sum(x * x))
    rms = float(np.sqrt(np.mean((y - k * x) ** 2)))
    return PowerScalingFit(k=k, rms_residual=rms, used=used)


def gsi_rate_model(rate: float, amplitude: float, dead_time: float):
    """g = a / R_true with R_true = rate / (1 - rate*dead_time).

    Reduces to a/rate in the low-rate limit.
    """
    rate = np.asarray(rate, dtype=float)
    return amplitude * (1.0 - rate * dead_time) / rate


def fit_gsi_vs_rate(points) -> GsiRateFit:
    """Fit observed (coincidence_rate, gsi_peak) points to gsi_rate_model.

    Residuals are relative (log-domain) since g spans decades.  The effective
    dead time is bounded to keep the model positive over the data; when the
    two-parameter model does not improve on the pure a/R fit the result is
    flagged via improved_over_inverse=False rather than raised.
    """
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    if pts.shape[0] < 3:
        raise InsufficientData("need at least 3 points")
    rates, g = pts[:, 0], pts[:, 1]
    if np.any(rates <= 0) or np.any(g <= 0):
        raise ValueError("rates and gsi peaks must be positive")

    log_g = np.log(g)
    log_a0 = float(np.mean(np.log(g * rates)))
    ssr_pure = float(np.sum((log_g - (log_a0 - np.log(rates))) ** 2))

    tau_max = 0.999 / rates.max()

    def residuals(theta):
        log_a, tau = theta
        return log_g - (log_a + np.log1p(-rates * tau) - np.log(rates))

    sol = least_squares(
        residuals,
        x0=[log_a0, 0.0],
        bounds=([-np.inf, 0.0], [np.inf, tau_max]),
        xtol=1e-14, ftol=1e-14, gtol=1e-14,
    )
    ssr_full = float(np.sum(sol.fun**2))
    return GsiRateFit(
        amplitude=float(np.exp(sol.x[0])),
        dead_time=float(sol.x[1]),
        rms_log_residual=float(np.sqrt(ssr_full / pts.shape[0])),
        improved_over_inverse=bool(ssr_full < ssr_pure - 1e-12),
    )


def deconvolved_fwhm(fwhm: float, jitter_signal: float, jitter_idler: float) -> float:
    """Remove both detector responses from a measured FWHM in quadrature.

    All arguments in seconds.  Raises OverDeconvolved when the jitter
    quadrature meets or exceeds the measured width.
    """
    jitter_sq = (GAUSSIAN_FWHM_FACTOR * jitter_signal) ** 2 + (
        GAUSSIAN_FWHM_FACTOR * jitter_idler
    ) ** 2
    corrected_sq = fwhm**2 - jitter_sq
    if corrected_sq <= 0:
        raise OverDeconvolved(
            f"jitter quadrature {np.sqrt(jitter_sq):.3g} s >= measured width {fwhm:.3g} s"
        )
    return float(np.sqrt(corrected_sq))


def _half_crossing(delays, values, i_from, i_to, level) -> float:
    """Interpolated delay where values crosses `level` walking from the peak."""
    step = 1 if i_to > i_from else -1
    prev = i_from
    for i in range(i_from + step, i_to + step, step):
        if values[i] < level <= values[prev]:
            frac = (values[prev] - level) / (values[prev] - values[i])
            return float(delays[prev] + frac * (delays[i] - delays[prev]))
        prev = i
    raise UnresolvedPeak("correlation peak does not fall to half maximum inside the span")


def biphoton_linewidth(curve: GsiCurve, jitter_signal: float, jitter_idler: float) -> float:
    """Angular biphoton linewidth from a g_si curve, rad/s.

    Measures the FWHM of the correlation peak above its accidental baseline
    (median of the outer bins), removes the detector responses in quadrature,
    and converts with the Gaussian transform-pair convention
    linewidth = 2*pi*0.44 / FWHM_corrected.
    """
    g = np.asarray(curve.g, dtype=float)
    delays = np.asarray(curve.delays, dtype=float)
    if g.size < 8:
        raise UnresolvedPeak("curve too short to resolve a peak")
    edge = max(1, g.size // 8)
    baseline = float(np.median(np.concatenate([g[:edge], g[-edge:]])))
    ipk = _peak_index(delays, g)
    peak = float(g[ipk])
    if peak <= 3.0 * baseline:
        raise UnresolvedPeak(f"peak {peak:.3g} is below 3x baseline {baseline:.3g}")

    level = baseline + 0.5 * (peak - baseline)
    left = _half_crossing(delays, g, ipk, 0, level)
    right = _half_crossing(delays, g, ipk, g.size - 1, level)
    fwhm_s = (right - left) * 1e-12
    corrected = deconvolved_fwhm(fwhm_s, jitter_signal, jitter_idler)
    return float(2.0 * np.pi * GAUSSIAN_TIME_BANDWIDTH / corrected)


def write_histogram_csv(histogram: CoincidenceHistogram, path) -> None:
    """Serialize counts per delay bin, header delay_ps,counts."""
    with open(path, "w", newline="") as fh:
        fh.write("delay_ps,counts\n")
        for d, c in zip(histogram.delays, histogram.counts):
            fh.write(f"{repr(float(d))},{int(c)}\n")


def write_gsi_csv(curve: GsiCurve, path) -> None:
    """Serialize the normalized correlation, header delay_ps,gsi."""
    with open(path, "w", newline="") as fh:
        fh.write("delay_ps,gsi\n")
        for d, g in zip(curve.delays, curve.g):
            fh.write(f"{repr(float(d))},{repr(float(g))}\n")
