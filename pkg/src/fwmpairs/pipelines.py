"""Batch pipelines behind the CLI subcommands.

Each runner takes a validated job from :mod:`fwmpairs.config`, writes its
data files into the output directory, and returns a summary dict (which is
also what lands in the JSON summaries).  All outputs are deterministic for a
fixed config and seed: no timestamps, stable key order, repr-formatted floats.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import atomic, correlations, streams, tomography
from .config import AnalyzeJob, AnalyzeOptions, ScanJob, SweepJob, TagsJob, TomoJob

__all__ = [
    "run_scan",
    "run_tags",
    "run_analyze",
    "run_tomo",
    "run_sweep",
    "SWEEP_METRIC_COLUMNS",
]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_scan(job: ScanJob, out_dir: Path) -> dict:
    """Velocity scan: profile CSV plus a JSON summary of the peak structure."""
    profile = atomic.velocity_scan(job.params, job.vapor, job.grid, normalize=job.normalize)
    atomic.write_profile_csv(profile, out_dir / "profile.csv")

    grid = profile.velocities
    step = float(grid[1] - grid[0]) if grid.size > 1 else 0.0
    try:
        overlap = atomic.profile_mb_overlap(profile, job.vapor)
    except atomic.DegenerateProfile:
        overlap = None
    summary = {
        "peak_velocity_mps": profile.peak_velocity(),
        "raw_peak_velocity_mps": float(grid[int(np.argmax(profile.raw))]),
        "predicted_velocity_mps": atomic.resonant_velocity(job.params.delta_2, job.params),
        "grid_step_mps": step,
        "grid_points": int(grid.size),
        "mb_overlap": overlap,
        "normalized": profile.normalized,
    }
    _write_json(out_dir / "scan_summary.json", summary)
    return summary


def run_tags(job: TagsJob, out_dir: Path) -> dict:
    """Synthesize one tag-stream pair and write it in the configured format."""
    signal, idler = streams.synthesize_time_tags(job.pairs)
    name = "tags.csv" if job.fmt == "csv" else "tags.bin"
    path = out_dir / name
    if job.fmt == "csv":
        streams.write_time_tags_csv(path, signal, idler)
    else:
        streams.write_time_tags_binary(path, signal, idler)
    duration = job.pairs.duration
    return {
        "path": str(path),
        "signal_tags": len(signal),
        "idler_tags": len(idler),
        "signal_rate_per_s": len(signal) / duration if duration > 0 else None,
        "idler_rate_per_s": len(idler) / duration if duration > 0 else None,
        "duration_s": duration,
    }


def _survival_factor(singles_rate: float, dead: float | None) -> float | None:
    """Fraction of arrivals a non-paralyzable detector records, from observables."""
    if dead is None:
        return None
    loss = singles_rate * dead
    if loss >= 1.0:
        raise correlations.SaturatedRate(f"observed singles*dead = {loss:.3g} >= 1")
    return 1.0 - loss


def analyze_streams(signal, idler, options: AnalyzeOptions) -> dict:
    """Coincidence metrics for one stream pair.

    Returns the metrics dict written by the analyze command; histogram and
    g_si curve objects ride along under private keys for the file writers.
    """
    duration = options.duration_s
    histogram = correlations.coincidence_histogram(
        signal, idler, options.bin_width_ps, options.span_ps, duration
    )
    duration = histogram.duration
    n_s, n_i = histogram.singles_signal, histogram.singles_idler

    metrics = {
        "singles_signal": n_s,
        "singles_idler": n_i,
        "duration_s": duration,
        "window_ns": options.window_ps / 1000.0,
        "singles_rate_signal_per_s": n_s / duration if duration > 0 else None,
        "singles_rate_idler_per_s": n_i / duration if duration > 0 else None,
        "coincidences": 0,
        "coincidence_rate_per_s": None,
        "corrected_coincidence_rate_per_s": None,
        "pair_rate_estimate_per_s": None,
        "gsi_peak": None,
        "gsi_peak_delay_ps": None,
        "heralding": None,
        "heralding_corrected": None,
        "linewidth_rad_per_s": None,
        "linewidth_note": None,
        "correction_note": None,
        "_histogram": histogram,
        "_gsi": None,
    }
    if n_s == 0 or n_i == 0 or duration <= 0:
        return metrics

    curve = correlations.gsi_from_histogram(histogram)
    metrics["_gsi"] = curve
    metrics["gsi_peak"] = curve.peak
    metrics["gsi_peak_delay_ps"] = curve.peak_delay

    in_window = np.abs(histogram.delays - curve.peak_delay) <= options.window_ps / 2
    coincidences = int(histogram.counts[in_window].sum())
    rate = coincidences / duration
    metrics["coincidences"] = coincidences
    metrics["coincidence_rate_per_s"] = rate

    try:
        surv_s = _survival_factor(n_s / duration, options.dead_signal_s)
        surv_i = _survival_factor(n_i / duration, options.dead_idler_s)
    except correlations.SaturatedRate as exc:
        surv_s = surv_i = None
        metrics["correction_note"] = str(exc)
    if surv_s is not None and surv_i is not None:
        corrected = rate / (surv_s * surv_i)
        metrics["corrected_coincidence_rate_per_s"] = corrected
        if options.eff_signal is not None and options.eff_idler is not None:
            metrics["pair_rate_estimate_per_s"] = corrected / (
                options.eff_signal * options.eff_idler
            )

    metrics["heralding"] = correlations.heralding_efficiency(coincidences, n_s)
    if options.eff_idler is not None:
        metrics["heralding_corrected"] = correlations.heralding_efficiency(
            coincidences, n_s, eff_idler_correction=options.eff_idler
        )

    if options.jitter_signal_s is not None and options.jitter_idler_s is not None:
        try:
            metrics["linewidth_rad_per_s"] = correlations.biphoton_linewidth(
                curve, options.jitter_signal_s, options.jitter_idler_s
            )
        except (correlations.UnresolvedPeak, correlations.OverDeconvolved) as exc:
            metrics["linewidth_note"] = str(exc)
    return metrics


def run_analyze(job: AnalyzeJob, out_dir: Path) -> dict:
    """Analyze a tag file into histogram/gsi CSVs and a metrics JSON."""
    if job.fmt == "csv":
        signal, idler = streams.read_time_tags_csv(job.tags_path)
    else:
        signal, idler = streams.read_time_tags_binary(job.tags_path)
    metrics = analyze_streams(signal, idler, job.options)
    histogram = metrics.pop("_histogram")
    curve = metrics.pop("_gsi")
    correlations.write_histogram_csv(histogram, out_dir / "histogram.csv")
    if curve is not None:
        correlations.write_gsi_csv(curve, out_dir / "gsi.csv")
    _write_json(out_dir / "metrics.json", metrics)
    return metrics


def run_tomo(job: TomoJob, out_dir: Path) -> dict:
    """Reconstruct a density matrix from a counts CSV."""
    counts = tomography.read_counts_csv(job.counts_path)
    result = tomography.ml_reconstruct(counts, restarts=job.restarts, seed=job.seed)
    tomography.write_result(result, out_dir / "tomography_result.txt")
    return {
        "fidelity_phi_plus": result.fidelity_phi_plus,
        "fidelity_lower_bound": result.fidelity_lower_bound,
        "purity": result.purity,
        "log_likelihood": result.log_likelihood,
        "restarts": result.restarts,
    }


SWEEP_METRIC_COLUMNS = (
    "singles_rate_signal_per_s",
    "singles_rate_idler_per_s",
    "coincidence_rate_per_s",
    "corrected_coincidence_rate_per_s",
    "pair_rate_estimate_per_s",
    "gsi_peak",
    "heralding",
    "heralding_corrected",
)


def _point_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def _sweep_point(args) -> tuple[int, dict | None, str]:
    """One grid point: synthesize, analyze, return (index, metrics, status)."""
    index, pair_kwargs, options = args
    try:
        signal, idler = streams.synthesize_time_tags(streams.PairStreamParams(**pair_kwargs))
        metrics = analyze_streams(signal, idler, options)
        metrics.pop("_histogram")
        metrics.pop("_gsi")
        return index, metrics, "ok"
    except Exception as exc:  # per-point failures land in the status column
        return index, None, f"error: {exc}"


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_sweep(job: SweepJob, out_dir: Path, workers: int = 1) -> dict:
    """Long-form CSV over the parameter grid, one row per point.

    Rows appear in lexicographic coordinate order no matter how many workers
    execute the points; per-point seeds derive from (seed, point index), so
    the output is independent of scheduling.
    """
    points = job.grid_points()
    options = job.options
    if options.duration_s is None:
        options.duration_s = job.base_pairs["duration"]
    tasks = []
    for index, point in enumerate(points):
        kwargs = dict(job.base_pairs)
        kwargs["pair_rate"] = job.pair_rate_for(point)
        kwargs["seed"] = _point_seed(job.seed, index)
        tasks.append((index, kwargs, options))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_sweep_point, tasks))
    else:
        raw = [_sweep_point(t) for t in tasks]
    raw.sort(key=lambda item: item[0])

    axis_names = [name for name, _ in job.axes]
    header = axis_names + list(SWEEP_METRIC_COLUMNS) + ["status"]
    lines = [",".join(header)]
    n_ok = 0
    for (index, metrics, status), point in zip(raw, points):
        cells = [_format_cell(c) for c in point]
        if metrics is None:
            cells += [""] * len(SWEEP_METRIC_COLUMNS)
        else:
            n_ok += 1
            cells += [_format_cell(metrics.get(col)) for col in SWEEP_METRIC_COLUMNS]
        status_cell = status.replace(",", ";").replace("\n", " ")
        lines.append(",".join(cells + [status_cell]))
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    return {"points": len(points), "ok": n_ok, "failed": len(points) - n_ok}
