"""Two-qubit polarization-state tomography with a multi-restart lower bound.

Measurement settings project onto product polarization states drawn from the
six-element alphabet {H, V, D, A, R, L} with the circular convention

    R = (H - iV)/sqrt(2),   L = (H + iV)/sqrt(2)

fixed globally (a flipped convention flips apparent phases).  Reconstruction
maximizes the Poissonian log-likelihood sum_k [N_k ln(n_k p_k) - n_k p_k] over
physical states parameterized as rho = T^dag T / tr(T^dag T) with T lower
triangular (16 real parameters), from several starting points: the first from
linear inversion projected onto the physical cone, the rest randomized.  The
reported fidelity lower bound is the minimum fidelity among restarts whose
final likelihood lies within a tolerance of the best, operationalizing a
"vary the solver and initial conditions" bound.

When per-setting expected totals are unknown (e.g. counts loaded from CSV),
the overall flux is profiled out in closed form at each likelihood evaluation
(f_hat = sum N_k / sum d_k p_k), which is the ML fit of the normalization as
an extra parameter without adding an optimizer coordinate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

__all__ = [
    "BASIS_KETS",
    "DEFAULT_SETTINGS",
    "TargetNotPure",
    "OptimizerFailed",
    "PolarizationSetting",
    "SettingCount",
    "TomographyCounts",
    "TomographyResult",
    "basis_ket",
    "validate_counts",
    "projector",
    "bell_phi_plus",
    "apply_phase_retarder",
    "fidelity",
    "purity",
    "simulate_counts",
    "ml_reconstruct",
    "write_counts_csv",
    "read_counts_csv",
    "write_result",
    "read_result",
]

_SQRT2 = np.sqrt(2.0)

BASIS_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / _SQRT2,
    "A": np.array([1.0, -1.0], dtype=complex) / _SQRT2,
    "R": np.array([1.0, -1.0j], dtype=complex) / _SQRT2,
    "L": np.array([1.0, 1.0j], dtype=complex) / _SQRT2,
}


class TargetNotPure(ValueError):
    """Fidelity target must be a pure state."""


class OptimizerFailed(RuntimeError):
    """No reconstruction restart produced a finite likelihood."""


@dataclass(frozen=True)
class PolarizationSetting:
    """One projective measurement: a basis letter per arm."""

    signal_basis: str
    idler_basis: str

    def __post_init__(self) -> None:
        for b in (self.signal_basis, self.idler_basis):
            if b not in BASIS_KETS:
                raise ValueError(f"unknown polarization basis {b!r}")


# Informationally complete default: {H, V, D, R} on each arm.
DEFAULT_SETTINGS = tuple(
    PolarizationSetting(a, b) for a in "HVDR" for b in "HVDR"
)


@dataclass(frozen=True)
class SettingCount:
    """Measured (or synthesized) counts for one setting."""

    setting: PolarizationSetting
    count: int
    duration: float = 1.0  # acquisition time, s
    expected_total: float | None = None  # normalization n when known from metadata

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if self.duration <= 0:
            raise ValueError("duration must be positive")


@dataclass
class TomographyCounts:
    records: list[SettingCount]

    def settings(self) -> list[PolarizationSetting]:
        return [r.setting for r in self.records]


@dataclass
class TomographyResult:
    rho: np.ndarray
    fidelity_phi_plus: float
    fidelity_lower_bound: float
    purity: float
    log_likelihood: float
    restarts: int


def basis_ket(name: str) -> np.ndarray:
    return BASIS_KETS[name].copy()


def projector(setting: PolarizationSetting) -> np.ndarray:
    """Rank-1 projector |ab><ab| in the {HH, HV, VH, VV} product basis."""
    ket = np.kron(BASIS_KETS[setting.signal_basis], BASIS_KETS[setting.idler_basis])
    return np.outer(ket, ket.conj())


def bell_phi_plus() -> np.ndarray:
    """Density matrix of (|HH> + |VV>)/sqrt(2)."""
    ket = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / _SQRT2
    return np.outer(ket, ket.conj())


def apply_phase_retarder(rho: np.ndarray, phi: float) -> np.ndarray:
    """Retarder on the idler arm, slow axis vertical: conjugate by I x diag(1, e^{i phi})."""
    u = np.kron(np.eye(2), np.diag([1.0, np.exp(1j * phi)]))
    return u @ np.asarray(rho, dtype=complex) @ u.conj().T


def purity(rho: np.ndarray) -> float:
    rho = np.asarray(rho, dtype=complex)
    return float(np.trace(rho @ rho).real)


def fidelity(rho: np.ndarray, target_pure: np.ndarray) -> float:
    """<psi|rho|psi> for a pure target |psi><psi|."""
    target = np.asarray(target_pure, dtype=complex)
    if abs(purity(target) - 1.0) > 1e-9:
        raise TargetNotPure(f"target purity {purity(target)} != 1")
    eigvals, eigvecs = np.linalg.eigh(target)
    psi = eigvecs[:, int(np.argmax(eigvals))]
    return float((psi.conj() @ np.asarray(rho, dtype=complex) @ psi).real)


def simulate_counts(
    rho: np.ndarray,
    settings=DEFAULT_SETTINGS,
    n_per_setting: float = 1e5,
    seed: int = 0,
    poisson: bool = True,
) -> TomographyCounts:
    """Draw count_k ~ Poisson(n * tr(P_k rho)) per setting (oracle generator).

    With poisson=False the rounded expectation values are returned instead.
    The expected total n is recorded on every record as acquisition metadata.
    """
    rng = np.random.default_rng(seed)
    rho = np.asarray(rho, dtype=complex)
    records = []
    for setting in settings:
        p = float(np.trace(projector(setting) @ rho).real)
        mean = n_per_setting * max(p, 0.0)
        count = int(rng.poisson(mean)) if poisson else int(round(mean))
        records.append(SettingCount(setting=setting, count=count,
                                    expected_total=float(n_per_setting)))
    return TomographyCounts(records=records)


# Lower-triangle parameter layout: 4 real diagonal entries, then (re, im)
# pairs for the strictly-lower entries in this order.
_LOWER = ((1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2))


def _t_matrix(theta: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = theta[:4]
    for m, (r, c) in enumerate(_LOWER):
        t[r, c] = theta[4 + 2 * m] + 1j * theta[5 + 2 * m]
    return t


def _theta_from_t(t: np.ndarray) -> np.ndarray:
    theta = np.zeros(16)
    theta[:4] = np.diag(t).real
    for m, (r, c) in enumerate(_LOWER):
        theta[4 + 2 * m] = t[r, c].real
        theta[5 + 2 * m] = t[r, c].imag
    return theta


def _rho_from_theta(theta: np.ndarray) -> np.ndarray:
    t = _t_matrix(theta)
    s = t.conj().T @ t
    return s / np.trace(s).real


def _lower_cholesky_factor(rho: np.ndarray) -> np.ndarray:
    """Lower-triangular T with T^dag T = rho (reverse-ordered Cholesky)."""
    flip = np.fliplr(np.eye(4))
    chol = np.linalg.cholesky(flip @ rho @ flip)
    return flip @ chol.conj().T @ flip


def _project_to_physical(rho: np.ndarray) -> np.ndarray:
    """Hermitize, clip negative eigenvalues, renormalize the trace."""
    rho = 0.5 * (rho + rho.conj().T)
    vals, vecs = np.linalg.eigh(rho)
    vals = np.clip(vals.real, 1e-8, None)
    rho = (vecs * vals) @ vecs.conj().T
    return rho / np.trace(rho).real


def _linear_inversion(proj: np.ndarray, freq: np.ndarray) -> np.ndarray:
    """Least-squares rho with tr(P_k rho) = freq_k, projected to the cone."""
    design = proj.transpose(0, 2, 1).reshape(len(proj), 16)
    vec, *_ = np.linalg.lstsq(design, freq.astype(complex), rcond=None)
    return _project_to_physical(vec.reshape(4, 4))


def _objective(theta, proj, counts, durations, expected_totals, scale=1.0):
    """Scaled negative Poisson log-likelihood and its gradient in theta.

    With expected_totals None the flux is profiled: n_k = f_hat * d_k with
    f_hat = sum N / sum d p; the envelope theorem makes the gradient the
    fixed-f_hat partial derivative.  `scale` (1/total counts in practice)
    makes the optimization landscape invariant under uniform count scaling,
    so reconstructions from m*N_k counts retrace the N_k trajectory.
    """
    t = _t_matrix(theta)
    s = t.conj().T @ t
    tr = float(np.trace(s).real)
    if tr <= 0 or not np.isfinite(tr):
        return np.inf, np.zeros_like(theta)
    rho = s / tr
    p = np.einsum("kij,ji->k", proj, rho).real
    p = np.clip(p, 1e-15, None)

    if expected_totals is None:
        flux = counts.sum() / float(np.dot(durations, p))
        n_k = flux * durations
    else:
        n_k = expected_totals

    ll = float(np.sum(counts * np.log(n_k * p) - n_k * p))

    coeff = counts / p - n_k
    g_mat = np.einsum("k,kij->ij", coeff, proj)
    c = float(np.einsum("ij,ji->", g_mat, rho).real)
    k_mat = (g_mat - c * np.eye(4)) / tr
    w = t @ k_mat
    grad = np.zeros(16)
    grad[:4] = 2.0 * np.diag(w).real
    for m, (r, c_) in enumerate(_LOWER):
        grad[4 + 2 * m] = 2.0 * w[r, c_].real
        grad[5 + 2 * m] = 2.0 * w[r, c_].imag
    return -ll * scale, -grad * scale


def validate_counts(counts: TomographyCounts) -> None:
    """Check the tomographic completeness invariant (>= 16 independent projectors)."""
    if len(counts.records) < 16:
        raise ValueError("need at least 16 settings")
    proj = np.stack([projector(r.setting) for r in counts.records])
    design = proj.transpose(0, 2, 1).reshape(len(counts.records), 16)
    if np.linalg.matrix_rank(design) < 16:
        raise ValueError("settings are not informationally complete (rank < 16)")


def ml_reconstruct(
    counts: TomographyCounts,
    restarts: int = 32,
    seed: int = 0,
    pool_tolerance: float = 0.5,
) -> TomographyResult:
    """Maximum-likelihood density matrix with a restart-pool fidelity bound.

    The first start is the physical projection of linear inversion, the rest
    are random lower-triangular factors.  The lower bound is the minimum
    Phi+ fidelity among restarts whose log-likelihood lands within
    pool_tolerance of the best, so it never exceeds the point fidelity.
    """
    if restarts < 1:
        raise ValueError("need at least one restart")
    validate_counts(counts)
    records = counts.records
    proj = np.stack([projector(r.setting) for r in records])

    n_counts = np.array([r.count for r in records], dtype=float)
    durations = np.array([r.duration for r in records], dtype=float)
    known = [r.expected_total for r in records]
    if all(v is not None for v in known):
        expected_totals = np.array(known, dtype=float)
        freq = n_counts / expected_totals
    else:
        expected_totals = None
        # crude flux guess for the linear-inversion start: mean p over rank-1
        # product projectors on any state is 1/4
        flux0 = 4.0 * float(np.mean(n_counts / durations))
        freq = n_counts / (max(flux0, 1e-300) * durations)

    rng = np.random.default_rng(seed)
    starts = [_theta_from_t(_lower_cholesky_factor(_linear_inversion(proj, freq)))]
    for _ in range(restarts - 1):
        starts.append(rng.standard_normal(16))

    phi_plus = bell_phi_plus()
    scale = 1.0 / max(float(n_counts.sum()), 1.0)
    runs = []
    for theta0 in starts:
        res = minimize(
            _objective,
            theta0,
            args=(proj, n_counts, durations, expected_totals, scale),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 2000, "ftol": 1e-14, "gtol": 1e-11},
        )
        if not np.all(np.isfinite(res.x)) or not np.isfinite(res.fun):
            continue
        rho = _rho_from_theta(res.x)
        runs.append((-float(res.fun) / scale, rho, fidelity(rho, phi_plus)))
    if not runs:
        raise OptimizerFailed("no restart reached a finite likelihood")

    best_ll, best_rho, best_fid = max(runs, key=lambda r: r[0])
    pool = [fid for ll, _, fid in runs if ll >= best_ll - pool_tolerance]
    return TomographyResult(
        rho=best_rho,
        fidelity_phi_plus=best_fid,
        fidelity_lower_bound=min(pool),
        purity=purity(best_rho),
        log_likelihood=best_ll,
        restarts=len(starts),
    )


def write_counts_csv(counts: TomographyCounts, path: str | Path) -> None:
    """Serialize counts, header signal_basis,idler_basis,count,duration_s."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["signal_basis", "idler_basis", "count", "duration_s"])
        for rec in counts.records:
            writer.writerow([rec.setting.signal_basis, rec.setting.idler_basis,
                             rec.count, repr(float(rec.duration))])


def read_counts_csv(path: str | Path) -> TomographyCounts:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["signal_basis", "idler_basis", "count", "duration_s"]:
            raise ValueError(f"unexpected counts header: {header}")
        records = [
            SettingCount(setting=PolarizationSetting(sb, ib), count=int(c),
                         duration=float(d))
            for sb, ib, c, d in reader
        ]
    return TomographyCounts(records=records)


def write_result(result: TomographyResult, path: str | Path) -> None:
    """Key-value result file; rho rows are row-major re,im pairs."""
    lines = [
        f"fidelity_phi_plus = {repr(float(result.fidelity_phi_plus))}",
        f"fidelity_lower_bound = {repr(float(result.fidelity_lower_bound))}",
        f"purity = {repr(float(result.purity))}",
        f"log_likelihood = {repr(float(result.log_likelihood))}",
        f"restarts = {int(result.restarts)}",
    ]
    for r in range(4):
        pairs = []
        for c in range(4):
            z = complex(result.rho[r, c])
            pairs.extend([repr(z.real), repr(z.imag)])
        lines.append(f"rho_row_{r} = " + ",".join(pairs))
    Path(path).write_text("\n".join(lines) + "\n")


def read_result(path: str | Path) -> TomographyResult:
    fields = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        fields[key.strip()] = value.strip()
    rho = np.zeros((4, 4), dtype=complex)
    for r in range(4):
        nums = [float(x) for x in fields[f"rho_row_{r}"].split(",")]
        for c in range(4):
            rho[r, c] = nums[2 * c] + 1j * nums[2 * c + 1]
    return TomographyResult(
        rho=rho,
        fidelity_phi_plus=float(fields["fidelity_phi_plus"]),
        fidelity_lower_bound=float(fields["fidelity_lower_bound"]),
        purity=float(fields["purity"]),
        log_likelihood=float(fields["log_likelihood"]),
        restarts=int(fields["restarts"]),
    )
