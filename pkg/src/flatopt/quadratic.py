"""Closed-form analysis of heavy-ball-with-gradient-correction dynamics on
anisotropic quadratics.

Each curvature eigenvalue evolves independently under the two-step error
recurrence e_{k+1} = 2T e_k - D e_{k-1}, so everything reduces to scalar root
finding: damping regimes from the discriminant T^2 - D, a hard stability
ceiling on the step size from the Jury criterion, and the curvature interval
where the mode turns underdamped. A direct simulator provides the oracle side
for every closed form.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

# Exact criticality is measure-zero; anything this close to a double root is
# classified critical so the (c1 + c2 k) D^{k/2} closed form applies.
CRITICAL_TOL = 1e-14

DIVERGENCE_CAP = 1e15


@dataclasses.dataclass(frozen=True)
class QuadraticSpec:
    """f(w) = 1/2 sum_i lambda_i w_i^2 + b^T w with eigenvalues descending."""

    eigenvalues: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        b = np.asarray(self.offsets, dtype=float)
        if lam.ndim != 1 or b.shape != lam.shape:
            raise ValueError(f"eigenvalues and offsets must be matching 1-D arrays, got {lam.shape} and {b.shape}")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be sorted descending")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "offsets", b)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def stationary_point(self):
        """Per-coordinate minimizer -b_i/lambda_i; flat coordinates pin to 0."""
        lam = self.eigenvalues
        w = np.zeros_like(lam)
        nz = lam != 0.0
        w[nz] = -self.offsets[nz] / lam[nz]
        return w


@dataclasses.dataclass(frozen=True)
class RegimeReport:
    lam: float
    T: float
    D: float
    discriminant: float
    roots: tuple
    regime: str
    theta: float | None
    dominant_modulus: float


def recurrence_coeffs(lam: float, alpha: float, beta: float, eta: float):
    """Coefficients (T, D) of the per-mode error recurrence.

    T = 1 - (alpha + eta*lam*(beta+1))/2 and D = (1-alpha)*(1 - eta*beta*lam).
    """
    t = 1.0 - (alpha + eta * lam * (beta + 1.0)) / 2.0
    d = (1.0 - alpha) * (1.0 - eta * beta * lam)
    return t, d


def classify_regime(t: float, d: float) -> str:
    disc = t * t - d
    if abs(disc) < CRITICAL_TOL * max(1.0, t * t):
        return "critical"
    return "overdamped" if disc > 0.0 else "underdamped"


def characteristic_roots(t: float, d: float):
    """Roots of r^2 - 2T r + D = 0 with their damping regime.

    Returns (roots, regime, theta) where theta is the oscillation angle
    arccos(T/sqrt(D)) for underdamped modes and None otherwise.
    """
    regime = classify_regime(t, d)
    if regime == "critical":
        return (complex(t), complex(t)), regime, None
    disc = t * t - d
    if regime == "overdamped":
        # pair the subtraction-free root with D/r to dodge cancellation
        s = math.sqrt(disc)
        r_big = t + s if t >= 0.0 else t - s
        r_small = d / r_big if r_big != 0.0 else t - math.copysign(s, t)
        hi, lo = (r_big, r_small) if r_big >= r_small else (r_small, r_big)
        return (complex(hi), complex(lo)), regime, None
    if d <= 0.0:
        raise ValueError(f"underdamped regime with D = {d} <= 0 is inconsistent")
    s = math.sqrt(-disc)
    theta = math.acos(t / math.sqrt(d))
    return (complex(t, s), complex(t, -s)), regime, theta


def analyze_mode(lam: float, alpha: float, beta: float, eta: float) -> RegimeReport:
    """Full per-mode report: coefficients, roots, regime, dominant modulus."""
    t, d = recurrence_coeffs(lam, alpha, beta, eta)
    roots, regime, theta = characteristic_roots(t, d)
    modulus = max(abs(roots[0]), abs(roots[1]))
    return RegimeReport(
        lam=lam, T=t, D=d, discriminant=t * t - d, roots=roots,
        regime=regime, theta=theta, dominant_modulus=modulus,
    )


def stability_bound(lam_max: float, alpha: float, beta: float) -> float:
    """Largest stable step size on the sharpest mode.

    eta <= 2(2-alpha) / (lam_max * max{1 + 2*beta - alpha*beta, 2*beta*(1-alpha)}).
    Degenerate alpha >= 2 returns 0 (the numerator has vanished).
    """
    if lam_max <= 0.0:
        raise ValueError(f"lam_max must be positive, got {lam_max}")
    if alpha <= 0.0:
        raise ValueError(f"alpha must be in (0, 2), got {alpha}")
    if alpha >= 2.0:
        return 0.0
    denom = lam_max * max(1.0 + 2.0 * beta - alpha * beta, 2.0 * beta * (1.0 - alpha))
    return 2.0 * (2.0 - alpha) / denom


def _critical_curve(lam: float, alpha: float, beta: float, eta: float) -> float:
    t, d = recurrence_coeffs(lam, alpha, beta, eta)
    return t * t - d


def regime_boundaries(alpha: float, beta: float, eta: float):
    """Curvature interval endpoints (lam1, lam2) where modes turn underdamped.

    Solves T(lam)^2 = D(lam), a quadratic in lam, then polishes each root by
    bisection on the discriminant. Raises if the quadratic has no pair of real
    positive roots (no underdamped band at these hyper-parameters).
    """
    a2 = eta * eta * (beta + 1.0) ** 2 / 4.0
    a1 = -(1.0 - alpha / 2.0) * eta * (beta + 1.0) + (1.0 - alpha) * eta * beta
    a0 = alpha * alpha / 4.0
    if a2 == 0.0:
        raise ValueError("no river/valley split at these hyper-parameters")
    disc = a1 * a1 - 4.0 * a2 * a0
    if disc < 0.0:
        raise ValueError("no river/valley split at these hyper-parameters")
    q = -0.5 * (a1 + math.copysign(math.sqrt(disc), a1))
    roots = sorted((q / a2, a0 / q)) if q != 0.0 else [0.0, 0.0]
    if roots[0] <= 0.0:
        raise ValueError("no river/valley split at these hyper-parameters")
    refined = []
    for r in roots:
        lo, hi = r * (1.0 - 1e-6), r * (1.0 + 1e-6)
        flo, fhi = _critical_curve(lo, alpha, beta, eta), _critical_curve(hi, alpha, beta, eta)
        if flo == 0.0 or fhi == 0.0 or flo * fhi > 0.0:
            refined.append(r)
            continue
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            fmid = _critical_curve(mid, alpha, beta, eta)
            if fmid == 0.0:
                lo = hi = mid
                break
            if flo * fmid < 0.0:
                hi = mid
            else:
                lo, flo = mid, fmid
        refined.append(0.5 * (lo + hi))
    return refined[0], refined[1]


@dataclasses.dataclass(frozen=True)
class SimulationResult:
    trajectory: np.ndarray          # (steps_run + 1, dim) iterates, w_0 first
    errors: np.ndarray              # trajectory minus the stationary point
    fitted_rates: np.ndarray        # per-mode slope of log|e_k|, nan if unfittable
    diverged: bool


def simulate_recurrence(spec: QuadraticSpec, alpha: float, beta: float, eta: float,
                        w0, m0, steps: int) -> SimulationResult:
    """Run the discrete momentum update on the quadratic and fit decay rates.

    The loop is m <- (1-alpha) m + g, w <- w - eta (m + beta g), exactly the
    per-mode recurrence in disguise. Rates come from a least-squares slope of
    log sqrt(e_k^2 + e_{k+1}^2) over the second half of the run; the paired
    form keeps the log finite at the zero crossings of underdamped modes.
    Stops early once any |e| passes 1e15 and reports diverged.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    lam, b = spec.eigenvalues, spec.offsets
    w = np.asarray(w0, dtype=float).copy()
    m = np.asarray(m0, dtype=float).copy()
    if w.shape != lam.shape or m.shape != lam.shape:
        raise ValueError("w0 and m0 must match the spectrum length")
    wstar = spec.stationary_point()
    traj = [w.copy()]
    diverged = False
    for _ in range(steps):
        g = lam * w + b
        m = (1.0 - alpha) * m + g
        w = w - eta * (m + beta * g)
        traj.append(w.copy())
        if not np.isfinite(w).all() or np.abs(w - wstar).max() > DIVERGENCE_CAP:
            diverged = True
            break
    traj = np.array(traj)
    errors = traj - wstar
    n = errors.shape[0]
    half = errors[n // 2:]
    rates = np.full(spec.dim, np.nan)
    z = np.sqrt(half[:-1] ** 2 + half[1:] ** 2)
    ks = np.arange(z.shape[0], dtype=float)
    for i in range(spec.dim):
        zi = z[:, i]
        if zi.shape[0] < 2 or np.any(zi <= 0.0) or not np.isfinite(zi).all():
            continue
        logz = np.log(zi)
        kc = ks - ks.mean()
        rates[i] = (kc @ (logz - logz.mean())) / (kc @ kc)
    return SimulationResult(trajectory=traj, errors=errors, fitted_rates=rates,
                           diverged=diverged)


@dataclasses.dataclass(frozen=True)
class ProbeResult:
    r1: np.ndarray                  # (len(eta_grid), len(beta_grid)) top roots
    included: np.ndarray            # bool mask, False where the band precondition failed
    expected: str                   # "increasing" or "decreasing"
    excluded_points: list
    violations: list
    passed: bool


def monotonicity_probe(lam: float, alpha: float, eta_grid, beta_grid) -> ProbeResult:
    """Tabulate the dominant real root r1 over an (eta, beta) grid and check
    strict monotonicity along both axes.

    For lam < 0 the escape rate must strictly grow with either knob; for
    convex lam inside the overdamped band (lam below the lower regime
    boundary) it must strictly shrink. Grid points that leave the band, or
    whose mode is not overdamped, are excluded and reported rather than
    judged.
    """
    if lam == 0.0:
        raise ValueError("lam must be nonzero")
    etas = [float(e) for e in eta_grid]
    betas = [float(b) for b in beta_grid]
    expected = "increasing" if lam < 0.0 else "decreasing"
    r1 = np.full((len(etas), len(betas)), np.nan)
    included = np.zeros((len(etas), len(betas)), dtype=bool)
    excluded = []
    for i, eta in enumerate(etas):
        for j, beta in enumerate(betas):
            if lam > 0.0:
                try:
                    band_lo, _ = regime_boundaries(alpha, beta, eta)
                except ValueError:
                    excluded.append((eta, beta, "no regime band"))
                    continue
                if not lam < band_lo:
                    excluded.append((eta, beta, "lam not below the band"))
                    continue
            report = analyze_mode(lam, alpha, beta, eta)
            if report.regime != "overdamped":
                excluded.append((eta, beta, f"regime {report.regime}"))
                continue
            r1[i, j] = max(r.real for r in report.roots)
            included[i, j] = True
    violations = []
    sign = 1.0 if expected == "increasing" else -1.0
    for i in range(len(etas)):
        row = [(j, r1[i, j]) for j in range(len(betas)) if included[i, j]]
        for (j0, v0), (j1, v1) in zip(row, row[1:]):
            if not sign * (v1 - v0) > 0.0:
                violations.append(("beta", etas[i], betas[j0], betas[j1], v0, v1))
    for j in range(len(betas)):
        col = [(i, r1[i, j]) for i in range(len(etas)) if included[i, j]]
        for (i0, v0), (i1, v1) in zip(col, col[1:]):
            if not sign * (v1 - v0) > 0.0:
                violations.append(("eta", betas[j], etas[i0], etas[i1], v0, v1))
    return ProbeResult(r1=r1, included=included, expected=expected,
                       excluded_points=excluded, violations=violations,
                       passed=not violations)
