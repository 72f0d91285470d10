"""Continuous-time views of the optimizers: the damped second-order system,
its first-order momentum form, the split-direction flow with a sharp
projector, a semi-implicit Euler discretization that reproduces the discrete
update at h = 1, the two Nesterov formulations traced side by side, and the
third-order identity satisfied by the two-timescale momentum flow.

All flows live on flat parameter vectors; the metric, when present, is a
constant SPD matrix (the regime where the curvature-correction terms vanish
and the stated systems are exact).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .linalg import sym_eig
from .quadratic import QuadraticSpec

PROJECTOR_TOL = 1e-8
FINE_STEP = 1e-3


@dataclasses.dataclass
class DynamicsState:
    """Parameter vector, momentum covector, and clock."""

    w: np.ndarray
    m: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        if self.w.shape != self.m.shape or self.w.ndim != 1:
            raise ValueError(f"w and m must be matching vectors, got {self.w.shape} and {self.m.shape}")
        if not (np.isfinite(self.w).all() and np.isfinite(self.m).all()):
            raise ValueError("non-finite entries in dynamics state")


@dataclasses.dataclass(frozen=True)
class FlowParams:
    """Coefficients of the momentum flow.

    beta is a single Hessian-damping weight, or a (beta1, beta2) pair for the
    split flow where the chi-amplified complement uses beta2. eta_of_t is a
    float or a callable of time. projector_sharp maps w to the sharp-subspace
    projector P; metric maps w to a constant SPD matrix F (None means
    identity).
    """

    alpha: float
    beta: object = 0.0
    eta_of_t: object = 1.0
    chi: float = 1.0
    projector_sharp: object = None
    metric: object = None

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if isinstance(self.beta, tuple) and len(self.beta) != 2:
            raise ValueError("beta pair must have exactly two entries")

    def beta_pair(self):
        if isinstance(self.beta, tuple):
            return float(self.beta[0]), float(self.beta[1])
        return float(self.beta), float(self.beta)

    def eta_at(self, t: float) -> float:
        if callable(self.eta_of_t):
            return float(self.eta_of_t(t))
        return float(self.eta_of_t)


def _apply_inverse_metric(params: FlowParams, w, u):
    if params.metric is None:
        return u
    f = np.asarray(params.metric(w), dtype=float)
    evals, vecs = sym_eig(0.5 * (f + f.T))
    if evals[-1] <= 0.0:
        raise ValueError("metric must be symmetric positive definite")
    return vecs @ ((vecs.T @ u) / evals)


def _checked_projector(params: FlowParams, w):
    p = np.asarray(params.projector_sharp(w), dtype=float)
    scale = max(1.0, float(np.abs(p).max()))
    if np.abs(p - p.T).max() > PROJECTOR_TOL * scale:
        raise ValueError("projector_sharp(w) is not symmetric")
    if np.abs(p @ p - p).max() > PROJECTOR_TOL * scale:
        raise ValueError("projector_sharp(w) is not idempotent")
    return p


def hessian_vector_product(landscape, w, v):
    """Analytic when the landscape provides one, otherwise central finite
    differences of the gradient with step 1e-5*(1+||w||)."""
    if landscape.hvp is not None:
        return np.asarray(landscape.hvp(w, v), dtype=float)
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    s = 1e-5 * (1.0 + math.sqrt(float(w @ w)))
    gp = np.asarray(landscape.grad(w + s * v), dtype=float)
    gm = np.asarray(landscape.grad(w - s * v), dtype=float)
    return (gp - gm) / (2.0 * s)


def first_order_rhs(state: DynamicsState, landscape, params: FlowParams):
    """wdot = -eta F^{-1}(m + beta grad f), mdot = -alpha m + grad f."""
    g = np.asarray(landscape.grad(state.w), dtype=float)
    beta, _ = params.beta_pair()
    eta = params.eta_at(state.t)
    wdot = -eta * _apply_inverse_metric(params, state.w, state.m + beta * g)
    mdot = -params.alpha * state.m + g
    return wdot, mdot


def lite_flow_rhs(state: DynamicsState, landscape, params: FlowParams):
    """Split flow: the sharp projection moves at the base rate with damping
    beta1, the complement is amplified by chi and damped with beta2.

    wdot = -eta F^{-1} P (m + beta1 g) - chi eta F^{-1} (I-P)(m + beta2 g).
    """
    g = np.asarray(landscape.grad(state.w), dtype=float)
    b1, b2 = params.beta_pair()
    eta = params.eta_at(state.t)
    p = _checked_projector(params, state.w)
    sharp = p @ (state.m + b1 * g)
    flat = (state.m + b2 * g) - p @ (state.m + b2 * g)
    wdot = (-eta * _apply_inverse_metric(params, state.w, sharp)
            - params.chi * eta * _apply_inverse_metric(params, state.w, flat))
    mdot = -params.alpha * state.m + g
    return wdot, mdot


def semi_implicit_step(state: DynamicsState, landscape, params: FlowParams,
                       h: float) -> DynamicsState:
    """One semi-implicit Euler step: momentum first, then the parameters with
    the fresh momentum. At h = 1 with identity metric this is entrywise the
    discrete update m <- (1-alpha) m + g, w <- w - eta (m + beta g).

    The momentum update is written multiplicatively, (1 - h alpha) m + h g,
    so the h = 1 correspondence is exact in floating point.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    g = np.asarray(landscape.grad(state.w), dtype=float)
    m_new = (1.0 - h * params.alpha) * state.m + h * g
    b1, b2 = params.beta_pair()
    if params.projector_sharp is not None:
        p = _checked_projector(params, state.w)
        u = p @ (m_new + b1 * g) + params.chi * ((m_new + b2 * g) - p @ (m_new + b2 * g))
    else:
        u = m_new + b1 * g
    eta = params.eta_at(state.t)
    w_new = state.w - (h * eta) * _apply_inverse_metric(params, state.w, u)
    return DynamicsState(w_new, m_new, state.t + h)


def rk4_flow(state: DynamicsState, landscape, params: FlowParams, t_end: float,
             h: float = FINE_STEP, rhs=first_order_rhs) -> DynamicsState:
    """Classical 4-stage one-step integration of a (wdot, mdot) system up to
    t_end; the reference trajectory for discretization-order checks."""
    if t_end < state.t:
        raise ValueError("t_end must not precede the state's clock")
    w, m, t = state.w.copy(), state.m.copy(), state.t
    remaining = t_end - t
    n_steps = max(1, int(math.ceil(remaining / h - 1e-12))) if remaining > 0 else 0
    if n_steps:
        step = remaining / n_steps
        for _ in range(n_steps):
            k1w, k1m = rhs(DynamicsState(w, m, t), landscape, params)
            k2w, k2m = rhs(DynamicsState(w + 0.5 * step * k1w, m + 0.5 * step * k1m,
                                         t + 0.5 * step), landscape, params)
            k3w, k3m = rhs(DynamicsState(w + 0.5 * step * k2w, m + 0.5 * step * k2m,
                                         t + 0.5 * step), landscape, params)
            k4w, k4m = rhs(DynamicsState(w + step * k3w, m + step * k3m,
                                         t + step), landscape, params)
            w = w + (step / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
            m = m + (step / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
            t += step
    return DynamicsState(w, m, t_end)


def ishd_acceleration(w, wdot, landscape, alpha_t: float, beta_t: float,
                      gamma_t: float):
    """Acceleration of the damped inertial system:
    wddot = -alpha_t wdot - beta_t H(w) wdot - gamma_t grad f(w)."""
    w = np.asarray(w, dtype=float)
    wdot = np.asarray(wdot, dtype=float)
    g = np.asarray(landscape.grad(w), dtype=float)
    return -alpha_t * wdot - beta_t * hessian_vector_product(landscape, w, wdot) - gamma_t * g


def nesterov_forms_trace(quadratic: QuadraticSpec, alpha: float, eta: float,
                         steps: int):
    """Iterate the lookahead and single-sequence Nesterov formulations from
    the same start and report the max entrywise gap.

    Both open with the plain gradient step w1 = w0 - eta g0: the lookahead
    form starts with zero velocity, and the single-sequence form starts its
    momentum accumulation after the first step (at m = 0 the combined factor
    eta1 * beta equals eta, folded to avoid first-step rounding).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lam, b = quadratic.eigenvalues, quadratic.offsets
    w0 = quadratic.stationary_point() + 1.0

    def grad(w):
        return lam * w + b

    # lookahead form: x_{k+1} = w_k - eta g(w_k), w_{k+1} = x_{k+1} + (1-alpha)(x_{k+1} - x_k)
    traj_a = [w0.copy()]
    w = w0.copy()
    x_prev = None
    for _ in range(steps):
        x = w - eta * grad(w)
        if x_prev is None:
            x_prev = x
        w = x + (1.0 - alpha) * (x - x_prev)
        x_prev = x
        traj_a.append(w.copy())

    # single-sequence form with beta = 1/(1-alpha), eta1 = eta/(1+alpha*beta)
    beta = 1.0 / (1.0 - alpha)
    eta1 = eta / (1.0 + alpha * beta)
    traj_b = [w0.copy()]
    w = w0.copy()
    m = np.zeros_like(w0)
    for k in range(steps):
        g = grad(w)
        if k == 0:
            w = w - eta * g
        else:
            m = (1.0 - alpha) * m + g
            w = w - eta1 * (m + beta * g)
        traj_b.append(w.copy())

    gaps = [float(np.abs(a - b_).max()) for a, b_ in zip(traj_a, traj_b)]
    return np.array(traj_a), np.array(traj_b), max(gaps)


@dataclasses.dataclass(frozen=True)
class AdemamixFlowConfig:
    """Two-timescale momentum flow coefficients: fast/slow EMA rates, the
    slow-momentum weight, and the step-size scale."""

    alpha_fast: float
    alpha_slow: float
    kappa: float
    eta: float

    def __post_init__(self):
        if self.alpha_fast <= 0.0 or self.alpha_slow <= 0.0:
            raise ValueError("EMA rates must be positive")
        if self.kappa < 0.0:
            raise ValueError("kappa must be >= 0")


def ademamix_flow_trajectory(quadratic: QuadraticSpec, cfg: AdemamixFlowConfig,
                             t_grid, state0=None):
    """Integrate the 3-variable flow
        mf' = -a1 mf + a1 g,  ms' = -a2 ms + a2 g,  w' = -eta (mf + kappa ms)
    with the fine-step 4-stage integrator, returning (W, MF, MS) sampled on
    t_grid. Starts at the stationary point + 1 with zero momenta unless
    state0 = (w, mf, ms) is given.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1 or np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be a nondecreasing vector of times")
    lam, b = quadratic.eigenvalues, quadratic.offsets
    a1, a2, kap, eta = cfg.alpha_fast, cfg.alpha_slow, cfg.kappa, cfg.eta
    d = quadratic.dim
    if state0 is None:
        w = quadratic.stationary_point() + 1.0
        mf = np.zeros(d)
        ms = np.zeros(d)
    else:
        w, mf, ms = (np.asarray(v, dtype=float).copy() for v in state0)

    def rhs(y):
        yw, yf, ys = y[:d], y[d:2 * d], y[2 * d:]
        g = lam * yw + b
        return np.concatenate([-eta * (yf + kap * ys), -a1 * yf + a1 * g, -a2 * ys + a2 * g])

    y = np.concatenate([w, mf, ms])
    t = t_grid[0]
    out_w, out_f, out_s = [], [], []

    def record():
        out_w.append(y[:d].copy())
        out_f.append(y[d:2 * d].copy())
        out_s.append(y[2 * d:].copy())

    record()
    for t_next in t_grid[1:]:
        span = t_next - t
        n_steps = max(1, int(math.ceil(span / FINE_STEP - 1e-12))) if span > 0 else 0
        if n_steps:
            step = span / n_steps
            for _ in range(n_steps):
                k1 = rhs(y)
                k2 = rhs(y + 0.5 * step * k1)
                k3 = rhs(y + 0.5 * step * k2)
                k4 = rhs(y + step * k3)
                y = y + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t_next
        record()
    return np.array(out_w), np.array(out_f), np.array(out_s)


def ademamix_ode_residual(quadratic: QuadraticSpec, cfg: AdemamixFlowConfig,
                          t_grid, state0=None) -> float:
    """Max absolute residual of the third-order identity
        w''' + (a1+a2) w'' + a1 a2 w' + eta (a1 + kappa a2) H w'
              + eta a1 a2 (1 + kappa) grad f = 0
    along the integrated flow, with every derivative evaluated analytically
    from the linear system's state. The identity is algebraic in
    (w, mf, ms), so the residual measures only the identity itself, not
    integration error.
    """
    lam, b = quadratic.eigenvalues, quadratic.offsets
    a1, a2, kap, eta = cfg.alpha_fast, cfg.alpha_slow, cfg.kappa, cfg.eta
    ws, mfs, mss = ademamix_flow_trajectory(quadratic, cfg, t_grid, state0=state0)
    worst = 0.0
    for w, mf, ms in zip(ws, mfs, mss):
        g = lam * w + b
        wd = -eta * (mf + kap * ms)
        wdd = -eta * (-a1 * mf - kap * a2 * ms + (a1 + kap * a2) * g)
        hwd = lam * wd
        wddd = -eta * (a1 * a1 * mf + kap * a2 * a2 * ms
                       - (a1 * a1 + kap * a2 * a2) * g + (a1 + kap * a2) * hwd)
        r = (wddd + (a1 + a2) * wdd + a1 * a2 * wd
             + eta * (a1 + kap * a2) * hwd + eta * a1 * a2 * (1.0 + kap) * g)
        worst = max(worst, float(np.abs(r).max()))
    return worst
