"""Optimizer steppers, block routing, schedules, clipping, weight decay.

Families: elementwise baselines (adamw, n_adamw, lion, mars, ademamix),
matrix-preconditioned baselines (muon, soap), and their flat-direction
accelerated variants (muon_lite, soap_lite) plus the elementwise accelerated
stepper used for embedding/norm blocks.

Bit-exactness constraint: the accelerated steppers with chi=1 and
beta1=beta2=0 must reproduce their baselines entrywise over whole
trajectories. Every sub-expression the two share (momentum recurrences, the
polar call, denominators, the final apply) therefore lives in exactly one
place, and the trivial-policy branch short-circuits to the baseline
expression rather than multiplying by an assembled, rounded identity.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .linalg import as_matrix, frobenius, qr_decompose
from .polar import RankController, composite_sharp_projection, ns_polar, update_rank_controller
from .subspace import SoapMaskController, smoothed_sharp_mask, update_soap_controller

ROLES = ("muon", "adam", "embedding", "norm", "output")

FAMILIES = ("adamw", "n_adamw", "lion", "mars", "ademamix",
            "muon", "soap", "muon_lite", "soap_lite")

_ELEMENTWISE = {"adamw", "n_adamw", "lion", "mars", "ademamix"}
_LITE_FAMILIES = {"muon_lite", "soap_lite"}


@dataclasses.dataclass
class MatrixBlock:
    name: str
    matrix: np.ndarray
    role: str

    def __post_init__(self):
        self.matrix = as_matrix(self.matrix)
        if self.role not in ROLES:
            raise ValueError(f"unknown role '{self.role}' for block '{self.name}'")


@dataclasses.dataclass(frozen=True)
class LitePolicy:
    """Acceleration knobs: chi amplifies the flat-direction step, beta1/beta2
    are the gradient-correction weights on the sharp/flat parts.

    beta1 may be negative (the matrix variant is run that way in practice);
    only beta2 >= beta1 is enforced. r_s sets the sharp-subspace size as a
    fraction of the block dimension, d_smooth_ratio the ramp band width for
    the elementwise masks. Embedding/norm blocks may carry their own chi.
    """

    chi: float = 1.0
    beta1: float = 0.0
    beta2: float = 0.0
    r_s: float = 0.5
    d_smooth_ratio: float = 0.1
    chi_embedding: float | None = None
    chi_norm: float | None = None

    def __post_init__(self):
        if self.chi < 1.0:
            raise ValueError("chi must be ≥ 1")
        if self.beta2 < self.beta1:
            raise ValueError("beta2 must be ≥ beta1")
        if not 0.0 < self.r_s <= 1.0:
            raise ValueError(f"r_s must be in (0, 1], got {self.r_s}")
        if not 0.0 <= self.d_smooth_ratio < 1.0:
            raise ValueError(f"d_smooth_ratio must be in [0, 1), got {self.d_smooth_ratio}")
        for label, value in (("chi_embedding", self.chi_embedding), ("chi_norm", self.chi_norm)):
            if value is not None and value < 1.0:
                raise ValueError(f"{label} must be ≥ 1")

    def chi_for(self, role: str) -> float:
        if role == "embedding" and self.chi_embedding is not None:
            return self.chi_embedding
        if role == "norm" and self.chi_norm is not None:
            return self.chi_norm
        return self.chi

    def is_trivial(self, role: str) -> bool:
        return self.chi_for(role) == 1.0 and self.beta1 == 0.0 and self.beta2 == 0.0


@dataclasses.dataclass(frozen=True)
class ScheduleSpec:
    kind: str
    lr_max: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.kind not in ("cos", "wsd", "constant"):
            raise ValueError(f"unknown schedule kind '{self.kind}'")
        if self.lr_max < 0.0:
            raise ValueError("lr_max must be ≥ 0")
        if self.total_steps < 1:
            raise ValueError("total_steps must be ≥ 1")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")
        if self.kind in ("cos", "wsd") and self.warmup_steps >= self.total_steps:
            raise ValueError(f"{self.kind} schedule needs warmup_steps < total_steps")
        if self.kind == "wsd" and self.warmup_steps > 0.8 * self.total_steps:
            raise ValueError("wsd warmup must end before the decay phase at 80% of total_steps")


@dataclasses.dataclass(frozen=True)
class OptimizerConfig:
    family: str
    theta: float = 0.95
    beta_v: float = 0.99
    theta_shampoo: float = 0.95
    epsilon: float = 1e-8
    weight_decay: float = 0.1
    clip_norm: float = 1.0
    nesterov_beta: float = 0.0
    mars_gamma: float = 0.0
    ademamix_kappa: float = 1.0
    alpha_fast: float = 0.1
    alpha_slow: float = 1e-3
    qr_refresh_every: int = 10
    lite: LitePolicy | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family '{self.family}'")
        for label in ("theta", "beta_v", "theta_shampoo"):
            value = getattr(self, label)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{label} must be in [0, 1), got {value}")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be ≥ 0")
        if self.clip_norm <= 0.0:
            raise ValueError("clip_norm must be positive")
        if self.qr_refresh_every < 1:
            raise ValueError("qr_refresh_every must be ≥ 1")
        if self.family in _LITE_FAMILIES and self.lite is None:
            raise ValueError(f"family '{self.family}' requires a lite policy")


@dataclasses.dataclass
class BlockOptState:
    """Per-block optimizer state; only the fields the routed stepper needs are
    allocated, everything else stays None."""

    m: np.ndarray
    v: np.ndarray | None = None
    prev_g: np.ndarray | None = None
    m_slow: np.ndarray | None = None
    gram_l: np.ndarray | None = None
    gram_r: np.ndarray | None = None
    q_l: np.ndarray | None = None
    q_r: np.ndarray | None = None
    rank_ctrl: RankController | None = None
    mask_ctrl: SoapMaskController | None = None
    step: int = 0
    last_sharp_mass: float | None = None


def resolve_stepper(family: str, role: str) -> str:
    """Stepper kind for a (family, role) pair.

    Matrix families precondition only muon-role blocks and fall back to adamw
    elsewhere. The accelerated families route embedding/norm to the masked
    elementwise stepper and keep output (and generic adam) blocks on plain
    adamw: the output block is excluded from acceleration by policy.
    """
    if role not in ROLES:
        raise ValueError(f"unknown role '{role}'")
    if family in _ELEMENTWISE:
        return family
    if family == "muon":
        return "muon" if role == "muon" else "adamw"
    if family == "soap":
        return "soap" if role == "muon" else "adamw"
    if family == "muon_lite":
        if role == "muon":
            return "muon_lite"
        return "adam_lite" if role in ("embedding", "norm") else "adamw"
    if family == "soap_lite":
        if role == "muon":
            return "soap_lite"
        return "adam_lite" if role in ("embedding", "norm") else "adamw"
    raise ValueError(f"no stepper for family '{family}' with role '{role}'")


def init_state(block: MatrixBlock, cfg: OptimizerConfig) -> BlockOptState:
    shape = block.matrix.shape
    rows, cols = shape
    kind = resolve_stepper(cfg.family, block.role)
    state = BlockOptState(m=np.zeros(shape))
    if kind in ("adamw", "n_adamw", "mars", "ademamix", "adam_lite", "soap", "soap_lite"):
        state.v = np.zeros(shape)
    if kind == "mars":
        state.prev_g = np.zeros(shape)
    if kind == "ademamix":
        state.m_slow = np.zeros(shape)
    if kind in ("soap", "soap_lite"):
        state.gram_l = np.zeros((rows, rows))
        state.gram_r = np.zeros((cols, cols))
        state.q_l = np.eye(rows)
        state.q_r = np.eye(cols)
    if kind == "muon_lite":
        n = min(rows, cols)
        d_s = math.ceil(cfg.lite.r_s * n)
        # 1/sqrt(n) puts the initial threshold at the RMS singular value; the
        # feedback loop takes it from there.
        state.rank_ctrl = RankController(scale_l=1.0 / math.sqrt(n), target_dim=d_s)
    if kind in ("adam_lite", "soap_lite"):
        count = rows * cols
        d_s = math.ceil(cfg.lite.r_s * count)
        d_smooth = math.ceil(cfg.lite.d_smooth_ratio * count)
        state.mask_ctrl = SoapMaskController(d_s=d_s, d_smooth=d_smooth)
    return state


def init_states(blocks, cfg: OptimizerConfig):
    return {name: init_state(block, cfg) for name, block in blocks.items()}


def lr_at(schedule: ScheduleSpec, step: int) -> float:
    """Learning rate at a (1-based) step; warmup is linear up to lr_max."""
    if step < 0:
        raise ValueError(f"step must be ≥ 0, got {step}")
    if step > schedule.total_steps:
        raise ValueError(f"step {step} beyond schedule end {schedule.total_steps}")
    if schedule.warmup_steps > 0 and step <= schedule.warmup_steps:
        return schedule.lr_max * step / schedule.warmup_steps
    if schedule.kind == "constant":
        return schedule.lr_max
    if schedule.kind == "cos":
        span = schedule.total_steps - schedule.warmup_steps
        progress = (step - schedule.warmup_steps) / span
        return schedule.lr_max * (0.1 + 0.45 * (1.0 + math.cos(math.pi * progress)))
    decay_start = 0.8 * schedule.total_steps
    if step <= decay_start:
        return schedule.lr_max
    return schedule.lr_max * (schedule.total_steps - step) / (schedule.total_steps - decay_start)


def clip_global_norm(grads, threshold: float):
    """Scale every block by threshold/norm when the joint Euclidean norm over
    all blocks exceeds the threshold; otherwise return the inputs untouched."""
    if threshold <= 0.0:
        raise ValueError("clip threshold must be positive")
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total <= threshold:
        return list(grads)
    scale = threshold / total
    return [g * scale for g in grads]


def _apply(block: MatrixBlock, direction, lr: float, wd: float):
    # single shared form of the decoupled-decay update; every stepper funnels
    # through it so matched directions give matched iterates bitwise
    block.matrix = block.matrix - lr * (direction + wd * block.matrix)


def _ema_mv(state: BlockOptState, g, cfg: OptimizerConfig):
    state.m = cfg.theta * state.m + (1.0 - cfg.theta) * g
    state.v = cfg.beta_v * state.v + (1.0 - cfg.beta_v) * g * g
    return np.sqrt(state.v) + cfg.epsilon


def step_adamw(block, state, g, lr, cfg):
    state.step += 1
    denom = _ema_mv(state, g, cfg)
    _apply(block, state.m / denom, lr, cfg.weight_decay)
    return block, state


def step_n_adamw(block, state, g, lr, cfg):
    """AdamW with a Nesterov-style numerator m + beta*g."""
    state.step += 1
    denom = _ema_mv(state, g, cfg)
    _apply(block, (state.m + cfg.nesterov_beta * g) / denom, lr, cfg.weight_decay)
    return block, state


def step_lion(block, state, g, lr, cfg):
    """Sign update from the old-momentum blend; sign(0) contributes nothing."""
    state.step += 1
    u = cfg.theta * state.m + (1.0 - cfg.theta) * g
    state.m = cfg.beta_v * state.m + (1.0 - cfg.beta_v) * g
    _apply(block, np.sign(u), lr, cfg.weight_decay)
    return block, state


def step_mars(block, state, g, lr, cfg):
    """AdamW on the variance-reduced gradient c = g + gamma*theta/(1-theta)*(g - prev_g)."""
    if cfg.mars_gamma == 1.0:
        raise ValueError("mars_gamma = 1 discards the current gradient; rejected")
    state.step += 1
    c = g + cfg.mars_gamma * cfg.theta / (1.0 - cfg.theta) * (g - state.prev_g)
    denom = _ema_mv(state, c, cfg)
    state.prev_g = g.copy()
    _apply(block, state.m / denom, lr, cfg.weight_decay)
    return block, state


def step_ademamix(block, state, g, lr, cfg):
    """Two-timescale momentum: a fast EMA plus kappa times a slow EMA."""
    state.step += 1
    a1, a2 = cfg.alpha_fast, cfg.alpha_slow
    state.m = (1.0 - a1) * state.m + a1 * g
    state.m_slow = (1.0 - a2) * state.m_slow + a2 * g
    state.v = cfg.beta_v * state.v + (1.0 - cfg.beta_v) * g * g
    denom = np.sqrt(state.v) + cfg.epsilon
    _apply(block, (state.m + cfg.ademamix_kappa * state.m_slow) / denom, lr, cfg.weight_decay)
    return block, state


def _oriented(a):
    """The rows >= cols orientation the polar formulas assume."""
    if a.shape[0] >= a.shape[1]:
        return a, False
    return a.T, True


def _muon_momentum(state: BlockOptState, g, cfg: OptimizerConfig):
    state.m = cfg.theta * state.m + g
    return cfg.theta * state.m + g


def _muon_scale(shape) -> float:
    return 0.2 * math.sqrt(max(shape))


def step_muon(block, state, g, lr, cfg):
    """Polar-factor update on the accumulate-then-blend momentum u = theta*m + g."""
    state.step += 1
    u = _muon_momentum(state, g, cfg)
    u_o, wide = _oriented(u)
    polar = ns_polar(u_o)
    direction = polar.T if wide else polar
    _apply(block, _muon_scale(block.matrix.shape) * direction, lr, cfg.weight_decay)
    return block, state


def step_muon_lite(block, state, g, lr, cfg):
    """Muon with the composite sharp projector splitting the update.

    Both polar factors and the projector are computed from u = theta*m + g,
    a positive multiple of the blended momentum m + g/theta; every consumer
    is scale-invariant, so the two conventions define the same update while
    u keeps the baseline's exact arithmetic.
    """
    state.step += 1
    pol = cfg.lite
    u = _muon_momentum(state, g, cfg)
    u_o, wide = _oriented(u)
    polar_m = ns_polar(u_o)
    proj, _ = composite_sharp_projection(u_o, state.rank_ctrl)
    p_frob = frobenius(proj)
    state.rank_ctrl = update_rank_controller(state.rank_ctrl, p_frob)
    state.last_sharp_mass = float(p_frob * p_frob)
    if pol.is_trivial("muon"):
        core = polar_m
    else:
        chi = pol.chi_for("muon")
        g_o = g.T if wide else g
        flat = np.eye(proj.shape[0]) - proj
        core = polar_m @ (proj + chi * flat) \
            + ns_polar(g_o) @ (pol.beta1 * proj + chi * pol.beta2 * flat)
    direction = core.T if wide else core
    _apply(block, _muon_scale(block.matrix.shape) * direction, lr, cfg.weight_decay)
    return block, state


def _soap_moments(state: BlockOptState, g, cfg: OptimizerConfig):
    """Shared first half of a SOAP step: rotate, update moments, precondition."""
    g_rot = state.q_l.T @ g @ state.q_r
    state.m = cfg.theta * state.m + (1.0 - cfg.theta) * g
    state.v = cfg.beta_v * state.v + (1.0 - cfg.beta_v) * g_rot * g_rot
    m_rot = state.q_l.T @ state.m @ state.q_r
    denom = np.sqrt(state.v) + cfg.epsilon
    return g_rot, m_rot, denom


def _soap_gram_refresh(state: BlockOptState, g, cfg: OptimizerConfig):
    """Shared tail: Gram EMAs, and an eigenbasis refresh every k-th step."""
    th = cfg.theta_shampoo
    state.gram_l = th * state.gram_l + (1.0 - th) * (g @ g.T)
    state.gram_r = th * state.gram_r + (1.0 - th) * (g.T @ g)
    if state.step % cfg.qr_refresh_every == 0:
        state.q_l, _ = qr_decompose(state.gram_l @ state.q_l)
        state.q_r, _ = qr_decompose(state.gram_r @ state.q_r)


def step_soap(block, state, g, lr, cfg):
    state.step += 1
    _, m_rot, denom = _soap_moments(state, g, cfg)
    core = m_rot / denom
    _apply(block, state.q_l @ core @ state.q_r.T, lr, cfg.weight_decay)
    _soap_gram_refresh(state, g, cfg)
    return block, state


def _mask_and_update(state: BlockOptState):
    """Mask the second moment, advance the threshold controller, record the
    sharp mass diagnostic. Returns the mask."""
    ctrl = state.mask_ctrl
    mask = smoothed_sharp_mask(state.v, ctrl)
    mean = float(state.v.mean())
    count_s = int((state.v > ctrl.l_s * mean).sum())
    count_smooth = int((state.v > ctrl.l_smooth * mean).sum())
    state.mask_ctrl = update_soap_controller(ctrl, count_s, count_smooth)
    state.last_sharp_mass = float(mask.sum())
    return mask


def step_soap_lite(block, state, g, lr, cfg):
    """SOAP with the smoothed sharp/flat mask reweighting the rotated update."""
    state.step += 1
    pol = cfg.lite
    g_rot, m_rot, denom = _soap_moments(state, g, cfg)
    mask = _mask_and_update(state)
    if pol.is_trivial("muon"):
        core = m_rot / denom
    else:
        chi = pol.chi_for("muon")
        flat = 1.0 - mask
        core = (pol.beta1 * mask + chi * pol.beta2 * flat) * (g_rot / denom) \
            + (mask + chi * flat) * (m_rot / denom)
    _apply(block, state.q_l @ core @ state.q_r.T, lr, cfg.weight_decay)
    _soap_gram_refresh(state, g, cfg)
    return block, state


def step_adam_lite(block, state, g, lr, cfg):
    """Masked elementwise stepper for embedding/norm blocks: the accelerated
    update with identity rotations and no Gram state."""
    state.step += 1
    pol = cfg.lite
    denom = _ema_mv(state, g, cfg)
    mask = _mask_and_update(state)
    if pol.is_trivial(block.role):
        direction = state.m / denom
    else:
        chi = pol.chi_for(block.role)
        flat = 1.0 - mask
        direction = (pol.beta1 * mask + chi * pol.beta2 * flat) * (g / denom) \
            + (mask + chi * flat) * (state.m / denom)
    _apply(block, direction, lr, cfg.weight_decay)
    return block, state


_STEPPERS = {
    "adamw": step_adamw,
    "n_adamw": step_n_adamw,
    "lion": step_lion,
    "mars": step_mars,
    "ademamix": step_ademamix,
    "muon": step_muon,
    "soap": step_soap,
    "muon_lite": step_muon_lite,
    "soap_lite": step_soap_lite,
    "adam_lite": step_adam_lite,
}


def route_and_step(blocks, states, grads, step, schedule: ScheduleSpec,
                   cfg: OptimizerConfig):
    """One optimization step over every block.

    Clips the joint gradient norm once, then dispatches each block to its
    (family, role) stepper in lexicographic name order so runs reproduce
    exactly regardless of how callers parallelize.
    """
    order = sorted(blocks)
    if sorted(states) != order or sorted(grads) != order:
        raise ValueError("blocks, states and grads must share one name set")
    lr = lr_at(schedule, step)
    clipped = clip_global_norm([grads[name] for name in order], cfg.clip_norm)
    for name, g in zip(order, clipped):
        kind = resolve_stepper(cfg.family, blocks[name].role)
        _STEPPERS[kind](blocks[name], states[name], g, lr, cfg)
    return blocks, states
