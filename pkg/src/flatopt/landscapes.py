"""Objective functions for the experiments: anisotropic quadratics, a
valley-with-flat-floor surrogate, and a small tanh MLP with hand-rolled
backpropagation, finite-difference block Hessians, and the gradient-Gram
alignment experiment.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .linalg import sym_eig
from .optim import MatrixBlock, OptimizerConfig, ScheduleSpec, init_states, route_and_step
from .quadratic import QuadraticSpec
from .rng import SplitMix64, derive_seed
from .subspace import coverage_score

FD_HESSIAN_MAX_PARAMS = 1024


@dataclasses.dataclass(frozen=True)
class BlockLayout:
    """Where one named block lives inside the flat parameter vector."""

    start: int
    shape: tuple
    role: str

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


class Landscape:
    """Differentiable objective over a flat parameter vector.

    ``loss`` and ``grad`` are callables of w; ``hvp(w, v)`` is analytic where
    cheap and None otherwise (consumers fall back to finite differences).
    ``blocks`` names 2-D segments of w for block-structured optimizers.
    """

    def __init__(self, dim, loss, grad, hvp=None, blocks=None, initial_point=None):
        self.dim = dim
        self.loss = loss
        self.grad = grad
        self.hvp = hvp
        self.blocks = blocks or {}
        self.initial_point = initial_point if initial_point is not None else np.zeros(dim)

    def unpack(self, w):
        """Flat vector -> named block matrices."""
        w = np.asarray(w, dtype=float)
        return {name: w[b.start:b.start + b.size].reshape(b.shape)
                for name, b in self.blocks.items()}

    def pack(self, mats):
        w = np.zeros(self.dim)
        for name, b in self.blocks.items():
            w[b.start:b.start + b.size] = np.asarray(mats[name], dtype=float).ravel()
        return w

    def matrix_blocks(self, w):
        """Named MatrixBlock views (copies) at w, ready for the optimizer."""
        mats = self.unpack(w)
        return {name: MatrixBlock(name, mats[name].copy(), self.blocks[name].role)
                for name in self.blocks}


def quadratic_landscape(spec: QuadraticSpec) -> Landscape:
    """f(w) = 1/2 sum lambda_i w_i^2 + b^T w with exact gradient and Hvp."""
    lam, b = spec.eigenvalues, spec.offsets

    def loss(w):
        w = np.asarray(w, dtype=float)
        return float(0.5 * (lam * w * w).sum() + b @ w)

    def grad(w):
        return lam * np.asarray(w, dtype=float) + b

    def hvp(w, v):
        return lam * np.asarray(v, dtype=float)

    blocks = {"all": BlockLayout(0, (1, spec.dim), "adam")}
    # start displaced from the stationary point so trajectories move
    return Landscape(spec.dim, loss, grad, hvp=hvp, blocks=blocks,
                     initial_point=spec.stationary_point() + 1.0)


@dataclasses.dataclass(frozen=True)
class RiverValleySpec:
    """Steep walls pulling the sharp coordinates onto a curved floor, with a
    nearly flat profile along the floor itself.

    The default floor is c(x_f) = 0.1*sin(x_f) coordinatewise (requires
    sharp_dim == flat_dim) and the default along-floor profile is a weak
    quadratic with curvature sharp_curvature / 1e4.
    """

    sharp_dim: int
    flat_dim: int
    sharp_curvature: float
    center_fn: object = None
    center_jac: object = None
    valley_fn: object = None
    valley_grad: object = None

    def __post_init__(self):
        if self.sharp_dim < 1 or self.flat_dim < 1:
            raise ValueError("river valley needs at least one coordinate per group")
        if self.sharp_curvature <= 0.0:
            raise ValueError("sharp_curvature must be positive")
        if self.center_fn is None and self.sharp_dim != self.flat_dim:
            raise ValueError("default coordinatewise floor needs sharp_dim == flat_dim")


def river_valley_landscape(spec: RiverValleySpec) -> Landscape:
    """f(x_s, x_f) = 1/2 L_sharp ||x_s - c(x_f)||^2 + g(x_f); sharp first."""
    ls = spec.sharp_curvature
    mu = ls / 1e4

    center = spec.center_fn or (lambda xf: 0.1 * np.sin(xf))
    center_jac = spec.center_jac or (lambda xf: np.diag(0.1 * np.cos(xf)))
    valley = spec.valley_fn or (lambda xf: float(0.5 * mu * (xf * xf).sum()))
    valley_grad = spec.valley_grad or (lambda xf: mu * xf)

    s, f = spec.sharp_dim, spec.flat_dim

    def split(w):
        w = np.asarray(w, dtype=float)
        return w[:s], w[s:]

    def loss(w):
        xs, xf = split(w)
        r = xs - center(xf)
        return float(0.5 * ls * (r * r).sum() + valley(xf))

    def grad(w):
        xs, xf = split(w)
        r = xs - center(xf)
        gs = ls * r
        gf = -ls * (center_jac(xf).T @ r) + valley_grad(xf)
        return np.concatenate([gs, gf])

    blocks = {
        "sharp": BlockLayout(0, (1, s), "adam"),
        "flat": BlockLayout(s, (1, f), "adam"),
    }
    return Landscape(s + f, loss, grad, blocks=blocks,
                     initial_point=np.ones(s + f))


@dataclasses.dataclass(frozen=True)
class MlpSpec:
    """Fully connected tanh network, linear output head, no biases, trained
    on a fixed synthetic regression batch (teacher outputs plus noise)."""

    widths: tuple
    batch_size: int = 32
    noise_sigma: float = 0.01

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("need at least input, hidden and output widths")
        if any(d < 1 for d in self.widths):
            raise ValueError("widths must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.param_count > 20000:
            raise ValueError(f"parameter count {self.param_count} exceeds the 20000 budget")

    @property
    def param_count(self) -> int:
        return sum(a * b for a, b in zip(self.widths, self.widths[1:]))

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def _layer_role(index: int, n_layers: int) -> str:
    if index == 0:
        return "embedding"
    if index == n_layers - 1:
        return "output"
    return "muon"


class MlpLandscape(Landscape):
    """MLP objective over the fixed batch, plus fresh-minibatch sampling for
    gradient-noise experiments. All randomness is derived from the seed by
    label, so every quantity is reproducible from (spec, seed)."""

    def __init__(self, spec: MlpSpec, seed: int):
        self.spec = spec
        self.seed = seed
        n_layers = spec.n_layers
        shapes = [(spec.widths[i], spec.widths[i + 1]) for i in range(n_layers)]

        blocks = {}
        offset = 0
        for i, shape in enumerate(shapes):
            blocks[f"layer{i}"] = BlockLayout(offset, shape, _layer_role(i, n_layers))
            offset += shape[0] * shape[1]

        self._teacher = [
            SplitMix64(derive_seed(seed, f"teacher/l{i}")).normal(shape) / math.sqrt(shape[0])
            for i, shape in enumerate(shapes)
        ]
        init = np.concatenate([
            (SplitMix64(derive_seed(seed, f"init/l{i}")).normal(shape) / math.sqrt(shape[0])).ravel()
            for i, shape in enumerate(shapes)
        ])
        super().__init__(offset, self._fixed_loss, self._fixed_grad,
                         blocks=blocks, initial_point=init)
        self._fixed = self._make_batch("data")

    def _make_batch(self, label: str):
        spec = self.spec
        x = SplitMix64(derive_seed(self.seed, f"{label}/x")).normal((spec.batch_size, spec.widths[0]))
        y = self._teacher_forward(x)
        y = y + spec.noise_sigma * SplitMix64(derive_seed(self.seed, f"{label}/noise")).normal(y.shape)
        return x, y

    def fresh_batch(self, k: int):
        return self._make_batch(f"batch/{k}")

    def _teacher_forward(self, x):
        a = x
        last = len(self._teacher) - 1
        for i, w in enumerate(self._teacher):
            z = a @ w
            a = z if i == last else np.tanh(z)
        return a

    def _forward(self, weights, x):
        """Activations [a_0 .. a_L]; hidden layers tanh, head linear."""
        acts = [x]
        last = len(weights) - 1
        for i, w in enumerate(weights):
            z = acts[-1] @ w
            acts.append(z if i == last else np.tanh(z))
        return acts

    def loss_on_batch(self, w, batch) -> float:
        x, y = batch
        weights = [self.unpack(w)[f"layer{i}"] for i in range(self.spec.n_layers)]
        pred = self._forward(weights, x)[-1]
        r = pred - y
        return float((r * r).mean())

    def block_grads_on_batch(self, w, batch):
        """Reverse-mode gradients of the mean squared error, per block."""
        x, y = batch
        mats = self.unpack(w)
        weights = [mats[f"layer{i}"] for i in range(self.spec.n_layers)]
        acts = self._forward(weights, x)
        r = acts[-1] - y
        delta = 2.0 * r / r.size
        grads = {}
        for i in range(len(weights) - 1, -1, -1):
            grads[f"layer{i}"] = acts[i].T @ delta
            if i > 0:
                # tanh' = 1 - tanh^2, and acts[i] already holds tanh(z)
                delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)
        return grads

    def grad_on_batch(self, w, batch):
        grads = self.block_grads_on_batch(w, batch)
        return np.concatenate([grads[f"layer{i}"].ravel()
                               for i in range(self.spec.n_layers)])

    def _fixed_loss(self, w):
        return self.loss_on_batch(w, self._fixed)

    def _fixed_grad(self, w):
        return self.grad_on_batch(w, self._fixed)


def mlp_landscape(spec: MlpSpec, seed: int) -> MlpLandscape:
    return MlpLandscape(spec, seed)


def _fd_hessian_on_coords(grad_fn, w, coords, rows=None):
    """Central differences of grad_fn over the given coordinates.

    Returns the |coords| x |coords| matrix of d(grad[rows])/d(w[coords]) with
    rows defaulting to coords. Step 1e-5*(1+|w_i|) per coordinate.
    """
    rows = coords if rows is None else rows
    h_cols = []
    for j in coords:
        h = 1e-5 * (1.0 + abs(float(w[j])))
        wp = w.copy(); wp[j] += h
        wm = w.copy(); wm[j] -= h
        h_cols.append((grad_fn(wp)[rows] - grad_fn(wm)[rows]) / (2.0 * h))
    return np.stack(h_cols, axis=1)


def fd_block_hessian(landscape: Landscape, block_name: str, w):
    """Symmetrized finite-difference Hessian of one named block."""
    if block_name not in landscape.blocks:
        raise KeyError(f"unknown block '{block_name}'")
    layout = landscape.blocks[block_name]
    if layout.size > FD_HESSIAN_MAX_PARAMS:
        raise ValueError(
            f"block '{block_name}' has {layout.size} parameters, over the "
            f"finite-difference limit {FD_HESSIAN_MAX_PARAMS}")
    w = np.asarray(w, dtype=float)
    coords = np.arange(layout.start, layout.start + layout.size)
    h = _fd_hessian_on_coords(landscape.grad, w, coords)
    return 0.5 * (h + h.T)


def mean_row_hessian(landscape: Landscape, block_name: str, w):
    """Average over rows of the per-row Hessians of one block (n x n for an
    m x n block): the Hessian of the loss with respect to a single row's
    parameters, extracted row by row."""
    layout = landscape.blocks[block_name]
    m, n = layout.shape
    w = np.asarray(w, dtype=float)
    acc = np.zeros((n, n))
    for i in range(m):
        coords = np.arange(layout.start + i * n, layout.start + (i + 1) * n)
        h = _fd_hessian_on_coords(landscape.grad, w, coords)
        acc += 0.5 * (h + h.T)
    return acc / m


def mean_col_hessian(landscape: Landscape, block_name: str, w):
    """Average over columns of the per-column Hessians (m x m)."""
    layout = landscape.blocks[block_name]
    m, n = layout.shape
    w = np.asarray(w, dtype=float)
    acc = np.zeros((m, m))
    for j in range(n):
        coords = layout.start + j + n * np.arange(m)
        h = _fd_hessian_on_coords(landscape.grad, w, coords)
        acc += 0.5 * (h + h.T)
    return acc / n


def top_eigenspace(matrix, k: int):
    """Orthonormal basis of the top-k eigenspace, from the symmetric-Jacobi
    oracle; the n x k matrix of leading eigenvectors."""
    sym = 0.5 * (np.asarray(matrix, dtype=float) + np.asarray(matrix, dtype=float).T)
    _, vecs = sym_eig(sym)
    return vecs[:, :k]


def gram_alignment_curve(reference, gram, d_s: int, k_grid):
    """Coverage of reference's top-d_s eigenspace by gram's top-k eigenspaces.

    Returns [(k, coverage)] over k_grid; every k must be >= d_s so the
    coverage score's column-count precondition holds.
    """
    ref_basis = top_eigenspace(reference, d_s)
    curve = []
    for k in k_grid:
        if k < d_s:
            raise ValueError(f"k = {k} below the reference dimension d_s = {d_s}")
        curve.append((int(k), coverage_score(ref_basis, top_eigenspace(gram, int(k)))))
    return curve


def alignment_experiment(spec: MlpSpec, seed: int, train_steps: int, d_s: int,
                         k_grid, n_batches: int = 32, lr: float = 1e-3):
    """Train briefly, then ask whether the top curvature directions of each
    block are covered by the top eigenspaces of the gradient Gram estimates.

    Trains with adamw on fresh minibatches, accumulates mean G^T G and
    G G^T over n_batches fresh gradients at the trained point, and compares
    their top-k eigenspaces against the mean row/column Hessians. Returns
    {block: {"row": curve, "col": curve}}.
    """
    land = mlp_landscape(spec, seed)
    w = land.initial_point.copy()
    blocks = land.matrix_blocks(w)
    cfg = OptimizerConfig("adamw")
    sched = ScheduleSpec("constant", lr, 0, max(train_steps, 1))
    states = init_states(blocks, cfg)
    for step in range(1, train_steps + 1):
        batch = land.fresh_batch(step)
        grads = land.block_grads_on_batch(land.pack({n: b.matrix for n, b in blocks.items()}), batch)
        route_and_step(blocks, states, grads, step, sched, cfg)
    w = land.pack({n: b.matrix for n, b in blocks.items()})

    curves = {}
    for name, layout in land.blocks.items():
        m, n = layout.shape
        gram_r = np.zeros((n, n))
        gram_l = np.zeros((m, m))
        for b in range(n_batches):
            g = land.block_grads_on_batch(w, land.fresh_batch(train_steps + 1 + b))[name]
            gram_r += g.T @ g
            gram_l += g @ g.T
        gram_r /= n_batches
        gram_l /= n_batches
        row_ref = mean_row_hessian(land, name, w)
        col_ref = mean_col_hessian(land, name, w)
        curves[name] = {
            "row": gram_alignment_curve(row_ref, gram_r, min(d_s, n), [min(int(k), n) for k in k_grid]),
            "col": gram_alignment_curve(col_ref, gram_l, min(d_s, m), [min(int(k), m) for k in k_grid]),
        }
    return curves
