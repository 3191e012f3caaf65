"""Particle gradient flows on sliced transport functionals.

Every functional is differentiated with its current plan held fixed: the
per-particle gradient at ``x_i`` is ``2 (x_i - sum_j P_ij y_j / a_i)``. For SW
the plan is the 1D matching along each direction, averaged over directions.
Gradients are normalised by the particle mass ``a_i``, i.e. they equal
``(1 / a_i) dLoss/dx_i``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .exact import DEFAULT_MAX_ENTRIES, SizeGuardError, w2_exact
from .expected import expected_plan
from .measures import DimensionError, DiscreteMeasure, Direction, SparsePlan, sample_sphere
from .ot1d import quantile_coupling
from .pivot import batch_sorted, min_ps, ps_theta

FUNCTIONALS = ("sw", "ps", "minps", "es")


@dataclass
class FlowConfig:
    functional: str = "minps"
    L: int = 50
    optimizer: str = "adam"
    lr: float = 0.02
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    iterations: int = 500
    seed: int = 0
    eval_every: int = 0
    refine: bool = False
    refine_iters: int = 200
    theta: tuple | None = None
    tie_tol: float | None = None
    orthonormal: bool = False
    record_positions: bool = False
    stop_tol: float = 1e-6
    max_entries: int = DEFAULT_MAX_ENTRIES

    def __post_init__(self):
        self.functional = self.functional.lower().replace("_", "")
        aliases = {"psfixedtheta": "ps", "psfixed": "ps"}
        self.functional = aliases.get(self.functional, self.functional)
        if self.functional not in FUNCTIONALS:
            raise ValueError(f"functional must be one of {FUNCTIONALS}, got {self.functional!r}")
        self.optimizer = self.optimizer.lower()
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.L < 1 or self.iterations < 1:
            raise ValueError("L and iterations must be >= 1")


@dataclass
class FlowTrace:
    iters: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    w2sq: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    positions: list | None = None
    final_positions: np.ndarray | None = None
    converged: bool = False
    plan: SparsePlan | None = None
    theta: np.ndarray | None = None

    def append(self, it, loss, w2sq, seconds, X=None):
        if self.iters and it <= self.iters[-1]:
            raise ValueError("trace iterations must increase")
        self.iters.append(int(it))
        self.loss.append(float(loss))
        self.w2sq.append(float(w2sq))
        self.seconds.append(float(seconds))
        if X is not None:
            if self.positions is None:
                self.positions = []
            self.positions.append(np.array(X))

    @property
    def final_loss(self) -> float:
        return self.loss[-1]

    @property
    def final_w2sq(self) -> float:
        return self.w2sq[-1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "w2sq", "seconds"])
            for row in zip(self.iters, self.loss, self.w2sq, self.seconds):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])

    def to_json(self) -> str:
        return json.dumps({
            "iters": self.iters, "loss": self.loss,
            "w2sq": [None if math.isnan(v) else v for v in self.w2sq],
            "seconds": self.seconds, "converged": self.converged,
            "theta": None if self.theta is None else self.theta.tolist(),
        })


def _check(X, target):
    X = np.asarray(X, float)
    if X.ndim != 2 or X.shape[1] != target.dim:
        raise DimensionError(f"particles of shape {X.shape} do not match target dimension {target.dim}")
    return X


def _sw_grad(X, target, directions):
    n = X.shape[0]
    if target.is_uniform and target.n == n:
        PX, PY, _ = batch_sorted(X, target.points, directions)
        U = X @ directions.T
        V = target.points @ directions.T
        su = np.take_along_axis(U, PX, 0)
        sv = np.take_along_axis(V, PY, 0)
        diff = np.empty_like(U)
        np.put_along_axis(diff, PX, su - sv, 0)
        L = directions.shape[0]
        return 2.0 * diff @ directions / L, float(np.mean((su - sv) ** 2))
    a = np.full(n, 1.0 / n)
    grad = np.zeros_like(X)
    loss = 0.0
    L = directions.shape[0]
    for theta in directions:
        u = X @ theta
        v = target.points @ theta
        q = quantile_coupling(u, a, v, target.weights)
        bary = np.bincount(q.src, weights=q.masses * v[q.tgt], minlength=n) / a
        grad += np.outer(2.0 * (u - bary), theta)
        d = u[q.src] - v[q.tgt]
        loss += float(q.masses @ (d * d))
    return grad / L, loss / L


def _plan_grad(X, Y, plan: SparsePlan):
    a = plan.row_sums()
    bary = np.zeros_like(X)
    np.add.at(bary, plan.rows, plan.mass[:, None] * Y[plan.cols])
    bary /= a[:, None]
    return 2.0 * (X - bary)


def _functional(X, target, functional, directions, tie_tol=None, refine=False, refine_iters=0, rng=None):
    """Gradient, loss value and (where defined) plan of ``functional`` at particles ``X``."""
    directions = np.atleast_2d(np.asarray(directions, float))
    if functional == "sw":
        g, loss = _sw_grad(X, target, directions)
        return g, loss, None
    source = DiscreteMeasure(X)
    if functional == "ps":
        res = ps_theta(source, target, Direction.normalized(directions[0]), tie_tol, with_middle=False)
        plan, loss = res.plan, res.cost_sq
    elif functional == "minps":
        res = min_ps(source, target, directions=directions, tie_tol=tie_tol, refine=refine,
                     refine_iters=refine_iters, seed=rng)
        plan, loss = res.plan, res.cost_sq
    elif functional == "es":
        plan, es = expected_plan(source, target, directions, tie_tol=tie_tol)
        loss = es * es
    else:
        raise ValueError(f"unknown functional {functional!r}")
    return _plan_grad(X, target.points, plan), loss, plan


def step_gradient(X, target: DiscreteMeasure, functional: str, directions, tie_tol=None,
                  return_loss: bool = False):
    """Per-particle gradient of ``functional`` at particles ``X`` (uniform weights).

    ``functional`` is one of ``"sw"``, ``"ps"`` (first direction only),
    ``"minps"`` (best of ``directions``) or ``"es"``.
    """
    X = _check(X, target)
    functional = FlowConfig(functional=functional).functional
    g, loss, _ = _functional(X, target, functional, directions, tie_tol)
    return (g, loss) if return_loss else g


def fixed_plan_loss(X, target: DiscreteMeasure, functional: str, directions, tie_tol=None):
    """Loss as a function of ``X`` with the plans computed at ``X`` frozen.

    Returns a callable ``f(Z) -> float``; its gradient at ``X`` equals
    ``a_i * step_gradient(X, ...)``.
    """
    X = _check(X, target)
    functional = FlowConfig(functional=functional).functional
    directions = np.atleast_2d(np.asarray(directions, float))
    n = X.shape[0]
    Y = target.points
    if functional == "sw":
        a = np.full(n, 1.0 / n)
        frozen = []
        for theta in directions:
            q = quantile_coupling(X @ theta, a, Y @ theta, target.weights)
            frozen.append((theta, q))

        def f(Z):
            tot = 0.0
            for theta, q in frozen:
                d = (Z @ theta)[q.src] - (Y @ theta)[q.tgt]
                tot += float(q.masses @ (d * d))
            return tot / len(frozen)

        return f
    _, _, plan = _functional(X, target, functional, directions, tie_tol)
    return lambda Z: plan.cost(Z, Y)


class _Adam:
    def __init__(self, lr, betas, eps):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = self.v = None
        self.t = 0

    def step(self, X, g):
        if self.m is None:
            self.m = np.zeros_like(X)
            self.v = np.zeros_like(X)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return X - self.lr * mh / (np.sqrt(vh) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, X, g):
        return X - self.lr * g


def orthonormal_directions(d, k, rng):
    """``k <= d`` orthonormal directions from a random rotation."""
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    return Q.T[:k]


def _directions(cfg, d, rng):
    if cfg.orthonormal:
        dirs = []
        left = cfg.L
        while left > 0:
            k = min(d, left)
            dirs.append(orthonormal_directions(d, k, rng))
            left -= k
        return np.vstack(dirs)
    return sample_sphere(d, cfg.L, rng)


def run_flow(source: DiscreteMeasure, target: DiscreteMeasure, config: FlowConfig) -> FlowTrace:
    """Move the particles of ``source`` along the gradient of the chosen functional.

    The trace records the functional value (and exact W2^2 every
    ``eval_every`` iterations) at iterations ``0 .. T``. The flow stops once
    the RMS particle displacement between consecutive iterates, an upper
    bound on their W2 distance, drops below ``config.stop_tol``; a converged
    flow also emits the plan matching each source particle to the target atom
    its final position reached.
    """
    if not source.is_uniform:
        raise ValueError("flows need a uniform source measure")
    if source.dim != target.dim:
        raise DimensionError("source and target live in different dimensions")
    cfg = config
    if cfg.eval_every and source.n * target.n > cfg.max_entries:
        raise SizeGuardError(f"exact W2 evaluation on {source.n} x {target.n} atoms exceeds the guard; "
                             "use eval_every=0")
    rng = np.random.default_rng(cfg.seed)
    d = source.dim
    X = np.array(source.points)
    opt = _Adam(cfg.lr, cfg.betas, cfg.adam_eps) if cfg.optimizer == "adam" else _SGD(cfg.lr)
    trace = FlowTrace()
    fixed_theta = None
    if cfg.functional == "ps":
        if cfg.theta is not None:
            fixed_theta = Direction.normalized(cfg.theta).theta
        else:
            fixed_theta = min_ps(source, target, L=cfg.L, seed=rng, refine=True,
                                 refine_iters=cfg.refine_iters, tie_tol=cfg.tie_tol).theta.theta
        trace.theta = fixed_theta
    t0 = time.perf_counter()

    def w2_at(Z, it):
        if cfg.eval_every and it % cfg.eval_every == 0:
            return w2_exact(DiscreteMeasure(Z), target, max_entries=cfg.max_entries)[0]
        return math.nan

    it = 0
    while True:
        dirs = fixed_theta[None, :] if fixed_theta is not None else _directions(cfg, d, rng)
        g, loss, _ = _functional(X, target, cfg.functional, dirs, cfg.tie_tol,
                                 refine=cfg.refine, refine_iters=cfg.refine_iters, rng=rng)
        last = it == cfg.iterations or trace.converged
        w2 = w2_at(X, 0 if last else it)
        trace.append(it, loss, w2, time.perf_counter() - t0, X if cfg.record_positions else None)
        if last:
            break
        X_new = opt.step(X, g)
        disp = math.sqrt(float(np.mean(np.sum((X_new - X) ** 2, axis=1))))
        X = X_new
        it += 1
        if disp < cfg.stop_tol:
            trace.converged = True
    trace.final_positions = X
    if trace.converged and target.is_uniform and source.n == target.n and source.n ** 2 <= cfg.max_entries:
        from scipy.optimize import linear_sum_assignment

        from .exact import sq_cost_matrix

        r, c = linear_sum_assignment(sq_cost_matrix(X, target.points))
        trace.plan = SparsePlan.from_arrays(r, c, np.full(source.n, 1.0 / source.n), source.weights,
                                            target.weights, meta={"from": "flow"})
    return trace


def config_dict(cfg: FlowConfig) -> dict:
    d = asdict(cfg)
    d["betas"] = list(d["betas"])
    return d
