"""Colour transfer between images and rigid point-cloud registration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .exact import SizeGuardError, sq_cost_matrix
from .expected import expected_barycentric
from .flows import FlowConfig, run_flow
from .measures import DiscreteMeasure, sample_sphere
from .pivot import min_ps

COLOR_METHODS = ("minps_perm", "es_barycentric", "sw_flow")
ICP_METHODS = ("nn", "w2", "sw_flow", "minps", "es_barycentric")
W2_ICP_MAX_N = 2000


class DegenerateAlignmentError(ValueError):
    pass


@dataclass(eq=False)
class PixelCloud:
    """An RGB image seen as the uniform measure of its pixel colours (row-major)."""

    width: int
    height: int
    measure: DiscreteMeasure

    def __post_init__(self):
        if self.measure.n != self.width * self.height:
            raise ValueError("pixel count does not match width * height")
        if self.measure.dim != 3:
            raise ValueError("pixel clouds live in RGB space (d = 3)")
        P = self.measure.points
        if P.min() < -1e-12 or P.max() > 1 + 1e-12:
            raise ValueError("RGB coordinates must lie in [0, 1]")

    @classmethod
    def from_array(cls, img) -> "PixelCloud":
        img = np.asarray(img)
        if img.ndim != 3 or img.shape[2] < 3:
            raise ValueError("expected an (h, w, 3) image array")
        img = img[..., :3]
        if np.issubdtype(img.dtype, np.integer):
            img = img.astype(float) / 255.0
        h, w = img.shape[:2]
        return cls(w, h, DiscreteMeasure(np.clip(img.reshape(-1, 3).astype(float), 0.0, 1.0)))

    @property
    def pixels(self) -> np.ndarray:
        return self.measure.points

    def to_array(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width, 3)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.to_array() * 255.0), 0, 255).astype(np.uint8)


def load_image(path) -> PixelCloud:
    """Read a PNG or PPM/PNM image."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return PixelCloud.from_array(arr)


def save_image(pc: PixelCloud, path):
    from PIL import Image

    Image.fromarray(pc.to_uint8(), mode="RGB").save(path)


def _with_pixels(src: PixelCloud, pixels) -> PixelCloud:
    return PixelCloud(src.width, src.height, DiscreteMeasure(np.clip(pixels, 0.0, 1.0)))


def color_transfer(source: PixelCloud, target: PixelCloud, method: str = "minps_perm", L: int = 50,
                   seed=0, sw_steps: int = 10, sw_lr: float = 1.0, sw_batch: int = 3) -> PixelCloud:
    """Recolour ``source`` with the colour distribution of ``target``.

    Methods
    -------
    ``minps_perm``
        Each source pixel takes the colour of the target pixel it is matched
        to by the best of ``L`` sorted matchings (ties broken by stable
        sorting). Needs equal pixel counts; the output histogram equals the
        target histogram.
    ``es_barycentric``
        Barycentric projection of the Expected Sliced plan over ``L`` directions.
    ``sw_flow``
        ``sw_steps`` SGD steps on SW^2 with ``sw_batch`` orthonormal directions per step.
    """
    method = method.lower()
    mu, nu = source.measure, target.measure
    if method == "minps_perm":
        if mu.n != nu.n:
            raise ValueError(f"minps_perm needs equal pixel counts ({mu.n} vs {nu.n})")
        res = min_ps(mu, nu, L=L, seed=seed, exact_ties=False)
        out = np.empty_like(mu.points)
        out[res.plan.rows] = nu.points[res.plan.cols]
        return _with_pixels(source, out)
    if method == "es_barycentric":
        dirs = sample_sphere(3, L, seed)
        return _with_pixels(source, expected_barycentric(mu, nu, dirs))
    if method == "sw_flow":
        cfg = FlowConfig(functional="sw", optimizer="sgd", lr=sw_lr, iterations=sw_steps, L=sw_batch,
                         orthonormal=True, seed=seed, stop_tol=0.0)
        tr = run_flow(mu, nu, cfg)
        return _with_pixels(source, tr.final_positions)
    raise ValueError(f"unknown colour transfer method {method!r}; choose from {COLOR_METHODS}")


@dataclass(eq=False)
class RigidTransform:
    """``x -> R x + t`` with ``R`` a rotation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, float)
        t = np.asarray(self.translation, float).reshape(-1)
        d = R.shape[0]
        if R.shape != (d, d) or t.shape != (d,):
            raise ValueError("rotation must be d x d and translation of length d")
        if np.max(np.abs(R.T @ R - np.eye(d))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthogonal with determinant +1")
        self.rotation, self.translation = R, t

    @classmethod
    def identity(cls, d: int) -> "RigidTransform":
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def random(cls, d: int, seed=None, max_translation: float = 1.0) -> "RigidTransform":
        """Haar-uniform rotation and a translation uniform in ``[-max_translation, max_translation]^d``."""
        rng = np.random.default_rng(seed)
        Q, R = np.linalg.qr(rng.standard_normal((d, d)))
        Q = Q * np.sign(np.diag(R))
        if np.linalg.det(Q) < 0:
            Q[:, 0] *= -1
        return cls(Q, rng.uniform(-max_translation, max_translation, d))

    def apply(self, X) -> np.ndarray:
        return np.asarray(X, float) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self o other``."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


def procrustes(XS, XT, weights=None) -> RigidTransform:
    """Weighted Kabsch: rotation ``R`` and translation ``t`` minimising ``sum w ||R xs + t - xt||^2``."""
    XS = np.asarray(XS, float)
    XT = np.asarray(XT, float)
    n, d = XS.shape
    if XT.shape != XS.shape:
        raise ValueError("matched point sets must have the same shape")
    if n < d:
        raise DegenerateAlignmentError(f"need at least {d} matched points, got {n}")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float) / np.sum(weights)
    ms = w @ XS
    mt = w @ XT
    S = XS - ms
    T = XT - mt
    H = (S * w[:, None]).T @ T
    U, sv, Vt = np.linalg.svd(H)
    scale = max(sv[0], 1e-300)
    if d > 1 and np.sum(sv > 1e-10 * scale) < d - 1 or sv[0] <= 1e-14:
        raise DegenerateAlignmentError("rank-deficient cross-covariance (collinear or collapsed points)")
    D = np.eye(d)
    D[-1, -1] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return RigidTransform(R, mt - R @ ms)


def _nn_loss(moved, tree):
    dist, _ = tree.query(moved)
    return float(np.mean(dist ** 2))


def _correspondences(method, moved, target, tree, rng, params):
    Y = target.points
    if method == "nn":
        _, idx = tree.query(moved)
        return Y[idx], None
    if method == "w2":
        n = moved.shape[0]
        if n != target.n:
            raise ValueError("W2 correspondences need clouds of equal size")
        if n > W2_ICP_MAX_N:
            if not params.get("subsample", True):
                raise SizeGuardError(f"W2 correspondences limited to n <= {W2_ICP_MAX_N}")
            # fixed-seed subsample; unmatched source points get zero weight
            sub_s = np.sort(np.random.default_rng(params.get("subsample_seed", 0)).choice(n, W2_ICP_MAX_N, False))
            sub_t = np.sort(np.random.default_rng(params.get("subsample_seed", 0) + 1).choice(n, W2_ICP_MAX_N, False))
            r, c = linear_sum_assignment(sq_cost_matrix(moved[sub_s], Y[sub_t]))
            matched = moved.copy()
            matched[sub_s[r]] = Y[sub_t[c]]
            w = np.zeros(n)
            w[sub_s[r]] = 1.0
            return matched, w
        r, c = linear_sum_assignment(sq_cost_matrix(moved, Y))
        matched = np.empty_like(moved)
        matched[r] = Y[c]
        return matched, None
    src = DiscreteMeasure(moved)
    L = params.get("L", 50)
    if method == "minps":
        res = min_ps(src, target, L=L, seed=rng, refine=params.get("refine", False),
                     refine_iters=params.get("refine_iters", 100))
        matched = np.zeros_like(moved)
        np.add.at(matched, res.plan.rows, res.plan.mass[:, None] * Y[res.plan.cols])
        return matched / res.plan.row_sums()[:, None], None
    if method == "es_barycentric":
        return expected_barycentric(src, target, sample_sphere(moved.shape[1], L, rng)), None
    if method == "sw_flow":
        d = moved.shape[1]
        cfg = FlowConfig(functional="sw", optimizer="sgd", lr=params.get("flow_lr", float(d)),
                         iterations=params.get("flow_steps", 200), L=params.get("flow_L", d),
                         orthonormal=True, seed=int(rng.integers(2**31)))
        tr = run_flow(src, target, cfg)
        _, idx = tree.query(tr.final_positions)
        return Y[idx], None
    raise ValueError(f"unknown correspondence method {method!r}; choose from {ICP_METHODS}")


@dataclass
class ICPResult:
    transform: RigidTransform
    losses: list
    method: str
    iterations: int
    meta: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def report(self) -> dict:
        return {"method": self.method, "iters": self.iterations, "final_loss": self.final_loss,
                "losses": self.losses, "transform": self.transform.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.report())


def icp_register(source: DiscreteMeasure, target: DiscreteMeasure, correspondence: str = "nn",
                 iters: int = 50, params: dict | None = None, seed=0, tol: float = 1e-10) -> ICPResult:
    """Rigidly align ``source`` onto ``target`` by alternating correspondences and Procrustes.

    ``losses[k]`` is the mean squared distance from each registered source
    point to its nearest target point after ``k`` alignment steps
    (``losses[0]`` before any). Iteration stops after ``iters`` steps or when
    the loss changes by less than ``tol``.
    """
    params = dict(params or {})
    method = correspondence.lower()
    if method not in ICP_METHODS:
        raise ValueError(f"unknown correspondence method {method!r}; choose from {ICP_METHODS}")
    if source.dim != target.dim or source.dim < 2:
        raise ValueError("clouds must share a dimension d >= 2")
    if method == "minps" and not source.is_uniform:
        raise ValueError("minps correspondences need uniform source weights")
    rng = np.random.default_rng(seed)
    tree = cKDTree(target.points)
    T = RigidTransform.identity(source.dim)
    losses = [_nn_loss(source.points, tree)]
    k = 0
    for k in range(1, iters + 1):
        moved = T.apply(source.points)
        matched, w = _correspondences(method, moved, target, tree, rng, params)
        weights = source.weights if w is None else source.weights * w
        try:
            T = procrustes(source.points, matched, weights)
        except DegenerateAlignmentError as exc:
            raise DegenerateAlignmentError(f"iteration {k}: {exc}") from exc
        losses.append(_nn_loss(T.apply(source.points), tree))
        if abs(losses[-2] - losses[-1]) < tol:
            break
    return ICPResult(T, losses, method, k)


def make_shape(n: int = 500, seed=0) -> np.ndarray:
    """Asymmetric 3D test shape: points on a body, head, two ears and a tail."""
    rng = np.random.default_rng(seed)
    parts = [  # centre, radii, share
        ((0.0, 0.0, 0.0), (1.0, 0.75, 0.7), 0.45),
        ((0.95, 0.1, 0.75), (0.5, 0.45, 0.45), 0.25),
        ((1.05, 0.35, 1.55), (0.12, 0.1, 0.5), 0.09),
        ((0.85, -0.1, 1.5), (0.12, 0.1, 0.45), 0.09),
        ((-1.0, 0.0, -0.1), (0.25, 0.25, 0.25), 0.12),
    ]
    counts = [int(round(s * n)) for _, _, s in parts]
    counts[0] += n - sum(counts)
    pts = []
    for (c, r, _), m in zip(parts, counts):
        v = rng.standard_normal((m, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts.append(v * np.array(r) + np.array(c))
    P = np.vstack(pts)
    return P - P.mean(0)
