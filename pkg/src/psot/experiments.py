"""Seeded experiment drivers shared by the acceptance suite and ``scripts/``."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .apps import RigidTransform, icp_register, make_shape
from .exact import w2_exact
from .flows import FlowConfig, run_flow
from .measures import DiscreteMeasure


@dataclass
class FlowExperiment:
    """Uniform square source flowed toward a shifted anisotropic Gaussian."""

    n: int = 50
    L: int = 50
    lr: float = 0.02
    iterations: int = 500
    target_scale: tuple = (1.0, 0.5)
    target_shift: tuple = (1.5, 0.5)

    def clouds(self, seed: int):
        rng = np.random.default_rng(seed)
        src = DiscreteMeasure(rng.uniform(-1.0, 1.0, (self.n, 2)))
        tgt = DiscreteMeasure(rng.standard_normal((self.n, 2)) * self.target_scale + self.target_shift)
        return src, tgt

    def run(self, functional: str, seed: int) -> dict:
        src, tgt = self.clouds(seed)
        cfg = FlowConfig(functional=functional, L=self.L, lr=self.lr, iterations=self.iterations,
                         seed=seed, eval_every=self.iterations)
        t0 = time.perf_counter()
        tr = run_flow(src, tgt, cfg)
        init = w2_exact(src, tgt)[0]
        return {"functional": functional, "seed": seed, "initial_w2sq": init, "final_w2sq": tr.final_w2sq,
                "ratio": tr.final_w2sq / init, "iterations": tr.iters[-1], "seconds": time.perf_counter() - t0}


@dataclass
class ICPExperiment:
    """Synthetic shape registered against random rigid copies of itself (rows shuffled)."""

    n: int = 500
    shape_seed: int = 0
    iters: int = 50
    max_translation: float = 1.0

    def pair(self, seed: int):
        P = make_shape(self.n, self.shape_seed)
        T = RigidTransform.random(3, seed=seed, max_translation=self.max_translation)
        perm = np.random.default_rng(100 + seed).permutation(self.n)
        return DiscreteMeasure(P), DiscreteMeasure(T.apply(P)[perm]), T

    def run(self, method: str, seed: int, params: dict | None = None) -> dict:
        src, tgt, truth = self.pair(seed)
        t0 = time.perf_counter()
        res = icp_register(src, tgt, method, iters=self.iters, params=params, seed=seed)
        err = float(np.linalg.norm(res.transform.rotation - truth.rotation))
        return {"method": method, "seed": seed, "final_loss": res.final_loss, "iterations": res.iterations,
                "rotation_error": err, "seconds": time.perf_counter() - t0}


def describe(exp) -> dict:
    return asdict(exp)
