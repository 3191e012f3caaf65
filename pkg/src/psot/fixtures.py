"""Small named instances with known answers, and a runner that checks them."""

from __future__ import annotations

import fnmatch
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exact import w_nu_disintegration, w_nu_lp
from .expected import ls_theta
from .measures import DiscreteMeasure
from .pivot import min_ps, ps_theta, ps_theta_monge_oracle

E1 = (1.0, 0.0)


def tri():
    """Three two-point clouds on which PS_theta breaks the triangle inequality at theta = (1, 0)."""
    mu1 = DiscreteMeasure([[-1.0, 0.0], [1.0, 5.0]])
    mu2 = DiscreteMeasure([[-1.0, 5.0], [1.0, 0.0]])
    mu3 = DiscreteMeasure([[0.0, 0.0], [0.0, 5.0]])
    return mu1, mu2, mu3


def wnu_instance(n: int | None = None):
    """Pivot ``nu`` and endpoints ``(mu1, mu2)``; ``n=None`` is the limit instance."""
    nu = DiscreteMeasure([[0.0, 1.0], [0.0, -1.0]])
    x2 = 0.0 if n is None else 2.0 ** -n
    mu1 = DiscreteMeasure([[-1.0, x2], [1.0, 0.0]])
    mu2 = DiscreteMeasure([[-2.0, -1.0], [2.0, 1.0]])
    return nu, mu1, mu2


def wnu_closed_form(n: int) -> float:
    return 0.5 * (9.0 + (1.0 - 2.0 ** -n) ** 2) + 0.5 * (9.0 + 1.0)


def vseg():
    """Two atoms stacked vertically: every horizontal direction ties them."""
    return DiscreteMeasure([[0.0, 0.0], [0.0, 1.0]])


def swg_ambiguity():
    mu = DiscreteMeasure([[0.0, 1.0], [0.0, 0.0]])
    return mu, mu


def discontinuity(n: int | None = None):
    """``(mu_n, nu)``; ``n=None`` gives the weak limit ``mu``."""
    shift = 0.0 if n is None else 2.0 ** -n
    mu = DiscreteMeasure([[-1.0 - shift, 5.0], [-1.0, 0.0]])
    nu = DiscreteMeasure([[1.0, 0.0], [2.0, 5.0]])
    return mu, nu


def _rotate(P, angle):
    c, s = math.cos(angle), math.sin(angle)
    return P @ np.array([[c, -s], [s, c]]).T


def five_rotations(step: float = math.pi / 5):
    """Each TRI cloud replicated under rotations ``k * step``, ``k = 0..4``, about the origin."""
    return tuple(DiscreteMeasure(np.vstack([_rotate(m.points, k * step) for k in range(5)])) for m in tri())


def minps_triangle_defect(L: int = 10_000, seed=0, step: float = math.pi / 5):
    """``minPS(a, c) + minPS(c, b) - minPS(a, b)`` on the rotated TRI clouds."""
    a, b, c = five_rotations(step)
    ac = min_ps(a, c, L=L, seed=seed).cost
    cb = min_ps(c, b, L=L, seed=seed).cost
    ab = min_ps(a, b, L=L, seed=seed).cost
    return ac + cb - ab, (ac, cb, ab)


def disk(m: int, theta=E1) -> DiscreteMeasure:
    """Deterministic ``m``-point stand-in for the uniform unit disk, sliced orthogonally to ``theta``.

    About ``sqrt(m)`` slices of equal width along ``theta``; slice ``k`` holds a
    share of the points proportional to the marginal density ``2 sqrt(1-u^2)/pi``
    and spreads them at chord midpoints. All points of a slice tie on
    projection, so the lifted self-plan mixes within slices as the continuous
    disk does.
    """
    theta = np.asarray(theta, float)
    theta = theta / np.linalg.norm(theta)
    perp = np.array([-theta[1], theta[0]])
    k = max(1, int(round(math.sqrt(m))))
    u = -1.0 + (np.arange(k) + 0.5) * 2.0 / k
    dens = np.sqrt(1.0 - u ** 2)
    raw = m * dens / dens.sum()
    counts = np.floor(raw).astype(int)
    counts[np.argsort(raw - counts)[::-1][: m - counts.sum()]] += 1
    pts = []
    for uk, h, c in zip(u, dens, counts):
        if c:
            v = -h + (np.arange(c) + 0.5) * 2.0 * h / c
            pts.append(uk * theta + v[:, None] * perp)
    return DiscreteMeasure(np.vstack(pts))


def disk_ls_oracle() -> float:
    """Quadrature of the within-slice spread ``E|v - v'|^2 = 2(1-u^2)/3`` against the disk marginal."""
    from scipy.integrate import quad

    val, _ = quad(lambda u: 2.0 * math.sqrt(1.0 - u * u) / math.pi * 2.0 * (1.0 - u * u) / 3.0, -1.0, 1.0)
    return val


@dataclass
class Fixture:
    name: str
    description: str
    expected: str
    run: Callable[[], tuple]  # -> (computed, passed)


def _tri():
    mu1, mu2, mu3 = tri()
    v = [ps_theta(p, q, E1, solver=s).cost_sq for p, q in ((mu1, mu2), (mu1, mu3), (mu3, mu2)) for s in ("auto", "lp")]
    costs = [math.sqrt(x) for x in v[::2]]
    ok = np.allclose(v[::2], v[1::2], atol=1e-10) and np.allclose(costs, [5.0, 1.0, 1.0], atol=1e-10)
    return costs, bool(ok and costs[0] > costs[1] + costs[2])


def _wnu_limit():
    nu, mu1, mu2 = wnu_instance()
    lp = w_nu_lp(nu, mu1, mu2)[0]
    dis = w_nu_disintegration(nu, mu1, mu2, on_nonunique="vertices")
    return [lp, dis], abs(lp - 2.0) <= 1e-8 and abs(dis - 2.0) <= 1e-8


def _wnu_n2():
    nu, mu1, mu2 = wnu_instance(2)
    lp = w_nu_lp(nu, mu1, mu2)[0]
    return lp, abs(lp - wnu_closed_form(2)) <= 1e-8


def _lsself():
    v = ls_theta(vseg(), vseg(), E1, squared=True)
    return v, abs(v - 0.5) <= 1e-12


def _swggamb():
    mu1, mu2 = swg_ambiguity()
    v = ps_theta(mu1, mu2, E1).cost_sq
    return v, abs(v) <= 1e-12


def _discontinuity():
    mu, nu = discontinuity()
    lim = ps_theta(mu, nu, E1).cost_sq
    far = ps_theta(*discontinuity(20), E1).cost_sq
    oracle = ps_theta_monge_oracle(*discontinuity(20), E1)[0]
    ok = abs(lim - 6.5) <= 1e-10 and abs(far - oracle) <= 1e-9 and far > lim + 1.0
    return [far, lim], bool(ok)


def _triangle_defect():
    defect, _ = minps_triangle_defect()
    return defect, -0.9 <= defect <= -0.3


def _disk():
    oracle = disk_ls_oracle()
    v = ls_theta(disk(10_000), disk(10_000), E1, squared=True)
    return [v, oracle], abs(v - oracle) <= 0.02 * oracle


FIXTURES = [
    Fixture("tri", "PS_theta on the three-cloud triangle counterexample", "5, 1, 1 (5 > 1 + 1)", _tri),
    Fixture("wnu_limit", "nu-based W2 squared, limit instance (LP and disintegration)", "2", _wnu_limit),
    Fixture("wnu_n2", "nu-based W2 squared at n = 2", "9.78125", _wnu_n2),
    Fixture("lsself", "lifted cost LS^2 of a vertical segment with itself", "0.5", _lsself),
    Fixture("swggamb", "tie-aware PS_theta on a fully tied pair", "0", _swggamb),
    Fixture("discontinuity", "PS^2(mu_n, nu) at n = 20 stays far above PS^2(mu, nu)", "> 6.5 + 1, limit 6.5", _discontinuity),
    Fixture("minps_triangle", "minPS triangle defect, five rotations, L = 1e4", "in [-0.9, -0.3]", _triangle_defect),
    Fixture("disk", "LS^2 on a 1e4-point disk vs quadrature", "within 2% of 0.5", _disk),
]


def run_fixtures(name_filter: str | None = None) -> list[dict]:
    """Run every fixture whose name matches the glob ``name_filter`` (all if ``None``)."""
    rows = []
    for fx in FIXTURES:
        if name_filter and not fnmatch.fnmatchcase(fx.name, name_filter):
            continue
        t0 = time.perf_counter()
        computed, ok = fx.run()
        rows.append({"name": fx.name, "description": fx.description, "expected": fx.expected,
                     "computed": np.asarray(computed, float).tolist(), "pass": bool(ok),
                     "seconds": time.perf_counter() - t0})
    return rows
