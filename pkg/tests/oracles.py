"""Independent reference solutions used by the tests.

Nothing here calls into gbdinit's solvers: MILPs are checked by enumerating
binaries and solving each continuous LP with scipy's HiGHS, and synthetic
Benders problems by enumerating binaries and minimizing each separable
continuous part on a fine grid refined with a bounded scalar search.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from gbdinit.gbd import Link, MasterProblem
from gbdinit.lp_milp import LinearModel


# -- random MILPs ---------------------------------------------------------


class RandomMilp:
    """Bounded mixed-binary program with a known feasible point."""

    def __init__(self, seed: int, max_bin: int = 12, max_cont: int = 10):
        rng = np.random.default_rng(seed)
        self.nb = int(rng.integers(1, max_bin + 1))
        self.nc = int(rng.integers(1, max_cont + 1))
        n = self.nb + self.nc
        m = int(rng.integers(2, 9))
        self.c = np.round(rng.normal(0.0, 5.0, n), 3)
        self.upper = np.concatenate([np.ones(self.nb), np.round(rng.uniform(1.0, 10.0, self.nc), 3)])
        self.a = np.round(rng.normal(0.0, 3.0, (m, n)) * (rng.random((m, n)) < 0.7), 3)
        # the point and the coefficients sit on a 1e-3 grid, so a.point is exact at 6 decimals
        # and rounding b never cuts the point off (equality rows included)
        cont = np.round(rng.uniform(0.0, 1.0, self.nc) * self.upper[self.nb :], 3)
        point = np.concatenate([rng.integers(0, 2, self.nb), cont])
        lhs = self.a @ point
        self.rel = [("<=", ">=", "=")[k] for k in rng.choice(3, m, p=[0.6, 0.3, 0.1])]
        self.b = np.array(
            [
                v if r == "=" else (v + round(rng.uniform(0.0, 4.0), 3) if r == "<=" else v - round(rng.uniform(0.0, 4.0), 3))
                for v, r in zip(lhs, self.rel)
            ]
        )
        self.b = np.round(self.b, 6)

    def model(self) -> LinearModel:
        m = LinearModel("min")
        names = [m.add_var(f"y{k}", binary=True) for k in range(self.nb)]
        names += [m.add_var(f"x{k}", 0.0, float(self.upper[self.nb + k])) for k in range(self.nc)]
        m.set_objective({v: float(c) for v, c in zip(names, self.c) if c != 0.0})
        for row, rel, rhs in zip(self.a, self.rel, self.b):
            m.add_row({v: float(a) for v, a in zip(names, row) if a != 0.0}, rel, float(rhs))
        return m

    def enumerate(self) -> float:
        """Minimum over every binary assignment of the LP in the continuous variables."""
        best = math.inf
        ac, ay = self.a[:, self.nb :], self.a[:, : self.nb]
        eq = [k for k, r in enumerate(self.rel) if r == "="]
        le = [k for k, r in enumerate(self.rel) if r == "<="]
        ge = [k for k, r in enumerate(self.rel) if r == ">="]
        bounds = [(0.0, float(u)) for u in self.upper[self.nb :]]
        for bits in itertools.product((0.0, 1.0), repeat=self.nb):
            y = np.array(bits)
            rhs = self.b - ay @ y
            a_ub = np.vstack([ac[le], -ac[ge]])
            b_ub = np.concatenate([rhs[le], -rhs[ge]])
            res = linprog(
                self.c[self.nb :],
                A_ub=a_ub if len(b_ub) else None,
                b_ub=b_ub if len(b_ub) else None,
                A_eq=ac[eq] if eq else None,
                b_eq=rhs[eq] if eq else None,
                bounds=bounds,
                method="highs",
            )
            if res.status == 0:
                best = min(best, float(self.c[: self.nb] @ y + res.fun))
        return best


# -- synthetic Benders problems ---------------------------------------------


class AnalyticOracle:
    """Convex value function on [lb, ub]; returns (phi, -dphi/dtheta)."""

    def __init__(self, kind: str, a: float, m: float, b: float, lb: float, ub: float):
        self.kind, self.a, self.m, self.b = kind, a, m, b
        self.lb, self.ub = lb, ub
        self.calls = 0

    def phi(self, t: float) -> float:
        if self.kind == "quad":
            return self.a * (t - self.m) ** 2 + self.b
        if self.kind == "recip":
            return self.a / t + self.b
        return self.a * math.exp(-self.m * t) + self.b

    def dphi(self, t: float) -> float:
        if self.kind == "quad":
            return 2.0 * self.a * (t - self.m)
        if self.kind == "recip":
            return -self.a / t**2
        return -self.a * self.m * math.exp(-self.m * t)

    def evaluate(self, t: float) -> tuple[float, float]:
        self.calls += 1
        return self.phi(t), -self.dphi(t)

    def lower_bound(self) -> float:
        return self.b - 1.0  # every kind is >= b on its domain


class SyntheticGbd:
    """min c.y + d.theta + sum phi_k(theta_k) + const
    s.t. w.y <= cap, theta_k >= lo_k + A_k.y, theta_k in [lo_k, hi_k], y binary."""

    def __init__(self, seed: int, max_bin: int = 10):
        rng = np.random.default_rng(seed)
        self.nb = int(rng.integers(2, max_bin + 1))
        self.nt = int(rng.integers(1, 4))
        self.c = rng.uniform(-4.0, 2.0, self.nb)
        self.w = rng.uniform(0.5, 2.0, self.nb)
        self.cap = float(rng.uniform(0.3, 0.7) * self.w.sum())
        self.A = rng.uniform(0.2, 1.5, (self.nt, self.nb)) * (rng.random((self.nt, self.nb)) < 0.5)
        self.lo = rng.uniform(0.5, 1.5, self.nt)
        self.hi = self.lo + self.A.sum(axis=1) + rng.uniform(2.0, 4.0, self.nt)
        self.d = rng.uniform(0.0, 1.0, self.nt)
        self.const = 100.0
        self.oracles = {}
        for k in range(self.nt):
            kind = ("quad", "recip", "exp")[int(rng.integers(3))]
            if kind == "quad":
                a, m = rng.uniform(0.5, 3.0), rng.uniform(self.lo[k], self.hi[k])
            elif kind == "recip":
                a, m = rng.uniform(2.0, 10.0), 0.0
            else:
                a, m = rng.uniform(5.0, 20.0), rng.uniform(0.3, 1.5)
            self.oracles[k] = AnalyticOracle(kind, float(a), float(m), float(rng.uniform(1.0, 5.0)), float(self.lo[k]), float(self.hi[k]))

    def builder(self, cuts: dict) -> MasterProblem:
        m = LinearModel("min")
        ys = [m.add_var(f"y{j}", binary=True) for j in range(self.nb)]
        obj = {y: float(c) for y, c in zip(ys, self.c)}
        links = []
        m.add_row({y: float(w) for y, w in zip(ys, self.w)}, "<=", self.cap, "knapsack")
        for k, oracle in self.oracles.items():
            th = m.add_var(f"theta{k}", float(self.lo[k]), float(self.hi[k]))
            eta = m.add_var(f"eta{k}", oracle.lower_bound(), math.inf)
            obj[th] = float(self.d[k])
            obj[eta] = 1.0
            row = {th: 1.0}
            for j, y in enumerate(ys):
                if self.A[k, j]:
                    row[y] = -float(self.A[k, j])
            m.add_row(row, ">=", float(self.lo[k]), f"shift{k}")
            for cut in cuts.get(k, []):
                # eta >= phi - lam (theta - anchor)
                m.add_row({eta: 1.0, th: cut.multiplier}, ">=", cut.value + cut.multiplier * cut.anchor)
            links.append(Link(k, th, eta))
        m.set_objective(obj, self.const)
        return MasterProblem(m, links)

    def _min_continuous(self, k: int, lo: float) -> float:
        oracle = self.oracles[k]
        g = lambda t: self.d[k] * t + oracle.phi(t)  # noqa: E731
        hi = float(self.hi[k])
        grid = np.linspace(lo, hi, 2001)
        vals = np.array([g(t) for t in grid])
        i = int(np.argmin(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = minimize_scalar(g, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
        return min(float(vals[i]), float(res.fun))

    def brute_force(self) -> float:
        best = math.inf
        for bits in itertools.product((0, 1), repeat=self.nb):
            y = np.array(bits, dtype=float)
            if self.w @ y > self.cap + 1e-12:
                continue
            lows = self.lo + self.A @ y
            if np.any(lows > self.hi + 1e-12):
                continue
            val = self.const + float(self.c @ y) + sum(self._min_continuous(k, float(lows[k])) for k in range(self.nt))
            best = min(best, val)
        return best
