"""Scalar reactor model, Radau collocation and the transition value-function oracles.

The reactor is ``dx/dt = a (u - x) - k x`` with ``a = Q/V`` and ``u`` the inlet
concentration.  A transition of length ``theta`` is discretised on ``n_fe``
finite elements with ``n_cp`` Radau IIA points each; its cost is
``alpha_u * integral (u - u_target)^2 dt`` evaluated with the Radau quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre

from ..lp_milp import OPTIMAL, LinearModel, solve_lp


class InfeasibleTransition(ValueError):
    pass


class Unreachable(ValueError):
    pass


@dataclass(frozen=True)
class PlantParams:
    dilution: float = 1.0  # Q/V, 1/h
    rate_const: float = 1.0  # k, 1/h
    x_ss: tuple[float, ...] = (0.2, 0.5, 0.8)
    u_lb: float = 0.0
    u_ub: float = 2.0
    n_fe: int = 10
    n_cp: int = 3
    alpha_u: float = 1.0

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.x_ss, self.x_ss[1:])):
            raise ValueError("steady states must be strictly increasing")
        for u in self.u_ss:
            if not (self.u_lb - 1e-12 <= u <= self.u_ub + 1e-12):
                raise ValueError(f"steady-state input {u} outside [{self.u_lb}, {self.u_ub}]")

    @property
    def decay(self) -> float:
        return self.dilution + self.rate_const

    @property
    def u_ss(self) -> tuple[float, ...]:
        return tuple(x * self.decay / self.dilution for x in self.x_ss)

    def steady_state(self, u: float) -> float:
        return self.dilution * u / self.decay

    @property
    def reachable(self) -> tuple[float, float]:
        return self.steady_state(self.u_lb), self.steady_state(self.u_ub)

    def rhs(self, x, u):
        return self.dilution * (u - x) - self.rate_const * x


def radau_nodes(n_cp: int) -> np.ndarray:
    """Right Radau points on (0, 1]: roots of P_s(2t-1) - P_{s-1}(2t-1)."""
    coef = np.zeros(n_cp + 1)
    coef[n_cp] = 1.0
    coef[n_cp - 1] = -1.0
    roots = np.sort(np.real(legendre.legroots(coef)))
    nodes = (roots + 1.0) / 2.0
    nodes[-1] = 1.0
    return nodes


def _lagrange_derivatives(points: np.ndarray, at: np.ndarray) -> np.ndarray:
    """D[i, j] = derivative of the j-th Lagrange basis polynomial on ``points`` at ``at[i]``."""
    n = len(points)
    out = np.zeros((len(at), n))
    for j in range(n):
        others = np.delete(points, j)
        denom = np.prod(points[j] - others)
        poly = np.poly(others) / denom
        out[:, j] = np.polyval(np.polyder(poly), at)
    return out


@dataclass(frozen=True)
class CollocationScheme:
    n_fe: int = 10
    n_cp: int = 3

    @cached_property
    def nodes(self) -> np.ndarray:
        return radau_nodes(self.n_cp)

    @cached_property
    def points(self) -> np.ndarray:
        """Element-local interpolation points: the element start then the collocation nodes."""
        return np.concatenate([[0.0], self.nodes])

    @cached_property
    def diff(self) -> np.ndarray:
        """(n_cp, n_cp + 1) derivative of the state polynomial at each collocation node."""
        return _lagrange_derivatives(self.points, self.nodes)

    @cached_property
    def weights(self) -> np.ndarray:
        """Radau quadrature weights on the collocation nodes (last row of the Butcher matrix)."""
        w = np.zeros(self.n_cp)
        for j in range(self.n_cp):
            others = np.delete(self.nodes, j)
            poly = np.poly(others) / np.prod(self.nodes[j] - others)
            integ = np.polyint(poly)
            w[j] = np.polyval(integ, 1.0) - np.polyval(integ, 0.0)
        return w

    @cached_property
    def butcher(self) -> np.ndarray:
        """Integral-form collocation matrix: x_c = x_0 + h * sum_m A[c, m] f_m."""
        a = np.zeros((self.n_cp, self.n_cp))
        for j in range(self.n_cp):
            others = np.delete(self.nodes, j)
            poly = np.poly(others) / np.prod(self.nodes[j] - others)
            integ = np.polyint(poly)
            a[:, j] = np.polyval(integ, self.nodes) - np.polyval(integ, 0.0)
        return a

    def times(self, theta: float) -> np.ndarray:
        """Absolute times of all state nodes (start, then every collocation point)."""
        h = theta / self.n_fe
        t = [0.0]
        for f in range(self.n_fe):
            t.extend((f + self.nodes) * h)
        return np.array(t)


@dataclass
class TransitionSolution:
    theta: float
    value: float
    multiplier: float  # -d value / d theta
    x: np.ndarray  # start + every collocation node
    u: np.ndarray  # every collocation node
    times: np.ndarray = field(default=None)


class _TransitionQP:
    """Equality-constrained QP over (x, u) with bounds on u, for one (x_from, x_to, u_target)."""

    def __init__(self, plant: PlantParams, scheme: CollocationScheme, x_from: float, x_to: float, u_target: float):
        self.plant, self.scheme = plant, scheme
        self.x_from, self.x_to, self.u_target = x_from, x_to, u_target
        nf, nc = scheme.n_fe, scheme.n_cp
        self.nx = 1 + nf * nc
        self.nu = nf * nc
        self.n = self.nx + self.nu
        rows = nf * nc + 2
        base = np.zeros((rows, self.n))  # theta-independent part of the constraint matrix
        dyn = np.zeros((rows, self.n))  # coefficient multiplying h = theta / n_fe
        a, kk = plant.dilution, plant.rate_const
        d = scheme.diff
        for f in range(nf):
            start = 0 if f == 0 else 1 + (f - 1) * nc + (nc - 1)
            for c in range(nc):
                r = f * nc + c
                base[r, start] += d[c, 0]
                for m in range(nc):
                    base[r, 1 + f * nc + m] += d[c, m + 1]
                xi = 1 + f * nc + c
                ui = self.nx + f * nc + c
                # D x - h * (a u - (a + k) x) = 0
                dyn[r, ui] = -a
                dyn[r, xi] = a + kk
        base[nf * nc, 0] = 1.0
        base[nf * nc + 1, self.nx - 1] = 1.0
        self.base, self.dyn = base, dyn
        self.rhs = np.zeros(rows)
        self.rhs[nf * nc] = x_from
        self.rhs[nf * nc + 1] = x_to
        self.wq = np.tile(scheme.weights, nf)  # quadrature weight per u node

    def matrices(self, theta: float):
        h = theta / self.scheme.n_fe
        A = self.base + h * self.dyn
        hdiag = np.zeros(self.n)
        hdiag[self.nx :] = 2.0 * self.plant.alpha_u * h * self.wq
        g = np.zeros(self.n)
        g[self.nx :] = -2.0 * self.plant.alpha_u * h * self.wq * self.u_target
        const = self.plant.alpha_u * h * float(np.sum(self.wq)) * self.u_target**2
        return A, hdiag, g, const

    def feasible_point(self, theta: float) -> np.ndarray | None:
        A, _, _, _ = self.matrices(theta)
        model = LinearModel("min")
        names = [f"z{i}" for i in range(self.n)]
        for i, name in enumerate(names):
            if i >= self.nx:
                model.add_var(name, self.plant.u_lb, self.plant.u_ub)
            else:
                model.add_var(name, -math.inf, math.inf)
        for r in range(A.shape[0]):
            nz = np.flatnonzero(A[r])
            model.add_row({names[i]: A[r, i] for i in nz}, "=", self.rhs[r])
        sol = solve_lp(model)
        if sol.status != OPTIMAL:
            return None
        return np.array([sol.values[nm] for nm in names])

    def terminal_range(self, theta: float) -> tuple[float, float]:
        """Interval of end states reachable at ``theta`` with inputs inside their bounds.

        Without the terminal row the collocation equations fix every state as an
        affine function of the inputs, so the end state is ``c + g @ u``.
        """
        A, _, _, _ = self.matrices(theta)
        nx = self.nx
        rows = A[:-1]
        ax, au = rows[:, :nx], rows[:, nx:]
        sol = np.linalg.solve(ax, np.column_stack([self.rhs[:-1], -au]))
        c, g = sol[-1, 0], sol[-1, 1:]
        lo, hi = self.plant.u_lb, self.plant.u_ub
        low = c + np.sum(np.minimum(g * lo, g * hi))
        high = c + np.sum(np.maximum(g * lo, g * hi))
        return float(low), float(high)

    def reachable_at(self, theta: float, tol: float = 1e-10) -> bool:
        low, high = self.terminal_range(theta)
        return low - tol <= self.x_to <= high + tol

    def _kkt(self, A, hdiag, grad, free):
        af = A[:, free]
        nfree = af.shape[1]
        m = A.shape[0]
        k = np.zeros((nfree + m, nfree + m))
        k[np.arange(nfree), np.arange(nfree)] = hdiag[free]
        k[:nfree, nfree:] = af.T
        k[nfree:, :nfree] = af
        rhs = np.concatenate([-grad[free], np.zeros(m)])
        try:
            sol = np.linalg.solve(k, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(k, rhs, rcond=None)[0]
        return sol[:nfree], sol[nfree:]

    def solve(self, theta: float) -> TransitionSolution:
        A, hdiag, g, const = self.matrices(theta)
        lo, hi = self.plant.u_lb, self.plant.u_ub
        n, nx = self.n, self.nx
        # unconstrained equality QP first: optimal if it respects the input bounds
        z = self._project(A, hdiag, g)
        if z is not None and np.all(z[nx:] >= lo - 1e-10) and np.all(z[nx:] <= hi + 1e-10):
            z[nx:] = np.clip(z[nx:], lo, hi)
            nu = self._multipliers(A, hdiag, g, z, np.ones(n, dtype=bool))
            return self._finish(theta, z, nu, hdiag, g, const)
        z = self.feasible_point(theta)
        if z is None:
            raise InfeasibleTransition(f"no feasible transition {self.x_from}->{self.x_to} in {theta} h")
        z[nx:] = np.clip(z[nx:], lo, hi)
        at = np.zeros(n, dtype=np.int8)  # 0 free, -1 at lower, +1 at upper
        for _ in range(20 * n):
            free = at == 0
            grad = hdiag * z + g
            p, nu = self._kkt(A, hdiag, grad, free)
            step = np.zeros(n)
            step[free] = p
            if np.max(np.abs(step)) <= 1e-12 * max(1.0, np.max(np.abs(z))):
                s = grad + A.T @ nu
                bad = ((at == -1) & (s < -1e-10)) | ((at == 1) & (s > 1e-10))
                if not bad.any():
                    return self._finish(theta, z, nu, hdiag, g, const)
                worst = np.flatnonzero(bad)[np.argmax(np.abs(s[bad]))]
                at[worst] = 0
                continue
            alpha, block = 1.0, -1
            for i in np.flatnonzero(free[nx:]) + nx:
                if step[i] < -1e-15:
                    t = (z[i] - lo) / -step[i]
                elif step[i] > 1e-15:
                    t = (hi - z[i]) / step[i]
                else:
                    continue
                if t < alpha:
                    alpha, block = t, i
            z = z + alpha * step
            if block >= 0:
                if step[block] < 0:
                    z[block], at[block] = lo, -1
                else:
                    z[block], at[block] = hi, 1
        raise RuntimeError("active-set QP did not converge")

    def _project(self, A, hdiag, g):
        # solve min 1/2 z'Hz + g'z s.t. A z = rhs, no bounds
        n, m = self.n, A.shape[0]
        k = np.zeros((n + m, n + m))
        k[np.arange(n), np.arange(n)] = hdiag
        k[:n, n:] = A.T
        k[n:, :n] = A
        rhs = np.concatenate([-g, self.rhs])
        try:
            sol = np.linalg.solve(k, rhs)
        except np.linalg.LinAlgError:
            return None
        return sol[:n]

    def _multipliers(self, A, hdiag, g, z, free):
        grad = hdiag * z + g
        return np.linalg.lstsq(A[:, free].T, -grad[free], rcond=None)[0]

    def _finish(self, theta, z, nu, hdiag, g, const):
        value = float(0.5 * z @ (hdiag * z) + g @ z + const)
        value = max(value, 0.0)
        # envelope theorem: d value / d theta = d f / d theta + nu' (dA/dtheta) z
        dvalue = value / theta + float(nu @ (self.dyn @ z)) / self.scheme.n_fe
        x, u = z[: self.nx], z[self.nx :]
        return TransitionSolution(theta, value, -dvalue, x, u, self.scheme.times(theta))


def solve_transition(
    x_from: float, x_to: float, u_target: float, theta: float, plant: PlantParams, scheme: CollocationScheme | None = None
) -> TransitionSolution:
    scheme = scheme or CollocationScheme(plant.n_fe, plant.n_cp)
    if theta <= 0:
        raise InfeasibleTransition("transition time must be positive")
    return _TransitionQP(plant, scheme, x_from, x_to, u_target).solve(theta)


def transition_value(pair: tuple[int, int], theta: float, plant: PlantParams, scheme: CollocationScheme | None = None):
    """(phi, lambda) for the product-to-product transition ``pair`` in ``theta`` hours."""
    i, j = pair
    if i == j:
        return 0.0, 0.0
    sol = solve_transition(plant.x_ss[i], plant.x_ss[j], plant.u_ss[j], theta, plant, scheme)
    return sol.value, sol.multiplier


def intermediate_value(product: int, x_star: float, theta: float, plant: PlantParams, scheme: CollocationScheme | None = None):
    """(phi_hat, lambda_hat) for reaching product ``product`` from reactor state ``x_star``."""
    if abs(x_star - plant.x_ss[product]) <= 1e-12:
        return 0.0, 0.0
    sol = solve_transition(x_star, plant.x_ss[product], plant.u_ss[product], theta, plant, scheme)
    return sol.value, sol.multiplier


def bang_bang_time(x_from: float, x_to: float, plant: PlantParams) -> float:
    """Analytic minimum time of the scalar plant under saturated input."""
    lo, hi = plant.reachable
    if not (lo < x_to < hi) and x_to != x_from:
        raise Unreachable(f"target {x_to} outside the open reachable interval ({lo}, {hi})")
    if x_to == x_from:
        return 0.0
    x_inf = hi if x_to > x_from else lo
    return math.log((x_inf - x_from) / (x_inf - x_to)) / plant.decay


def min_transition_time(
    x_from: float, x_to: float, plant: PlantParams, scheme: CollocationScheme | None = None, tol: float = 1e-6
) -> float:
    """Smallest time for which the collocation system with input bounds is feasible (bisection)."""
    analytic = bang_bang_time(x_from, x_to, plant)
    if analytic == 0.0:
        return 0.0
    scheme = scheme or CollocationScheme(plant.n_fe, plant.n_cp)
    qp = _TransitionQP(plant, scheme, x_from, x_to, plant.u_ss[0])

    feasible = qp.reachable_at
    lo, hi = analytic * 0.99, analytic * 1.01
    while feasible(lo):
        lo *= 0.9
    while not feasible(hi):
        hi *= 1.1
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


class TransitionOracle:
    """SubproblemOracle for one transition with domain [lb, ub] hours."""

    def __init__(self, x_from, x_to, u_target, lb, ub, plant, scheme=None):
        self.x_from, self.x_to, self.u_target = x_from, x_to, u_target
        self.lb, self.ub = float(lb), float(ub)
        self.plant = plant
        self.scheme = scheme or CollocationScheme(plant.n_fe, plant.n_cp)
        self._qp = _TransitionQP(plant, self.scheme, x_from, x_to, u_target)

    def evaluate(self, theta: float) -> tuple[float, float]:
        if theta < self.lb - 1e-9 or theta > self.ub + 1e-9:
            raise ValueError(f"theta {theta} outside oracle domain [{self.lb}, {self.ub}]")
        sol = self._qp.solve(theta)
        return sol.value, sol.multiplier

    def solution(self, theta: float) -> TransitionSolution:
        return self._qp.solve(theta)
