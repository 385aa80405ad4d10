"""Dense bounded-variable simplex and branch-and-bound for small MILPs.

Every row ``a.x (<=|=|>=) b`` gets a slack ``s`` so that ``a.x + s = b``; the
relation is encoded in the slack bounds.  The solver keeps an explicit basis
inverse updated in product form and refactorised every ``REFACTOR_EVERY``
pivots.  Primal simplex (with a sum-of-infeasibilities phase 1) solves from
scratch; dual simplex re-optimises after bound changes during branching.

Rows added with ``lazy=True`` stay outside the working LP until a solution
violates them; they are then appended for the rest of the solve.  Pure LPs
check every optimum; branch-and-bound checks only integral relaxation points,
so lazy rows never cost pivots unless they would cut off a candidate incumbent.
Large families of rarely binding rows (Benders cuts) cost nothing while slack.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
INT_TOL = 1e-6
DEFAULT_GAP = 1e-6
REFACTOR_EVERY = 50
BLAND_AFTER = 60  # consecutive non-improving pivots before switching to Bland's rule
MAX_PIVOTS = 50_000

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
NODE_LIMIT = "NodeLimit"

_BASIC, _AT_LB, _AT_UB, _FREE = 0, 1, 2, 3


class MalformedModel(ValueError):
    pass


class CycleLimit(RuntimeError):
    pass


class _SingularBasis(ArithmeticError):
    pass


class LinearModel:
    """Sparse row-oriented (MI)LP: named variables, coefficient-map rows.

    >>> m = LinearModel("max")
    >>> m.add_var("x", 0.0, math.inf)
    'x'
    >>> m.set_objective({"x": 1.0})
    >>> _ = m.add_row({"x": 1.0}, "<=", 3.0)
    >>> solve_lp(m).objective
    3.0
    """

    def __init__(self, sense: str = "min"):
        if sense not in ("min", "max"):
            raise MalformedModel(f"unknown sense {sense!r}")
        self.sense = sense
        self.objective: dict[str, float] = {}
        self.objective_constant = 0.0
        self.rows: list[tuple[dict[str, float], str, float]] = []
        self.row_names: list[str] = []
        self.lazy: list[bool] = []
        self.lower: dict[str, float] = {}
        self.upper: dict[str, float] = {}
        self.integrality: set[str] = set()
        self._order: list[str] = []

    @property
    def variables(self) -> list[str]:
        return list(self._order)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, binary: bool = False) -> str:
        if name in self.lower:
            raise MalformedModel(f"duplicate variable {name!r}")
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
            self.integrality.add(name)
        self._order.append(name)
        self.lower[name] = float(lb)
        self.upper[name] = float(ub)
        return name

    def set_bounds(self, name: str, lb: float, ub: float) -> None:
        self.lower[name] = float(lb)
        self.upper[name] = float(ub)

    def set_objective(self, coeffs: dict[str, float], constant: float = 0.0) -> None:
        self.objective = dict(coeffs)
        self.objective_constant = float(constant)

    def add_row(
        self, coeffs: dict[str, float], rel: str, rhs: float, name: str | None = None, lazy: bool = False
    ) -> int:
        if rel not in ("<=", "=", ">="):
            raise MalformedModel(f"unknown relation {rel!r}")
        self.rows.append((dict(coeffs), rel, float(rhs)))
        self.lazy.append(bool(lazy))
        self.row_names.append(name or f"r{len(self.rows) - 1}")
        return len(self.rows) - 1

    def copy(self) -> "LinearModel":
        other = LinearModel(self.sense)
        other.objective = dict(self.objective)
        other.objective_constant = self.objective_constant
        other.rows = [(dict(c), r, b) for c, r, b in self.rows]
        other.row_names = list(self.row_names)
        other.lazy = list(self.lazy)
        other.lower = dict(self.lower)
        other.upper = dict(self.upper)
        other.integrality = set(self.integrality)
        other._order = list(self._order)
        return other

    def validate(self) -> None:
        known = self.lower
        for name in self._order:
            lb, ub = self.lower[name], self.upper[name]
            if math.isnan(lb) or math.isnan(ub) or lb > ub:
                raise MalformedModel(f"variable {name!r} has lb > ub ({lb} > {ub})")
            if name in self.integrality and (lb < 0.0 or ub > 1.0):
                raise MalformedModel(f"binary variable {name!r} has bounds outside [0, 1]")
        for var in self.objective:
            if var not in known:
                raise MalformedModel(f"objective references undeclared variable {var!r}")
        for idx, (coeffs, _, rhs) in enumerate(self.rows):
            for var in coeffs:
                if var not in known:
                    raise MalformedModel(f"row {self.row_names[idx]} references undeclared variable {var!r}")
            if not math.isfinite(rhs):
                raise MalformedModel(f"row {self.row_names[idx]} has non-finite rhs")

    def dump(self) -> str:
        """Plain-text row-oriented listing, one constraint per line."""

        def fmt(coeffs):
            terms = [f"{v:+.12g} {k}" for k, v in coeffs.items() if v != 0.0]
            return " ".join(terms) if terms else "0"

        lines = [f"{self.sense} {fmt(self.objective)} {self.objective_constant:+.12g}"]
        for name, (coeffs, rel, rhs), lazy in zip(self.row_names, self.rows, self.lazy):
            tag = " lazy" if lazy else ""
            lines.append(f"{name}: {fmt(coeffs)} {rel} {rhs:.12g}{tag}")
        for var in self._order:
            kind = " binary" if var in self.integrality else ""
            lines.append(f"bound {var} [{self.lower[var]:.12g}, {self.upper[var]:.12g}]{kind}")
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    status: str
    objective: float
    values: dict[str, float]
    pivots: int


@dataclass
class MilpSolution:
    status: str
    objective: float
    values: dict[str, float]
    nodes: int
    pivots: int
    gap: float
    incumbent_trace: list[float] = field(default_factory=list)


def _slack_bounds(rel: str) -> tuple[float, float]:
    if rel == "<=":
        return 0.0, math.inf
    if rel == ">=":
        return -math.inf, 0.0
    return 0.0, 0.0


class _Compiled:
    """Dense arrays for a LinearModel: columns = structurals then one slack per core row.

    Lazy rows are kept aside as ``lazy_a @ x (rel) lazy_b`` over the structurals.
    """

    def __init__(self, model: LinearModel):
        model.validate()
        self.names = model.variables
        index = {name: j for j, name in enumerate(self.names)}
        core = [r for r, lazy in zip(model.rows, model.lazy) if not lazy]
        lazy_rows = [r for r, lazy in zip(model.rows, model.lazy) if lazy]
        if not core:
            core = [({}, "<=", 0.0)]
        n, m = len(self.names), len(core)
        self.n, self.m = n, m
        a = np.zeros((m, n + m))
        b = np.zeros(m)
        lb = np.empty(n + m)
        ub = np.empty(n + m)
        for i, (coeffs, rel, rhs) in enumerate(core):
            for var, val in coeffs.items():
                a[i, index[var]] += val
            b[i] = rhs
            a[i, n + i] = 1.0
            lb[n + i], ub[n + i] = _slack_bounds(rel)
        for j, name in enumerate(self.names):
            lb[j], ub[j] = model.lower[name], model.upper[name]
        c = np.zeros(n + m)
        sign = -1.0 if model.sense == "max" else 1.0
        for var, val in model.objective.items():
            c[index[var]] += sign * val
        self.a, self.b, self.c, self.lb, self.ub = a, b, c, lb, ub
        self.lazy_a = np.zeros((len(lazy_rows), n))
        self.lazy_b = np.array([rhs for _, _, rhs in lazy_rows], dtype=float)
        self.lazy_rel = [rel for _, rel, _ in lazy_rows]
        for i, (coeffs, _, _) in enumerate(lazy_rows):
            for var, val in coeffs.items():
                self.lazy_a[i, index[var]] += val
        self.sign = sign
        self.constant = model.objective_constant
        self.integer = np.array(sorted(index[v] for v in model.integrality), dtype=int)


class _Simplex:
    """Revised simplex state over a compiled model; bounds may be tightened in place."""

    def __init__(self, comp: _Compiled, lb=None, ub=None):
        self.comp = comp
        self.n = comp.n
        self.pending = np.ones(len(comp.lazy_b), dtype=bool)
        self.a, self.b, self.c = comp.a, comp.b, comp.c
        self.lb = comp.lb.copy() if lb is None else lb
        self.ub = comp.ub.copy() if ub is None else ub
        self.m, self.ncol = self.a.shape
        n = comp.n
        self.basis = np.arange(n, n + self.m)
        self.status = np.empty(self.ncol, dtype=np.int8)
        self.status[n:] = _BASIC
        for j in range(n):
            self.status[j] = self._rest_status(j)
        self.binv = np.eye(self.m)
        self.pivots = 0
        self._since_refactor = 0

    def _rest_status(self, j: int) -> int:
        if math.isfinite(self.lb[j]):
            return _AT_LB
        if math.isfinite(self.ub[j]):
            return _AT_UB
        return _FREE

    def snapshot(self):
        return self.basis.copy(), self.status.copy(), self.binv.copy()

    def restore(self, snap, lb, ub):
        self.basis, self.status, self.binv = snap[0].copy(), snap[1].copy(), snap[2].copy()
        if len(self.basis) < self.m:
            # rows activated after the snapshot: their slacks join the basis
            extra = self.m - len(self.basis)
            new_slacks = np.arange(self.ncol - extra, self.ncol)
            self.binv = self._extend_inverse(self.binv, self.basis, self.m - extra)
            self.basis = np.concatenate([self.basis, new_slacks])
            self.status = np.concatenate([self.status, np.full(extra, _BASIC, dtype=np.int8)])
        if len(lb) < self.ncol:
            lb = np.concatenate([lb, self.lb[len(lb) :]])
            ub = np.concatenate([ub, self.ub[len(ub) :]])
        self.lb, self.ub = lb, ub
        self._settle()

    def _settle(self):
        """Move nonbasic columns off infinite bounds (and free columns onto finite ones)."""
        st = self.status
        lo, hi = np.isfinite(self.lb), np.isfinite(self.ub)
        lb_bad = (st == _AT_LB) & ~lo
        ub_bad = (st == _AT_UB) & ~hi
        free_bad = (st == _FREE) & (lo | hi)
        st[lb_bad] = np.where(hi[lb_bad], _AT_UB, _FREE)
        st[ub_bad] = np.where(lo[ub_bad], _AT_LB, _FREE)
        st[free_bad] = np.where(lo[free_bad], _AT_LB, _AT_UB)

    def _extend_inverse(self, binv, basis, m_old):
        # B' = [[B, 0], [L_B, I]]  =>  B'^-1 = [[B^-1, 0], [-L_B B^-1, I]]
        extra = self.m - m_old
        out = np.zeros((self.m, self.m))
        out[:m_old, :m_old] = binv
        out[m_old:, :m_old] = -self.a[m_old:, basis] @ binv
        out[m_old:, m_old:] = np.eye(extra)
        return out

    def violated_lazy(self, x: np.ndarray) -> np.ndarray:
        idx = np.flatnonzero(self.pending)
        if idx.size == 0:
            return idx
        act = self.comp.lazy_a[idx] @ x[: self.n]
        rhs = self.comp.lazy_b[idx]
        tol = FEAS_TOL * (1.0 + np.abs(rhs))
        bad = np.zeros(idx.size, dtype=bool)
        for t, i in enumerate(idx):
            rel = self.comp.lazy_rel[i]
            if rel != ">=" and act[t] > rhs[t] + tol[t]:
                bad[t] = True
            if rel != "<=" and act[t] < rhs[t] - tol[t]:
                bad[t] = True
        return idx[bad]

    def activate(self, idx: np.ndarray) -> None:
        """Append lazy rows ``idx`` with basic slacks; dual feasibility is kept."""
        q = len(idx)
        m, ncol, n = self.m, self.ncol, self.n
        a = np.zeros((m + q, ncol + q))
        a[:m, :ncol] = self.a
        a[m:, :n] = self.comp.lazy_a[idx]
        a[m:, ncol:] = np.eye(q)
        self.a = a
        self.b = np.concatenate([self.b, self.comp.lazy_b[idx]])
        self.c = np.concatenate([self.c, np.zeros(q)])
        bounds = np.array([_slack_bounds(self.comp.lazy_rel[i]) for i in idx]).reshape(q, 2)
        self.lb = np.concatenate([self.lb, bounds[:, 0]])
        self.ub = np.concatenate([self.ub, bounds[:, 1]])
        self.m, self.ncol = m + q, ncol + q
        self.binv = self._extend_inverse(self.binv, self.basis, m)
        self.basis = np.concatenate([self.basis, np.arange(ncol, ncol + q)])
        self.status = np.concatenate([self.status, np.full(q, _BASIC, dtype=np.int8)])
        self.pending[idx] = False

    def settle_lazy(self, status: str) -> str:
        """Add violated lazy rows and re-optimise until none is violated."""
        while status == OPTIMAL:
            idx = self.violated_lazy(self.values())
            if idx.size == 0:
                break
            self.activate(idx)
            status = self.guarded(self.reoptimize)
        return status

    def settle_lazy_integral(self, status: str, ints: np.ndarray) -> str:
        """Like settle_lazy, but only integral relaxation points are checked."""
        while status == OPTIMAL:
            x = self.values()
            if ints.size and np.max(np.abs(x[ints] - np.round(x[ints]))) > INT_TOL:
                break
            idx = self.violated_lazy(x)
            if idx.size == 0:
                break
            self.activate(idx)
            status = self.guarded(self.reoptimize)
        return status

    def refactor(self):
        try:
            self.binv = np.linalg.inv(self.a[:, self.basis])
        except np.linalg.LinAlgError as exc:
            raise _SingularBasis from exc
        self._since_refactor = 0

    def cold_start(self) -> None:
        """All-slack basis; always nonsingular."""
        n = self.n
        self.basis = np.arange(n, self.ncol)
        self.status[n:] = _BASIC
        for j in range(n):
            self.status[j] = self._rest_status(j)
        self.binv = np.eye(self.m)
        self._since_refactor = 0

    def guarded(self, run) -> str:
        try:
            return run()
        except _SingularBasis:
            self.cold_start()
            return self.primal()

    def values(self) -> np.ndarray:
        x = np.zeros(self.ncol)
        st = self.status
        at_lb, at_ub = st == _AT_LB, st == _AT_UB
        x[at_lb] = self.lb[at_lb]
        x[at_ub] = self.ub[at_ub]
        x[self.basis] = self.binv @ (self.b - self.a @ x)
        return x

    def _pivot(self, r: int, j: int, alpha: np.ndarray, leave_status: int):
        leaving = self.basis[r]
        row = self.binv[r] / alpha[r]
        self.binv -= np.outer(alpha, row)
        self.binv[r] = row
        self.basis[r] = j
        self.status[j] = _BASIC
        self.status[leaving] = leave_status
        self.pivots += 1
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self.refactor()

    def _tick(self):
        self.pivots += 1
        if self.pivots > MAX_PIVOTS:
            raise CycleLimit(f"pivot cap {MAX_PIVOTS} exceeded")

    # -- primal ---------------------------------------------------------
    def primal(self) -> str:
        stall, best = 0, math.inf
        phase1 = True
        while True:
            x = self.values()
            xb = x[self.basis]
            lbb, ubb = self.lb[self.basis], self.ub[self.basis]
            below = xb < lbb - FEAS_TOL
            above = xb > ubb + FEAS_TOL
            if phase1 and not (below.any() or above.any()):
                phase1 = False
                stall, best = 0, math.inf
            if phase1:
                cb = above.astype(float) - below.astype(float)
                cost = None
                progress = float(np.sum((lbb - xb)[below]) + np.sum((xb - ubb)[above]))
            else:
                cb = self.c[self.basis]
                cost = self.c
                progress = float(self.c @ x)
            if progress < best - 1e-12 * max(1.0, abs(best) if math.isfinite(best) else 1.0):
                best, stall = progress, 0
            else:
                stall += 1
            bland = stall > BLAND_AFTER
            y = cb @ self.binv
            d = -(y @ self.a) if cost is None else cost - y @ self.a
            st = self.status
            cand = np.zeros(self.ncol)
            inc = ((st == _AT_LB) | (st == _FREE)) & (d < -OPT_TOL)
            dec = ((st == _AT_UB) | (st == _FREE)) & (d > OPT_TOL)
            fixed = self.lb >= self.ub
            cand[inc & ~fixed] = -d[inc & ~fixed]
            cand[dec & ~fixed] = d[dec & ~fixed]
            if not cand.any():
                return INFEASIBLE if phase1 else OPTIMAL
            j = int(np.flatnonzero(cand)[0]) if bland else int(np.argmax(cand))
            direction = 1.0 if inc[j] else -1.0
            alpha = self.binv @ self.a[:, j]
            rate = -direction * alpha  # d xB / dt
            t_flip = self.ub[j] - self.lb[j]
            lim = np.full(self.m, math.inf)
            to_ub = np.zeros(self.m, dtype=bool)
            dn, up = rate < -PIVOT_TOL, rate > PIVOT_TOL
            with np.errstate(invalid="ignore"):
                if phase1:
                    feas = ~(below | above)
                    sel = dn & above
                    lim[sel] = (xb[sel] - ubb[sel]) / -rate[sel]
                    to_ub[sel] = True
                    sel = dn & feas
                    lim[sel] = np.maximum(xb[sel] - lbb[sel], 0.0) / -rate[sel]
                    sel = up & below
                    lim[sel] = (lbb[sel] - xb[sel]) / rate[sel]
                    sel = up & feas
                    lim[sel] = np.maximum(ubb[sel] - xb[sel], 0.0) / rate[sel]
                    to_ub[sel] = True
                else:
                    lim[dn] = np.maximum(xb[dn] - lbb[dn], 0.0) / -rate[dn]
                    lim[up] = np.maximum(ubb[up] - xb[up], 0.0) / rate[up]
                    to_ub[up] = True
            t_best = float(lim.min())
            r_best = -1
            if t_best < t_flip:
                ties = np.flatnonzero(lim <= t_best + 1e-12)
                if bland:
                    r_best = int(ties[np.argmin(self.basis[ties])])
                else:
                    r_best = int(ties[np.argmax(np.abs(rate[ties]))])
                leave_to = _AT_UB if to_ub[r_best] else _AT_LB
            else:
                t_best = t_flip
            if not math.isfinite(t_best):
                if phase1:
                    raise CycleLimit("unbounded ray during phase 1")
                return UNBOUNDED
            if r_best < 0:
                # entering variable runs to its opposite bound
                self.status[j] = _AT_UB if direction > 0 else _AT_LB
                self._tick()
                continue
            if self.pivots >= MAX_PIVOTS:
                raise CycleLimit(f"pivot cap {MAX_PIVOTS} exceeded")
            self._pivot(r_best, j, alpha, leave_to)

    # -- dual -----------------------------------------------------------
    def dual(self) -> str:
        """Dual simplex from a dual-feasible basis; returns OPTIMAL or INFEASIBLE."""
        stall = 0
        while True:
            x = self.values()
            xb = x[self.basis]
            lbb, ubb = self.lb[self.basis], self.ub[self.basis]
            viol = np.maximum(lbb - xb, 0.0) + np.maximum(xb - ubb, 0.0)
            if not (viol > FEAS_TOL).any():
                return OPTIMAL
            stall += 1
            bland = stall > 4 * BLAND_AFTER
            if bland:
                rows = np.flatnonzero(viol > FEAS_TOL)
                r = int(rows[np.argmin(self.basis[rows])])
            else:
                r = int(np.argmax(viol))
            to_lower = xb[r] < lbb[r]
            y = self.c[self.basis] @ self.binv
            d = self.c - y @ self.a
            alpha_r = self.binv[r] @ self.a
            st = self.status
            nonbasic = (st != _BASIC) & (self.lb < self.ub)
            if to_lower:
                ok = nonbasic & (
                    ((alpha_r < -PIVOT_TOL) & ((st == _AT_LB) | (st == _FREE)))
                    | ((alpha_r > PIVOT_TOL) & ((st == _AT_UB) | (st == _FREE)))
                )
            else:
                ok = nonbasic & (
                    ((alpha_r > PIVOT_TOL) & ((st == _AT_LB) | (st == _FREE)))
                    | ((alpha_r < -PIVOT_TOL) & ((st == _AT_UB) | (st == _FREE)))
                )
            idx = np.flatnonzero(ok)
            if idx.size == 0:
                return INFEASIBLE
            # Harris pass: widen the ratio bound slightly, then take the largest pivot
            mag = np.abs(alpha_r[idx])
            ratios = np.abs(d[idx]) / mag
            bound = float(np.min((np.abs(d[idx]) + 1e-9) / mag))
            ties = idx[ratios <= bound]
            if bland:
                j = int(ties.min())
            else:
                j = int(ties[np.argmax(np.abs(alpha_r[ties]))])
            alpha = self.binv @ self.a[:, j]
            self._pivot(r, j, alpha, _AT_LB if to_lower else _AT_UB)
            if self.pivots > MAX_PIVOTS:
                raise CycleLimit(f"pivot cap {MAX_PIVOTS} exceeded")

    def dual_feasible(self) -> bool:
        y = self.c[self.basis] @ self.binv
        d = self.c - y @ self.a
        st = self.status
        movable = self.lb < self.ub
        bad = movable & (
            ((st == _AT_LB) & (d < -1e-7)) | ((st == _AT_UB) & (d > 1e-7)) | ((st == _FREE) & (np.abs(d) > 1e-7))
        )
        return not bad.any()

    def reoptimize(self) -> str:
        """Dual simplex when the basis is dual feasible, primal otherwise; primal cleanup after."""
        if self.dual_feasible():
            status = self.dual()
            if status == INFEASIBLE:
                return INFEASIBLE
        return self.primal()


def _objective(comp: _Compiled, x: np.ndarray) -> float:
    return comp.sign * float(comp.c[: comp.n] @ x[: comp.n]) + comp.constant


def _trivially_infeasible(comp: _Compiled, lb, ub) -> bool:
    return bool(np.any(lb > ub + FEAS_TOL))


def solve_lp(model: LinearModel) -> LpSolution:
    """LP relaxation of ``model`` (integrality ignored)."""
    comp = _Compiled(model)
    nan = {name: math.nan for name in comp.names}
    simplex = _Simplex(comp)
    status = simplex.settle_lazy(simplex.guarded(simplex.primal))
    if status != OPTIMAL:
        obj = math.nan if status == INFEASIBLE else -comp.sign * math.inf
        return LpSolution(status, obj, nan, simplex.pivots)
    try:
        simplex.refactor()
    except _SingularBasis:
        pass
    x = simplex.values()
    return LpSolution(OPTIMAL, _objective(comp, x), dict(zip(comp.names, x[: comp.n].tolist())), simplex.pivots)


def solve_milp(model: LinearModel, node_limit: int = 100_000, gap: float = DEFAULT_GAP) -> MilpSolution:
    """Best-bound branch-and-bound over the binary variables of ``model``.

    Children re-optimise from the parent's basis with the dual simplex.  The
    returned gap is ``(incumbent - best open bound) / max(1, |incumbent|)`` in
    minimisation terms.
    """
    comp = _Compiled(model)
    nan = {name: math.nan for name in comp.names}
    simplex = _Simplex(comp)
    ints = comp.integer
    status = simplex.settle_lazy_integral(simplex.guarded(simplex.primal), ints)
    pivots = simplex.pivots
    if status == INFEASIBLE:
        return MilpSolution(INFEASIBLE, math.nan, nan, 1, pivots, math.inf)
    if status == UNBOUNDED:
        return MilpSolution(UNBOUNDED, -comp.sign * math.inf, nan, 1, pivots, math.inf)

    inc_x, inc_val = None, math.inf  # internal minimisation value
    trace: list[float] = []
    nodes = 0
    seq = 0
    # heap entries: (bound, seq, lb, ub, snapshot)
    heap: list = []

    def process():
        x = simplex.values()
        return float(comp.c[: comp.n] @ x[: comp.n]), x

    def branch_or_update(val, x, lb, ub):
        nonlocal inc_x, inc_val, seq
        frac = np.abs(x[ints] - np.round(x[ints])) if ints.size else np.zeros(0)
        if ints.size == 0 or frac.max() <= INT_TOL:
            if val < inc_val - 1e-12:
                inc_x, inc_val = x.copy(), val
                trace.append(comp.sign * val + comp.constant)
            return
        dist = np.minimum(x[ints] - np.floor(x[ints]), np.ceil(x[ints]) - x[ints])
        pick = int(np.argmax(dist))  # first max = lowest variable id on ties
        j = int(ints[pick])
        snap = simplex.snapshot()
        down_ub = ub.copy()
        down_ub[j] = math.floor(x[j])
        up_lb = lb.copy()
        up_lb[j] = math.ceil(x[j])
        heapq.heappush(heap, (val, seq, lb, down_ub, snap))
        seq += 1
        heapq.heappush(heap, (val, seq, up_lb, ub, snap))
        seq += 1

    nodes = 1
    val, x = process()
    branch_or_update(val, x, simplex.lb, simplex.ub)
    status = OPTIMAL
    while heap:
        bound = heap[0][0]
        if inc_x is not None and inc_val - bound <= gap * max(1.0, abs(inc_val)):
            break
        if nodes >= node_limit:
            status = NODE_LIMIT
            break
        bound, _, lb, ub, snap = heapq.heappop(heap)
        if inc_x is not None and bound >= inc_val - gap * max(1.0, abs(inc_val)):
            continue
        nodes += 1
        if _trivially_infeasible(comp, lb, ub):
            continue
        simplex.restore(snap, lb, ub)
        st = simplex.settle_lazy_integral(simplex.guarded(simplex.reoptimize), ints)
        if st != OPTIMAL:
            continue
        val, x = process()
        lb, ub = simplex.lb, simplex.ub
        if inc_x is not None and val >= inc_val - gap * max(1.0, abs(inc_val)):
            continue
        branch_or_update(val, x, lb, ub)
    pivots = simplex.pivots
    if inc_x is None:
        st = INFEASIBLE if status == OPTIMAL else NODE_LIMIT
        return MilpSolution(st, math.nan, nan, nodes, pivots, math.inf, trace)
    open_bound = min([h[0] for h in heap], default=inc_val)
    open_bound = min(open_bound, inc_val)
    gap_val = (inc_val - open_bound) / max(1.0, abs(inc_val))
    values = dict(zip(comp.names, inc_x[: comp.n].tolist()))
    return MilpSolution(status, comp.sign * inc_val + comp.constant, values, nodes, pivots, max(gap_val, 0.0), trace)
