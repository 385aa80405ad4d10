"""Generalized Benders decomposition with precomputed cut libraries.

Sign convention, fixed project-wide: an oracle returns ``(phi, lam)`` with
``lam = -dphi/dtheta`` so that the optimality cut reads

    eta >= phi_bar - lam_bar * (theta - theta_bar).
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Hashable, Mapping, Protocol, Sequence

from .lp_milp import INFEASIBLE, NODE_LIMIT, OPTIMAL, LinearModel, solve_milp


class DegenerateDomain(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


class OutOfDomain(ValueError):
    pass


class NotInLibrary(KeyError):
    pass


class MasterInfeasible(RuntimeError):
    pass


class NonConvexValueFunction(ValueError):
    pass


class SubproblemOracle(Protocol):
    lb: float
    ub: float

    def evaluate(self, theta: float) -> tuple[float, float]: ...


@dataclass(frozen=True)
class BendersCut:
    key: Hashable
    anchor: float
    value: float
    multiplier: float

    def __call__(self, theta: float) -> float:
        return self.value - self.multiplier * (theta - self.anchor)


class FunctionOracle:
    """Oracle from a value function and its derivative (used for synthetic problems)."""

    def __init__(self, phi: Callable[[float], float], dphi: Callable[[float], float], lb: float, ub: float):
        self.phi, self.dphi = phi, dphi
        self.lb, self.ub = float(lb), float(ub)

    def evaluate(self, theta: float) -> tuple[float, float]:
        return float(self.phi(theta)), -float(self.dphi(theta))


def _grid_fractions(n: int) -> list[Fraction]:
    return [Fraction(i, n - 1) for i in range(n)]


def _at(lb: float, ub: float, frac: Fraction) -> float:
    if frac == 1:
        return float(ub)
    return lb + (ub - lb) * (frac.numerator / frac.denominator)


def uniform_anchors(lb: float, ub: float, n: int) -> list[float]:
    if not ub > lb:
        raise DegenerateDomain(f"empty domain [{lb}, {ub}]")
    if n < 2:
        raise TooFewPoints(f"need at least 2 anchors, got {n}")
    return [_at(lb, ub, f) for f in _grid_fractions(n)]


def make_cut(oracle: SubproblemOracle, anchor: float, key: Hashable = None) -> BendersCut:
    if not (oracle.lb - 1e-12 <= anchor <= oracle.ub + 1e-12):
        raise OutOfDomain(f"anchor {anchor} outside [{oracle.lb}, {oracle.ub}]")
    phi, lam = oracle.evaluate(anchor)
    return BendersCut(key, float(anchor), float(phi), float(lam))


class CutLibrary:
    """Cuts per transition key, indexed by their exact grid fraction of the domain."""

    def __init__(self, n_max: int):
        self.n_max = n_max
        self.domains: dict[Hashable, tuple[float, float]] = {}
        self.cuts: dict[Hashable, dict[Fraction, BendersCut]] = {}

    def keys(self) -> list:
        return list(self.cuts)

    def anchors(self, key) -> list[float]:
        return sorted(c.anchor for c in self.cuts[key].values())

    def all_cuts(self) -> list[BendersCut]:
        return [c for key in self.cuts for _, c in sorted(self.cuts[key].items())]

    def __len__(self) -> int:
        return sum(len(v) for v in self.cuts.values())


def convexity_audit(oracle: SubproblemOracle, points: int = 50, tol: float = 1e-6) -> float:
    """Smallest change of consecutive finite-difference slopes of phi on a uniform grid.

    The slope tolerance is relative to the largest slope magnitude (at least 1),
    since value functions here span several orders of magnitude.  Raises
    NonConvexValueFunction when a slope drops by more than that.
    """
    grid = [oracle.lb + (oracle.ub - oracle.lb) * k / (points - 1) for k in range(points)]
    values = [oracle.evaluate(t)[0] for t in grid]
    slopes = [(values[k + 1] - values[k]) / (grid[k + 1] - grid[k]) for k in range(points - 1)]
    scale = max(1.0, max(abs(s) for s in slopes))
    worst = min(b - a for a, b in zip(slopes, slopes[1:]))
    if worst < -tol * scale:
        k = min(range(len(slopes) - 1), key=lambda k: slopes[k + 1] - slopes[k])
        raise NonConvexValueFunction(
            f"slope drops by {-worst:.3g} near theta = {grid[k + 1]:.6g} (scale {scale:.3g}); cuts would be invalid"
        )
    return worst


def build_cut_library(oracles: Mapping[Hashable, SubproblemOracle], n_max: int, audit_points: int = 0) -> CutLibrary:
    """Cuts at every grid point used by n = 2..n_max; optionally audit each phi for convexity first."""
    if n_max < 2:
        raise TooFewPoints(f"n_max must be >= 2, got {n_max}")
    lib = CutLibrary(n_max)
    for key, oracle in oracles.items():
        lb, ub = oracle.lb, oracle.ub
        if not ub > lb:
            raise DegenerateDomain(f"empty domain for {key!r}")
        if audit_points:
            convexity_audit(oracle, audit_points)
        fracs = sorted({f for n in range(2, n_max + 1) for f in _grid_fractions(n)})
        lib.domains[key] = (lb, ub)
        lib.cuts[key] = {f: make_cut(oracle, _at(lb, ub, f), key) for f in fracs}
    return lib


def select_initial_cuts(library: CutLibrary, n: int, keys: Sequence[Hashable] | None = None) -> dict:
    """Cuts anchored on the ``n``-point uniform grid for every key; ``n = 0`` means none."""
    keys = library.keys() if keys is None else list(keys)
    if n == 0:
        return {key: [] for key in keys}
    if n < 2:
        raise TooFewPoints(f"initial cut count must be 0 or >= 2, got {n}")
    if n > library.n_max:
        raise NotInLibrary(f"n = {n} exceeds library n_max = {library.n_max}")
    return {key: [library.cuts[key][f] for f in _grid_fractions(n)] for key in keys}


@dataclass
class GbdConfig:
    tol: float = 0.1  # percent
    max_iterations: int = 100
    beta_sub: float = 50.0
    milp_gap: float = 1e-6
    node_limit: int = 100_000
    trace_path: str | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class Link:
    """Ties one epigraph variable of the master to an oracle.

    The master objective must charge ``eta`` with coefficient 1.  When
    ``active`` names a binary, the link only counts while it is switched on.
    """

    key: Hashable
    theta: str
    eta: str
    active: str | None = None


@dataclass
class MasterProblem:
    model: LinearModel
    links: list[Link]


@dataclass
class GbdResult:
    ub: float
    lb: float
    iterations: int
    wall_seconds: float
    work_units: float
    trace: list[tuple[float, float]]
    values: dict[str, float]
    converged: bool
    cuts_total: int
    oracle_calls: int
    master_pivots: int
    master_nodes: int
    rows: list[dict] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.ub

    @property
    def gap_percent(self) -> float:
        return 100.0 * (self.ub - self.lb) / max(abs(self.lb), 1e-9)


def _clamp(theta: float, oracle) -> float:
    return min(max(theta, oracle.lb), oracle.ub)


def _relative_gap(ub: float, lb: float) -> float:
    if ub == lb:
        return 0.0
    return (ub - lb) / max(abs(lb), 1e-9)


def run_gbd(
    master_builder: Callable[[dict], MasterProblem],
    oracles: Mapping[Hashable, SubproblemOracle],
    initial_cuts: Mapping[Hashable, Sequence[BendersCut]] | None = None,
    config: GbdConfig | None = None,
) -> GbdResult:
    """Alternate master MILP solves and oracle evaluations until the bounds meet.

    Work units count master simplex pivots plus ``beta_sub`` per oracle call.
    Oracle values already known (initial-cut anchors, earlier iterations) are
    reused free of charge; initial cuts are treated as precomputed.
    """
    config = config or GbdConfig()
    cuts: dict[Hashable, list[BendersCut]] = {key: [] for key in oracles}
    known: dict[tuple, tuple[float, float]] = {}
    for key, seq in (initial_cuts or {}).items():
        cuts.setdefault(key, [])
        for cut in seq:
            cuts[key].append(cut)
            known[(key, cut.anchor)] = (cut.value, cut.multiplier)

    started = time.perf_counter()
    lb, ub = -math.inf, math.inf
    best_values: dict[str, float] = {}
    trace: list[tuple[float, float]] = []
    rows: list[dict] = []
    pivots = nodes = calls = 0
    converged = False
    iteration = 0
    while iteration < config.max_iterations:
        iteration += 1
        master = master_builder(cuts)
        sol = solve_milp(master.model, node_limit=config.node_limit, gap=config.milp_gap)
        pivots += sol.pivots
        nodes += sol.nodes
        if sol.status == INFEASIBLE:
            raise MasterInfeasible(f"master infeasible at iteration {iteration}")
        if sol.status not in (OPTIMAL, NODE_LIMIT):
            raise RuntimeError(f"master solve failed with status {sol.status}")
        x = sol.values
        lb = max(lb, sol.objective)
        candidate = sol.objective
        new_cuts = 0
        for link in master.links:
            candidate -= x[link.eta]
            if link.active is not None and x[link.active] < 0.5:
                continue
            oracle = oracles[link.key]
            theta = _clamp(x[link.theta], oracle)
            hit = known.get((link.key, theta))
            if hit is None:
                hit = oracle.evaluate(theta)
                calls += 1
                known[(link.key, theta)] = hit
                cuts[link.key].append(BendersCut(link.key, theta, hit[0], hit[1]))
                new_cuts += 1
            candidate += hit[0]
        if candidate < ub:
            ub = candidate
            best_values = dict(x)
        trace.append((lb, ub))
        work = pivots + config.beta_sub * calls
        gap = _relative_gap(ub, lb)
        rows.append(
            {
                "iteration": iteration,
                "LB": lb,
                "UB": ub,
                "gap_percent": 100.0 * gap,
                "cuts_total": sum(len(v) for v in cuts.values()),
                "work_units": work,
            }
        )
        if gap <= config.tol / 100.0:
            converged = True
            break
        if new_cuts == 0:
            # no new information: the master already prices every active link exactly
            converged = gap <= config.tol / 100.0
            break
    wall = time.perf_counter() - started
    result = GbdResult(
        ub=ub,
        lb=lb,
        iterations=iteration,
        wall_seconds=wall,
        work_units=pivots + config.beta_sub * calls,
        trace=trace,
        values=best_values,
        converged=converged,
        cuts_total=sum(len(v) for v in cuts.values()),
        oracle_calls=calls,
        master_pivots=pivots,
        master_nodes=nodes,
        rows=rows,
    )
    if config.trace_path:
        write_trace(result, config.trace_path)
    return result


TRACE_COLUMNS = ["iteration", "LB", "UB", "gap_percent", "cuts_total", "work_units"]


def write_trace(result: GbdResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in result.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
