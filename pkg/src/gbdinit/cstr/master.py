"""Slot-based scheduling master problem with Benders epigraph variables.

Variable naming (products ``i, j`` and slots ``k`` are 1-based in names):

* ``W[i,k]`` product ``i`` made in slot ``k``; ``Z[i,j,k]`` transition i->j
  after slot ``k``; ``Zh[i]`` transition from the disturbed state into ``i``.
* ``Ts[k]``, ``Te[k]`` slot start/end; ``P[i,k]`` production time;
  ``tt[k]`` transition time charged to slot ``k``.
* ``th[i,j,k]`` / ``thh[i]`` transition times, zero when the transition is
  off (``theta_min * Z <= th <= theta_max * Z``).
* ``eta[i,j,k]`` / ``etah[i]`` transition cost epigraphs.  Cuts are written in
  perspective form ``eta >= (phi + lam*theta_bar) * Z - lam * th`` which is the
  ordinary cut when ``Z = 1`` and ``eta >= 0`` when ``Z = 0``.  Cut rows are
  lazy: they enter the working LP only once violated.
* ``I[i,k]`` inventory, ``S[i,k]`` sales.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..gbd import BendersCut, Link, MasterProblem
from ..lp_milp import LinearModel


class MalformedInstance(ValueError):
    pass


@dataclass(frozen=True)
class EconomicsParams:
    price: tuple[float, ...] = (150.0, 200.0, 230.0)
    oper_cost: tuple[float, ...] = (20.0, 25.0, 30.0)
    inv_cost: float = 1.0
    trans_cost: float = 10.0
    rates: tuple[float, ...] = (52.0, 52.0, 52.0)

    def __post_init__(self):
        vals = [*self.price, *self.oper_cost, *self.rates, self.inv_cost, self.trans_cost]
        if any(v < 0 for v in vals):
            raise ValueError("economic parameters must be nonnegative")


def pair_key(i: int, j: int):
    return ("P", i, j)


def hat_key(i: int):
    return ("I", i)


def _n(i):
    return i + 1


def _w(i, k):
    return f"W[{_n(i)},{_n(k)}]"


def _z(i, j, k):
    return f"Z[{_n(i)},{_n(j)},{_n(k)}]"


def _zh(i):
    return f"Zh[{_n(i)}]"


def _th(i, j, k):
    return f"th[{_n(i)},{_n(j)},{_n(k)}]"


def _thh(i):
    return f"thh[{_n(i)}]"


def _eta(i, j, k):
    return f"eta[{_n(i)},{_n(j)},{_n(k)}]"


def _etah(i):
    return f"etah[{_n(i)}]"


def validate_instance(instance) -> None:
    n = instance.n_products
    if not 0 <= instance.t0 < instance.horizon:
        raise MalformedInstance(f"T0 = {instance.t0} outside [0, {instance.horizon})")
    if len(instance.demands) != n or len(instance.inventories) != n or len(instance.theta_hat_min) != n:
        raise MalformedInstance("per-product vectors must have length n_products")
    if any(d < 0 for d in instance.demands):
        raise MalformedInstance("demands must be nonnegative")
    for i in range(n):
        for j in range(n):
            if i != j and not instance.theta_min[i][j] > 0:
                raise MalformedInstance(f"theta_min[{i}][{j}] must be positive")


def build_master(instance, econ: EconomicsParams, cuts: dict | None = None, domain_factor: float = 5.0) -> LinearModel:
    """Master MILP for ``instance`` carrying every cut in ``cuts`` (keyed by pair_key / hat_key)."""
    return master_problem(instance, econ, cuts, domain_factor).model


def master_problem(instance, econ: EconomicsParams, cuts: dict | None = None, domain_factor: float = 5.0) -> MasterProblem:
    validate_instance(instance)
    cuts = cuts or {}
    n = instance.n_products
    slots = range(n)
    horizon = instance.horizon - instance.t0
    m = LinearModel("min")
    obj: dict[str, float] = {}
    links: list[Link] = []

    for k in slots:
        for i in range(n):
            m.add_var(_w(i, k), binary=True)
    for k in slots[:-1]:
        for i in range(n):
            for j in range(n):
                m.add_var(_z(i, j, k), binary=True)
    for i in range(n):
        m.add_var(_zh(i), binary=True)
    for k in slots:
        m.add_var(f"Ts[{_n(k)}]", 0.0, horizon)
        m.add_var(f"Te[{_n(k)}]", 0.0, horizon)
        m.add_var(f"tt[{_n(k)}]", 0.0, horizon)
        for i in range(n):
            m.add_var(f"P[{_n(i)},{_n(k)}]", 0.0, horizon)
    for k in slots[:-1]:
        for i in range(n):
            for j in range(n):
                if i != j:
                    tmax = domain_factor * instance.theta_min[i][j]
                    m.add_var(_th(i, j, k), 0.0, tmax)
                    m.add_var(_eta(i, j, k), 0.0)
                    links.append(Link(pair_key(i, j), _th(i, j, k), _eta(i, j, k), _z(i, j, k)))
    hat_active = [instance.theta_hat_min[i] > 0 for i in range(n)]
    for i in range(n):
        if hat_active[i]:
            m.add_var(_thh(i), 0.0, domain_factor * instance.theta_hat_min[i])
            m.add_var(_etah(i), 0.0)
            links.append(Link(hat_key(i), _thh(i), _etah(i), _zh(i)))
    for k in slots:
        for i in range(n):
            m.add_var(f"I[{_n(i)},{_n(k)}]", 0.0)
            m.add_var(f"S[{_n(i)},{_n(k)}]", 0.0)

    # logic
    for k in slots:
        m.add_row({_w(i, k): 1.0 for i in range(n)}, "=", 1.0, f"assign[{_n(k)}]")
    for k in slots[:-1]:
        for i in range(n):
            for j in range(n):
                m.add_row({_z(i, j, k): 1.0, _w(i, k): -1.0, _w(j, k + 1): -1.0}, ">=", -1.0, f"seq[{_n(i)},{_n(j)},{_n(k)}]")
        # exactly one transition leaves slot k and enters slot k+1 (valid tightening)
        for i in range(n):
            row = {_z(i, j, k): 1.0 for j in range(n)}
            row[_w(i, k)] = -1.0
            m.add_row(row, "=", 0.0, f"out[{_n(i)},{_n(k)}]")
        for j in range(n):
            row = {_z(i, j, k): 1.0 for i in range(n)}
            row[_w(j, k + 1)] = -1.0
            m.add_row(row, "=", 0.0, f"in[{_n(j)},{_n(k)}]")
    for i in range(n):
        m.add_row({_zh(i): 1.0, _w(i, 0): -1.0}, "=", 0.0, f"first[{_n(i)}]")

    # timing
    for k in slots:
        row = {f"Te[{_n(k)}]": 1.0, f"Ts[{_n(k)}]": -1.0, f"tt[{_n(k)}]": -1.0}
        for i in range(n):
            row[f"P[{_n(i)},{_n(k)}]"] = -1.0
        m.add_row(row, "=", 0.0, f"slot_end[{_n(k)}]")
    m.add_row({"Ts[1]": 1.0}, "=", 0.0, "start")
    for k in slots[:-1]:
        m.add_row({f"Ts[{_n(k + 1)}]": 1.0, f"Te[{_n(k)}]": -1.0}, "=", 0.0, f"chain[{_n(k)}]")
    m.add_row({f"Te[{_n(n - 1)}]": 1.0}, "=", horizon, "horizon")
    for k in slots:
        for i in range(n):
            m.add_row({f"P[{_n(i)},{_n(k)}]": 1.0, _w(i, k): -horizon}, "<=", 0.0, f"prod_on[{_n(i)},{_n(k)}]")
    for k in slots:
        row = {f"tt[{_n(k)}]": 1.0}
        if k < n - 1:
            for i in range(n):
                for j in range(n):
                    if i != j:
                        row[_th(i, j, k)] = -1.0
        if k == 0:
            for i in range(n):
                if hat_active[i]:
                    row[_thh(i)] = -1.0
        m.add_row(row, "=", 0.0, f"trans_time[{_n(k)}]")
    for k in slots[:-1]:
        for i in range(n):
            for j in range(n):
                if i != j:
                    tmin = instance.theta_min[i][j]
                    m.add_row({_th(i, j, k): 1.0, _z(i, j, k): -tmin}, ">=", 0.0, f"tmin[{_n(i)},{_n(j)},{_n(k)}]")
                    m.add_row({_th(i, j, k): 1.0, _z(i, j, k): -domain_factor * tmin}, "<=", 0.0, f"tmax[{_n(i)},{_n(j)},{_n(k)}]")
    for i in range(n):
        if hat_active[i]:
            tmin = instance.theta_hat_min[i]
            m.add_row({_thh(i): 1.0, _zh(i): -tmin}, ">=", 0.0, f"thmin[{_n(i)}]")
            m.add_row({_thh(i): 1.0, _zh(i): -domain_factor * tmin}, "<=", 0.0, f"thmax[{_n(i)}]")

    # production, inventory and demand
    for k in slots:
        for i in range(n):
            row = {f"I[{_n(i)},{_n(k)}]": 1.0, f"P[{_n(i)},{_n(k)}]": -econ.rates[i], f"S[{_n(i)},{_n(k)}]": 1.0}
            rhs = 0.0
            if k == 0:
                rhs = instance.inventories[i]
            else:
                row[f"I[{_n(i)},{_n(k - 1)}]"] = -1.0
            m.add_row(row, "=", rhs, f"inv[{_n(i)},{_n(k)}]")
    for i in range(n):
        m.add_row({f"S[{_n(i)},{_n(n - 1)}]": 1.0}, ">=", instance.demands[i], f"demand[{_n(i)}]")

    # Benders cuts, shared by every slot of a pair
    for k in slots[:-1]:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                for c, cut in enumerate(cuts.get(pair_key(i, j), ())):
                    _cut_row(m, cut, _eta(i, j, k), _th(i, j, k), _z(i, j, k), f"cut[{_n(i)},{_n(j)},{_n(k)},{c}]")
    for i in range(n):
        if hat_active[i]:
            for c, cut in enumerate(cuts.get(hat_key(i), ())):
                _cut_row(m, cut, _etah(i), _thh(i), _zh(i), f"cuth[{_n(i)},{c}]")

    # objective: minimise -(profit) + transition costs
    for k in slots:
        for i in range(n):
            obj[f"S[{_n(i)},{_n(k)}]"] = -econ.price[i]
            obj[f"P[{_n(i)},{_n(k)}]"] = econ.oper_cost[i] * econ.rates[i]
            obj[f"I[{_n(i)},{_n(k)}]"] = econ.inv_cost
    for k in slots[:-1]:
        for i in range(n):
            for j in range(n):
                if i != j:
                    obj[_z(i, j, k)] = econ.trans_cost
                    obj[_eta(i, j, k)] = 1.0
    for i in range(n):
        if hat_active[i]:
            obj[_etah(i)] = 1.0
    m.set_objective(obj)
    return MasterProblem(m, links)


def _cut_row(m: LinearModel, cut: BendersCut, eta: str, theta: str, active: str, name: str) -> None:
    m.add_row(
        {eta: 1.0, theta: cut.multiplier, active: -(cut.value + cut.multiplier * cut.anchor)},
        ">=",
        0.0,
        name,
        lazy=True,
    )
