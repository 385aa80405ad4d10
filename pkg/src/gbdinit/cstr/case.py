"""Instances of the disturbed scheduling problem and the end-to-end case study."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ..gbd import CutLibrary, GbdConfig, GbdResult, build_cut_library, run_gbd, select_initial_cuts
from ..lp_milp import INFEASIBLE, solve_milp
from .master import EconomicsParams, build_master, hat_key, master_problem, pair_key
from .plant import CollocationScheme, PlantParams, TransitionOracle, min_transition_time

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PRODUCTION, TRANSITION = "production", "transition"

# Table 2 of the demand distribution: nominal, low, high offsets
DEMAND_TABLE = (
    (600.0, -100.0, 100.0),
    (550.0, -15.0, 15.0),
    (600.0, -30.0, 30.0),
    (1200.0, -20.0, 20.0),
    (2000.0, -400.0, 400.0),
)


@dataclass
class ScheduleInstance:
    n_products: int
    horizon: float
    t0: float
    demands: list[float]
    inventories: list[float]
    x_star: float
    state: str
    inlet_multiplier: float
    theta_min: list[list[float]]
    theta_hat_min: list[float]
    instance_id: str = ""

    @property
    def remaining(self) -> float:
        return self.horizon - self.t0

    def domain(self, i: int, j: int, factor: float = 5.0) -> tuple[float, float]:
        return self.theta_min[i][j], factor * self.theta_min[i][j]

    def to_json(self) -> dict:
        return {"schema": SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_json(cls, data: dict) -> "ScheduleInstance":
        if data.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported instance schema {data.get('schema')!r}")
        fields = {k: v for k, v in data.items() if k != "schema"}
        return cls(**fields)

    def save(self, path: str) -> None:
        _atomic_write(path, json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str) -> "ScheduleInstance":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class Disturbance:
    t0: float
    demands: list[float]
    inlet_multiplier: float
    seed: int | None = None


@dataclass
class Segment:
    kind: str  # production | transition
    start: float
    end: float
    product: int  # product made, or target of the transition
    source: int | None = None  # origin product of a product-to-product transition
    times: list[float] = field(default_factory=list)
    states: list[float] = field(default_factory=list)


@dataclass
class NominalSchedule:
    horizon: float
    initial_inventories: list[float]
    initial_state: float
    segments: list[Segment]
    objective: float

    def to_json(self) -> dict:
        return {"schema": SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_json(cls, data: dict) -> "NominalSchedule":
        segs = [Segment(**s) for s in data["segments"]]
        return cls(data["horizon"], data["initial_inventories"], data["initial_state"], segs, data["objective"])


@dataclass
class CaseConfig:
    n_products: int = 3
    horizon: float = 48.0
    x_ss: tuple[float, ...] = (0.2, 0.5, 0.8)
    dilution: float = 1.0
    rate_const: float = 1.0
    u_lb: float = 0.0
    u_ub: float = 2.0
    n_fe: int = 10
    n_cp: int = 3
    alpha_u: float = 1.0e5  # transition cost weight; makes transitions matter at 0.1% tolerance
    price: tuple[float, ...] = (150.0, 200.0, 230.0)
    oper_cost: tuple[float, ...] = (20.0, 25.0, 30.0)
    inv_cost: float = 1.0
    trans_cost: float = 10.0
    load_factor: float = 0.7  # nominal demand hours / horizon
    initial_inventory: float = 0.0
    domain_factor: float = 5.0
    min_time_margin: float = 0.01
    inlet_bounds: tuple[float, float] = (0.8, 1.2)
    demand_table: tuple = DEMAND_TABLE

    def __post_init__(self):
        self.x_ss = tuple(self.x_ss)
        self.price = tuple(self.price)
        self.oper_cost = tuple(self.oper_cost)
        self.inlet_bounds = tuple(self.inlet_bounds)
        self.demand_table = tuple(tuple(r) for r in self.demand_table)
        if len(self.x_ss) != self.n_products or len(self.price) != self.n_products or len(self.oper_cost) != self.n_products:
            raise ValueError("per-product settings must have n_products entries")
        if len(self.demand_table) < self.n_products:
            raise ValueError("demand table shorter than n_products")

    @property
    def nominal_demands(self) -> list[float]:
        return [row[0] for row in self.demand_table[: self.n_products]]

    def plant(self) -> PlantParams:
        return PlantParams(self.dilution, self.rate_const, self.x_ss, self.u_lb, self.u_ub, self.n_fe, self.n_cp, self.alpha_u)

    def economics(self) -> EconomicsParams:
        rate = sum(self.nominal_demands) / (self.load_factor * self.horizon)
        return EconomicsParams(self.price, self.oper_cost, self.inv_cost, self.trans_cost, (rate,) * self.n_products)


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def sample_disturbance(rng: np.random.Generator | int, config: CaseConfig) -> Disturbance:
    """T0 ~ U(0, H), d_i = nominal + U(low, high), inlet multiplier ~ U(lo, hi)."""
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    t0 = float(rng.uniform(0.0, config.horizon))
    demands = [float(nom + rng.uniform(lo, hi)) for nom, lo, hi in config.demand_table[: config.n_products]]
    c0 = float(rng.uniform(*config.inlet_bounds))
    return Disturbance(t0, demands, c0, seed)


def simulate_to_disturbance(schedule: NominalSchedule, t0: float, plant: PlantParams, econ: EconomicsParams):
    """Inventories, reactor state and state flag after following ``schedule`` for ``t0`` hours."""
    inventories = list(schedule.initial_inventories)
    x_star, state = schedule.initial_state, PRODUCTION
    for seg in schedule.segments:
        if seg.end <= seg.start:
            continue
        if t0 <= seg.start:
            break
        done = min(t0, seg.end) - seg.start
        if seg.kind == PRODUCTION:
            inventories[seg.product] += econ.rates[seg.product] * done
            x_star, state = plant.x_ss[seg.product], PRODUCTION
        else:
            if t0 >= seg.end:
                x_star, state = seg.states[-1], PRODUCTION
            else:
                x_star = float(np.interp(done, seg.times, seg.states))
                state = TRANSITION
        if t0 < seg.end:
            break
    return inventories, float(x_star), state


def instance_features(instance: ScheduleInstance, n_cuts: int) -> np.ndarray:
    """[T0, x*, inlet, demands..., inventories..., state, n_cuts]; state 1 = mid-transition."""
    state = 1.0 if instance.state == TRANSITION else 0.0
    return np.array(
        [instance.t0, instance.x_star, instance.inlet_multiplier, *instance.demands, *instance.inventories, state, float(n_cuts)],
        dtype=float,
    )


def feature_names(n_products: int) -> list[str]:
    return (
        ["T0", "x_star", "inlet"]
        + [f"d{i + 1}" for i in range(n_products)]
        + [f"I{i + 1}" for i in range(n_products)]
        + ["state", "n_cuts"]
    )


class CaseStudy:
    """Plant, economics, pair oracles and cut library for one configuration."""

    def __init__(self, config: CaseConfig | None = None, n_max: int = 6):
        self.config = config or CaseConfig()
        self.plant = self.config.plant()
        self.econ = self.config.economics()
        self.scheme = CollocationScheme(self.plant.n_fe, self.plant.n_cp)
        self.n_max = n_max
        n = self.config.n_products
        margin = 1.0 + self.config.min_time_margin
        self.theta_min = [
            [0.0 if i == j else margin * min_transition_time(self.plant.x_ss[i], self.plant.x_ss[j], self.plant, self.scheme) for j in range(n)]
            for i in range(n)
        ]
        self.pair_oracles = {
            pair_key(i, j): TransitionOracle(
                self.plant.x_ss[i],
                self.plant.x_ss[j],
                self.plant.u_ss[j],
                self.theta_min[i][j],
                self.config.domain_factor * self.theta_min[i][j],
                self.plant,
                self.scheme,
            )
            for i in range(n)
            for j in range(n)
            if i != j
        }
        self._library: CutLibrary | None = None
        self._nominal: NominalSchedule | None = None

    @property
    def library(self) -> CutLibrary:
        if self._library is None:
            self._library = build_cut_library(self.pair_oracles, self.n_max, audit_points=50)
        return self._library

    def hat_min_times(self, x_star: float) -> list[float]:
        margin = 1.0 + self.config.min_time_margin
        out = []
        for i, target in enumerate(self.plant.x_ss):
            if abs(target - x_star) <= 1e-12:
                out.append(0.0)
            else:
                out.append(margin * min_transition_time(x_star, target, self.plant, self.scheme))
        return out

    def instance_oracles(self, instance: ScheduleInstance) -> dict:
        oracles = dict(self.pair_oracles)
        f = self.config.domain_factor
        for i, tmin in enumerate(instance.theta_hat_min):
            if tmin > 0:
                oracles[hat_key(i)] = TransitionOracle(
                    instance.x_star, self.plant.x_ss[i], self.plant.u_ss[i], tmin, f * tmin, self.plant, self.scheme
                )
        return oracles

    def builder(self, instance: ScheduleInstance):
        econ, factor = self.econ, self.config.domain_factor
        return lambda cuts: master_problem(instance, econ, cuts, factor)

    def solve(self, instance: ScheduleInstance, n_cuts: int, gbd_config: GbdConfig | None = None) -> GbdResult:
        cuts = select_initial_cuts(self.library, n_cuts) if n_cuts else {}
        return run_gbd(self.builder(instance), self.instance_oracles(instance), cuts, gbd_config or GbdConfig())

    def check_feasible(self, instance: ScheduleInstance) -> bool:
        model = build_master(instance, self.econ, {}, self.config.domain_factor)
        model.set_objective({})
        return solve_milp(model).status != INFEASIBLE

    def make_instance(
        self,
        t0: float,
        demands,
        inventories,
        x_star: float,
        state: str,
        inlet_multiplier: float = 1.0,
        instance_id: str = "",
    ) -> ScheduleInstance:
        return ScheduleInstance(
            n_products=self.config.n_products,
            horizon=self.config.horizon,
            t0=float(t0),
            demands=[float(d) for d in demands],
            inventories=[float(v) for v in inventories],
            x_star=float(x_star),
            state=state,
            inlet_multiplier=float(inlet_multiplier),
            theta_min=[list(r) for r in self.theta_min],
            theta_hat_min=self.hat_min_times(x_star),
            instance_id=instance_id,
        )

    def nominal_instance(self) -> ScheduleInstance:
        n = self.config.n_products
        return self.make_instance(
            0.0, self.config.nominal_demands, [self.config.initial_inventory] * n, self.plant.x_ss[0], PRODUCTION, 1.0, "nominal"
        )

    def nominal_schedule(self, cache_path: str | None = None) -> NominalSchedule:
        if self._nominal is not None:
            return self._nominal
        if cache_path and os.path.exists(cache_path):
            with open(cache_path) as fh:
                self._nominal = NominalSchedule.from_json(json.load(fh))
            return self._nominal
        inst = self.nominal_instance()
        result = self.solve(inst, self.n_max)
        self._nominal = self.schedule_from_solution(inst, result.values, result.ub)
        if cache_path:
            _atomic_write(cache_path, json.dumps(self._nominal.to_json(), sort_keys=True))
        return self._nominal

    def schedule_from_solution(self, instance: ScheduleInstance, x: dict, objective: float) -> NominalSchedule:
        n = instance.n_products
        seq = [max(range(n), key=lambda i: x[f"W[{i + 1},{k + 1}]"]) for k in range(n)]
        segs: list[Segment] = []
        t = 0.0
        first = seq[0]
        th0 = x.get(f"thh[{first + 1}]", 0.0)
        if th0 > 1e-9:
            sol = self.instance_oracles(instance)[hat_key(first)].solution(th0)
            segs.append(Segment(TRANSITION, t, t + th0, first, None, sol.times.tolist(), sol.x.tolist()))
            t += th0
        for k, i in enumerate(seq):
            dur = x[f"P[{i + 1},{k + 1}]"]
            segs.append(Segment(PRODUCTION, t, t + dur, i))
            t += dur
            if k + 1 < n:
                j = seq[k + 1]
                if i != j:
                    th = x[f"th[{i + 1},{j + 1},{k + 1}]"]
                    sol = self.pair_oracles[pair_key(i, j)].solution(th)
                    segs.append(Segment(TRANSITION, t, t + th, j, i, sol.times.tolist(), sol.x.tolist()))
                    t += th
        return NominalSchedule(instance.horizon, list(instance.inventories), instance.x_star, segs, objective)

    def instance_from_disturbance(self, dist: Disturbance, instance_id: str = "", cache_path: str | None = None) -> ScheduleInstance:
        schedule = self.nominal_schedule(cache_path)
        inventories, x_now, state = simulate_to_disturbance(schedule, dist.t0, self.plant, self.econ)
        lo, hi = self.plant.reachable
        span = hi - lo
        x_star = float(np.clip(dist.inlet_multiplier * x_now, lo + 1e-3 * span, hi - 1e-3 * span))
        return self.make_instance(dist.t0, dist.demands, inventories, x_star, state, dist.inlet_multiplier, instance_id)
