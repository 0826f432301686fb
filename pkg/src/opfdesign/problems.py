"""The five benchmark OPF problems on small synthetic grids.

Each benchmark fixes a grid, its constraint limits, the actuated unit axes,
and an objective over (state, power-flow solution, setpoints).  All grids are
desk scale (6-14 buses) with deterministic topologies; the number of
actuators is configurable down to 2 for enumeration-based checks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .data import DatasetConfig, PriceRange
from .errors import ConfigurationError
from .grid import (
    Bus,
    ConstraintLimits,
    Grid,
    GridState,
    Line,
    PowerFlowSolution,
    Transformer,
    Unit,
    evaluate_constraints,
    grid_to_dict,
    run_power_flow,
)

BENCHMARK_KINDS = (
    "voltage-control",
    "load-shedding",
    "economic-dispatch",
    "q-market",
    "max-renewables",
)

#: dynamic Q capability never shrinks below this fraction of nominal
MIN_Q_CAPABILITY = 0.2


@dataclass(frozen=True)
class Actuator:
    unit: int
    axis: str  # "p" | "q"


@dataclass(frozen=True)
class ScaleConfig:
    n_actuators: int | None = None  # benchmark default when None


@dataclass(frozen=True)
class OpfProblem:
    name: str
    kind: str
    grid: Grid
    limits: ConstraintLimits
    actuators: tuple[Actuator, ...]
    archetypes: tuple[str, ...]  # dataset archetype per unit
    price_p: tuple[PriceRange, ...]  # per unit; zero-width if unpriced
    price_q: tuple[PriceRange, ...]
    price_loss: PriceRange = PriceRange(0.0, 0.0)

    def __post_init__(self):
        n_units = len(self.grid.units)
        for act in self.actuators:
            if act.axis not in ("p", "q"):
                raise ConfigurationError(f"unknown actuator axis {act.axis!r}")
            unit = self.grid.units[act.unit]
            if not unit.controllable:
                raise ConfigurationError(f"actuated unit {act.unit} is not controllable")
        if len(self.archetypes) != n_units or len(self.price_p) != n_units or len(self.price_q) != n_units:
            raise ConfigurationError("per-unit metadata must match the unit count")

    @property
    def action_dim(self) -> int:
        return len(self.actuators)

    @cached_property
    def unit_bus(self) -> np.ndarray:
        return np.array([u.bus for u in self.grid.units])

    @cached_property
    def q_ratio(self) -> np.ndarray:
        """Reactive-to-active coupling of load units (from the nominal ranges)."""
        ratio = np.zeros(len(self.grid.units))
        for i, u in enumerate(self.grid.units):
            if u.kind == "load" and u.p_min < 0:
                ratio[i] = u.q_min / u.p_min
        return ratio

    @cached_property
    def noncontrollable_units(self) -> np.ndarray:
        return np.array(
            [i for i, u in enumerate(self.grid.units) if not u.controllable and u.kind != "slack"]
        )

    @cached_property
    def priced_p_actuators(self) -> tuple[int, ...]:
        return tuple(
            a.unit for a in self.actuators if a.axis == "p" and self.price_p[a.unit].width() > 0
        )

    @cached_property
    def priced_q_actuators(self) -> tuple[int, ...]:
        return tuple(
            a.unit for a in self.actuators if a.axis == "q" and self.price_q[a.unit].width() > 0
        )

    def dataset_config(self, n_steps: int = 4096, noise: float = 0.08) -> DatasetConfig:
        return DatasetConfig(
            archetypes=self.archetypes,
            n_steps=n_steps,
            noise=noise,
            price_p=self.price_p,
            price_q=self.price_q,
            price_loss=self.price_loss,
        )


def action_bounds(problem: OpfProblem, state: GridState, nominal: bool = False):
    """(lo, hi) per actuator axis, dynamic by default."""
    lo = np.empty(problem.action_dim)
    hi = np.empty(problem.action_dim)
    for i, act in enumerate(problem.actuators):
        u = problem.grid.units[act.unit]
        if act.axis == "p":
            lo[i] = u.p_min if nominal else state.p_min[act.unit]
            hi[i] = u.p_max if nominal else state.p_max[act.unit]
        else:
            lo[i] = u.q_min if nominal else state.q_min[act.unit]
            hi[i] = u.q_max if nominal else state.q_max[act.unit]
    return lo, hi


def initial_setpoints(problem: OpfProblem, state: GridState) -> np.ndarray:
    """Actuator values of the pre-action operating point encoded in the state."""
    sp = np.empty(problem.action_dim)
    for i, act in enumerate(problem.actuators):
        sp[i] = state.p_inj[act.unit] if act.axis == "p" else state.q_inj[act.unit]
    return sp


def bus_injections(problem: OpfProblem, state: GridState, setpoints: np.ndarray | None):
    """Per-bus net (P, Q) in MW/MVAr with actuated axes overridden by setpoints.

    Shedding a load scales its reactive demand proportionally (constant power
    factor); slack-unit entries contribute nothing.
    """
    p_unit = state.p_inj.copy()
    q_unit = state.q_inj.copy()
    if setpoints is not None:
        for i, act in enumerate(problem.actuators):
            if act.axis == "p":
                p_unit[act.unit] = setpoints[i]
                if problem.grid.units[act.unit].kind == "load":
                    q_unit[act.unit] = setpoints[i] * problem.q_ratio[act.unit]
            else:
                q_unit[act.unit] = setpoints[i]
    for i, u in enumerate(problem.grid.units):
        if u.kind == "slack":
            p_unit[i] = 0.0
            q_unit[i] = 0.0
    n = problem.grid.n_buses
    p_bus = np.bincount(problem.unit_bus, weights=p_unit, minlength=n)
    q_bus = np.bincount(problem.unit_bus, weights=q_unit, minlength=n)
    return p_bus, q_bus


def solve_state(problem: OpfProblem, state: GridState, setpoints: np.ndarray | None) -> PowerFlowSolution:
    p_bus, q_bus = bus_injections(problem, state, setpoints)
    return run_power_flow(problem.grid, p_bus, q_bus)


def objective(
    problem: OpfProblem,
    state: GridState,
    solution: PowerFlowSolution,
    setpoints: np.ndarray,
) -> float:
    """Benchmark objective J; prices are taken from the state."""
    kind = problem.kind
    if kind == "voltage-control":
        return float(solution.p_loss)
    if kind == "load-shedding":
        total = 0.0
        for i, act in enumerate(problem.actuators):
            unit = problem.grid.units[act.unit]
            if act.axis == "p" and unit.kind == "load":
                shed = setpoints[i] - state.p_min[act.unit]
                total += shed * state.price_p[act.unit]
        return float(total)
    if kind == "economic-dispatch":
        total = 0.0
        for i, act in enumerate(problem.actuators):
            if act.axis == "p" and problem.grid.units[act.unit].kind == "generator":
                total += setpoints[i] * state.price_p[act.unit]
        return float(total)
    if kind == "q-market":
        total = float(solution.p_loss) * state.price_loss
        for i, act in enumerate(problem.actuators):
            if act.axis == "q":
                total += abs(setpoints[i]) * state.price_q[act.unit]
        return float(total)
    if kind == "max-renewables":
        total = 0.0
        for i, act in enumerate(problem.actuators):
            if act.axis == "p" and problem.grid.units[act.unit].kind == "generator":
                total += setpoints[i]
        return float(-total)
    raise ConfigurationError(f"unknown benchmark kind {kind!r}")


def is_valid(problem: OpfProblem, state: GridState, setpoints: np.ndarray) -> bool:
    solution = solve_state(problem, state, setpoints)
    return evaluate_constraints(solution, problem.limits).valid


def problem_fingerprint(problem: OpfProblem) -> str:
    doc = grid_to_dict(problem.grid, problem.limits)
    doc["kind"] = problem.kind
    doc["actuators"] = [[a.unit, a.axis] for a in problem.actuators]
    doc["price_p"] = [[r.low, r.high] for r in problem.price_p]
    doc["price_q"] = [[r.low, r.high] for r in problem.price_q]
    doc["price_loss"] = [problem.price_loss.low, problem.price_loss.high]
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- state construction ------------------------------------------------------


def grid_state_from_scalers(
    problem: OpfProblem,
    scalers: np.ndarray,
    price_p: np.ndarray,
    price_q: np.ndarray,
    price_loss: float,
) -> GridState:
    """Map one row of unit scalers in [0, 1] to a concrete scenario.

    Dynamic boxes: generators can feed in up to scaler x nominal max, storages
    split their range by state of charge (scaler), sheddable loads may serve
    between zero and the current demand, and compensators lose reactive
    capability as their co-located feed-in (their own scaler) grows.

    The pre-action operating point is full service for loads, full available
    feed-in for weather-driven generators, half the scheduled availability for
    dispatchable ("firm") generators, and idle storages/compensators.
    """
    units = problem.grid.units
    n = len(units)
    scalers = np.clip(np.asarray(scalers, dtype=float), 0.0, 1.0)
    p_inj = np.zeros(n)
    q_inj = np.zeros(n)
    p_lo = np.zeros(n)
    p_hi = np.zeros(n)
    q_lo = np.zeros(n)
    q_hi = np.zeros(n)
    for i, u in enumerate(units):
        s = scalers[i]
        if u.kind == "slack":
            continue
        if u.kind == "load":
            demand_p = s * u.p_min  # p_min is the most negative injection
            demand_q = s * u.q_min
            if u.controllable:
                p_lo[i], p_hi[i] = demand_p, 0.0
                p_inj[i] = demand_p  # full service before shedding
                q_inj[i] = demand_q
            else:
                p_inj[i], q_inj[i] = demand_p, demand_q
                p_lo[i] = p_hi[i] = demand_p
                q_lo[i] = q_hi[i] = demand_q
        elif u.kind == "generator":
            avail = s * u.p_max
            if u.controllable:
                if u.p_max > 0:  # active-power actuator (dispatchable / curtailable)
                    p_lo[i], p_hi[i] = u.p_min, avail
                    p_inj[i] = avail if problem.archetypes[i] in ("solar", "wind") else 0.5 * avail
                    q_lo[i] = q_hi[i] = 0.0
                else:  # compensator: reactive-only actuator
                    cap = max(MIN_Q_CAPABILITY, np.sqrt(max(1.0 - s**2, 0.0)))
                    q_lo[i], q_hi[i] = cap * u.q_min, cap * u.q_max
                    q_inj[i] = 0.0
            else:
                p_inj[i] = avail
                p_lo[i] = p_hi[i] = avail
        elif u.kind == "storage":
            p_lo[i] = (1.0 - s) * u.p_min  # charging headroom shrinks when full
            p_hi[i] = s * u.p_max  # discharge headroom shrinks when empty
            p_inj[i] = 0.0
    return GridState(
        p_inj=p_inj,
        q_inj=q_inj,
        p_min=p_lo,
        p_max=p_hi,
        q_min=q_lo,
        q_max=q_hi,
        price_p=np.asarray(price_p, dtype=float),
        price_q=np.asarray(price_q, dtype=float),
        price_loss=float(price_loss),
    )


def state_from_dataset(problem: OpfProblem, dataset, index: int) -> GridState:
    return grid_state_from_scalers(
        problem,
        dataset.scalers[index],
        dataset.price_p[index],
        dataset.price_q[index],
        float(dataset.price_loss[index]),
    )


# -- benchmark construction ---------------------------------------------------


def _feeder_grid(n_feeder: int, loads, gens, storages, compensators, base_mva=10.0,
                 line_s_max=8.0, trafo_s_max=14.0, line_x=0.025):
    """Slack bus 0, transformer 0-1, feeder chain with one tie branch.

    ``loads``/``gens``/... are dicts bus -> sizing used to place units.
    Chain ratings taper along the feeder since downstream sections carry less.
    """
    buses = tuple(Bus(f"b{i}") for i in range(n_feeder + 1))
    lines = []
    for i in range(1, n_feeder):
        rating = line_s_max * max(0.45, 1.0 - 0.12 * (i - 1))
        lines.append(Line(i, i + 1, r=0.25 * line_x, x=line_x, b=0.004, s_max=rating))
    if n_feeder >= 4:
        lines.append(Line(2, n_feeder, r=0.3 * line_x, x=1.2 * line_x, b=0.0, s_max=0.6 * line_s_max))
    trafos = (Transformer(0, 1, r=0.002, x=0.025, s_max=trafo_s_max),)

    units = [Unit(0, -1e3, 1e3, -1e3, 1e3, controllable=False, kind="slack")]
    archetypes = ["firm"]
    for bus, (p_peak, q_peak, controllable) in sorted(loads.items()):
        units.append(Unit(bus, -p_peak, 0.0, -q_peak, 0.0, controllable=controllable, kind="load"))
        archetypes.append("load")
    for bus, (p_max, arch, controllable) in sorted(gens.items()):
        units.append(Unit(bus, 0.0, p_max, 0.0, 0.0, controllable=controllable, kind="generator"))
        archetypes.append(arch)
    for bus, p_range in sorted(storages.items()):
        units.append(Unit(bus, -p_range, p_range, 0.0, 0.0, controllable=True, kind="storage"))
        archetypes.append("wind")
    for bus, (q_range, arch) in sorted(compensators.items()):
        units.append(Unit(bus, 0.0, 0.0, -q_range, q_range, controllable=True, kind="generator"))
        archetypes.append(arch)
    grid = Grid(buses=buses, lines=tuple(lines), transformers=trafos, units=tuple(units), base_mva=base_mva)
    return grid, tuple(archetypes)


def _zero_prices(n: int) -> tuple[PriceRange, ...]:
    return tuple(PriceRange() for _ in range(n))


def make_benchmark(kind: str, scale: ScaleConfig | None = None) -> OpfProblem:
    """Fully specified benchmark problem, deterministic given (kind, scale)."""
    scale = scale or ScaleConfig()
    if kind == "voltage-control":
        return _make_voltage_control(scale, priced=False)
    if kind == "q-market":
        return _make_voltage_control(scale, priced=True)
    if kind == "load-shedding":
        return _make_load_shedding(scale)
    if kind == "economic-dispatch":
        return _make_economic_dispatch(scale)
    if kind == "max-renewables":
        return _make_max_renewables(scale)
    raise ConfigurationError(f"unknown benchmark kind {kind!r}")


def _make_voltage_control(scale: ScaleConfig, priced: bool) -> OpfProblem:
    n_act = scale.n_actuators or 3
    if not 2 <= n_act <= 5:
        raise ConfigurationError("voltage-control supports 2-5 actuators")
    feeder = 6
    comp_buses = [3, 5, 6, 4, 2][:n_act]
    arch_cycle = ["solar", "wind", "solar", "wind", "solar"]
    loads = {2: (3.2, 1.1, False), 3: (2.6, 0.9, False), 4: (2.2, 0.8, False), 5: (2.8, 1.0, False), 6: (2.0, 0.7, False)}
    gens = {3: (3.5, "solar", False), 5: (3.0, "wind", False), 6: (2.5, "solar", False)}
    compensators = {b: (2.5, arch_cycle[i]) for i, b in enumerate(comp_buses)}
    grid, archetypes = _feeder_grid(feeder, loads, gens, {}, compensators, line_s_max=7.0, line_x=0.035)
    limits = ConstraintLimits(slack_p_min=-60.0, slack_p_max=60.0, slack_q_min=-3.5, slack_q_max=3.5)
    actuators = tuple(
        Actuator(i, "q") for i, u in enumerate(grid.units) if u.controllable and u.q_max > 0
    )
    n = len(grid.units)
    if priced:
        price_q = tuple(
            PriceRange(2.0, 12.0) if any(a.unit == i for a in actuators) else PriceRange()
            for i in range(n)
        )
        return OpfProblem(
            name="q-market",
            kind="q-market",
            grid=grid,
            limits=ConstraintLimits(slack_p_min=-60.0, slack_p_max=60.0, slack_q_min=-2.5, slack_q_max=2.5),
            actuators=actuators,
            archetypes=archetypes,
            price_p=_zero_prices(n),
            price_q=price_q,
            price_loss=PriceRange(20.0, 40.0),
        )
    return OpfProblem(
        name="voltage-control",
        kind="voltage-control",
        grid=grid,
        limits=limits,
        actuators=actuators,
        archetypes=archetypes,
        price_p=_zero_prices(n),
        price_q=_zero_prices(n),
    )


def _make_load_shedding(scale: ScaleConfig) -> OpfProblem:
    n_act = scale.n_actuators or 5
    if not 2 <= n_act <= 6:
        raise ConfigurationError("load-shedding supports 2-6 actuators")
    feeder = 8
    shed_buses = [3, 5, 7, 8, 6][: max(n_act - 1, 1)] if n_act > 1 else [3]
    with_storage = n_act > 1
    loads = {2: (2.4, 0.8, False), 4: (2.0, 0.7, False), 6: (1.8, 0.6, False)}
    for b in shed_buses:
        loads[b] = (2.2, 0.75, True)
    gens = {5: (2.0, "wind", False)}
    storages = {4: 1.5} if with_storage else {}
    grid, archetypes = _feeder_grid(feeder, loads, gens, storages, {}, line_s_max=7.5, trafo_s_max=10.0)
    limits = ConstraintLimits(slack_p_min=-8.5, slack_p_max=8.5, slack_q_min=-5.0, slack_q_max=5.0)
    actuators = []
    for i, u in enumerate(grid.units):
        if u.controllable and u.kind == "load":
            actuators.append(Actuator(i, "p"))
    for i, u in enumerate(grid.units):
        if u.controllable and u.kind == "storage":
            actuators.append(Actuator(i, "p"))
    n = len(grid.units)
    price_p = tuple(
        PriceRange(10.0, 100.0) if grid.units[i].kind == "load" and grid.units[i].controllable else PriceRange()
        for i in range(n)
    )
    return OpfProblem(
        name="load-shedding",
        kind="load-shedding",
        grid=grid,
        limits=limits,
        actuators=tuple(actuators),
        archetypes=archetypes,
        price_p=price_p,
        price_q=_zero_prices(n),
    )


def _make_economic_dispatch(scale: ScaleConfig) -> OpfProblem:
    n_act = scale.n_actuators or 5
    if not 2 <= n_act <= 6:
        raise ConfigurationError("economic-dispatch supports 2-6 actuators")
    feeder = 9
    gen_buses = [2, 4, 6, 8, 9, 5][:n_act]
    loads = {
        2: (2.6, 0.9, False),
        3: (3.0, 1.0, False),
        5: (2.8, 0.9, False),
        7: (3.2, 1.1, False),
        8: (2.4, 0.8, False),
        9: (2.2, 0.7, False),
    }
    gens = {b: (4.5, "firm", True) for b in gen_buses}
    grid, archetypes = _feeder_grid(feeder, loads, gens, {}, {}, line_s_max=6.0, trafo_s_max=10.0)
    limits = ConstraintLimits(slack_p_min=-6.0, slack_p_max=6.0, slack_q_min=-7.0, slack_q_max=7.0)
    actuators = tuple(
        Actuator(i, "p") for i, u in enumerate(grid.units) if u.controllable and u.kind == "generator"
    )
    n = len(grid.units)
    price_p = tuple(
        PriceRange(20.0, 60.0) if any(a.unit == i for a in actuators) else PriceRange()
        for i in range(n)
    )
    return OpfProblem(
        name="economic-dispatch",
        kind="economic-dispatch",
        grid=grid,
        limits=limits,
        actuators=actuators,
        archetypes=archetypes,
        price_p=price_p,
        price_q=_zero_prices(n),
    )


def _make_max_renewables(scale: ScaleConfig) -> OpfProblem:
    n_act = scale.n_actuators or 4
    if not 2 <= n_act <= 5:
        raise ConfigurationError("max-renewables supports 2-5 actuators")
    feeder = 8
    n_gens = n_act if n_act <= 2 else n_act - 1
    with_storage = n_act > 2
    gen_buses = [3, 6, 8, 5][:n_gens]
    arch_cycle = ["solar", "wind", "solar", "wind"]
    loads = {2: (2.2, 0.8, False), 4: (1.8, 0.6, False), 5: (2.0, 0.7, False), 7: (1.6, 0.6, False)}
    gens = {b: (4.8, arch_cycle[i], True) for i, b in enumerate(gen_buses)}
    storages = {7: 1.5} if with_storage else {}
    grid, archetypes = _feeder_grid(feeder, loads, gens, storages, {}, line_s_max=5.0, trafo_s_max=8.0)
    limits = ConstraintLimits(slack_p_min=-5.5, slack_p_max=60.0, slack_q_min=-6.0, slack_q_max=6.0)
    actuators = [
        Actuator(i, "p") for i, u in enumerate(grid.units) if u.controllable and u.kind == "generator"
    ]
    actuators += [
        Actuator(i, "p") for i, u in enumerate(grid.units) if u.controllable and u.kind == "storage"
    ]
    n = len(grid.units)
    return OpfProblem(
        name="max-renewables",
        kind="max-renewables",
        grid=grid,
        limits=limits,
        actuators=tuple(actuators),
        archetypes=archetypes,
        price_p=_zero_prices(n),
        price_q=_zero_prices(n),
    )
