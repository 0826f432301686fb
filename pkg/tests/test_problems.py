import numpy as np
import pytest

from opfdesign.data import generate_timeseries
from opfdesign.errors import ConfigurationError
from opfdesign.grid import GridState, evaluate_constraints
from opfdesign.problems import (
    BENCHMARK_KINDS,
    ScaleConfig,
    action_bounds,
    bus_injections,
    initial_setpoints,
    is_valid,
    make_benchmark,
    objective,
    problem_fingerprint,
    solve_state,
    state_from_dataset,
)


@pytest.fixture(scope="module")
def problems():
    return {k: make_benchmark(k) for k in BENCHMARK_KINDS}


def dataset_for(problem, n_steps=64, seed=1):
    return generate_timeseries(problem.dataset_config(n_steps=n_steps), seed=seed)


def test_all_kinds_construct_deterministically(problems):
    for kind, p in problems.items():
        q = make_benchmark(kind)
        assert problem_fingerprint(p) == problem_fingerprint(q)
        assert p.action_dim == len(p.actuators)
        for act in p.actuators:
            assert p.grid.units[act.unit].controllable


def test_unknown_kind_rejected():
    with pytest.raises(ConfigurationError):
        make_benchmark("unit-commitment")


def test_voltage_control_shape(problems):
    p = problems["voltage-control"]
    assert all(a.axis == "q" for a in p.actuators)
    assert p.kind == "voltage-control"


def test_max_renewables_storage_controllable_but_not_in_objective(problems):
    p = problems["max-renewables"]
    kinds = {p.grid.units[a.unit].kind for a in p.actuators}
    assert kinds == {"generator", "storage"}
    ds = dataset_for(p)
    st = state_from_dataset(p, ds, 0)
    sol = solve_state(p, st, None)
    sp = initial_setpoints(p, st)
    base = objective(p, st, sol, sp)
    bumped = sp.copy()
    storage_pos = [i for i, a in enumerate(p.actuators) if p.grid.units[a.unit].kind == "storage"][0]
    bumped[storage_pos] += 0.5
    assert objective(p, st, sol, bumped) == base


def fake_state(problem, price_p=None, price_q=None, price_loss=0.0):
    n = len(problem.grid.units)
    z = np.zeros(n)
    return GridState(
        p_inj=z.copy(), q_inj=z.copy(), p_min=z.copy(), p_max=z.copy(),
        q_min=z.copy(), q_max=z.copy(),
        price_p=price_p if price_p is not None else z.copy(),
        price_q=price_q if price_q is not None else z.copy(),
        price_loss=price_loss,
    )


def fake_solution(p_loss):
    from opfdesign.grid import PowerFlowSolution

    return PowerFlowSolution(
        v_mag=np.ones(2), v_ang=np.zeros(2), line_loading=np.zeros(1),
        trafo_loading=np.zeros(0), slack_p=0.0, slack_q=0.0,
        p_loss=p_loss, converged=True, iterations=1, max_mismatch=0.0,
    )


def test_objective_voltage_control_is_losses(problems):
    p = problems["voltage-control"]
    st = fake_state(p)
    sp = np.zeros(p.action_dim)
    assert objective(p, st, fake_solution(0.02), sp) == pytest.approx(0.02)


def test_objective_economic_dispatch_dot_product():
    p = make_benchmark("economic-dispatch", ScaleConfig(n_actuators=2))
    price_p = np.zeros(len(p.grid.units))
    price_p[p.actuators[0].unit] = 5.0
    price_p[p.actuators[1].unit] = 3.0
    st = fake_state(p, price_p=price_p)
    assert objective(p, st, fake_solution(0.0), np.array([10.0, 20.0])) == pytest.approx(110.0)


def test_objective_max_renewables_negated_sum():
    p = make_benchmark("max-renewables", ScaleConfig(n_actuators=2))
    st = fake_state(p)
    assert objective(p, st, fake_solution(0.0), np.array([3.0, 4.0])) == pytest.approx(-7.0)


def test_objective_load_shedding_prices_shed_power():
    p = make_benchmark("load-shedding", ScaleConfig(n_actuators=2))
    shed_units = [a.unit for a in p.actuators if p.grid.units[a.unit].kind == "load"]
    n = len(p.grid.units)
    price_p = np.zeros(n)
    price_p[shed_units[0]] = 40.0
    st = fake_state(p, price_p=price_p)
    st.p_min[shed_units[0]] = -2.0  # full demand 2 MW
    sp = initial_setpoints(p, st)
    pos = [i for i, a in enumerate(p.actuators) if a.unit == shed_units[0]][0]
    sp[pos] = -2.0  # serve fully -> no cost
    assert objective(p, st, fake_solution(0.0), sp) == pytest.approx(0.0)
    sp[pos] = -0.5  # shed 1.5 MW at 40/MWh
    assert objective(p, st, fake_solution(0.0), sp) == pytest.approx(60.0)


def test_objective_q_market_costs():
    p = make_benchmark("q-market", ScaleConfig(n_actuators=2))
    n = len(p.grid.units)
    price_q = np.zeros(n)
    for a in p.actuators:
        price_q[a.unit] = 4.0
    st = fake_state(p, price_q=price_q, price_loss=30.0)
    sp = np.array([1.5, -0.5])
    expected = 0.1 * 30.0 + (1.5 + 0.5) * 4.0
    assert objective(p, st, fake_solution(0.1), sp) == pytest.approx(expected)


def test_objective_deterministic(problems):
    for p in problems.values():
        ds = dataset_for(p)
        st = state_from_dataset(p, ds, 3)
        sol = solve_state(p, st, None)
        sp = initial_setpoints(p, st)
        assert objective(p, st, sol, sp) == objective(p, st, sol, sp)


def test_dynamic_limits_within_nominal(problems):
    from opfdesign.grid import validate_state

    for p in problems.values():
        ds = dataset_for(p)
        for i in range(20):
            st = state_from_dataset(p, ds, i)
            validate_state(st, p.grid.units)
            lo, hi = action_bounds(p, st)
            assert np.all(lo <= hi + 1e-12)


def test_is_valid_matches_constraint_report(problems):
    p = problems["voltage-control"]
    ds = dataset_for(p)
    rng = np.random.default_rng(2)
    for i in range(10):
        st = state_from_dataset(p, ds, i)
        lo, hi = action_bounds(p, st)
        a = rng.uniform(0, 1, p.action_dim)
        sp = (1 - a) * lo + a * hi
        sol = solve_state(p, st, sp)
        assert is_valid(p, st, sp) == evaluate_constraints(sol, p.limits).valid


def test_shed_load_reactive_power_scales_with_served_share():
    p = make_benchmark("load-shedding", ScaleConfig(n_actuators=2))
    ds = dataset_for(p)
    st = state_from_dataset(p, ds, 5)
    shed = [i for i, a in enumerate(p.actuators) if p.grid.units[a.unit].kind == "load"][0]
    unit = p.actuators[shed].unit
    sp = initial_setpoints(p, st)
    sp[shed] = st.p_min[unit] / 2  # serve half
    _, q_bus = bus_injections(p, st, sp)
    bus = p.grid.units[unit].bus
    sp_full = initial_setpoints(p, st)
    _, q_bus_full = bus_injections(p, st, sp_full)
    others_q = q_bus_full[bus] - st.q_inj[unit]
    assert q_bus[bus] - others_q == pytest.approx(st.q_inj[unit] / 2)
