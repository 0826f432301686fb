import json
import math

import numpy as np
import pytest

from opfdesign.errors import ConfigurationError
from opfdesign.grid import (
    Bus,
    ConstraintLimits,
    ConstraintReport,
    Grid,
    Line,
    PenaltyScaling,
    PowerFlowSolution,
    Transformer,
    Unit,
    evaluate_constraints,
    grid_from_dict,
    grid_to_dict,
    penalty,
    run_power_flow,
)


def two_bus_grid(r=0.01, x=0.1):
    return Grid(
        buses=(Bus("hv"), Bus("load")),
        lines=(Line(0, 1, r=r, x=x, b=0.0, s_max=20.0),),
        transformers=(),
        units=(
            Unit(0, -100, 100, -100, 100, controllable=False, kind="slack"),
            Unit(1, -10, 0, -5, 0, controllable=False, kind="load"),
        ),
        base_mva=1.0,
    )


def two_bus_exact(p_load, q_load, r, x):
    """Closed-form two-bus solution via the quadratic in |V2|^2.

    For a slack at 1.0 p.u. feeding a load P + jQ over z = r + jx, the squared
    load-bus voltage u solves u^2 + (2(rP + xQ) - 1)u + (r^2 + x^2)(P^2 + Q^2) = 0.
    Returns (|V2|, P_loss) of the high-voltage root, or None when no real
    solution exists.
    """
    a = r * p_load + x * q_load
    disc = (1 - 2 * a) ** 2 - 4 * (r**2 + x**2) * (p_load**2 + q_load**2)
    if disc < 0:
        return None
    u = ((1 - 2 * a) + math.sqrt(disc)) / 2
    p_loss = r * (p_load**2 + q_load**2) / u
    return math.sqrt(u), p_loss


def test_flat_no_load():
    grid = two_bus_grid()
    sol = run_power_flow(grid, np.zeros(2), np.zeros(2))
    assert sol.converged
    assert sol.iterations == 0
    assert np.allclose(sol.v_mag, 1.0)
    assert np.allclose(sol.v_ang, 0.0)
    assert abs(sol.p_loss) < 1e-12


def test_two_bus_against_quadratic_oracle():
    grid = two_bus_grid(r=0.01, x=0.1)
    p, q = 0.5, 0.2
    sol = run_power_flow(grid, np.array([0.0, -p]), np.array([0.0, -q]))
    assert sol.converged
    v2_exact, loss_exact = two_bus_exact(p, q, 0.01, 0.1)
    assert abs(sol.v_mag[1] - v2_exact) <= 1e-6
    assert abs(sol.p_loss - loss_exact) <= 1e-6


def test_two_bus_beyond_loadability_does_not_converge():
    grid = two_bus_grid(r=0.01, x=0.1)
    p, q = 50.0, 20.0
    assert two_bus_exact(p, q, 0.01, 0.1) is None  # no real solution exists
    sol = run_power_flow(grid, np.array([0.0, -p]), np.array([0.0, -q]))
    assert not sol.converged


def meshed_grid():
    units = (
        Unit(0, -100, 100, -100, 100, controllable=False, kind="slack"),
        Unit(1, -4, 0, -2, 0, controllable=False, kind="load"),
        Unit(2, -3, 0, -1.5, 0, controllable=False, kind="load"),
        Unit(3, 0, 5, -3, 3, controllable=True, kind="generator"),
        Unit(4, -2, 0, -1, 0, controllable=False, kind="load"),
    )
    return Grid(
        buses=tuple(Bus(f"b{i}") for i in range(5)),
        lines=(
            Line(1, 2, 0.02, 0.06, 0.01, s_max=8.0),
            Line(2, 3, 0.02, 0.06, 0.01, s_max=8.0),
            Line(1, 4, 0.03, 0.08, 0.0, s_max=6.0),
            Line(3, 4, 0.03, 0.08, 0.0, s_max=6.0),
        ),
        transformers=(Transformer(0, 1, 0.002, 0.05, s_max=12.0),),
        units=units,
        base_mva=10.0,
    )


def random_injections(grid, rng):
    p = rng.uniform(-3, 2, grid.n_buses)
    q = rng.uniform(-1.5, 1, grid.n_buses)
    p[grid.slack_bus] = 0.0
    q[grid.slack_bus] = 0.0
    return p, q


def test_residual_mismatch_property():
    grid = meshed_grid()
    rng = np.random.default_rng(7)
    for _ in range(50):
        p, q = random_injections(grid, rng)
        sol = run_power_flow(grid, p, q)
        if not sol.converged:
            continue
        v = sol.v_mag * np.exp(1j * sol.v_ang)
        s_calc = v * np.conj(grid.ybus @ v) * grid.base_mva
        pq = grid.pq_buses
        resid = max(
            np.max(np.abs(s_calc.real[pq] - p[pq])),
            np.max(np.abs(s_calc.imag[pq] - q[pq])),
        )
        assert resid / grid.base_mva <= 1e-8


def test_slack_balance_identity():
    grid = meshed_grid()
    rng = np.random.default_rng(11)
    n_converged = 0
    for _ in range(50):
        p, q = random_injections(grid, rng)
        sol = run_power_flow(grid, p, q)
        if not sol.converged:
            continue
        n_converged += 1
        others = float(np.sum(np.delete(p, grid.slack_bus)))
        assert abs(sol.slack_p - (sol.p_loss - others)) <= 1e-6 * grid.base_mva
    assert n_converged > 30


def test_malformed_grids_rejected():
    with pytest.raises(ConfigurationError):
        Grid(
            buses=(Bus("a"), Bus("b")),
            lines=(Line(0, 1, 0.01, 0.05),),
            transformers=(),
            units=(Unit(0, 0, 0, 0, 0, False, "load"),),  # no slack
        )
    with pytest.raises(ConfigurationError):
        Grid(
            buses=(Bus("a"), Bus("b"), Bus("c")),
            lines=(Line(0, 1, 0.01, 0.05),),  # bus 2 disconnected
            transformers=(),
            units=(Unit(0, 0, 0, 0, 0, False, "slack"),),
        )
    with pytest.raises(ConfigurationError):
        Grid(
            buses=(Bus("a"), Bus("b")),
            lines=(Line(0, 5, 0.01, 0.05),),  # endpoint out of range
            transformers=(),
            units=(Unit(0, 0, 0, 0, 0, False, "slack"),),
        )


def solution_with(v=1.0, line=0.5, trafo=0.5, slack_p=0.0, slack_q=0.0, converged=True, n_bus=3):
    return PowerFlowSolution(
        v_mag=np.full(n_bus, v) if np.isscalar(v) else np.asarray(v),
        v_ang=np.zeros(n_bus),
        line_loading=np.atleast_1d(line),
        trafo_loading=np.atleast_1d(trafo),
        slack_p=slack_p,
        slack_q=slack_q,
        p_loss=0.0,
        converged=converged,
        iterations=3,
        max_mismatch=0.0,
    )


LIMITS = ConstraintLimits(v_min=0.95, v_max=1.05, slack_p_min=-10, slack_p_max=10, slack_q_min=-5, slack_q_max=5)


def test_constraints_all_satisfied():
    report = evaluate_constraints(solution_with(), LIMITS)
    assert report.valid
    assert report.total() == 0.0


def test_voltage_excess():
    report = evaluate_constraints(solution_with(v=[1.0, 1.08, 1.0]), LIMITS)
    assert not report.valid
    assert report.voltage == pytest.approx(0.03)


def test_line_overload_fractional_excess():
    report = evaluate_constraints(solution_with(line=[1.2, 0.5]), LIMITS)
    assert not report.valid
    # loading excess is rating-relative, i.e. 0.2 of s_max
    assert report.line == pytest.approx(0.2)


def test_nonconverged_is_maximally_invalid():
    report = evaluate_constraints(solution_with(converged=False), LIMITS)
    assert not report.valid
    assert not report.converged
    scaling = PenaltyScaling.from_limits(LIMITS)
    assert penalty(report, scaling) == pytest.approx(10.0)


def test_penalty_linear_form():
    scaling = PenaltyScaling(voltage=0.05, line=1.0, trafo=1.0, slack_p=20.0, slack_q=10.0)
    valid = ConstraintReport(0, 0, 0, 0, 0, valid=True)
    assert penalty(valid, scaling) == 0.0
    single = ConstraintReport(0.03, 0, 0, 0, 0, valid=False)
    assert penalty(single, scaling) == pytest.approx(0.6)
    other = ConstraintReport(0, 0.4, 0, 0, 0, valid=False)
    both = ConstraintReport(0.03, 0.4, 0, 0, 0, valid=False)
    assert penalty(both, scaling) == pytest.approx(penalty(single, scaling) + penalty(other, scaling))


def test_penalty_monotone_in_each_violation():
    scaling = PenaltyScaling.from_limits(LIMITS)
    rng = np.random.default_rng(3)
    for _ in range(200):
        vals = rng.uniform(0, 2, 5)
        base = ConstraintReport(*vals, valid=False)
        idx = rng.integers(0, 5)
        bumped = list(vals)
        bumped[idx] += rng.uniform(0.01, 1.0)
        assert penalty(ConstraintReport(*bumped, valid=False), scaling) > penalty(base, scaling)


def test_validity_iff_zero_penalty():
    grid = meshed_grid()
    rng = np.random.default_rng(23)
    scaling = PenaltyScaling.from_limits(LIMITS)
    for _ in range(50):
        p, q = random_injections(grid, rng)
        sol = run_power_flow(grid, p, q)
        report = evaluate_constraints(sol, LIMITS)
        assert report.valid == (penalty(report, scaling) == 0.0)


def test_grid_json_round_trip(tmp_path):
    grid = meshed_grid()
    doc = grid_to_dict(grid, LIMITS)
    assert doc["format_version"] == 1
    text = json.dumps(doc)
    restored, limits = grid_from_dict(json.loads(text))
    assert restored == grid
    assert limits == LIMITS
    with pytest.raises(ConfigurationError):
        grid_from_dict({"format_version": 99})


def test_grid_file_round_trip(tmp_path):
    from opfdesign.grid import load_grid, save_grid

    grid = meshed_grid()
    path = tmp_path / "grid.json"
    save_grid(path, grid, LIMITS)
    restored, limits = load_grid(path)
    assert restored == grid
    assert limits == LIMITS
