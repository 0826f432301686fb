"""Bus-branch grid model, Newton-Raphson AC power flow, and constraint checks.

All electrical quantities are handled in per-unit on the grid's MVA base
internally; the public data model (unit ranges, injections, slack limits)
is in MW / MVAr.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError

GRID_FORMAT_VERSION = 1

PF_TOLERANCE = 1e-8
PF_MAX_ITER = 20

#: violations below this are snapped to zero so that valid <=> penalty == 0
VALIDITY_TOL = 1e-6

#: per-family sentinel violation (in units of the family scale) assigned to
#: non-converged solves; with five families the default penalty caps at 10.0
NONCONVERGED_SENTINEL = 2.0

UNIT_KINDS = ("generator", "load", "storage", "slack")


@dataclass(frozen=True)
class Bus:
    name: str


@dataclass(frozen=True)
class Line:
    """Pi-model branch: series r + jx, total charging susceptance b (all p.u.)."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    s_max: float = 10.0  # MVA rating


@dataclass(frozen=True)
class Transformer:
    """Series-impedance transformer branch (unit tap, no charging)."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    s_max: float = 10.0


@dataclass(frozen=True)
class Unit:
    """Injection device at a bus; ranges are nominal signed injections in MW/MVAr.

    Loads inject negative active power, so a load with 4 MW peak demand has
    p_min = -4.0, p_max = 0.0.
    """

    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    controllable: bool
    kind: str


@dataclass(frozen=True)
class GridState:
    """One uncontrollable scenario: exogenous injections per unit, the
    state-dependent setpoint boxes of the controllable units, and prices.

    ``p_inj`` / ``q_inj`` hold the pre-action operating point for every unit
    (for actuated axes this is the default setpoint before the agent acts).
    """

    p_inj: np.ndarray  # MW per unit
    q_inj: np.ndarray  # MVAr per unit
    p_min: np.ndarray  # MW dynamic setpoint bounds per unit
    p_max: np.ndarray
    q_min: np.ndarray  # MVAr dynamic setpoint bounds per unit
    q_max: np.ndarray
    price_p: np.ndarray  # currency/MWh per unit
    price_q: np.ndarray  # currency/MVArh per unit
    price_loss: float = 0.0


def validate_state(state: GridState, units: tuple["Unit", ...], atol: float = 1e-9) -> None:
    for arr in (state.p_inj, state.q_inj, state.p_min, state.p_max, state.q_min, state.q_max):
        if arr.shape != (len(units),) or not np.all(np.isfinite(arr)):
            raise ConfigurationError("state arrays must be finite with one entry per unit")
    for i, u in enumerate(units):
        if state.p_min[i] < u.p_min - atol or state.p_max[i] > u.p_max + atol:
            raise ConfigurationError(f"dynamic P limits of unit {i} exceed nominal range")
        if state.q_min[i] < u.q_min - atol or state.q_max[i] > u.q_max + atol:
            raise ConfigurationError(f"dynamic Q limits of unit {i} exceed nominal range")


@dataclass(frozen=True)
class ConstraintLimits:
    v_min: float = 0.95
    v_max: float = 1.05
    line_loading_max: float = 1.0
    trafo_loading_max: float = 1.0
    slack_p_min: float = -50.0  # MW
    slack_p_max: float = 50.0
    slack_q_min: float = -20.0  # MVAr
    slack_q_max: float = 20.0


@dataclass(frozen=True)
class Grid:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    transformers: tuple[Transformer, ...]
    units: tuple[Unit, ...]
    base_mva: float = 10.0

    def __post_init__(self):
        validate_grid(self)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @cached_property
    def slack_bus(self) -> int:
        return next(u.bus for u in self.units if u.kind == "slack")

    @cached_property
    def pq_buses(self) -> np.ndarray:
        return np.array([i for i in range(self.n_buses) if i != self.slack_bus])

    @cached_property
    def ybus(self) -> np.ndarray:
        n = self.n_buses
        y = np.zeros((n, n), dtype=complex)
        for br in self.lines + self.transformers:
            ys = 1.0 / complex(br.r, br.x)
            bsh = 1j * getattr(br, "b", 0.0) / 2.0
            f, t = br.from_bus, br.to_bus
            y[f, f] += ys + bsh
            y[t, t] += ys + bsh
            y[f, t] -= ys
            y[t, f] -= ys
        return y

    @cached_property
    def _pq_grid(self):
        return np.ix_(self.pq_buses, self.pq_buses)

    @cached_property
    def _branch_arrays(self):
        branches = self.lines + self.transformers
        f = np.array([b.from_bus for b in branches], dtype=int)
        t = np.array([b.to_bus for b in branches], dtype=int)
        ys = np.array([1.0 / complex(b.r, b.x) for b in branches])
        bsh = np.array([1j * getattr(b, "b", 0.0) / 2.0 for b in branches])
        s_max = np.array([b.s_max for b in branches])
        return f, t, ys, bsh, s_max, len(self.lines)


def validate_grid(grid: Grid) -> None:
    n = len(grid.buses)
    if n < 2:
        raise ConfigurationError("grid needs at least two buses")
    if grid.base_mva <= 0:
        raise ConfigurationError("base_mva must be positive")
    slack_units = [u for u in grid.units if u.kind == "slack"]
    if len(slack_units) != 1:
        raise ConfigurationError(f"expected exactly one slack unit, got {len(slack_units)}")
    for u in grid.units:
        if u.kind not in UNIT_KINDS:
            raise ConfigurationError(f"unknown unit kind {u.kind!r}")
        if not 0 <= u.bus < n:
            raise ConfigurationError(f"unit bus {u.bus} out of range")
        if u.p_min > u.p_max or u.q_min > u.q_max:
            raise ConfigurationError("unit nominal ranges must satisfy min <= max")
    branches = grid.lines + grid.transformers
    if not branches:
        raise ConfigurationError("grid has no branches")
    adjacency = [[] for _ in range(n)]
    for br in branches:
        if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
            raise ConfigurationError("branch endpoint references unknown bus")
        if br.r == 0 and br.x == 0:
            raise ConfigurationError("branch needs nonzero impedance")
        adjacency[br.from_bus].append(br.to_bus)
        adjacency[br.to_bus].append(br.from_bus)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adjacency[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != n:
        raise ConfigurationError("network graph is not connected")


@dataclass(frozen=True)
class PowerFlowSolution:
    v_mag: np.ndarray  # p.u., per bus
    v_ang: np.ndarray  # rad, per bus
    line_loading: np.ndarray  # fraction of s_max, per line
    trafo_loading: np.ndarray  # fraction of s_max, per transformer
    slack_p: float  # MW
    slack_q: float  # MVAr
    p_loss: float  # MW
    converged: bool
    iterations: int
    max_mismatch: float  # p.u.


def run_power_flow(
    grid: Grid,
    p_bus_mw: np.ndarray,
    q_bus_mvar: np.ndarray,
    tol: float = PF_TOLERANCE,
    max_iter: int = PF_MAX_ITER,
) -> PowerFlowSolution:
    """Full Newton-Raphson solve in polar form with a flat start.

    ``p_bus_mw`` / ``q_bus_mvar`` are net injections per bus; the entries at
    the slack bus are ignored (the slack balances the system).  A singular
    Jacobian or diverging iterate yields ``converged == False`` rather than
    an exception.
    """
    p_bus_mw = np.asarray(p_bus_mw, dtype=float)
    q_bus_mvar = np.asarray(q_bus_mvar, dtype=float)
    if p_bus_mw.shape != (grid.n_buses,) or q_bus_mvar.shape != (grid.n_buses,):
        raise ConfigurationError("injection vectors must have one entry per bus")
    if not (np.all(np.isfinite(p_bus_mw)) and np.all(np.isfinite(q_bus_mvar))):
        raise ConfigurationError("injections must be finite")

    s_spec = (p_bus_mw + 1j * q_bus_mvar) / grid.base_mva
    ybus = grid.ybus
    pq = grid.pq_buses
    pq_grid = grid._pq_grid
    n = grid.n_buses
    k = len(pq)
    diag_idx = np.arange(n)
    jac = np.empty((2 * k, 2 * k))
    rhs = np.empty(2 * k)

    vm = np.ones(n)
    va = np.zeros(n)
    converged = False
    iterations = 0
    max_mismatch = np.inf

    for it in range(max_iter + 1):
        v = vm * np.exp(1j * va)
        ibus = ybus @ v
        s_calc = v * np.conj(ibus)
        dp = s_spec.real[pq] - s_calc.real[pq]
        dq = s_spec.imag[pq] - s_calc.imag[pq]
        max_mismatch = float(max(np.max(np.abs(dp)), np.max(np.abs(dq))))
        if max_mismatch <= tol:
            converged = True
            iterations = it
            break
        if it == max_iter:
            iterations = it
            break

        # dS/dVa and dS/dVm written with broadcasting instead of diag matmuls
        conj_ibus = np.conj(ibus)
        ds_dva = (-1j) * v[:, None] * np.conj(ybus * v[None, :])
        ds_dva[diag_idx, diag_idx] += 1j * v * conj_ibus
        vnorm = v / vm
        ds_dvm = v[:, None] * np.conj(ybus * vnorm[None, :])
        ds_dvm[diag_idx, diag_idx] += conj_ibus * vnorm

        jac[:k, :k] = ds_dva.real[pq_grid]
        jac[:k, k:] = ds_dvm.real[pq_grid]
        jac[k:, :k] = ds_dva.imag[pq_grid]
        jac[k:, k:] = ds_dvm.imag[pq_grid]
        rhs[:k] = dp
        rhs[k:] = dq
        try:
            dx = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError:
            iterations = it
            break
        if not np.all(np.isfinite(dx)):
            iterations = it
            break
        va[pq] += dx[:k]
        vm[pq] += dx[k:]
        if np.any(vm <= 1e-3) or np.any(vm > 10.0) or not np.all(np.isfinite(vm)):
            iterations = it + 1
            break

    v = vm * np.exp(1j * va)
    ibus = grid.ybus @ v
    s_calc = v * np.conj(ibus)
    slack_s = s_calc[grid.slack_bus] * grid.base_mva
    p_loss = float(np.sum(s_calc.real)) * grid.base_mva

    f, t, ys, bsh, s_max, n_lines = grid._branch_arrays
    vf, vt = v[f], v[t]
    i_f = (vf - vt) * ys + vf * bsh
    i_t = (vt - vf) * ys + vt * bsh
    loading = np.maximum(np.abs(vf * np.conj(i_f)), np.abs(vt * np.conj(i_t))) * grid.base_mva / s_max
    line_loading = loading[:n_lines]
    trafo_loading = loading[n_lines:]

    return PowerFlowSolution(
        v_mag=vm,
        v_ang=va,
        line_loading=line_loading,
        trafo_loading=trafo_loading,
        slack_p=float(slack_s.real),
        slack_q=float(slack_s.imag),
        p_loss=p_loss,
        converged=converged,
        iterations=iterations,
        max_mismatch=max_mismatch,
    )


@dataclass(frozen=True)
class ConstraintReport:
    """Per-family violation magnitudes, all nonnegative.

    Voltage violations are in p.u., loading violations in fractions of the
    branch rating, slack violations in MW / MVAr.  Sub-tolerance violations
    are snapped to zero so ``valid`` is equivalent to a zero penalty.
    """

    voltage: float
    line: float
    trafo: float
    slack_p: float
    slack_q: float
    valid: bool
    converged: bool = True

    def total(self) -> float:
        return self.voltage + self.line + self.trafo + self.slack_p + self.slack_q


@dataclass(frozen=True)
class PenaltyScaling:
    """Fixed per-family normalizers; defaults are the constraint range widths."""

    voltage: float
    line: float
    trafo: float
    slack_p: float
    slack_q: float

    @classmethod
    def from_limits(cls, limits: ConstraintLimits) -> "PenaltyScaling":
        return cls(
            voltage=limits.v_max - limits.v_min,
            line=limits.line_loading_max,
            trafo=limits.trafo_loading_max,
            slack_p=limits.slack_p_max - limits.slack_p_min,
            slack_q=limits.slack_q_max - limits.slack_q_min,
        )


def _snap(value: float) -> float:
    return value if value > VALIDITY_TOL else 0.0


def evaluate_constraints(solution: PowerFlowSolution, limits: ConstraintLimits) -> ConstraintReport:
    """One-sided excess per constraint family, summed over elements.

    A non-converged solution is maximally invalid: every family gets a
    sentinel violation of ``NONCONVERGED_SENTINEL`` times its default scale.
    """
    if not solution.converged:
        scale = PenaltyScaling.from_limits(limits)
        return ConstraintReport(
            voltage=NONCONVERGED_SENTINEL * scale.voltage,
            line=NONCONVERGED_SENTINEL * scale.line,
            trafo=NONCONVERGED_SENTINEL * scale.trafo,
            slack_p=NONCONVERGED_SENTINEL * scale.slack_p,
            slack_q=NONCONVERGED_SENTINEL * scale.slack_q,
            valid=False,
            converged=False,
        )

    v = solution.v_mag
    voltage = float(np.sum(np.maximum(0.0, v - limits.v_max) + np.maximum(0.0, limits.v_min - v)))
    line = float(np.sum(np.maximum(0.0, solution.line_loading - limits.line_loading_max)))
    trafo = float(np.sum(np.maximum(0.0, solution.trafo_loading - limits.trafo_loading_max)))
    slack_p = max(0.0, solution.slack_p - limits.slack_p_max) + max(0.0, limits.slack_p_min - solution.slack_p)
    slack_q = max(0.0, solution.slack_q - limits.slack_q_max) + max(0.0, limits.slack_q_min - solution.slack_q)

    voltage, line, trafo = _snap(voltage), _snap(line), _snap(trafo)
    slack_p, slack_q = _snap(slack_p), _snap(slack_q)
    valid = (voltage == 0.0) and (line == 0.0) and (trafo == 0.0) and (slack_p == 0.0) and (slack_q == 0.0)
    return ConstraintReport(
        voltage=voltage, line=line, trafo=trafo, slack_p=slack_p, slack_q=slack_q, valid=valid
    )


def penalty(report: ConstraintReport, scaling: PenaltyScaling) -> float:
    """Linear sum of normalized violations; zero exactly on valid reports."""
    return (
        report.voltage / scaling.voltage
        + report.line / scaling.line
        + report.trafo / scaling.trafo
        + report.slack_p / scaling.slack_p
        + report.slack_q / scaling.slack_q
    )


# -- grid definition file (JSON) ------------------------------------------


def grid_to_dict(grid: Grid, limits: ConstraintLimits | None = None) -> dict:
    doc = {
        "format_version": GRID_FORMAT_VERSION,
        "base_mva": grid.base_mva,
        "buses": [asdict(b) for b in grid.buses],
        "lines": [asdict(ln) for ln in grid.lines],
        "transformers": [asdict(t) for t in grid.transformers],
        "units": [asdict(u) for u in grid.units],
    }
    if limits is not None:
        doc["limits"] = asdict(limits)
    return doc


def grid_from_dict(doc: dict) -> tuple[Grid, ConstraintLimits | None]:
    version = doc.get("format_version")
    if version != GRID_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported grid format_version {version!r}")
    try:
        grid = Grid(
            buses=tuple(Bus(**b) for b in doc["buses"]),
            lines=tuple(Line(**ln) for ln in doc["lines"]),
            transformers=tuple(Transformer(**t) for t in doc["transformers"]),
            units=tuple(Unit(**u) for u in doc["units"]),
            base_mva=float(doc["base_mva"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed grid document: {exc}") from exc
    limits = ConstraintLimits(**doc["limits"]) if "limits" in doc else None
    return grid, limits


def save_grid(path, grid: Grid, limits: ConstraintLimits | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(grid_to_dict(grid, limits), fh, indent=2)


def load_grid(path) -> tuple[Grid, ConstraintLimits | None]:
    with open(path) as fh:
        return grid_from_dict(json.load(fh))
