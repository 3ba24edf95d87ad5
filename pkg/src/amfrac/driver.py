"""Outer structure of the adaptive scheme: the staggered inner loop,
fixpoint detection and the arc-length time update.

Each outer step alternates the displacement and damage minimizations at a
frozen time until the iterates stop moving, then advances the physical time
by ``rho - ||z_k - z_{k-1}||_V`` (clamped to ``[0, rho]`` and to the final
time).  Vanishing time increments signal jumps: the evolution switches to
the artificial arc-length parameterization while the crack advances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import State, field_norm_V, lumped_weights, reaction_force, total_energy
from .mesh import Mesh
from .model import (
    DIRICHLET_RAMP,
    LoadProgram,
    MaterialModel,
    SchemeParams,
    dissipation_R,
)
from .solvers import SolverFailure, ZSolveReport, solve_u, solve_z


@dataclass
class StepRecord:
    """One outer-step row of a run trace."""

    k: int
    t: float
    dt: float
    dz_norm_V: float
    am_iters: int
    energy: float
    R_increment: float
    reaction: float
    dual_distance: float
    xi_norm: float
    ball_active: bool
    load_power: float = 0.0
    am_converged: bool = True
    stationarity: float = 0.0


@dataclass(eq=False)
class Trace:
    """Ordered step records plus the data needed to rebuild interpolants."""

    records: list = field(default_factory=list)
    scheme: SchemeParams = None
    z0: np.ndarray = None
    u_init: np.ndarray = None
    energy_init: float = 0.0
    load_power_init: float = 0.0
    snapshots: dict = field(default_factory=dict)
    load_mode: str = DIRICHLET_RAMP
    dual_surrogate: bool = False
    aborted: bool = False
    am_energy_histories: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        """Index N of the last record (records run k = 0 .. N)."""
        return self.records[-1].k

    @property
    def s_final(self) -> float:
        """Total artificial time N * rho."""
        return self.n_steps * self.scheme.rho

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def snapshot(self, k: int):
        if k == -1:
            return self.u_init, self.z0
        if k not in self.snapshots:
            raise KeyError(f"no stored fields for step {k} (snapshot evicted)")
        return self.snapshots[k]


@dataclass(eq=False)
class AMResult:
    u: np.ndarray
    z: np.ndarray
    iters: int
    first_u: np.ndarray
    z_report: ZSolveReport
    energy_history: list
    converged: bool


def am_loop(t: float, z_km1: np.ndarray, mesh: Mesh, model: MaterialModel,
            load: LoadProgram, params: SchemeParams,
            u_prev: np.ndarray | None = None) -> AMResult:
    """Alternate displacement/damage minimization at frozen time ``t``.

    Starts from the previous damage field and iterates to a Cauchy-type
    stopping rule; the returned pair is a fixpoint of the staggered map to
    tolerance.  The loop ends on a damage solve, so the damage KKT
    certificates hold exactly for the returned displacement.
    """
    z_i = z_km1
    u_ref = u_prev
    first_u = None
    # energy+dissipation along the iterates; the sequence starts at i = 1
    # (the previous step's displacement is inadmissible at the new time)
    hist = []
    weights = lumped_weights(mesh)
    report = None
    converged = False
    iters = 0
    for i in range(1, params.max_am_iters + 1):
        iters = i
        u_i = solve_u(t, z_i, mesh, model, load, params)
        if first_u is None:
            first_u = u_i
        report = solve_z(t, u_i, z_km1, params.rho, mesh, model, params)
        z_new = report.z
        hist.append(
            total_energy(State(t, u_i, z_new), mesh, model, load)
            + dissipation_R(z_new - z_km1, model, weights,
                            tol=params.tol_constraint)
        )
        u_scale = max(float(np.abs(u_i).max(initial=0.0)), 1e-12)
        du = (float(np.abs(u_i - u_ref).max()) / u_scale
              if u_ref is not None else math.inf)
        dz = float(np.abs(z_new - z_i).max())
        u_ref, z_i = u_i, z_new
        if max(du, dz) <= params.tol_am:
            converged = True
            break
    return AMResult(u=u_ref, z=z_i, iters=iters, first_u=first_u,
                    z_report=report, energy_history=hist, converged=converged)


def time_update(t_k: float, dz_norm_V: float, rho: float, T: float) -> float:
    """Adaptive update ``t_{k+1} = min(t_k + rho - ||dz||_V, T)``.

    The increment is clamped non-negative against round-off overshoot of
    the ball radius.
    """
    if dz_norm_V > rho * (1.0 + 1e-6) + 1e-12:
        raise SolverFailure(
            "damage increment exceeds the arc-length radius",
            dz_norm_V=dz_norm_V, rho=rho)
    dz = min(dz_norm_V, rho)
    # associate as t + (rho - dz): keeps dt >= 0 exactly when dz == rho
    return min(t_k + (rho - dz), T)


def _dual_distance(state, mesh, model, norm):
    from .diagnostics import dual_distance
    return dual_distance(state, mesh, model, norm)


def _store_snapshot(k: int, dt: float, prev_dt: float, is_final: bool,
                    params: SchemeParams) -> bool:
    if params.store_all_snapshots:
        return True
    stride = max(1, params.snapshot_stride)
    onset = dt <= 1e-14 and prev_dt > 1e-14
    return k == 0 or is_final or onset or (k % stride == 0)


def _check_z0(z0: np.ndarray):
    if z0.min(initial=1.0) < 0.0 or z0.max(initial=0.0) > 1.0:
        raise ValueError("initial damage field must lie in [0, 1]")


def run(mesh: Mesh, model: MaterialModel, load: LoadProgram,
        params: SchemeParams, z0: np.ndarray, record_hook=None,
        keep_am_histories: bool = False) -> Trace:
    """Full adaptive evolution from ``t = 0`` until the final time is
    reached and the step at ``T`` is completed.

    The first step (k = 0) re-minimizes at ``t = 0`` against the initial
    field, so a jump at the initial time is detected.  Solver failures
    abort the run with the partial trace attached to the raised error.
    """
    _check_z0(z0)
    weights = lumped_weights(mesh)
    trace = Trace(scheme=params, z0=z0.copy(),
                  load_mode=load.mode,
                  dual_surrogate=params.norm_V.dual_is_surrogate)
    f1 = load.force_rate_vector(mesh)
    z_prev = z0.copy()
    u_prev = None
    t = 0.0
    t_prev = 0.0
    k = 0
    max_steps = params.max_steps or (10 * math.ceil(params.T / params.rho) + 10000)
    while True:
        try:
            res = am_loop(t, z_prev, mesh, model, load, params, u_prev=u_prev)
        except SolverFailure as exc:
            trace.aborted = True
            exc.partial_trace = trace
            raise
        if k == 0:
            trace.u_init = res.first_u.copy()
            trace.energy_init = total_energy(State(0.0, res.first_u, z0),
                                             mesh, model, load)
            trace.load_power_init = float(f1 @ res.first_u)
        state = State(t, res.u, res.z)
        dz_norm = field_norm_V(res.z - z_prev, mesh, params.norm_V)
        dt = t - t_prev if k > 0 else 0.0
        record = StepRecord(
            k=k,
            t=t,
            dt=dt,
            dz_norm_V=dz_norm,
            am_iters=res.iters,
            energy=total_energy(state, mesh, model, load),
            R_increment=dissipation_R(res.z - z_prev, model, weights,
                                      tol=params.tol_constraint),
            reaction=(reaction_force(state, mesh, model, load)
                      if load.mode == DIRICHLET_RAMP else 0.0),
            dual_distance=_dual_distance(state, mesh, model, params.norm_V),
            xi_norm=res.z_report.xi_norm_dual,
            ball_active=res.z_report.constraint_active,
            load_power=float(f1 @ res.u),
            am_converged=res.converged,
            stationarity=res.z_report.stationarity_residual,
        )
        prev_dt = trace.records[-1].dt if trace.records else 1.0
        is_final = t >= params.T
        if _store_snapshot(k, dt, prev_dt, is_final, params):
            trace.snapshots[k] = (res.u.copy(), res.z.copy())
        if keep_am_histories:
            trace.am_energy_histories[k] = list(res.energy_history)
        trace.records.append(record)
        if record_hook is not None:
            record_hook(record)
        if is_final:
            break
        if k + 1 > max_steps:
            trace.aborted = True
            exc = SolverFailure("step budget exhausted before reaching T",
                                steps=k, t=t)
            exc.partial_trace = trace
            raise exc
        t_next = time_update(t, dz_norm, params.rho, params.T)
        z_prev, u_prev = res.z, res.u
        t_prev, t = t, t_next
        k += 1
    return trace


def run_pure_am(mesh: Mesh, model: MaterialModel, load: LoadProgram,
                params: SchemeParams, z0: np.ndarray, n_steps: int,
                times: np.ndarray | None = None,
                record_hook=None, keep_am_histories: bool = False) -> Trace:
    """Staggered baseline on a prescribed time grid without the arc-length
    ball (infinite-radius behavior).

    ``times`` overrides the uniform grid; it must start at 0.  Useful to
    replay the adaptive scheme's grid for step-by-step comparisons.
    """
    _check_z0(z0)
    if times is None:
        times = np.linspace(0.0, params.T, n_steps + 1)
    times = np.asarray(times, dtype=float)
    if abs(times[0]) > 0:
        raise ValueError("time grid must start at 0")
    pure = replace(params, rho=math.inf)
    weights = lumped_weights(mesh)
    trace = Trace(scheme=params, z0=z0.copy(), load_mode=load.mode,
                  dual_surrogate=params.norm_V.dual_is_surrogate)
    f1 = load.force_rate_vector(mesh)
    z_prev = z0.copy()
    u_prev = None
    for k, t in enumerate(times):
        res = am_loop(t, z_prev, mesh, model, load, pure, u_prev=u_prev)
        if k == 0:
            trace.u_init = res.first_u.copy()
            trace.energy_init = total_energy(State(0.0, res.first_u, z0),
                                             mesh, model, load)
            trace.load_power_init = float(f1 @ res.first_u)
        state = State(t, res.u, res.z)
        record = StepRecord(
            k=k,
            t=t,
            dt=t - times[k - 1] if k > 0 else 0.0,
            dz_norm_V=field_norm_V(res.z - z_prev, mesh, params.norm_V),
            am_iters=res.iters,
            energy=total_energy(state, mesh, model, load),
            R_increment=dissipation_R(res.z - z_prev, model, weights,
                                      tol=params.tol_constraint),
            reaction=(reaction_force(state, mesh, model, load)
                      if load.mode == DIRICHLET_RAMP else 0.0),
            dual_distance=_dual_distance(state, mesh, model, params.norm_V),
            xi_norm=0.0,
            ball_active=False,
            load_power=float(f1 @ res.u),
            am_converged=res.converged,
            stationarity=res.z_report.stationarity_residual,
        )
        trace.records.append(record)
        if _store_snapshot(k, record.dt, 1.0, k == len(times) - 1, params):
            trace.snapshots[k] = (res.u.copy(), res.z.copy())
        if keep_am_histories:
            trace.am_energy_histories[k] = list(res.energy_history)
        if record_hook is not None:
            record_hook(record)
        z_prev, u_prev = res.z, res.u
    return trace
