"""Scalar (single displacement, single damage value) rate-independent toy
system with an exhaustive brute-force oracle.

The energy is ``E(t, u, z) = 1/2 (z^2 + eta) a u^2 - ell(t) u
+ 1/2 kappa_E z^2`` with the unidirectional dissipation
``R(v) = kappa_R |v|`` on ``v <= 0`` and the absolute value as ball norm.
It preserves the separately-quadratic structure of the field model, so
every code path of the adaptive scheme (staggered loop, ball constraint,
irreversibility bound, dual distance) is exercised against closed forms
and against grid search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .driver import StepRecord, Trace
from .model import SchemeParams, NormSpec
from .solvers import SolverFailure


@dataclass(eq=False)
class ZeroDimModel:
    """Defaults give an elastic phase, then a stable softening branch that
    folds mid-run: the increment series throttles, oscillates at onset and
    collapses into a jump (kappa_E must stay below kappa_R for an elastic
    phase and above 0.75*kappa_R for the branch to fold before z = 0)."""

    a: float = 1.0
    eta: float = 1e-3
    kappa_E: float = 0.85
    kappa_R: float = 1.0
    ell_rate: float = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.eta <= 0:
            raise ValueError("stiffness a and floor eta must be positive")

    def ell(self, t: float) -> float:
        return self.ell_rate * t

    def energy(self, t: float, u: float, z: float) -> float:
        return (0.5 * (z * z + self.eta) * self.a * u * u
                - self.ell(t) * u + 0.5 * self.kappa_E * z * z)

    def u_min(self, t: float, z: float) -> float:
        """Closed-form displacement minimizer at fixed damage."""
        return self.ell(t) / ((z * z + self.eta) * self.a)

    def dz_energy(self, u: float, z: float) -> float:
        """Damage derivative of the energy (the scalar 'density')."""
        return (self.a * u * u + self.kappa_E) * z

    def dual_distance(self, u: float, z: float) -> float:
        return max(0.0, self.dz_energy(u, z) - self.kappa_R)


def z_step(t: float, u: float, z_prev: float, rho: float,
           model: ZeroDimModel, tol: float = 1e-14,
           max_iter: int = 50):
    """Bounded scalar Newton for the damage step.

    Minimizes ``E(t, u, .) + R(. - z_prev)`` over
    ``[max(0, z_prev - rho), z_prev]``.  Returns (z, mu, lam): the solution
    and the multipliers of the ball (lower) and irreversibility (upper)
    bounds.
    """
    lo = max(0.0, z_prev - rho)
    hi = z_prev
    c = model.a * u * u + model.kappa_E
    z = z_prev
    for _ in range(max_iter):
        g = c * z - model.kappa_R
        z_new = min(max(z - g / c, lo), hi)
        if abs(z_new - z) <= tol * max(1.0, abs(z)):
            z = z_new
            break
        z = z_new
    g = c * z - model.kappa_R
    ball_side = z_prev - rho >= 0.0 and z <= lo + tol
    mu = max(0.0, g) if ball_side else 0.0  # ball pushes from below
    lam = max(0.0, -g) if z >= hi - tol else 0.0
    return z, mu, lam


def brute_force_z_step(t: float, u: float, z_prev: float, rho: float,
                       model: ZeroDimModel, grid_step: float = 1e-4) -> float:
    """Exhaustive grid minimization of the damage step objective."""
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    lo = max(0.0, z_prev - rho)
    hi = z_prev
    n = max(1, int(math.ceil((hi - lo) / grid_step)))
    grid = np.linspace(lo, hi, n + 1)
    c = model.a * u * u + model.kappa_E
    vals = 0.5 * c * grid ** 2 + model.kappa_R * (z_prev - grid)
    return float(grid[int(np.argmin(vals))])


def run_zero_dim(model: ZeroDimModel, params: SchemeParams,
                 z0: float = 1.0, check_oracle: bool = False,
                 grid_step: float = 1e-4) -> Trace:
    """Full adaptive evolution of the scalar system.

    With ``check_oracle`` every damage solve is cross-checked against the
    exhaustive grid oracle (within one grid cell); a mismatch raises.
    """
    if not 0.0 <= z0 <= 1.0:
        raise ValueError("z0 must lie in [0, 1]")
    rho, T = params.rho, params.T
    norm = NormSpec(kind="lalpha", alpha=2.0)  # |.| on scalars
    trace = Trace(scheme=params, z0=np.array([z0]), load_mode="TRACTION_RAMP",
                  dual_surrogate=False)
    z_prev = z0
    u_prev = None
    t = 0.0
    t_prev = 0.0
    k = 0
    max_steps = params.max_steps or (10 * math.ceil(T / rho) + 100000)
    while True:
        # staggered loop with closed-form substeps
        z_i, u_ref = z_prev, u_prev
        first_u = None
        iters = 0
        mu = lam = 0.0
        for i in range(1, params.max_am_iters + 1):
            iters = i
            u_i = model.u_min(t, z_i)
            if first_u is None:
                first_u = u_i
            z_new, mu, lam = z_step(t, u_i, z_prev, rho, model)
            if check_oracle:
                z_ref = brute_force_z_step(t, u_i, z_prev, rho, model,
                                           grid_step)
                if abs(z_new - z_ref) > 2.0 * grid_step:
                    raise SolverFailure("scalar damage step disagrees with "
                                        "the grid oracle",
                                        z=z_new, oracle=z_ref)
            du = (abs(u_i - u_ref) / max(abs(u_i), 1e-12)
                  if u_ref is not None else math.inf)
            dz = abs(z_new - z_i)
            u_ref, z_i = u_i, z_new
            if max(du, dz) <= params.tol_am:
                break
        u, z = u_ref, z_i
        if k == 0:
            trace.u_init = np.array([first_u])
            trace.energy_init = model.energy(0.0, first_u, z0)
            trace.load_power_init = model.ell_rate * first_u
        dz_norm = abs(z - z_prev)
        record = StepRecord(
            k=k,
            t=t,
            dt=t - t_prev if k > 0 else 0.0,
            dz_norm_V=dz_norm,
            am_iters=iters,
            energy=model.energy(t, u, z),
            R_increment=model.kappa_R * dz_norm,
            reaction=0.0,
            dual_distance=model.dual_distance(u, z),
            xi_norm=mu,
            ball_active=(z_prev - z) >= rho - 1e-12,
            load_power=model.ell_rate * u,
            am_converged=iters < params.max_am_iters,
            stationarity=abs(min(0.0, lam)),
        )
        trace.records.append(record)
        trace.snapshots[k] = (np.array([u]), np.array([z]))
        if t >= T:
            break
        if k + 1 > max_steps:
            trace.aborted = True
            raise SolverFailure("step budget exhausted before reaching T",
                                steps=k, t=t)
        dz_clamped = min(dz_norm, rho)
        t_prev, t = t, min(t + (rho - dz_clamped), T)
        z_prev, u_prev = z, u
        k += 1
    return trace
