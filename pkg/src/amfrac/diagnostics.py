"""Numerical certificates for computed traces: dual distance to the
stable set, complementarity between time advance and local stability, the
discrete energy-dissipation ledger, and arc-length interpolants.

The dual distance is evaluated in closed form: with the unidirectional
dissipation, the stable multipliers are exactly the densities bounded below
by ``-kappa_R``, so the distance of the negative damage gradient to that
set is the dual-norm of the positive part of ``density - kappa_R``.  A time
step can only advance while this distance vanishes at the preceding
iterate; jumps (zero time increments) are exempt.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import State, grad_z, lumped_weights
from .driver import Trace
from .mesh import Mesh
from .model import DIRICHLET_RAMP, LoadProgram, MaterialModel, NormSpec


def stable_set_distance(density: np.ndarray, weights: np.ndarray,
                        kappa: float, norm: NormSpec) -> float:
    """Closed-form dual distance for a nodal driving-force density.

    The stable multipliers are exactly the densities bounded below by
    ``-kappa``, so the pointwise projection leaves the positive part of
    ``density - kappa`` and the distance is its dual norm (L^{alpha'} for
    the L^alpha ball, an L^2 surrogate for H1).
    """
    excess = np.maximum(np.asarray(density) - kappa, 0.0)
    if norm.kind == "lalpha":
        ap = norm.alpha / (norm.alpha - 1.0)
        return float(np.sum(weights * excess ** ap) ** (1.0 / ap))
    return float(np.sqrt(np.sum(weights * excess ** 2)))


def dual_distance(state: State, mesh: Mesh, model: MaterialModel,
                  norm: NormSpec) -> float:
    """Distance (in the dual of the ball norm) from the negative damage
    gradient to the set of stable multipliers.

    Zero exactly at locally stable states; positive while the damage field
    is being driven.  For the H1 ball this returns an L2 surrogate
    (``norm.dual_is_surrogate`` is then True).
    """
    _, d = grad_z(state, mesh, model)
    w = lumped_weights(mesh)
    return stable_set_distance(d, w, model.r_coefficient, norm)


@dataclass
class ComplementarityViolation:
    k: int
    dt: float
    preceding_distance: float


def complementarity_check(trace: Trace, dist_tol: float | None = None,
                          dt_tol: float = 1e-10) -> list:
    """Flags steps that advanced physical time although the preceding
    iterate was not locally stable.

    A positive time increment at step k requires an inactive ball at step
    k-1, hence a vanishing dual distance there; jump steps (dt = 0) are
    exempt regardless of the distance.
    """
    if dist_tol is None:
        dist_tol = 10.0 * trace.scheme.tol_newton
    out = []
    recs = trace.records
    for k in range(1, len(recs)):
        if recs[k].dt > dt_tol and recs[k - 1].dual_distance > dist_tol:
            out.append(ComplementarityViolation(
                k=recs[k].k, dt=recs[k].dt,
                preceding_distance=recs[k - 1].dual_distance))
    return out


# ---------------------------------------------------------------------------
# Interpolants over artificial time
# ---------------------------------------------------------------------------

class InterpolantView:
    """Piecewise affine / piecewise constant reconstructions of a trace over
    the artificial-time grid ``s_k = k * rho``, k = -1 .. N.

    The virtual entry at k = -1 carries the initial time, the initial
    damage field and the first displacement solve, so a jump at the initial
    time is part of the reconstruction.  Field accessors need the stored
    snapshots of the bracketing steps and raise ``KeyError`` if these were
    evicted.
    """

    def __init__(self, trace: Trace):
        self.trace = trace
        self.rho = trace.scheme.rho
        recs = trace.records
        self.t_grid = np.concatenate([[recs[0].t], [r.t for r in recs]])
        self.s_grid = self.rho * np.arange(-1, len(recs))
        self.s_final = self.s_grid[-1]

    def _locate(self, s: float, closed_right: bool) -> int:
        """Index k >= 0 such that s lies in the k-th interval
        [s_{k-1}, s_k) (or (s_{k-1}, s_k] when closed_right)."""
        if s < self.s_grid[0] - 1e-12 * self.rho or s > self.s_final + 1e-12 * self.rho:
            raise ValueError(f"s = {s} outside [{self.s_grid[0]}, {self.s_final}]")
        s = min(max(s, self.s_grid[0]), self.s_final)
        if closed_right:
            k = bisect.bisect_left(list(self.s_grid), s) - 1
        else:
            k = bisect.bisect_right(list(self.s_grid), s) - 1
        return int(min(max(k, 0), len(self.s_grid) - 2))

    # -- time ---------------------------------------------------------------
    def t_hat(self, s: float) -> float:
        k = self._locate(s, closed_right=False)
        s0 = self.s_grid[k]
        return float(self.t_grid[k]
                     + (s - s0) / self.rho * (self.t_grid[k + 1] - self.t_grid[k]))

    def t_lower(self, s: float) -> float:
        # the left-constant reconstruction attains T at the endpoint
        if s >= self.s_final:
            self._locate(s, closed_right=False)  # range check
            return float(self.t_grid[-1])
        return float(self.t_grid[self._locate(s, closed_right=False)])

    def t_upper(self, s: float) -> float:
        return float(self.t_grid[self._locate(s, closed_right=True) + 1])

    # -- fields -------------------------------------------------------------
    def _fields(self, k: int):
        """(u, z) of outer step k, with k = -1 the virtual initial entry."""
        return self.trace.snapshot(k)

    def z_hat(self, s: float) -> np.ndarray:
        k = self._locate(s, closed_right=False)
        _, z0 = self._fields(k - 1)
        _, z1 = self._fields(k)
        lam = (s - self.s_grid[k]) / self.rho
        return (1.0 - lam) * z0 + lam * z1

    def u_hat(self, s: float) -> np.ndarray:
        k = self._locate(s, closed_right=False)
        u0, _ = self._fields(k - 1)
        u1, _ = self._fields(k)
        lam = (s - self.s_grid[k]) / self.rho
        return (1.0 - lam) * u0 + lam * u1

    def z_lower(self, s: float) -> np.ndarray:
        k = self._locate(s, closed_right=False)
        if s >= self.s_final:
            k += 1
        return self._fields(k - 1)[1]

    def z_upper(self, s: float) -> np.ndarray:
        return self._fields(self._locate(s, closed_right=True))[1]

    def u_lower(self, s: float) -> np.ndarray:
        k = self._locate(s, closed_right=False)
        if s >= self.s_final:
            k += 1
        return self._fields(k - 1)[0]

    def u_upper(self, s: float) -> np.ndarray:
        return self._fields(self._locate(s, closed_right=True))[0]


def sample_interpolants(trace: Trace, s_values) -> dict:
    """Evaluate all interpolants at the given artificial times.

    Returns a dict with keys ``t_hat, u_hat, z_hat, t_lower, z_lower,
    t_upper, z_upper``; field entries are lists of arrays.
    """
    view = InterpolantView(trace)
    out = {"t_hat": [], "u_hat": [], "z_hat": [],
           "t_lower": [], "z_lower": [], "t_upper": [], "z_upper": []}
    for s in np.atleast_1d(s_values):
        out["t_hat"].append(view.t_hat(s))
        out["u_hat"].append(view.u_hat(s))
        out["z_hat"].append(view.z_hat(s))
        out["t_lower"].append(view.t_lower(s))
        out["z_lower"].append(view.z_lower(s))
        out["t_upper"].append(view.t_upper(s))
        out["z_upper"].append(view.z_upper(s))
    out["t_hat"] = np.array(out["t_hat"])
    out["t_lower"] = np.array(out["t_lower"])
    out["t_upper"] = np.array(out["t_upper"])
    return out


# ---------------------------------------------------------------------------
# Energy-dissipation ledger
# ---------------------------------------------------------------------------

@dataclass
class BalanceRow:
    k: int
    dE: float
    R_inc: float
    visc: float
    work: float
    residual: float
    cum_residual: float


@dataclass
class BalanceReport:
    """Per-step energy ledger.

    Row k covers the artificial-time interval ((k-1) rho, k rho] and closes
    the identity  dE + R_inc + visc - work = residual  by construction; the
    testable content is how the accumulated residual scales with rho.  In
    displacement control the work column is a trapezoidal reaction-force
    work and the ledger is flagged as a non-exact variant.
    """

    rows: list = field(default_factory=list)
    work_mode: str = "traction"
    dual_surrogate: bool = False

    @property
    def cumulative_residual(self) -> float:
        return self.rows[-1].cum_residual if self.rows else 0.0


def energy_balance(trace: Trace, load: LoadProgram) -> BalanceReport:
    """Build the per-step ledger from the recorded trace scalars.

    The dissipation and viscous integrands are constant on each interval
    (exact integrals); the work term uses the trapezoidal rule on the
    affine interpolants, which is exact for linear load ramps.
    """
    recs = trace.records
    dirichlet = trace.load_mode == DIRICHLET_RAMP
    report = BalanceReport(
        work_mode="dirichlet_reaction" if dirichlet else "traction",
        dual_surrogate=trace.dual_surrogate,
    )
    cum = 0.0
    e_prev = trace.energy_init
    power_prev = trace.load_power_init
    reaction_prev = recs[0].reaction
    t_prev = recs[0].t
    for r in recs:
        dE = r.energy - e_prev
        visc = r.dz_norm_V * r.dual_distance
        if dirichlet:
            work = 0.5 * (r.reaction + reaction_prev) * (
                load.ubar(r.t) - load.ubar(t_prev))
        else:
            # d/dt energy contribution is -<l'(t), u>; trapezoid over the
            # interval with t_hat' constant there
            work = -0.5 * (r.load_power + power_prev) * (r.t - t_prev)
        residual = dE + r.R_increment + visc - work
        cum += residual
        report.rows.append(BalanceRow(
            k=r.k, dE=dE, R_inc=r.R_increment, visc=visc, work=work,
            residual=residual, cum_residual=cum))
        e_prev = r.energy
        power_prev = r.load_power
        reaction_prev = r.reaction
        t_prev = r.t
    return report


# ---------------------------------------------------------------------------
# Structural invariants
# ---------------------------------------------------------------------------

@dataclass
class InvariantReport:
    rho: float
    z_min: float
    z_max: float
    irreversibility_violation: float
    dz_over_rho_max: float
    dt_min: float
    dt_max: float
    final_time_error: float
    normalization_max_error: float
    last_normalization_le_one: bool

    def ok(self, tol_z: float = 1e-8, tol_norm: float = 1e-8) -> bool:
        rho_slack = 1.0 + 1e-6
        return (self.z_min >= -tol_z
                and self.z_max <= 1.0 + tol_z
                and self.irreversibility_violation <= tol_z
                and self.dz_over_rho_max <= rho_slack
                and self.dt_min >= 0.0
                and self.dt_max <= self.rho * (1.0 + 1e-12)
                and self.final_time_error == 0.0
                and self.normalization_max_error <= tol_norm
                and self.last_normalization_le_one)


def check_trace_invariants(trace: Trace) -> InvariantReport:
    """Verify the proven structural properties on a stored trace.

    Needs all snapshots (run with ``store_all_snapshots=True``) for the
    bound and irreversibility checks.
    """
    recs = trace.records
    rho = trace.scheme.rho
    z_min, z_max = math.inf, -math.inf
    irr = -math.inf
    z_prev = trace.z0
    for r in recs:
        _, z = trace.snapshot(r.k)
        z_min = min(z_min, float(z.min()))
        z_max = max(z_max, float(z.max()))
        irr = max(irr, float((z - z_prev).max()))
        z_prev = z
    dz_over_rho = max(r.dz_norm_V / rho for r in recs)
    dt_min = min(r.dt for r in recs)
    dt_max = max(r.dt for r in recs)
    norm_err = 0.0
    last_le_one = True
    for k in range(1, len(recs)):
        val = (recs[k].dt + recs[k - 1].dz_norm_V) / rho
        if k < len(recs) - 1:
            norm_err = max(norm_err, abs(val - 1.0))
        else:
            last_le_one = val <= 1.0 + 1e-8
    return InvariantReport(
        rho=rho,
        z_min=z_min,
        z_max=z_max,
        irreversibility_violation=irr,
        dz_over_rho_max=dz_over_rho,
        dt_min=dt_min,
        dt_max=dt_max,
        final_time_error=abs(recs[-1].t - trace.scheme.T),
        normalization_max_error=norm_err,
        last_normalization_le_one=last_le_one,
    )


def normalization_residuals(trace: Trace) -> np.ndarray:
    """(dt_{k} + ||z_{k-1} - z_{k-2}||_V) / rho - 1 for the interior steps
    k = 1 .. N-1 (the final step is clamped at T and only bounded by 1)."""
    recs = trace.records
    rho = trace.scheme.rho
    vals = [
        (recs[k].dt + recs[k - 1].dz_norm_V) / rho - 1.0
        for k in range(1, len(recs) - 1)
    ]
    return np.array(vals)
