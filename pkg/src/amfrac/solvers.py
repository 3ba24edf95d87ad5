"""Inner minimizations of the staggered scheme.

The displacement subproblem is a symmetric positive definite linear solve
after Dirichlet elimination.  The damage subproblem minimizes a convex
quadratic under the nodal irreversibility bound ``z <= z_prev`` and the
arc-length ball ``||z - z_prev||_V <= rho``; both constraints are treated
with an augmented Lagrangian whose inner problems are solved by a
semismooth Newton method with backtracking, followed by a Newton polish of
the active-set KKT system that drives the stationarity residual to solver
tolerance.  On the feasible cone the L^alpha ball is smooth; its gradient
singularity at ``z = z_prev`` is removed by a negligible regularization of
the alpha-th power sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    element_data,
    field_norm_V,
    lumped_weights,
    assemble_K,
    z_quadratic,
)
from .mesh import Mesh
from .model import LoadProgram, MaterialModel, NormSpec, SchemeParams

_EPS_REG = 1e-30  # removes the norm kink exactly at the inactive point


class SolverFailure(RuntimeError):
    """Inner solver did not converge; carries the last residuals."""

    def __init__(self, message: str, **residuals):
        super().__init__(message + (f" ({residuals})" if residuals else ""))
        self.residuals = residuals


def dual_norm_lumped(g: np.ndarray, weights: np.ndarray, norm: NormSpec) -> float:
    """Discrete dual norm of a functional vector via nodal densities.

    For the L^alpha ball this is the lumped L^{alpha'} norm of g_i / w_i;
    for the H1 ball an L^2 surrogate is used.
    """
    d = g / weights
    if norm.kind == "lalpha" and np.isfinite(norm.alpha):
        ap = norm.alpha / (norm.alpha - 1.0)
        return float(np.sum(weights * np.abs(d) ** ap) ** (1.0 / ap))
    return float(np.sqrt(np.sum(weights * d ** 2)))


# ---------------------------------------------------------------------------
# Displacement solve
# ---------------------------------------------------------------------------

def solve_u(t: float, z: np.ndarray, mesh: Mesh, model: MaterialModel,
            load: LoadProgram, params: SchemeParams | None = None) -> np.ndarray:
    """Equilibrium displacement at fixed damage: the unique minimizer of the
    displacement-quadratic energy under the current Dirichlet data."""
    K = assemble_K(z, mesh, model)
    f = load.force_vector(mesh, t)
    mask, values = load.dirichlet_dofs(mesh)
    u = values(t)
    free = ~mask
    Kff = K[free][:, free].tocsc()
    rhs = f[free] - K[free][:, mask] @ u[mask]
    try:
        lu = splu(Kff)
    except RuntimeError as exc:  # pragma: no cover - guarded by eta > 0
        raise SolverFailure(f"singular displacement system: {exc}") from exc
    x = lu.solve(rhs)
    # one step of iterative refinement keeps the equilibrium residual at
    # round-off even on badly graded meshes
    x += lu.solve(rhs - Kff @ x)
    u[free] = x
    return u


# ---------------------------------------------------------------------------
# Ball-constraint machinery
# ---------------------------------------------------------------------------

class _Ball:
    """Value and derivatives of v -> ||v||_V for the two norm choices."""

    def __init__(self, mesh: Mesh, norm: NormSpec):
        self.norm = norm
        data = element_data(mesh)
        if norm.kind == "lalpha":
            self.P = data.P
            self.w = data.wq
        else:
            self.G = (data.mass(mesh) + data.laplacian(mesh)).tocsr()

    def value(self, v: np.ndarray) -> float:
        if self.norm.kind == "lalpha":
            a = self.norm.alpha
            S = float(np.sum(self.w * np.abs(self.P @ v) ** a)) + _EPS_REG
            return S ** (1.0 / a)
        return math.sqrt(float(v @ (self.G @ v)) + _EPS_REG)

    def grad(self, v: np.ndarray):
        """Returns (N, gradN) at v."""
        if self.norm.kind == "lalpha":
            a = self.norm.alpha
            vq = self.P @ v
            absq = np.abs(vq)
            S = float(np.sum(self.w * absq ** a)) + _EPS_REG
            N = S ** (1.0 / a)
            gS_q = self.w * absq ** (a - 2.0) * vq  # zero where vq == 0
            gN = S ** (1.0 / a - 1.0) * (self.P.T @ gS_q)
            return N, gN
        Gv = self.G @ v
        N = math.sqrt(float(v @ Gv) + _EPS_REG)
        return N, Gv / N

    def hess_parts(self, v: np.ndarray, mult: float, beta: float):
        """Curvature of ``mult * N(v) + beta/2 * (N(v) - const)^2`` split as
        a sparse matrix plus ``c * a a^T``; returns (sparse, a, c)."""
        if self.norm.kind == "lalpha":
            a_exp = self.norm.alpha
            vq = self.P @ v
            absq = np.abs(vq)
            S = float(np.sum(self.w * absq ** a_exp)) + _EPS_REG
            D = self.w * absq ** (a_exp - 2.0)
            Hs = (mult * (a_exp - 1.0) * S ** (1.0 / a_exp - 1.0)) * (
                self.P.T @ sp.diags(D) @ self.P
            )
            gS = a_exp * (self.P.T @ (D * vq))
            c = (
                mult * (1.0 / a_exp) * (1.0 / a_exp - 1.0) * S ** (1.0 / a_exp - 2.0)
                + beta * (1.0 / a_exp) ** 2 * S ** (2.0 / a_exp - 2.0)
            )
            return Hs.tocsr(), gS, c
        Gv = self.G @ v
        N = math.sqrt(float(v @ Gv) + _EPS_REG)
        Hs = (mult / N) * self.G
        c = -mult / N ** 3 + beta / N ** 2
        return Hs.tocsr(), Gv, c


def _solve_with_rank1(lu, c: float, a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (H + c a a') x = rhs given a factorization of H."""
    x = lu.solve(rhs)
    if a is None or c == 0.0:
        return x
    y = lu.solve(a)
    denom = 1.0 + c * float(a @ y)
    if abs(denom) < 1e-14:
        return x
    return x - (c * float(a @ x) / denom) * y


# ---------------------------------------------------------------------------
# Augmented Lagrangian state and update
# ---------------------------------------------------------------------------

@dataclass
class ALIterate:
    """Multiplier/penalty state between augmented-Lagrangian outer passes."""

    lam: np.ndarray
    mu: float
    beta: float
    box_gap: np.ndarray = None
    ball_gap: float = -math.inf
    violation: float = math.inf
    prev_violation: float = math.inf


def al_penalty_update(it: ALIterate, params: SchemeParams) -> ALIterate:
    """First-order multiplier update with conditional penalty growth.

    lam <- max(0, lam + beta * (z - z_prev)),
    mu  <- max(0, mu + beta * (||z - z_prev||_V - rho)); beta grows when the
    constraint violation did not shrink by a factor of 4.
    """
    lam = np.maximum(0.0, it.lam + it.beta * it.box_gap)
    mu = max(0.0, it.mu + it.beta * it.ball_gap)
    beta = it.beta
    if it.violation > 0.25 * it.prev_violation:
        beta *= params.beta_growth
    if not math.isfinite(beta) or beta > 1e30:
        raise SolverFailure("augmented-Lagrangian penalty overflow",
                            beta=beta, violation=it.violation)
    return ALIterate(lam=lam, mu=mu, beta=beta,
                     prev_violation=it.violation)


# ---------------------------------------------------------------------------
# Damage solve
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ZSolveReport:
    """Solution and KKT certificates of one damage subproblem."""

    z: np.ndarray
    lam: np.ndarray
    mu: float
    xi: np.ndarray
    xi_norm_dual: float
    constraint_active: bool
    stationarity_residual: float
    al_iters: int
    newton_iters: int
    objective: float
    dz_norm_V: float
    lower_clamps: int = 0
    converged: bool = True


def _al_value(Q, btot, z, z_prev, ball, rho, lam, mu, beta):
    J = 0.5 * float(z @ (Q @ z)) - float(btot @ z)
    g1 = z - z_prev
    a1 = np.maximum(0.0, lam + beta * g1)
    val = J + float(np.sum(a1 ** 2 - lam ** 2)) / (2.0 * beta)
    if ball is not None:
        g2 = ball.value(z - z_prev) - rho
        a2 = max(0.0, mu + beta * g2)
        val += (a2 ** 2 - mu ** 2) / (2.0 * beta)
    return val


def solve_z(t: float, u: np.ndarray, z_prev: np.ndarray, rho: float,
            mesh: Mesh, model: MaterialModel, params: SchemeParams) -> ZSolveReport:
    """Damage update: minimize the damage-quadratic energy plus dissipation
    subject to ``z <= z_prev`` (nodal) and ``||z - z_prev||_V <= rho``.

    ``rho = inf`` disables the ball (plain staggered step).
    """
    Q, b, _ = z_quadratic(u, mesh, model)
    w = lumped_weights(mesh)
    btot = b + model.r_coefficient * w
    n = z_prev.size
    norm = params.norm_V
    has_ball = np.isfinite(rho)
    ball = _Ball(mesh, norm) if has_ball else None

    g_scale = max(1.0, float(np.abs(Q @ z_prev - btot).max()))
    stat_scale = max(1.0, dual_norm_lumped(Q @ z_prev - btot, w, norm))
    beta = params.beta0 * max(1.0, float(np.abs(Q.diagonal()).max()))
    state = ALIterate(lam=np.zeros(n), mu=0.0, beta=beta)

    z = z_prev.copy()
    newton_total = 0
    feas_tol = params.tol_constraint
    ball_tol = params.tol_constraint * max(1.0, rho) if has_ball else 0.0

    def kkt_residual(z, lam, mu):
        r = Q @ z - btot + lam
        if has_ball and mu > 0.0:
            _, gN = ball.grad(z - z_prev)
            r = r + mu * gN
        return r

    converged = False
    al_iters = 0
    for al_iters in range(1, params.max_al_iters + 1):
        # ---- inner semismooth Newton on the AL function ----
        lam, mu, beta = state.lam, state.mu, state.beta
        inner_tol = max(0.25 * params.tol_newton * g_scale, 1e-14 * g_scale)
        for _ in range(100):
            g1 = z - z_prev
            a1 = np.maximum(0.0, lam + beta * g1)
            grad = Q @ z - btot + a1
            a2 = 0.0
            gN = None
            if has_ball:
                N, gN = ball.grad(g1)
                a2 = max(0.0, mu + beta * (N - rho))
                if a2 > 0.0:
                    grad = grad + a2 * gN
            if float(np.abs(grad).max()) <= inner_tol:
                break
            H = Q + sp.diags(beta * (lam + beta * g1 > 0.0).astype(float))
            a_vec, c = None, 0.0
            if has_ball and a2 > 0.0:
                Hs_ball, a_vec, c = ball.hess_parts(g1, a2, beta)
                H = H + Hs_ball
            lu = splu(H.tocsc())
            step = -_solve_with_rank1(lu, c, a_vec, grad)
            newton_total += 1
            slope = float(grad @ step)
            if slope > -1e-16 * g_scale:
                step = -grad / max(1.0, beta)
                slope = float(grad @ step)
            val0 = _al_value(Q, btot, z, z_prev, ball, rho, lam, mu, beta)
            tstep = 1.0
            while tstep > 1e-12:
                z_new = z + tstep * step
                if (_al_value(Q, btot, z_new, z_prev, ball, rho, lam, mu, beta)
                        <= val0 + 1e-4 * tstep * slope):
                    break
                tstep *= 0.5
            z = z + tstep * step

        # ---- multiplier update ----
        g1 = z - z_prev
        g2 = (ball.value(g1) - rho) if has_ball else -math.inf
        viol = max(float(np.maximum(0.0, g1).max(initial=0.0)),
                   max(0.0, g2))
        state.box_gap = g1
        state.ball_gap = g2
        state.violation = viol
        state = al_penalty_update(state, params)

        stat = dual_norm_lumped(kkt_residual(z, state.lam, state.mu), w, norm)
        box_ok = float(np.maximum(0.0, g1).max(initial=0.0)) <= feas_tol
        ball_ok = (not has_ball) or (g2 <= ball_tol)
        if box_ok and ball_ok and stat <= params.tol_newton * stat_scale:
            converged = True
            break

    # ---- active-set Newton polish ----
    z, lam_p, mu_p = _polish(Q, btot, z, z_prev, ball, rho, state, params)
    stat = dual_norm_lumped(kkt_residual(z, lam_p, mu_p), w, norm)
    g1 = z - z_prev
    g2 = (ball.value(g1) - rho) if has_ball else -math.inf
    box_viol = float(np.maximum(0.0, g1).max(initial=0.0))
    if not (box_viol <= 10 * feas_tol and (not has_ball or g2 <= 10 * ball_tol)
            and stat <= 10 * params.tol_newton * stat_scale):
        if not converged:
            raise SolverFailure(
                "damage subproblem did not reach its KKT tolerance",
                stationarity=stat, box_violation=box_viol,
                ball_violation=max(0.0, g2), al_iters=al_iters)

    # lower bound emerges from the objective; clamp only beyond tolerance
    clamps = int(np.count_nonzero(z < -params.tol_constraint))
    if clamps:
        z = np.maximum(z, 0.0)

    dz_norm = field_norm_V(z - z_prev, mesh, norm)

    if has_ball and mu_p > 0.0:
        _, gN = ball.grad(z - z_prev)
        xi = mu_p * gN
    else:
        xi = np.zeros(n)
    report = ZSolveReport(
        z=z,
        lam=lam_p,
        mu=mu_p,
        xi=xi,
        xi_norm_dual=dual_norm_lumped(xi, w, norm) if np.any(xi) else 0.0,
        constraint_active=bool(has_ball and
                               dz_norm >= rho - 10 * max(feas_tol, ball_tol)),
        stationarity_residual=stat,
        al_iters=al_iters,
        newton_iters=newton_total,
        objective=0.5 * float(z @ (Q @ z)) - float(btot @ z),
        dz_norm_V=float(dz_norm),
        lower_clamps=clamps,
        converged=converged or stat <= 10 * params.tol_newton * stat_scale,
    )
    return report


def _polish(Q, btot, z, z_prev, ball, rho, state: ALIterate,
            params: SchemeParams):
    """Newton iteration on the active-set KKT equalities.

    Box-active nodes are pinned to ``z_prev``; if the ball is active the
    scalar multiplier is solved alongside through a bordered system.  Falls
    back to the augmented-Lagrangian iterate when the polish does not
    improve the residual.
    """
    n = z.size
    has_ball = ball is not None
    eps_a = 10 * params.tol_constraint
    active = (state.lam > 0.0) | (z - z_prev >= -eps_a)
    v = z - z_prev
    ball_on = False
    if has_ball:
        Nv = ball.value(v)
        ball_on = state.mu > 0.0 or Nv >= rho * (1.0 - 1e-9) - eps_a
    free = ~active

    z_best, lam_best, mu_best = z.copy(), state.lam.copy(), state.mu

    def residual(z, mu):
        r = Q @ z - btot
        if has_ball and mu != 0.0:
            _, gN = ball.grad(z - z_prev)
            r = r + mu * gN
        return r

    res0 = np.abs(residual(z_best, mu_best)[free]).max(initial=0.0)
    if ball_on:
        res0 = max(res0, abs(ball.value(z_best - z_prev) - rho))

    z_try = z.copy()
    z_try[active] = z_prev[active]
    mu_try = state.mu if ball_on else 0.0
    ok = True
    for _ in range(30):
        v = z_try - z_prev
        r = residual(z_try, mu_try)
        F1 = r[free]
        F2 = (ball.value(v) - rho) if ball_on else 0.0
        res = np.abs(F1).max(initial=0.0) + (abs(F2) if ball_on else 0.0)
        if res <= 1e-14 * max(1.0, np.abs(btot).max()):
            break
        H = Q
        a_vec, c = None, 0.0
        gN = None
        if has_ball and (ball_on and mu_try != 0.0):
            Hs_ball, a_vec, c = ball.hess_parts(v, mu_try, 0.0)
            H = Q + Hs_ball
        if ball_on:
            _, gN = ball.grad(v)
        Hff = H[free][:, free].tocsc()
        try:
            lu = splu(Hff)
        except RuntimeError:
            ok = False
            break
        af = a_vec[free] if a_vec is not None else None

        def hsolve(rhs):
            return _solve_with_rank1(lu, c, af, rhs)

        if ball_on:
            s1 = hsolve(F1)
            s2 = hsolve(gN[free])
            denom = float(gN[free] @ s2)
            if abs(denom) < 1e-30:
                ok = False
                break
            dmu = (F2 - float(gN[free] @ s1)) / denom
            dz_f = -(s1 + dmu * s2)
            mu_try = mu_try + dmu
        else:
            dz_f = -hsolve(F1)
        z_try[free] = z_try[free] + dz_f
    else:
        ok = False

    if ok:
        v = z_try - z_prev
        lam_try = np.zeros(n)
        r = residual(z_try, mu_try)
        lam_try[active] = -r[active]
        sign_ok = (lam_try[active].min(initial=0.0) >= -10 * eps_a
                   and (not ball_on or mu_try >= -10 * eps_a)
                   and float(np.maximum(0.0, v).max(initial=0.0)) <= eps_a)
        lam_try = np.maximum(lam_try, 0.0)
        mu_try = max(mu_try, 0.0)
        res1 = np.abs((r + lam_try)[free]).max(initial=0.0)
        if sign_ok and res1 <= max(res0, 1e-13 * max(1.0, np.abs(btot).max())):
            return z_try, lam_try, mu_try
    return z_best, np.maximum(lam_best, 0.0), max(mu_best, 0.0)
