"""Bilinear-quadrilateral evaluation and assembly of energies, gradients,
operators and field norms.

All integrals use the 2x2 Gauss rule; the same quadrature backs the total
energy, its partial gradients, the stiffness/damage operators and the
L^alpha field norm, so the staggered solvers minimize exactly the assembled
energy.  Per-mesh geometric data is cached on first use (meshes are
immutable after construction).
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import (
    GAUSS_POINTS_2X2,
    GAUSS_WEIGHTS_2X2,
    Mesh,
    norm_quadrature_weights,
    shape_functions,
    shape_gradients,
)
from .model import (
    DIRICHLET_RAMP,
    LoadProgram,
    MaterialModel,
    NormSpec,
    PRESET_AT,
    fracture_density,
)


@dataclass(eq=False)
class State:
    """Solver state: physical time, nodal displacements (2 dofs/node) and
    nodal damage (1 dof/node)."""

    t: float
    u: np.ndarray
    z: np.ndarray

    def copy(self) -> "State":
        return State(self.t, self.u.copy(), self.z.copy())


class _ElementData:
    """Per-mesh quadrature cache."""

    def __init__(self, mesh: Mesh):
        xy = mesh.element_coords()  # (nel, 4, 2)
        nel = mesh.n_elements
        nq = len(GAUSS_POINTS_2X2)
        self.N = np.array([shape_functions(*gp) for gp in GAUSS_POINTS_2X2])  # (q,4)
        self.NN = np.einsum("qa,qb->qab", self.N, self.N)  # (q,4,4)
        self.wdet = np.empty((nel, nq))
        self.dNdx = np.empty((nel, nq, 4, 2))
        for q, (xi, eta) in enumerate(GAUSS_POINTS_2X2):
            dN = shape_gradients(xi, eta)  # (4,2)
            J = np.einsum("eni,nj->eij", xy, dN)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            if np.any(det <= 0):
                raise ValueError("non-positive Jacobian in mesh")
            Jinv = np.empty_like(J)
            Jinv[:, 0, 0] = J[:, 1, 1] / det
            Jinv[:, 1, 1] = J[:, 0, 0] / det
            Jinv[:, 0, 1] = -J[:, 0, 1] / det
            Jinv[:, 1, 0] = -J[:, 1, 0] / det
            self.wdet[:, q] = GAUSS_WEIGHTS_2X2[q] * det
            self.dNdx[:, q] = np.einsum("nj,eji->eni", dN, Jinv)

        # strain-displacement matrices, engineering shear convention
        self.B = np.zeros((nel, nq, 3, 8))
        self.B[:, :, 0, 0::2] = self.dNdx[:, :, :, 0]
        self.B[:, :, 1, 1::2] = self.dNdx[:, :, :, 1]
        self.B[:, :, 2, 0::2] = self.dNdx[:, :, :, 1]
        self.B[:, :, 2, 1::2] = self.dNdx[:, :, :, 0]

        conn = mesh.elements
        self.udofs = np.empty((nel, 8), dtype=np.int64)
        self.udofs[:, 0::2] = 2 * conn
        self.udofs[:, 1::2] = 2 * conn + 1

        self.krows = np.repeat(self.udofs, 8, axis=1).ravel()
        self.kcols = np.tile(self.udofs, (1, 8)).ravel()
        self.mrows = np.repeat(conn, 4, axis=1).ravel()
        self.mcols = np.tile(conn, (1, 4)).ravel()

        # Gauss-point interpolation operator for scalar nodal fields
        rows = np.repeat(np.arange(nel * nq), 4)
        cols = np.repeat(conn[:, None, :], nq, axis=1).ravel()
        vals = np.broadcast_to(self.N, (nel, nq, 4)).ravel()
        self.P = sp.csr_matrix(
            (vals, (rows, cols)), shape=(nel * nq, mesh.n_nodes)
        )
        self.wq = self.wdet.ravel()

        self.lumped = norm_quadrature_weights(mesh)
        self._mass = None
        self._laplacian = None
        self._btcb = {}

    def mass(self, mesh: Mesh) -> sp.csr_matrix:
        if self._mass is None:
            vals = np.einsum("eq,qab->eab", self.wdet, self.NN)
            self._mass = sp.csr_matrix(
                (vals.ravel(), (self.mrows, self.mcols)),
                shape=(mesh.n_nodes, mesh.n_nodes),
            )
        return self._mass

    def laplacian(self, mesh: Mesh) -> sp.csr_matrix:
        if self._laplacian is None:
            vals = np.einsum(
                "eq,eqai,eqbi->eab", self.wdet, self.dNdx, self.dNdx
            )
            self._laplacian = sp.csr_matrix(
                (vals.ravel(), (self.mrows, self.mcols)),
                shape=(mesh.n_nodes, mesh.n_nodes),
            )
        return self._laplacian

    def btcb(self, C: np.ndarray) -> np.ndarray:
        key = C.tobytes()
        if key not in self._btcb:
            self._btcb[key] = np.einsum("eqia,ij,eqjb->eqab", self.B, C, self.B)
        return self._btcb[key]


_CACHE: "weakref.WeakKeyDictionary[Mesh, _ElementData]" = weakref.WeakKeyDictionary()


def element_data(mesh: Mesh) -> _ElementData:
    data = _CACHE.get(mesh)
    if data is None:
        data = _ElementData(mesh)
        _CACHE[mesh] = data
    return data


def lumped_weights(mesh: Mesh) -> np.ndarray:
    return element_data(mesh).lumped


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    return element_data(mesh).mass(mesh)


def laplacian_matrix(mesh: Mesh) -> sp.csr_matrix:
    return element_data(mesh).laplacian(mesh)


def gauss_interp(mesh: Mesh):
    """(P, w): P maps nodal scalars to all Gauss points, w are the matching
    quadrature weights (including det J)."""
    data = element_data(mesh)
    return data.P, data.wq


# ---------------------------------------------------------------------------
# Gauss-point fields
# ---------------------------------------------------------------------------

def _check_state_dims(mesh: Mesh, u: np.ndarray | None, z: np.ndarray | None):
    if u is not None and u.shape != (2 * mesh.n_nodes,):
        raise ValueError(
            f"displacement vector of size {u.shape} does not match mesh "
            f"({2 * mesh.n_nodes} dofs)"
        )
    if z is not None and z.shape != (mesh.n_nodes,):
        raise ValueError(
            f"damage vector of size {z.shape} does not match mesh "
            f"({mesh.n_nodes} nodes)"
        )


def strains_at_gauss(u: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Engineering strain (eps_xx, eps_yy, gamma_xy) at Gauss points,
    (nel, nq, 3)."""
    data = element_data(mesh)
    ue = u[data.udofs]
    return np.einsum("eqij,ej->eqi", data.B, ue)


def elastic_density_at_gauss(u: np.ndarray, mesh: Mesh,
                             model: MaterialModel) -> np.ndarray:
    """Undegraded elastic energy density (C eps):eps at Gauss points."""
    eps = strains_at_gauss(u, mesh)
    return np.einsum("eqi,ij,eqj->eq", eps, model.C, eps)


# ---------------------------------------------------------------------------
# Energies and gradients
# ---------------------------------------------------------------------------

def total_energy(state: State, mesh: Mesh, model: MaterialModel,
                 load: LoadProgram) -> float:
    """Total stored energy minus the external-load pairing.

    In displacement control the loading enters through the boundary data,
    not through a load term.
    """
    _check_state_dims(mesh, state.u, state.z)
    data = element_data(mesh)
    psi = elastic_density_at_gauss(state.u, mesh, model)
    ze = state.z[mesh.elements]
    zq = np.einsum("qa,ea->eq", data.N, ze)
    gz = np.einsum("eqni,en->eqi", data.dNdx, ze)
    gz_sq = np.einsum("eqi,eqi->eq", gz, gz)
    dens = 0.5 * (zq ** 2 + model.eta) * psi + fracture_density(zq, gz_sq, model)
    energy = float(np.sum(data.wdet * dens))
    f = load.force_vector(mesh, state.t)
    return energy - float(f @ state.u)


def assemble_K(z: np.ndarray, mesh: Mesh, model: MaterialModel) -> sp.csr_matrix:
    """Degraded stiffness operator; symmetric, SPD after Dirichlet
    elimination because the degradation factor is bounded below by eta."""
    _check_state_dims(mesh, None, z)
    data = element_data(mesh)
    zq = np.einsum("qa,ea->eq", data.N, z[mesh.elements])
    coef = data.wdet * (zq ** 2 + model.eta)
    vals = np.einsum("eq,eqab->eab", coef, data.btcb(model.C))
    n = 2 * mesh.n_nodes
    return sp.csr_matrix((vals.ravel(), (data.krows, data.kcols)), shape=(n, n))


def grad_u(state: State, mesh: Mesh, model: MaterialModel,
           load: LoadProgram) -> np.ndarray:
    """Assembled displacement residual K(z) u - f(t) (pre-elimination)."""
    _check_state_dims(mesh, state.u, state.z)
    K = assemble_K(state.z, mesh, model)
    return K @ state.u - load.force_vector(mesh, state.t)


def z_quadratic(u: np.ndarray, mesh: Mesh, model: MaterialModel):
    """Quadratic form of the damage-dependent energy at fixed displacement:

        energy(z; u) = 1/2 z' Q z - b' z + c0

    (load term excluded; it does not involve z).
    """
    _check_state_dims(mesh, u, None)
    data = element_data(mesh)
    psi = elastic_density_at_gauss(u, mesh, model)
    hvals = np.einsum("eq,qab->eab", data.wdet * psi, data.NN)
    n = mesh.n_nodes
    H = sp.csr_matrix((hvals.ravel(), (data.mrows, data.mcols)), shape=(n, n))
    M = data.mass(mesh)
    Klap = data.laplacian(mesh)
    area = float(data.wdet.sum())
    e0 = 0.5 * model.eta * float(np.sum(data.wdet * psi))
    if model.preset == PRESET_AT:
        gc, th = model.g_c, model.theta
        Q = H + (gc / (2.0 * th)) * M + (2.0 * gc * th) * Klap
        b = (gc / (2.0 * th)) * (M @ np.ones(n))
        c0 = gc / (4.0 * th) * area + e0
    else:
        Q = H + model.kappa_E * (M + Klap)
        b = np.zeros(n)
        c0 = e0
    return Q.tocsr(), b, c0


def grad_z(state: State, mesh: Mesh, model: MaterialModel):
    """Damage gradient of the energy.

    Returns ``(g, d)``: the assembled gradient vector and the nodal density
    ``d_i = g_i / w_i`` with lumped weights, the Riesz identification used
    by the pointwise dual-distance formula.
    """
    Q, b, _ = z_quadratic(state.u, mesh, model)
    g = Q @ state.z - b
    return g, g / lumped_weights(mesh)


# ---------------------------------------------------------------------------
# Field norms
# ---------------------------------------------------------------------------

def field_norm_V(dz: np.ndarray, mesh: Mesh, norm: NormSpec) -> float:
    """Norm of a nodal increment field used by the arc-length ball."""
    _check_state_dims(mesh, None, dz)
    data = element_data(mesh)
    if norm.kind == "lalpha":
        vq = data.P @ dz
        return float(np.sum(data.wq * np.abs(vq) ** norm.alpha) ** (1.0 / norm.alpha))
    G = data.mass(mesh) + data.laplacian(mesh)
    return float(np.sqrt(dz @ (G @ dz)))


# ---------------------------------------------------------------------------
# Reactions
# ---------------------------------------------------------------------------

def reaction_force(state: State, mesh: Mesh, model: MaterialModel,
                   load: LoadProgram, node_set: str = "loaded") -> float:
    """Reaction along the load direction on a Dirichlet node set (N)."""
    if load.mode != DIRICHLET_RAMP:
        raise ValueError("reaction_force is defined for displacement control only")
    r = grad_u(state, mesh, model, load)
    nodes = mesh.boundary_sets[node_set]
    d = np.asarray(load.direction)
    return float(d[0] * r[2 * nodes].sum() + d[1] * r[2 * nodes + 1].sum())
