"""Clamped streamfunction discretization on a rectangle.

Divergence-free velocity fields with no-slip walls are parametrized by a
streamfunction, w = (∂₃ψ, −∂₁ψ), with ψ and its normal derivative zero on
all four walls.  On this class the critical field strength in either
direction is finite: the walls remove the translation escape that sends
the slab's horizontal-field threshold to infinity.

Discretization: interior nodal values with the wall values implicit, plain
second-order stencils.  The slope constraints (4ψ₁ − ψ₂ = 0 per wall line)
are eliminated through a basis, never penalized, and the 2D basis is the
tensor product of the 1D eliminations, which keeps it sparse and exact.
First derivatives live on staggered midpoint grids, second derivatives on
the nodes, and the mixed derivative on cell corners; the two discrete
paths to div w are then the same matrix, so div w = 0 holds to rounding.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .eigcore import max_rayleigh
from .errors import InputError, TooFewNodes
from .modeforms import FormTerm, ModeForms, _coeff_at
from .profiles import DensityProfile, PhysicalParams


def _diff_pieces(n: int, h: float):
    """Forward difference onto midpoints, nodal second difference, and the
    clamped elimination basis for one direction (Dirichlet walls implicit)."""
    G = sp.diags([np.full(n, -1.0 / h), np.full(n, 1.0 / h)],
                 offsets=[-1, 0], shape=(n + 1, n), format="csr")
    D2 = sp.diags([np.full(n - 1, 1.0), np.full(n, -2.0), np.full(n - 1, 1.0)],
                  offsets=[-1, 0, 1], format="csr") / (h * h)
    # columns: free nodes (all but the second from each wall); the wall
    # slope 4psi_1 - psi_2 = 0 fixes the eliminated ones
    free = [i for i in range(n) if i not in (1, n - 2)]
    Z = sp.lil_matrix((n, n - 2))
    for col, i in enumerate(free):
        Z[i, col] = 1.0
        if i == 0:
            Z[1, col] = 4.0
        if i == n - 1:
            Z[n - 2, col] = 4.0
    return G, D2, Z.tocsr()


class Rect2D:
    """Uniform tensor grid on (a1, b1) x (a3, b3) with nx x nz interior nodes.

    basis maps reduced coefficients to interior nodal values of ψ and spans
    exactly the fields with ψ = ∂ψ/∂n = 0 on all four walls.
    """

    def __init__(self, x1: tuple, x3: tuple, nx: int, nz: int):
        a1, b1 = float(x1[0]), float(x1[1])
        a3, b3 = float(x3[0]), float(x3[1])
        if not (b1 > a1 and b3 > a3):
            raise InputError("rectangle intervals must be increasing")
        if nx < 5 or nz < 5:
            raise TooFewNodes("rectangle needs at least 5 interior nodes per direction")
        self.x1 = (a1, b1)
        self.x3 = (a3, b3)
        self.nx, self.nz = int(nx), int(nz)
        self.hx = (b1 - a1) / (nx + 1)
        self.hz = (b3 - a3) / (nz + 1)
        self.nodes_x = a1 + self.hx * np.arange(1, nx + 1)
        self.nodes_z = a3 + self.hz * np.arange(1, nz + 1)
        self.flux_x = a1 + self.hx * (np.arange(nx + 1) + 0.5)
        self.flux_z = a3 + self.hz * (np.arange(nz + 1) + 0.5)

        self.Gx, self.D2x, Zx = _diff_pieces(nx, self.hx)
        self.Gz, self.D2z, Zz = _diff_pieces(nz, self.hz)
        self.basis = sp.kron(Zx, Zz, format="csr")
        self.nred = self.basis.shape[1]
        Ix = sp.eye(nx, format="csr")
        Iz = sp.eye(nz, format="csr")
        # psi flattened C-order: index = ix * nz + iz
        self.op_dx = sp.kron(self.Gx, Iz, format="csr")       # (flux_x, node_z)
        self.op_dz = sp.kron(Ix, self.Gz, format="csr")       # (node_x, flux_z)
        self.op_dxx = sp.kron(self.D2x, Iz, format="csr")
        self.op_dzz = sp.kron(Ix, self.D2z, format="csr")
        self.op_dxz = sp.kron(self.Gx, self.Gz, format="csr")  # cell corners

    @property
    def aspect(self) -> float:
        return (self.x1[1] - self.x1[0]) / (self.x3[1] - self.x3[0])

    def laplacian_floor(self) -> float:
        """Smallest Dirichlet eigenvalue of -Δ; the 2D spectrum is the sum
        of the two 1D ones on a tensor grid."""
        out = 0.0
        for G, h, n in ((self.Gx, self.hx, self.nx), (self.Gz, self.hz, self.nz)):
            gram = (G.T @ (h * G)).toarray()
            vals = np.linalg.eigvalsh(0.5 * (gram + gram.T))
            out += float(vals[0]) / h
        return out


def _reduced_gram(op, w: np.ndarray, basis) -> np.ndarray:
    A = op @ basis
    M = (A.T @ sp.diags(w) @ A).toarray()
    return 0.5 * (M + M.T)


def _coeff_grids(r: Rect2D, p: DensityProfile):
    g = p.grid
    rho_n = _coeff_at(r.nodes_z, g, p.rho, p.rho_fn, p.table)
    rho_f = _coeff_at(r.flux_z, g, p.rho, p.rho_fn, p.table)
    drho_n = _coeff_at(r.nodes_z, g, p.drho, p.drho_fn)
    return rho_n, rho_f, drho_n


def _weight_vectors(r: Rect2D, rho_n, rho_f, drho_n):
    hxz = r.hx * r.hz
    w_dx_rho = hxz * np.kron(np.ones(r.nx + 1), rho_n)
    w_dx_drho = hxz * np.kron(np.ones(r.nx + 1), drho_n)
    w_dz_rho = hxz * np.kron(np.ones(r.nx), rho_f)
    w_node = hxz * np.ones(r.nx * r.nz)
    w_corner = hxz * np.ones((r.nx + 1) * (r.nz + 1))
    return w_dx_rho, w_dx_drho, w_dz_rho, w_node, w_corner


def assemble_2d_quotient(r: Rect2D, p: DensityProfile, params: PhysicalParams,
                         i: int) -> ModeForms:
    """Quotient forms on the rectangle for field direction i.

    E: g∫ρ̄′(∂₁ψ)² (the numerator, through w₃ = −∂₁ψ); D: λ₀∫|∂ᵢ∇ψ|²;
    J: ∫ρ̄|w|².  All assembled on the clamped basis; D is positive definite
    there, so the critical strength √max(0, λmax(E, D)) is finite.
    """
    if i not in (1, 3):
        raise InputError(f"field direction must be 1 or 3, got {i}")
    rho_n, rho_f, drho_n = _coeff_grids(r, p)
    w_dx_rho, w_dx_drho, w_dz_rho, w_node, w_corner = \
        _weight_vectors(r, rho_n, rho_f, drho_n)
    Z = r.basis
    num = params.g * _reduced_gram(r.op_dx, w_dx_drho, Z)
    mass = (_reduced_gram(r.op_dz, w_dz_rho, Z)
            + _reduced_gram(r.op_dx, w_dx_rho, Z))
    second = r.op_dxx if i == 1 else r.op_dzz
    den = params.lambda0 * (_reduced_gram(second, w_node, Z)
                            + _reduced_gram(r.op_dxz, w_corner, Z))
    layout = {"psi": slice(0, r.nred)}
    return ModeForms(kind="quotient2d", mode=None, grid=r, layout=layout,
                     E=num, V=None, J=mass, D=den,
                     profile=p, params=params)


def critical_m_2d(r: Rect2D, p: DensityProfile, params: PhysicalParams,
                  i: int) -> float:
    """Critical field strength on the rectangle: finite in both directions."""
    forms = assemble_2d_quotient(r, p, params, i)
    val, _ = max_rayleigh(forms.E, forms.D)
    return math.sqrt(max(val, 0.0))


def _growth_forms_2d(r: Rect2D, p: DensityProfile, params: PhysicalParams,
                     m: float, i: int) -> ModeForms:
    """Energy/dissipation/mass forms of the 2D growth problem.

    E = g∫ρ̄′w₃² − λ₀m²∫|∂ᵢw|², V = μ∫|∇w|², J = ∫ρ̄|w|²; the factored
    term lists are kept so the fixed-point solve can evaluate Rayleigh
    quotients through the quadrature factors.
    """
    if i not in (1, 3):
        raise InputError(f"field direction must be 1 or 3, got {i}")
    rho_n, rho_f, drho_n = _coeff_grids(r, p)
    w_dx_rho, w_dx_drho, w_dz_rho, w_node, w_corner = \
        _weight_vectors(r, rho_n, rho_f, drho_n)
    Z = r.basis
    P_dx = (r.op_dx @ Z).toarray()
    P_dz = (r.op_dz @ Z).toarray()
    P_dxx = (r.op_dxx @ Z).toarray()
    P_dzz = (r.op_dzz @ Z).toarray()
    P_dxz = (r.op_dxz @ Z).toarray()
    P_second = P_dxx if i == 1 else P_dzz

    lam_m2 = params.lambda0 * m * m
    terms_E = (
        FormTerm(params.g, w_dx_drho, P_dx),
        FormTerm(-lam_m2, w_node, P_second),
        FormTerm(-lam_m2, w_corner, P_dxz),
    )
    terms_V = (
        FormTerm(params.mu, w_node, P_dxx),
        FormTerm(params.mu, w_node, P_dzz),
        FormTerm(2.0 * params.mu, w_corner, P_dxz),
    )
    terms_J = (
        FormTerm(1.0, w_dz_rho, P_dz),
        FormTerm(1.0, w_dx_rho, P_dx),
    )

    def dense(terms):
        M = np.zeros((r.nred, r.nred))
        for t in terms:
            M += t.matrix(r.nred)
        return 0.5 * (M + M.T)

    layout = {"psi": slice(0, r.nred)}
    return ModeForms(kind="rect2d", mode=None, grid=r, layout=layout,
                     E=dense(terms_E), V=dense(terms_V), J=dense(terms_J),
                     terms_E=terms_E, terms_V=terms_V, terms_J=terms_J,
                     profile=p, params=params)


def growth_rate_2d(r: Rect2D, p: DensityProfile, params: PhysicalParams,
                   m: float, i: int, tol: Optional[float] = None):
    """Growth rate (or stability verdict) of the rectangle problem at field
    strength m in direction i, by the same fixed-point solve as the slab."""
    from .dispersion import solve_growth_rate
    forms = _growth_forms_2d(r, p, params, m, i)
    return solve_growth_rate(forms, tol=tol)


def velocity_from_psi(r: Rect2D, coeffs: np.ndarray):
    """Staggered velocity (w₁ on (node_x, flux_z), w₃ on (flux_x, node_z))."""
    psi = r.basis @ np.asarray(coeffs, dtype=float)
    w1 = (r.op_dz @ psi).reshape(r.nx, r.nz + 1)
    w3 = -(r.op_dx @ psi).reshape(r.nx + 1, r.nz)
    return w1, w3


def divergence_defect(r: Rect2D, coeffs: np.ndarray) -> float:
    """Sup of the discrete divergence of w at the cell corners.

    The two difference paths commute as matrices, so this is rounding noise
    regardless of the coefficients.
    """
    psi = r.basis @ np.asarray(coeffs, dtype=float)
    w1 = r.op_dz @ psi
    w3 = -(r.op_dx @ psi)
    d1 = sp.kron(r.Gx, sp.eye(r.nz + 1, format="csr")) @ w1
    d3 = sp.kron(sp.eye(r.nx + 1, format="csr"), r.Gz) @ w3
    return float(np.max(np.abs(d1 + d3)))
