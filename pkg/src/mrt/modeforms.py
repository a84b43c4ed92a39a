"""Per-mode quadratic forms for the stratified slab.

For a horizontal Fourier mode with wavenumber pair ξ the three-component
complex fields reduce to real unknowns:

* incompressible: û₃ = v₃ (clamped: the parallel horizontal component is
  i·v₃′/|ξ|, so v₃ and v₃′ vanish at the walls), û_⊥ = i·φ with φ Dirichlet;
* compressible: û₃ = v₃, û₁ = i·v₁, û₂ = i·v₂, all Dirichlet, so the
  divergence becomes the real combination d(v) = −ξ₁v₁ − ξ₂v₂ + v₃′.

Forms are kept both as dense symmetric matrices and as lists of factored
terms coef·Σ w_k (P x)_k (Q x)_k.  The factored path evaluates energies as
weighted sums over quadrature points with compensated accumulation, which is
what lets the growth-rate fixed point land at the last-bit level; the dense
path feeds the eigensolver.

First-derivative products are assembled on the staggered flux grid, never by
squaring the nodal central difference (see grid1d).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, ZeroMode
from .grid1d import Grid1D
from .profiles import (CompressibleEquilibrium, DensityProfile, PhysicalParams)


@dataclass(frozen=True)
class ModeSpec:
    """One horizontal Fourier mode.

    xi must be a pair of integer multiples of 1/L.  field_dir selects the
    background field direction for the incompressible problem (1 horizontal,
    3 vertical); the compressible background is always horizontal.  m is the
    constant incompressible field strength (the compressible strength lives
    in the equilibrium).
    """

    L: float
    xi: tuple
    field_dir: int = 3
    m: float = 0.0

    def __post_init__(self):
        if self.L <= 0.0:
            raise InputError("period scale L must be positive")
        if self.field_dir not in (1, 3):
            raise InputError("field_dir must be 1 or 3")
        x1, x2 = self.xi
        for c in (x1, x2):
            if abs(c * self.L - round(c * self.L)) > 1e-9 * max(1.0, abs(c * self.L)):
                raise InputError(f"xi component {c} is not an integer multiple of 1/L")
        object.__setattr__(self, "xi", (float(x1), float(x2)))

    @classmethod
    def from_integers(cls, L: float, k1: int, k2: int,
                      field_dir: int = 3, m: float = 0.0) -> "ModeSpec":
        return cls(L=L, xi=(k1 / L, k2 / L), field_dir=field_dir, m=m)

    @property
    def xi_norm2(self) -> float:
        return self.xi[0] ** 2 + self.xi[1] ** 2


@dataclass(frozen=True)
class FormTerm:
    """One factored contribution coef * sum_k w[k] (P x)_k (Q x)_k."""

    coef: float
    w: np.ndarray
    P: np.ndarray
    Q: Optional[np.ndarray] = None
    block: Optional[str] = None

    def matrix(self, n: int) -> np.ndarray:
        Q = self.P if self.Q is None else self.Q
        M = self.P.T @ (self.w[:, None] * Q)
        if self.Q is not None:
            M = 0.5 * (M + M.T)
        return self.coef * M


def qform_value_ld(terms, x: np.ndarray) -> np.longdouble:
    """Extended-precision evaluation of a factored quadratic form.

    Energies of smooth fields are O(1) integrals even when the assembled
    matrices have huge norms; evaluating through the factored terms keeps
    the rounding proportional to the value instead of the matrix norm, and
    running the derivative matvecs and quadrature sums in long double drops
    the remaining noise floor a further few orders.  The growth-rate fixed
    point needs exactly this to certify |Λ² − α(Λ)| at the 1e-16 level.
    """
    xl = np.asarray(x, dtype=np.longdouble)
    total = np.longdouble(0.0)
    for t in terms:
        Px = t.P.astype(np.longdouble) @ xl
        Qx = Px if t.Q is None else t.Q.astype(np.longdouble) @ xl
        total += np.longdouble(t.coef) * np.sum(t.w.astype(np.longdouble) * Px * Qx)
    return total


def qform_value(terms, x: np.ndarray) -> float:
    """Value of a factored quadratic form at x (see qform_value_ld)."""
    return float(qform_value_ld(terms, x))


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _dense(terms, n: int) -> np.ndarray:
    M = np.zeros((n, n))
    for t in terms:
        M += t.matrix(n)
    return _symmetrize(M)


@dataclass(frozen=True)
class ModeForms:
    """Assembled symmetric forms for one mode (or the 2D rectangle).

    kind ∈ {"incompressible", "compressible", "crForms", "quotient", "rect2d"}.
    layout maps unknown-block names to slices of the stacked real vector.
    E, V, J are the energy, dissipation, and mass matrices; D is the
    penalty/denominator matrix where the kind carries one.  terms_* hold the
    factored representation (None where only matrices are kept).  aux holds
    named auxiliary PSD matrices used for diagnostics norms.
    """

    kind: str
    mode: Optional[ModeSpec]
    grid: object
    layout: dict
    E: np.ndarray
    V: Optional[np.ndarray]
    J: np.ndarray
    D: Optional[np.ndarray] = None
    terms_E: Optional[tuple] = None
    terms_V: Optional[tuple] = None
    terms_J: Optional[tuple] = None
    aux: dict = field(default_factory=dict)
    profile: Optional[DensityProfile] = None
    equilibrium: Optional[CompressibleEquilibrium] = None
    params: Optional[PhysicalParams] = None

    @property
    def size(self) -> int:
        return self.J.shape[0]


def _coeff_at(points: np.ndarray, grid: Grid1D, nodal: np.ndarray,
              fn=None, table=None) -> np.ndarray:
    """Sample a background coefficient at staggered points.

    Closure wins (exact), then the raw table, then interpolation of the nodal
    samples with constant extension at the walls.
    """
    if fn is not None:
        return np.asarray([fn(x) for x in points], dtype=float)
    if table is not None:
        return np.interp(points, table[0], table[1])
    return np.interp(points, grid.nodes, nodal)


def _embed(op: np.ndarray, sl: slice, n: int) -> np.ndarray:
    out = np.zeros((op.shape[0], n))
    out[:, sl] = op
    return out


# --------------------------------------------------------------------------
# incompressible assembly
# --------------------------------------------------------------------------

def _incompressible_pieces(mode: ModeSpec, p: DensityProfile,
                           params: PhysicalParams, g1: Grid1D):
    """Shared term lists for the divergence-free reduction.

    Returns layout plus factored term lists for: mass (ρ̄-weighted), unit
    mass (nodal and flux variants), the field-line bending form
    ∫((v₃′)² + (v₃″)²/|ξ|² + (φ′)²), and the buoyancy numerator g∫ρ̄′v₃².
    The bending curvature factor is evaluated on the flux grid (curv_flux),
    where the evolution module's recovered field perturbation lives.
    """
    if mode.xi_norm2 == 0.0:
        raise ZeroMode("incompressible reduction needs |xi| > 0")
    n = g1.n
    na = n - 2
    N = na + n
    sv = slice(0, na)
    sp = slice(na, N)
    layout = {"v3": sv, "phi": sp}
    xi2 = mode.xi_norm2

    Z = g1.clamped
    GZ = _embed(g1.deriv_flux @ Z, sv, N)
    CFZ = _embed(g1.curv_flux @ Z, sv, N)
    AZ = _embed(g1.value_flux @ Z, sv, N)
    Znodal = _embed(Z, sv, N)
    Iphi = _embed(np.eye(n), sp, N)
    Gphi = _embed(g1.deriv_flux, sp, N)
    Aphi = _embed(g1.value_flux, sp, N)

    rho_f = _coeff_at(g1.flux_points, g1, p.rho, p.rho_fn, p.table)
    wf = g1.flux_weights

    mass = (
        FormTerm(1.0, g1.quad * p.rho, Znodal, block="v3"),
        FormTerm(1.0 / xi2, wf * rho_f, GZ, block="v3"),
        FormTerm(1.0, g1.quad * p.rho, Iphi, block="phi"),
    )
    unit_mass = (
        FormTerm(1.0, g1.quad.copy(), Znodal, block="v3"),
        FormTerm(1.0 / xi2, wf.copy(), GZ, block="v3"),
        FormTerm(1.0, g1.quad.copy(), Iphi, block="phi"),
    )
    # same norm assembled against flux-point values; the energy uses this
    # variant so its bilinear pairing matches the evolution forcing exactly
    unit_flux = (
        FormTerm(1.0, wf.copy(), AZ, block="v3"),
        FormTerm(1.0 / xi2, wf.copy(), GZ, block="v3"),
        FormTerm(1.0, wf.copy(), Aphi, block="phi"),
    )
    bend = (
        FormTerm(1.0, wf.copy(), GZ, block="v3"),
        FormTerm(1.0 / xi2, wf.copy(), CFZ, block="v3"),
        FormTerm(1.0, wf.copy(), Gphi, block="phi"),
    )
    buoy = (
        FormTerm(params.g, g1.quad * p.drho, Znodal, block="v3"),
    )
    return layout, mass, unit_mass, unit_flux, bend, buoy


def assemble_incompressible(mode: ModeSpec, p: DensityProfile,
                            params: PhysicalParams, g1: Grid1D) -> ModeForms:
    """Energy, dissipation, and mass forms of the incompressible problem.

    E = g∫ρ̄′v₃² − λ₀m²·(bending form)            for a vertical field,
    E = g∫ρ̄′v₃² − λ₀m²ξ₁²·(unit-mass form)       for a horizontal field,
    V = μ(|ξ|²·unit-mass + bending), J = mass.

    :raises ZeroMode: ξ = (0,0).
    """
    layout, mass, unit_mass, unit_flux, bend, buoy = \
        _incompressible_pieces(mode, p, params, g1)
    N = layout["phi"].stop
    m2 = mode.m * mode.m
    xi2 = mode.xi_norm2

    if mode.field_dir == 3:
        terms_E = buoy + tuple(
            FormTerm(-params.lambda0 * m2 * t.coef, t.w, t.P, t.Q, t.block)
            for t in bend)
    else:
        terms_E = buoy + tuple(
            FormTerm(-params.lambda0 * m2 * mode.xi[0] ** 2 * t.coef, t.w, t.P, t.Q, t.block)
            for t in unit_flux)
    terms_V = tuple(
        FormTerm(params.mu * xi2 * t.coef, t.w, t.P, t.Q, t.block) for t in unit_mass
    ) + tuple(
        FormTerm(params.mu * t.coef, t.w, t.P, t.Q, t.block) for t in bend
    )

    E = _dense(terms_E, N)
    V = _dense(terms_V, N)
    J = _dense(mass, N)
    aux = {
        "unit_mass": _dense(unit_mass, N),
        "bend": _dense(bend, N),
        "buoy": _dense(buoy, N),
    }
    return ModeForms(kind="incompressible", mode=mode, grid=g1, layout=layout,
                     E=E, V=V, J=J,
                     terms_E=terms_E, terms_V=terms_V, terms_J=mass,
                     aux=aux, profile=p, params=params)


def assemble_quotient(mode: ModeSpec, p: DensityProfile, params: PhysicalParams,
                      g1: Grid1D, i: Optional[int] = None) -> ModeForms:
    """Numerator/denominator pair of the per-mode critical-strength quotient.

    Eform = g∫ρ̄′v₃²; Dform = λ₀·(bending form) for i=3, λ₀ξ₁²·(unit mass)
    for i=1.  The per-mode critical strength is √max(0, λ_max(E, D)).
    """
    if i is None:
        i = mode.field_dir
    layout, mass, unit_mass, unit_flux, bend, buoy = \
        _incompressible_pieces(mode, p, params, g1)
    N = layout["phi"].stop
    if i == 3:
        terms_D = tuple(FormTerm(params.lambda0 * t.coef, t.w, t.P, t.Q, t.block)
                        for t in bend)
    else:
        terms_D = tuple(
            FormTerm(params.lambda0 * mode.xi[0] ** 2 * t.coef, t.w, t.P, t.Q, t.block)
            for t in unit_flux)
    return ModeForms(kind="quotient", mode=mode, grid=g1, layout=layout,
                     E=_dense(buoy, N), V=None, J=_dense(mass, N),
                     D=_dense(terms_D, N),
                     terms_E=buoy, terms_J=mass,
                     aux={"unit_mass": _dense(unit_mass, N)},
                     profile=p, params=params)


# --------------------------------------------------------------------------
# compressible assembly
# --------------------------------------------------------------------------

def _compressible_pieces(mode: ModeSpec, eq: CompressibleEquilibrium,
                         params: PhysicalParams, g1: Grid1D):
    n = g1.n
    N = 3 * n
    s1, s2, s3 = slice(0, n), slice(n, 2 * n), slice(2 * n, N)
    layout = {"v1": s1, "v2": s2, "v3": s3}
    xi1, xi2c = mode.xi
    I = np.eye(n)

    A1 = _embed(g1.value_flux, s1, N)
    A2 = _embed(g1.value_flux, s2, N)
    A3 = _embed(g1.value_flux, s3, N)
    G1 = _embed(g1.deriv_flux, s1, N)
    G2 = _embed(g1.deriv_flux, s2, N)
    G3 = _embed(g1.deriv_flux, s3, N)
    d_op = -xi1 * A1 - xi2c * A2 + G3
    r_op = -xi2c * A2 + G3

    p = eq.profile
    fx = g1.flux_points
    rho_f = _coeff_at(fx, g1, p.rho, p.rho_fn, p.table)
    drho_f = _coeff_at(fx, g1, p.drho, p.drho_fn)
    prho_f = params.dpressure(rho_f) * rho_f
    if eq.field_fn is not None:
        mc2_f = np.asarray([eq.field_fn(x) for x in fx]) ** 2
    else:
        mc2_f = np.interp(fx, g1.nodes, eq.field) ** 2
    wf = g1.flux_weights

    ops = dict(A1=A1, A2=A2, A3=A3, G1=G1, G2=G2, G3=G3, d=d_op, r=r_op,
               I1=_embed(I, s1, N), I2=_embed(I, s2, N), I3=_embed(I, s3, N))
    coeffs = dict(rho_f=rho_f, drho_f=drho_f, prho_f=prho_f, mc2_f=mc2_f, wf=wf)
    return layout, ops, coeffs


def _compressible_energy_terms(mode, params, ops, coeffs):
    """E_c, assembled entirely on the flux grid.

    Flux placement of every term (buoyancy included) keeps the assembled
    matrix bilinear-identical to the weak right-hand side used by the
    evolution initializer, so growing-mode data reproduce u_t(0) = Λu₀ up to
    the eigenpair residual.
    """
    xi1 = mode.xi[0]
    wf = coeffs["wf"]
    return (
        FormTerm(params.g, wf * coeffs["drho_f"], ops["A3"]),
        FormTerm(2.0 * params.g, wf * coeffs["rho_f"], ops["d"], ops["A3"]),
        FormTerm(-1.0, wf * coeffs["prho_f"], ops["d"]),
        FormTerm(-params.lambda0 * xi1 ** 2, wf * coeffs["mc2_f"], ops["A2"]),
        FormTerm(-params.lambda0 * xi1 ** 2, wf * coeffs["mc2_f"], ops["A3"]),
        FormTerm(-params.lambda0, wf * coeffs["mc2_f"], ops["r"]),
    )


def assemble_compressible(mode: ModeSpec, eq: CompressibleEquilibrium,
                          params: PhysicalParams, g1: Grid1D) -> ModeForms:
    """Forms of the compressible problem with a horizontal background field.

    J = ∫ρ̄|v|²;  V = μ∫(|ξ|²|v|² + |v′|²) + μ₀∫d(v)²;
    E_c = ∫[gρ̄′v₃² + 2gρ̄ d(v) v₃ − p′(ρ̄)ρ̄ d(v)²
            − λ₀m_c²(ξ₁²v₂² + ξ₁²v₃² + (−ξ₂v₂+v₃′)²)].
    """
    if params.mu0 is None:
        raise InputError("compressible forms need mu0")
    layout, ops, coeffs = _compressible_pieces(mode, eq, params, g1)
    n = g1.n
    N = 3 * n
    p = eq.profile
    xi2 = mode.xi_norm2
    wf = coeffs["wf"]

    terms_J = tuple(FormTerm(1.0, g1.quad * p.rho, ops[k], block=b)
                    for k, b in (("I1", "v1"), ("I2", "v2"), ("I3", "v3")))
    terms_E = _compressible_energy_terms(mode, params, ops, coeffs)
    terms_V = tuple(
        FormTerm(params.mu * xi2, g1.quad.copy(), ops[k], block=b)
        for k, b in (("I1", "v1"), ("I2", "v2"), ("I3", "v3"))
    ) + tuple(
        FormTerm(params.mu, wf.copy(), ops[k], block=b)
        for k, b in (("G1", "v1"), ("G2", "v2"), ("G3", "v3"))
    ) + (
        FormTerm(params.mu0, wf.copy(), ops["d"]),
    )

    unit = tuple(FormTerm(1.0, g1.quad.copy(), ops[k], block=b)
                 for k, b in (("I1", "v1"), ("I2", "v2"), ("I3", "v3")))
    grad = tuple(FormTerm(xi2, g1.quad.copy(), ops[k], block=b)
                 for k, b in (("I1", "v1"), ("I2", "v2"), ("I3", "v3"))) + \
        tuple(FormTerm(1.0, wf.copy(), ops[k], block=b)
              for k, b in (("G1", "v1"), ("G2", "v2"), ("G3", "v3")))
    aux = {
        "unit_mass": _dense(unit, N),
        "grad": _dense(grad, N),
        "divsq": FormTerm(1.0, wf.copy(), ops["d"]).matrix(N),
    }
    return ModeForms(kind="compressible", mode=mode, grid=g1, layout=layout,
                     E=_dense(terms_E, N), V=_dense(terms_V, N),
                     J=_dense(terms_J, N),
                     terms_E=terms_E, terms_V=terms_V, terms_J=terms_J,
                     aux=aux, equilibrium=eq, profile=p, params=params)


def assemble_cr_forms(mode: ModeSpec, eq: CompressibleEquilibrium,
                      params: PhysicalParams, g1: Grid1D) -> ModeForms:
    """E_c with the field-free penalty denominator for the stability constant.

    Dform = λ₀∫(ξ₁²v₂² + ξ₁²v₃² + (−ξ₂v₂+v₃′)²); its kernel at ξ₁ ≠ 0 is the
    v₁-only subspace, where E_c = −ξ₁²∫p′(ρ̄)ρ̄v₁² < 0, so the ratio supremum
    is finite there.
    """
    base = assemble_compressible(mode, eq, params, g1)
    xi1 = mode.xi[0]
    layout, ops, coeffs = _compressible_pieces(mode, eq, params, g1)
    wf = coeffs["wf"]
    terms_D = (
        FormTerm(params.lambda0 * xi1 ** 2, wf.copy(), ops["A2"]),
        FormTerm(params.lambda0 * xi1 ** 2, wf.copy(), ops["A3"]),
        FormTerm(params.lambda0, wf.copy(), ops["r"]),
    )
    return ModeForms(kind="crForms", mode=mode, grid=g1, layout=layout,
                     E=base.E, V=base.V, J=base.J, D=_dense(terms_D, base.size),
                     terms_E=base.terms_E, terms_V=base.terms_V,
                     terms_J=base.terms_J, aux=base.aux,
                     equilibrium=eq, profile=eq.profile, params=params)
