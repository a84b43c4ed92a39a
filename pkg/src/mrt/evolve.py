"""Linearized per-mode time evolution with exact-identity diagnostics.

Eliminating the density and field perturbations from the linearized system
leaves a second-order equation M ÿ + C ẏ = K y for the reduced velocity
unknowns, with M the ρ̄-weighted mass, C the dissipation form, and K the
energy form of the mode.  The implicit average-acceleration step
(trapezoidal; Newmark β=1/4, γ=1/2) is unconditionally stable, second
order, and conserves the discrete energy exactly when C = 0.

ϱ and N are recovered alongside by trapezoidal quadrature of their rate
laws.  Every energy term that pairs with a recovered quantity is assembled
on the same staggered points as the rate law (see modeforms), which makes
the weak relation J ẏ = −V y + b(ϱ, N) an exact invariant of the discrete
flow: the trapezoidal velocity update and the trapezoidal carrier update
commute through the bilinear identity ḃ = E y.  The energy identity and
its time-integrated variant inherit their convergence order from the
dissipation quadrature alone.

Phase convention (real carriers): for the vertical-field incompressible
problem N = (i·N₁, i·N₂, N₃); for the horizontal-field incompressible and
the compressible problem N = (N₁, N₂, i·N₃); stored arrays are the real
carriers on the flux grid.  ϱ is real, on the nodes (incompressible) or
the flux grid (compressible).  Incoming complex data are projected onto
the convention and rejected if the orthogonal part is above tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eig as dense_eig

from .errors import IncompatibleData, InputError, SolverFailure
from .modeforms import ModeForms, _coeff_at, _embed

_SCHEMES = ("trapezoidal", "newmark")


class _Workspace:
    """Assembled operators, rate matrices, and factor caches for one mode.

    Shared read-only between the states of one trajectory; the factor cache
    is a per-timestep memo (states are value-like, the workspace is not
    mutated beyond memoization).
    """

    def __init__(self, forms: ModeForms):
        if forms.kind not in ("incompressible", "compressible"):
            raise InputError(f"cannot evolve forms of kind '{forms.kind}'")
        self.forms = forms
        self.M = forms.J
        self.C = forms.V
        self.K = forms.E
        self.chol_M = cho_factor(self.M, lower=True)
        self.step_cache: dict = {}
        g1 = forms.grid
        mode = forms.mode
        self.quad = g1.quad
        self.wf = g1.flux_weights
        self.xi1, self.xi2 = mode.xi
        self.xin2 = mode.xi_norm2
        if forms.kind == "incompressible":
            self._build_incompressible(forms)
        else:
            self._build_compressible(forms)

    # -- incompressible operators ------------------------------------------

    def _build_incompressible(self, forms: ModeForms):
        g1 = forms.grid
        mode = forms.mode
        p = forms.profile
        size = forms.size
        sv, sp = forms.layout["v3"], forms.layout["phi"]
        Z = g1.clamped
        xi1, xi2, xin2 = self.xi1, self.xi2, self.xin2
        nx = math.sqrt(xin2)
        m = mode.m

        Znod = _embed(Z, sv, size)
        GZ = _embed(g1.deriv_flux @ Z, sv, size)
        CF = _embed(g1.curv_flux @ Z, sv, size)
        AZ = _embed(g1.value_flux @ Z, sv, size)
        Gphi = _embed(g1.deriv_flux, sp, size)
        Aphi = _embed(g1.value_flux, sp, size)
        self.Znod = Znod
        self.rho_len = g1.n
        self.nf = g1.flux_points.size

        if mode.field_dir == 3:
            RN1 = m * ((xi1 / xin2) * CF - (xi2 / nx) * Gphi)
            RN2 = m * ((xi2 / xin2) * CF + (xi1 / nx) * Gphi)
            RN3 = m * GZ
        else:
            RN1 = -m * xi1 * ((xi1 / xin2) * GZ - (xi2 / nx) * Aphi)
            RN2 = -m * xi1 * ((xi2 / xin2) * GZ + (xi1 / nx) * Aphi)
            RN3 = m * xi1 * AZ
        self.RN = (RN1, RN2, RN3)
        self.Rrho = -(p.drho[:, None] * Znod)
        self.rho_weights = g1.quad

        # div N in physical phase: vertical field has N_h imaginary and N₃
        # real, so the divergence is real; the horizontal field flips both
        P = g1.flux_to_node
        if mode.field_dir == 3:
            self.div_ops = (-xi1 * P, -xi2 * P, g1.flux_div)
        else:
            self.div_ops = (xi1 * P, xi2 * P, g1.flux_div)

        self.unit = forms.aux["unit_mass"]
        self.bend = forms.aux["bend"]

    # -- compressible operators --------------------------------------------

    def _build_compressible(self, forms: ModeForms):
        g1 = forms.grid
        p = forms.profile
        eq = forms.equilibrium
        params = forms.params
        size = forms.size
        s1, s2, s3 = (forms.layout[k] for k in ("v1", "v2", "v3"))
        xi1, xi2 = self.xi1, self.xi2
        fx = g1.flux_points

        A1 = _embed(g1.value_flux, s1, size)
        A2 = _embed(g1.value_flux, s2, size)
        A3 = _embed(g1.value_flux, s3, size)
        G3 = _embed(g1.deriv_flux, s3, size)
        Dop = -xi1 * A1 - xi2 * A2 + G3
        self.A1, self.A2, self.A3, self.Dop = A1, A2, A3, Dop
        self.rho_len = fx.size
        self.nf = fx.size

        # sampled exactly as in the form assembly, so the weak forcing and
        # the assembled energy stay bilinear-identical
        rho_f = _coeff_at(fx, g1, p.rho, p.rho_fn, p.table)
        drho_f = _coeff_at(fx, g1, p.drho, p.drho_fn)
        mc_f = _coeff_at(fx, g1, eq.field, eq.field_fn)
        pp_f = params.dpressure(rho_f)
        # slope of the field strength from the hydrostatic balance at the
        # same points; this exact pointwise relation is what cancels the
        # cross terms between the forcing and the assembled energy
        dmc_f = -(params.g * rho_f + pp_f * drho_f) / (params.lambda0 * mc_f)
        self.rho_f, self.pp_f, self.mc_f, self.dmc_f = rho_f, pp_f, mc_f, dmc_f

        self.Rrho = -(rho_f[:, None] * Dop + drho_f[:, None] * A3)
        self.RN = (
            -(xi1 * mc_f[:, None] * A1 + dmc_f[:, None] * A3 + mc_f[:, None] * Dop),
            -xi1 * mc_f[:, None] * A2,
            xi1 * mc_f[:, None] * A3,
        )
        self.rho_weights = g1.flux_weights
        P = g1.flux_to_node
        self.div_ops = (xi1 * P, xi2 * P, g1.flux_div)

        self.unit = forms.aux["unit_mass"]
        self.gradm = forms.aux["grad"]
        self.divsq = forms.aux["divsq"]

    # -- shared pieces ------------------------------------------------------

    def forcing(self, rho: np.ndarray, N: tuple) -> np.ndarray:
        """Weak right-hand side b(ϱ, N) in the reduced coordinates."""
        params = self.forms.params
        if self.forms.kind == "incompressible":
            b = -params.g * (self.Znod.T @ (self.quad * rho))
            for R, Nk in zip(self.RN, N):
                b -= params.lambda0 * (R.T @ (self.wf * Nk))
            return b
        lam0 = params.lambda0
        q = self.pp_f * rho + lam0 * self.mc_f * N[0]
        b = self.Dop.T @ (self.wf * q)
        b += lam0 * (self.A1.T @ (self.wf * self.dmc_f * N[2]))
        b += lam0 * self.xi1 * (self.A1.T @ (self.wf * self.mc_f * N[0]))
        b += lam0 * self.xi1 * (self.A2.T @ (self.wf * self.mc_f * N[1]))
        b -= lam0 * self.xi1 * (self.A3.T @ (self.wf * self.mc_f * N[2]))
        b -= params.g * (self.A3.T @ (self.wf * rho))
        return b

    def rates(self, y: np.ndarray):
        return self.Rrho @ y, tuple(R @ y for R in self.RN)

    def div_n(self, N: tuple) -> float:
        d = sum(op @ Nk for op, Nk in zip(self.div_ops, N))
        return math.sqrt(float(self.quad @ (d * d)))

    def energy(self, y: np.ndarray, v: np.ndarray) -> float:
        return float(v @ (self.M @ v) - y @ (self.K @ y))

    def step_factor(self, dt: float):
        key = float(dt)
        fac = self.step_cache.get(key)
        if fac is None:
            S = self.M + (dt / 2.0) * self.C - (dt * dt / 4.0) * self.K
            try:
                fac = cho_factor(S, lower=True)
            except np.linalg.LinAlgError as e:
                dg = np.diag(S)
                raise SolverFailure(
                    f"implicit step matrix not positive definite at dt={dt:g} "
                    f"(diag range [{dg.min():.3e}, {dg.max():.3e}]): {e}") from e
            self.step_cache[key] = fac
        return fac


@dataclass(frozen=True)
class EvolveState:
    """State of one linearized trajectory at time t.

    y, ydot: reduced velocity unknowns and their time derivative; rho and N
    the recovered perturbations as real carrier arrays (see the module
    docstring for the phase convention); acc the current acceleration,
    diss the accumulated dissipation integral 2∫ẏᵀVẏ dτ.  meta carries the
    initial diagnostics (J0, forcing norms, stability denominators).
    """

    y: np.ndarray
    ydot: np.ndarray
    rho: np.ndarray
    N: tuple
    t: float
    acc: np.ndarray
    diss: float
    ws: _Workspace
    meta: dict = field(default_factory=dict)


def _project_component(arr, length: int, phase: str, tol: float, name: str):
    a = np.asarray(arr)
    if a.shape != (length,):
        raise IncompatibleData(f"{name} has shape {a.shape}, expected ({length},)")
    if not np.iscomplexobj(a):
        if phase == "imag":
            # a real array for an imaginary-phase slot means zero carrier
            # unless the caller already passed the carrier itself; treat the
            # values as the carrier
            return a.astype(float)
        return a.astype(float)
    keep = a.imag if phase == "imag" else a.real
    drop = a.real if phase == "imag" else a.imag
    nrm = math.sqrt(float(np.sum(np.abs(a) ** 2)))
    bad = math.sqrt(float(np.sum(drop ** 2)))
    if bad > tol * max(nrm, np.finfo(float).tiny):
        raise IncompatibleData(
            f"{name} violates the mode's phase convention: "
            f"off-phase fraction {bad / max(nrm, 1e-300):.3e}")
    return keep.astype(float)


def init_state(forms: ModeForms, u0, rho0=None, N0=None,
               context: Optional[dict] = None) -> EvolveState:
    """Initial state with ẏ from the weak first-order balance at t = 0.

    :param u0: reduced real vector of velocity unknowns (layout of forms).
    :param rho0: density perturbation (nodal for incompressible, flux grid
        for compressible); None means zero.
    :param N0: three field-perturbation components on the flux grid (complex
        in the physical phase, or the real carriers); None means zero.
    :param context: optional dict with "phase_tol" and "div_tol" overrides.
    :raises IncompatibleData: wrong shapes, off-phase data, or div N₀ ≠ 0.
    """
    ws = _Workspace(forms)
    ctx = context or {}
    phase_tol = float(ctx.get("phase_tol", 1e-8))
    g1 = forms.grid
    if ctx.get("div_tol") is not None:
        div_tol = float(ctx["div_tol"])
    else:
        div_tol = 1e-8 if g1.scheme == "chebyshev" else 100.0 * g1.h ** 2

    y = np.asarray(u0)
    if np.iscomplexobj(y):
        nrm = math.sqrt(float(np.sum(np.abs(y) ** 2)))
        if math.sqrt(float(np.sum(y.imag ** 2))) > phase_tol * max(nrm, 1e-300):
            raise IncompatibleData("u0 must be real in the reduced coordinates")
        y = y.real
    y = y.astype(float)
    if y.shape != (forms.size,):
        raise IncompatibleData(
            f"u0 has shape {y.shape}, expected ({forms.size},)")

    nf = ws.nf
    if rho0 is None:
        rho = np.zeros(ws.rho_len)
    else:
        rho = _project_component(rho0, ws.rho_len, "real", phase_tol, "rho0")
    if N0 is None:
        N = (np.zeros(nf), np.zeros(nf), np.zeros(nf))
    else:
        if len(N0) != 3:
            raise IncompatibleData("N0 must have three components")
        if forms.kind == "incompressible" and forms.mode.field_dir == 3:
            phases = ("imag", "imag", "real")
        else:
            phases = ("real", "real", "imag")
        N = tuple(_project_component(c, nf, ph, phase_tol, f"N0[{k}]")
                  for k, (c, ph) in enumerate(zip(N0, phases)))

    n_scale = math.sqrt(sum(float(ws.wf @ (c * c)) for c in N))
    if n_scale > 0.0:
        div = ws.div_n(N)
        if div > div_tol * n_scale:
            raise IncompatibleData(
                f"div N0 = {div:.3e} exceeds {div_tol:.1e} x field size {n_scale:.3e}")

    b0 = ws.forcing(rho, N)
    v0 = cho_solve(ws.chol_M, -(ws.C @ y) + b0)
    a0 = cho_solve(ws.chol_M, ws.K @ y - ws.C @ v0)

    meta = {"J0": ws.energy(y, v0)}
    meta.update(_initial_diagnostics(ws, y, v0, rho, N))
    return EvolveState(y=y, ydot=v0, rho=rho, N=N, t=0.0, acc=a0,
                       diss=0.0, ws=ws, meta=meta)


def _initial_diagnostics(ws: _Workspace, y, v, rho, N) -> dict:
    forms = ws.forms
    g1 = forms.grid
    params = forms.params
    mode = forms.mode
    xi1, xi2, xin2 = ws.xi1, ws.xi2, ws.xin2
    wq, wf = ws.quad, ws.wf
    m = mode.m

    def l2q(a):
        return float(wq @ (np.abs(a) ** 2))

    def l2f(a):
        return float(wf @ (np.abs(a) ** 2))

    P = g1.flux_to_node
    out = {}
    if forms.kind == "incompressible":
        # Q0 = lambda0 m d_i N0 - g rho0 e3, assembled per phase convention
        lam0m = params.lambda0 * m
        if mode.field_dir == 3:
            q1 = lam0m * (g1.flux_div @ N[0])
            q2 = lam0m * (g1.flux_div @ N[1])
            q3 = lam0m * (g1.flux_div @ N[2]) - params.g * rho
            q0sq = l2q(q1) + l2q(q2) + l2q(q3)
        else:
            q1 = lam0m * xi1 * N[0]
            q2 = lam0m * xi1 * N[1]
            q3 = -lam0m * xi1 * (P @ N[2]) - params.g * rho
            q0sq = l2f(q1) + l2f(q2) + l2q(q3)
        out["Q0_norm"] = math.sqrt(q0sq)
        di_u0 = (float(y @ (ws.bend @ y)) if mode.field_dir == 3
                 else xi1 * xi1 * float(y @ (ws.unit @ y)))
        di_n0 = (sum(l2q(g1.flux_div @ c) for c in N) if mode.field_dir == 3
                 else xi1 * xi1 * sum(l2f(c) for c in N))
        u_n = _incompressible_velocity(forms, y)
        rho_sq = l2q(rho)
        n_sq = sum(l2f(c) for c in N)
        u_sq = float(y @ (ws.unit @ y))
    else:
        lam0 = params.lambda0
        q = ws.pp_f * rho + lam0 * ws.mc_f * N[0]
        c1 = xi1 * q - lam0 * ws.dmc_f * N[2] - lam0 * ws.mc_f * xi1 * N[0]
        c2 = xi2 * q - lam0 * ws.mc_f * xi1 * N[1]
        c3 = (g1.flux_div @ q
              + P @ (lam0 * ws.mc_f * xi1 * N[2] + params.g * rho))
        out["P0_norm"] = math.sqrt(l2f(c1) + l2f(c2) + l2q(c3))
        di_u0 = xi1 * xi1 * float(y @ (ws.unit @ y))
        di_n0 = xi1 * xi1 * sum(l2f(c) for c in N)
        u_n = _compressible_velocity(forms, y)
        rho_sq = l2f(rho)
        n_sq = sum(l2f(c) for c in N)
        u_sq = float(y @ (ws.unit @ y))

    mu = params.mu
    lap_sq = sum(l2q(mu * (g1.d2 @ c - xin2 * c)) for c in u_n)
    out["stability_denom"] = rho_sq + di_u0 + lap_sq + di_n0
    ut_sq = float(v @ (ws.unit @ v))
    out["combined0"] = math.sqrt(rho_sq + u_sq + n_sq + ut_sq)
    return out


def _incompressible_velocity(forms: ModeForms, y: np.ndarray):
    g1 = forms.grid
    xi1, xi2 = forms.mode.xi
    xin2 = forms.mode.xi_norm2
    nx = math.sqrt(xin2)
    v3 = g1.clamped @ y[forms.layout["v3"]]
    phi = y[forms.layout["phi"]]
    dv3 = g1.d1 @ v3
    u1 = 1j * (xi1 * dv3 / xin2 - xi2 * phi / nx)
    u2 = 1j * (xi2 * dv3 / xin2 + xi1 * phi / nx)
    return u1, u2, v3.astype(complex)


def _compressible_velocity(forms: ModeForms, y: np.ndarray):
    v1 = y[forms.layout["v1"]]
    v2 = y[forms.layout["v2"]]
    v3 = y[forms.layout["v3"]]
    return 1j * v1, 1j * v2, v3.astype(complex)


def step(state: EvolveState, dt: float, scheme: str = "trapezoidal") -> EvolveState:
    """One implicit time step; returns a new state.

    Average-acceleration update, then trapezoidal quadrature of the ϱ and N
    rate laws over the same interval.

    :raises InputError: dt ≤ 0 or unknown scheme.
    :raises SolverFailure: the implicit solve breaks down.
    """
    if not dt > 0.0:
        raise InputError(f"dt must be positive, got {dt}")
    if scheme not in _SCHEMES:
        raise InputError(f"scheme must be one of {_SCHEMES}, got '{scheme}'")
    ws = state.ws
    y, v, a = state.y, state.ydot, state.acc
    fac = ws.step_factor(dt)
    y_pred = y + dt * v + (dt * dt / 4.0) * a
    v_pred = v + (dt / 2.0) * a
    a_new = cho_solve(fac, ws.K @ y_pred - ws.C @ v_pred)
    if not np.all(np.isfinite(a_new)):
        raise SolverFailure("implicit step produced non-finite acceleration")
    v_new = v_pred + (dt / 2.0) * a_new
    y_new = y_pred + (dt * dt / 4.0) * a_new

    r_old, n_old = ws.rates(y)
    r_new, n_new = ws.rates(y_new)
    rho_new = state.rho + (dt / 2.0) * (r_old + r_new)
    N_new = tuple(Nk + (dt / 2.0) * (ro + rn)
                  for Nk, ro, rn in zip(state.N, n_old, n_new))
    diss_new = state.diss + dt * (float(v @ (ws.C @ v))
                                  + float(v_new @ (ws.C @ v_new)))
    return replace(state, y=y_new, ydot=v_new, rho=rho_new, N=N_new,
                   t=state.t + dt, acc=a_new, diss=diss_new)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Diagnostics of one trajectory at the recorded times.

    Arrays are aligned with times.  norm_diu is ‖∂ᵢu‖ for the incompressible
    problem and √(‖∂₁u‖² + ‖div u‖²) for the compressible one.  energy_drift
    is the relative defect of the energy identity with the trapezoidal
    dissipation integral; first_order_defect the relative residual of
    J ẏ = −V y + b(ϱ, N), which the scheme preserves to rounding.
    fit_rate/fit_band: log-linear growth-rate estimate over the second half
    of the record with a two-sigma confidence band.
    """

    kind: str
    times: np.ndarray
    norm_rho: np.ndarray
    norm_u: np.ndarray
    norm_diu: np.ndarray
    norm_ut: np.ndarray
    norm_gradu: np.ndarray
    norm_N: np.ndarray
    energy_drift: np.ndarray
    first_order_defect: np.ndarray
    J0: float
    forcing_norm: float
    fit_rate: Optional[float]
    fit_band: Optional[float]
    rho_increments: np.ndarray
    N_increments: np.ndarray
    ledger: dict

    _CSV_COLUMNS = ("t", "norm_rho", "norm_u", "norm_diu", "norm_ut",
                    "norm_gradu", "norm_N", "energy_drift")

    def csv_text(self) -> str:
        cols = (self.times, self.norm_rho, self.norm_u, self.norm_diu,
                self.norm_ut, self.norm_gradu, self.norm_N, self.energy_drift)
        lines = [",".join(self._CSV_COLUMNS)]
        for row in zip(*cols):
            lines.append(",".join(f"{x:.17g}" for x in row))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "J0": self.J0,
            "forcing_norm": self.forcing_norm,
            "fit_rate": self.fit_rate,
            "fit_band": self.fit_band,
            "max_energy_drift": float(np.max(self.energy_drift)),
            "max_first_order_defect": float(np.max(self.first_order_defect)),
            "ledger": dict(self.ledger),
        }


def _norms_row(ws: _Workspace, st: EvolveState):
    forms = ws.forms
    y, v = st.y, st.ydot
    u_sq = float(y @ (ws.unit @ y))
    ut_sq = float(v @ (ws.unit @ v))
    n_sq = sum(float(ws.wf @ (c * c)) for c in st.N)
    rho_sq = float(ws.rho_weights @ (st.rho * st.rho))
    if forms.kind == "incompressible":
        bend_sq = float(y @ (ws.bend @ y))
        if forms.mode.field_dir == 3:
            diu_sq = bend_sq
        else:
            diu_sq = ws.xi1 * ws.xi1 * u_sq
        grad_sq = ws.xin2 * u_sq + bend_sq
    else:
        diu_sq = ws.xi1 * ws.xi1 * u_sq + float(y @ (ws.divsq @ y))
        grad_sq = float(y @ (ws.gradm @ y))
    return (math.sqrt(max(rho_sq, 0.0)), math.sqrt(max(u_sq, 0.0)),
            math.sqrt(max(diu_sq, 0.0)), math.sqrt(max(ut_sq, 0.0)),
            math.sqrt(max(grad_sq, 0.0)), math.sqrt(max(n_sq, 0.0)))


def run_trajectory(state: EvolveState, T: float, dt: float,
                   diagnostics_every: int = 1,
                   scheme: str = "trapezoidal") -> TrajectoryRecord:
    """Advance to time T recording diagnostics every given number of steps.

    Args:
        state: initial state from init_state.
        T: final time (the step count is rounded to cover it).
        dt: time step.
        diagnostics_every: record every this many steps (the initial and
            final states are always recorded).
    """
    if not T > 0.0:
        raise InputError(f"final time must be positive, got {T}")
    if diagnostics_every < 1:
        raise InputError("diagnostics_every must be >= 1")
    ws = state.ws
    n_steps = max(1, int(round(T / dt)))
    j0 = state.meta.get("J0", ws.energy(state.y, state.ydot))

    times = []
    rows = []
    drifts = []
    defects = []
    rho_inc = []
    n_inc = []
    prev_rho = state.rho.copy()
    prev_n = tuple(c.copy() for c in state.N)

    def record(st: EvolveState):
        times.append(st.t)
        rows.append(_norms_row(ws, st))
        en = ws.energy(st.y, st.ydot)
        # the two identity terms cancel down to J0 along a growing mode, so
        # the drift is relative to their running size, not just to J0
        scale = max(1.0, abs(j0), abs(en) + abs(st.diss))
        drifts.append(abs(en + st.diss - j0) / scale)
        bb = ws.forcing(st.rho, st.N)
        res = ws.M @ st.ydot + ws.C @ st.y - bb
        scl = max(float(np.max(np.abs(ws.M @ st.ydot))),
                  float(np.max(np.abs(ws.C @ st.y))),
                  float(np.max(np.abs(bb))), np.finfo(float).tiny)
        defects.append(float(np.max(np.abs(res))) / scl)

    def track_increment(st: EvolveState):
        nonlocal prev_rho, prev_n
        d = st.rho - prev_rho
        rho_inc.append(math.sqrt(float(ws.rho_weights @ (d * d))))
        n_inc.append(math.sqrt(sum(float(ws.wf @ ((c - pc) ** 2))
                                   for c, pc in zip(st.N, prev_n))))
        prev_rho = st.rho.copy()
        prev_n = tuple(c.copy() for c in st.N)

    record(state)
    st = state
    for k in range(1, n_steps + 1):
        st = step(st, dt, scheme)
        if k % diagnostics_every == 0 or k == n_steps:
            record(st)
            track_increment(st)

    times = np.asarray(times)
    cols = np.asarray(rows).T
    norm_rho, norm_u, norm_diu, norm_ut, norm_gradu, norm_n = cols
    drifts = np.asarray(drifts)
    defects = np.asarray(defects)

    fit_rate, fit_band = _fit_growth(times, norm_u)
    denom = state.meta.get("stability_denom", 0.0)
    h1 = np.sqrt(norm_u ** 2 + norm_gradu ** 2)
    tiny = np.finfo(float).tiny
    late = max(1, len(rho_inc) * 3 // 4)
    ledger = {
        "stability_denom": denom,
        "max_ut_sq_ratio": float(np.max(norm_ut ** 2)) / max(denom, tiny),
        "max_comb_sq_ratio": float(np.max(norm_ut ** 2 + norm_u ** 2
                                          + norm_diu ** 2)) / max(denom, tiny),
        "h1_final_over_max": float(h1[-1] / max(float(np.max(h1)), tiny)),
        "rho_increment_late": float(max(rho_inc[late:], default=0.0)),
        "N_increment_late": float(max(n_inc[late:], default=0.0)),
        "rho_bounded": bool(np.max(norm_rho) < np.inf),
        "N_bounded": bool(np.max(norm_n) < np.inf),
    }
    return TrajectoryRecord(
        kind=ws.forms.kind, times=times, norm_rho=norm_rho, norm_u=norm_u,
        norm_diu=norm_diu, norm_ut=norm_ut, norm_gradu=norm_gradu,
        norm_N=norm_n, energy_drift=drifts, first_order_defect=defects,
        J0=j0,
        forcing_norm=state.meta.get("Q0_norm", state.meta.get("P0_norm", 0.0)),
        fit_rate=fit_rate, fit_band=fit_band,
        rho_increments=np.asarray(rho_inc), N_increments=np.asarray(n_inc),
        ledger=ledger)


def _fit_growth(times: np.ndarray, norm_u: np.ndarray):
    """Least-squares slope of log ‖u‖ over the second half of the record."""
    half = times >= 0.5 * times[-1]
    mask = half & (norm_u > 0.0)
    if int(np.count_nonzero(mask)) < 3:
        return None, None
    t = times[mask]
    z = np.log(norm_u[mask])
    A = np.vstack([t, np.ones_like(t)]).T
    coef, res, _, _ = np.linalg.lstsq(A, z, rcond=None)
    dof = len(t) - 2
    if dof > 0 and res.size:
        s2 = float(res[0]) / dof
        tt = t - t.mean()
        var = s2 / max(float(tt @ tt), np.finfo(float).tiny)
        band = 2.0 * math.sqrt(var)
    else:
        band = 0.0
    return float(coef[0]), band


@dataclass(frozen=True)
class EnvelopeReport:
    """Fitted envelope constants per recorded norm.

    mode is "exponential" (C·e^{Λt} envelopes) or "boundedness" (no rate
    supplied; plain suprema against the initial data combination).  flagged
    lists the norms whose constant is non-finite or implausibly large.
    """

    Lambda: Optional[float]
    mode: str
    constants: dict
    baselines: dict
    flagged: tuple


def envelope_check(rec: TrajectoryRecord, Lambda: Optional[float] = None,
                   flag_threshold: float = 1e6) -> EnvelopeReport:
    """Smallest C with norm(t) ≤ C·e^{Λt}·baseline for each recorded norm.

    The baseline of a norm is its own initial value when that is
    nondegenerate, else the combined initial data size; with Lambda None the
    check degenerates to a boundedness check (stable regime).
    """
    series = {
        "rho": rec.norm_rho, "u": rec.norm_u, "diu": rec.norm_diu,
        "ut": rec.norm_ut, "gradu": rec.norm_gradu, "N": rec.norm_N,
    }
    combined0 = math.sqrt(rec.norm_rho[0] ** 2 + rec.norm_u[0] ** 2
                          + rec.norm_N[0] ** 2 + rec.norm_ut[0] ** 2)
    if combined0 == 0.0:
        zeros = {k: 0.0 for k in series}
        return EnvelopeReport(
            Lambda=Lambda,
            mode="exponential" if Lambda is not None else "boundedness",
            constants=zeros, baselines=zeros, flagged=())
    growth = (np.exp(Lambda * rec.times) if Lambda is not None
              else np.ones_like(rec.times))
    constants = {}
    baselines = {}
    flagged = []
    for name, x in series.items():
        b = x[0] if x[0] > 1e-12 * combined0 else combined0
        c = float(np.max(x / (b * growth)))
        constants[name] = c
        baselines[name] = float(b)
        if not math.isfinite(c) or c > flag_threshold:
            flagged.append(name)
    return EnvelopeReport(Lambda=Lambda,
                          mode="exponential" if Lambda is not None else "boundedness",
                          constants=constants, baselines=baselines,
                          flagged=tuple(flagged))


def viscous_time(forms: ModeForms) -> float:
    """Slowest decay time of the mode: 1/|spectral abscissa| of the
    first-order companion of M ÿ + C ẏ − K y = 0."""
    M, C, K = forms.J, forms.V, forms.E
    n = M.shape[0]
    Minv_K = np.linalg.solve(M, K)
    Minv_C = np.linalg.solve(M, C)
    top = np.hstack([np.zeros((n, n)), np.eye(n)])
    bot = np.hstack([Minv_K, -Minv_C])
    w = dense_eig(np.vstack([top, bot]), right=False)
    absc = float(np.max(w.real))
    if abs(absc) < 1e-300:
        raise SolverFailure("spectral abscissa vanishes; no viscous time scale")
    return 1.0 / abs(absc)
