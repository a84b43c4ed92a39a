"""Dense symmetric-definite generalized eigensolver with refinement.

solve_gsym reduces A v = lam B v to standard form through an explicit Cholesky
factorization of B and hands the reduced matrix to LAPACK.  Everything is
deterministic: same inputs, same bits out.

refine_top polishes the extreme eigenpair by shifted inverse iteration in the
original coordinates.  The dense solver's output carries an absolute noise
floor of order eps times the reduced matrix norm, which for stiff pencils is
many orders above eps; a few SPD-shifted solves push the eigenvector error
down to the level where Rayleigh quotients are limited only by quadrature
rounding.  The growth-rate fixed point relies on this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, cho_factor, cho_solve, eigh, solve_triangular, LinAlgError

from .errors import (BracketExhausted, InputError, NotPositiveDefinite,
                     NotSymmetric, SolverFailure)

_SYM_TOL = 1e-12
_COND_LIMIT = 1e15


@dataclass(frozen=True)
class GEigResult:
    """Eigenvalues ascending; eigenvectors B-orthonormal in matching columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_norm: float
    orthonormality: float


def _require_symmetric(M: np.ndarray, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotSymmetric(f"{name} must be square")
    scale = np.max(np.abs(M)) + 1.0
    gap = np.max(np.abs(M - M.T))
    if gap > _SYM_TOL * scale:
        raise NotSymmetric(f"{name} asymmetry {gap:.3e} exceeds {_SYM_TOL:g} relative")
    return 0.5 * (M + M.T)


def _chol_mass(B: np.ndarray) -> np.ndarray:
    try:
        L = cholesky(B, lower=True)
    except LinAlgError as e:
        raise NotPositiveDefinite(f"B: {e}") from None
    d = np.diag(L)
    if (d.max() / d.min()) ** 2 > _COND_LIMIT:
        raise NotPositiveDefinite(
            f"B numerically singular (condition ~{(d.max()/d.min())**2:.1e})"
        )
    return L


def solve_gsym(A: np.ndarray, B: np.ndarray, subset: tuple | None = None) -> GEigResult:
    """Solve A v = lam B v for symmetric A and SPD B.

    :param subset: optional (lo, hi) index range of eigenvalues to compute
        (inclusive, ascending order); None computes all of them.
    :raises NotSymmetric: either matrix fails the symmetry tolerance.
    :raises NotPositiveDefinite: B fails Cholesky or is near singular.
    """
    A = _require_symmetric(A, "A")
    B = _require_symmetric(B, "B")
    L = _chol_mass(B)
    # reduce: M = inv(L) A inv(L)^T, then explicit re-symmetrization
    M = solve_triangular(L, solve_triangular(L, A.T, lower=True).T, lower=True)
    M = 0.5 * (M + M.T)
    if subset is None:
        lam, Q = eigh(M)
    else:
        lam, Q = eigh(M, subset_by_index=subset)
    V = solve_triangular(L.T, Q, lower=False)

    R = A @ V - B @ V * lam[None, :]
    nA = np.linalg.norm(A, ord=np.inf)
    nB = np.linalg.norm(B, ord=np.inf)
    rn = 0.0
    for i in range(lam.size):
        denom = (nA + abs(lam[i]) * nB) * np.linalg.norm(V[:, i]) + np.finfo(float).tiny
        rn = max(rn, np.linalg.norm(R[:, i]) / denom)
    G = V.T @ B @ V - np.eye(lam.size)
    ortho = float(np.max(np.abs(G)))
    if ortho > 1e-8:
        raise SolverFailure(f"B-orthonormality defect {ortho:.3e} exceeds 1e-8")
    return GEigResult(eigenvalues=lam, eigenvectors=V,
                      residual_norm=float(rn), orthonormality=ortho)


def top_pair(A: np.ndarray, B: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and its vector, without the full spectrum."""
    n = A.shape[0]
    r = solve_gsym(A, B, subset=(n - 1, n - 1))
    return float(r.eigenvalues[-1]), r.eigenvectors[:, -1]


def refine_top(A: np.ndarray, B: np.ndarray, lam: float, v: np.ndarray,
               iters: int = 3) -> np.ndarray:
    """Shifted inverse iteration toward the top eigenvector.

    The shift sits just above the given eigenvalue estimate so the shifted
    pencil stays SPD; each solve multiplies the error transverse to the top
    eigenspace by gap ratios < 1 while solve roundoff stays at the eps level
    in the directions that matter.  Returns the B-normalized vector.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    scale = max(1.0, abs(lam))
    delta = 1e-6 * scale
    for _ in range(6):
        try:
            S = cho_factor((lam + delta) * B - A)
            break
        except LinAlgError:
            delta *= 32.0
    else:
        raise SolverFailure("could not shift the pencil to SPD for refinement")
    x = v / np.sqrt(v @ (B @ v))
    for _ in range(iters):
        x = cho_solve(S, B @ x)
        x = x / np.sqrt(x @ (B @ x))
    return x


def max_rayleigh(A: np.ndarray, B: np.ndarray) -> tuple[float, np.ndarray]:
    """Maximum of x·Ax / x·Bx over x != 0, with the refined maximizer.

    The returned value is the Rayleigh quotient of the refined vector, so it
    is always a lower bound on the true maximum and satisfies the shift rule
    max(A + c B, B) = max(A, B) + c to rounding.
    """
    lam, v = top_pair(A, B)
    x = refine_top(A, B, lam, v)
    return float((x @ (A @ x)) / (x @ (B @ x))), x


def psd_ratio_sup(N: np.ndarray, D: np.ndarray, B: np.ndarray,
                  bracket: tuple | None = None,
                  rel_tol: float = 1e-12) -> float:
    """inf{c : N - c D is negative semidefinite}, by bisection on c.

    g(c) = lam_max(N - cD; B) is nonincreasing in c because D is PSD, so the
    set {g <= 0} is a half line and its left endpoint is the answer.  The
    result is positive exactly when N is positive somewhere that D is too;
    it is +inf when N stays positive on the way up to the expansion ceiling
    (N positive on the kernel of D, no c works); and the search signals
    BracketExhausted when g never becomes positive on the way down, the
    degenerate case N ⪯ 0 with D vanishing wherever N comes close to zero.

    :param bracket: starting (cLo, cHi); expanded outward as needed.
        Defaults to a norm-ratio-sized symmetric interval.
    :param rel_tol: relative endpoint gap at which bisection stops.
    :raises NotPositiveDefinite: D has an eigenvalue below -1e-10 * ||D||.
    :raises BracketExhausted: no sign change found expanding downward.
    """
    N = _require_symmetric(N, "N")
    D = _require_symmetric(D, "D")
    dvals, dvecs = np.linalg.eigh(D)
    dmin = float(dvals[0])
    dnorm = float(np.linalg.norm(D, ord=np.inf))
    if dmin < -1e-10 * (dnorm + np.finfo(float).tiny):
        raise NotPositiveDefinite(f"penalty form has eigenvalue {dmin:.3e} < 0")

    nN = float(np.linalg.norm(N, ord=np.inf))
    nB = max(float(np.linalg.norm(B, ord=np.inf)), np.finfo(float).tiny)
    ker = dvecs[:, dvals <= 1e-12 * (dnorm + np.finfo(float).tiny)]
    if ker.shape[1]:
        # N positive on an exact kernel of D cannot be pushed down by any c
        NK = ker.T @ N @ ker
        BK = ker.T @ B @ ker
        rk = solve_gsym(0.5 * (NK + NK.T), 0.5 * (BK + BK.T),
                        subset=(ker.shape[1] - 1, ker.shape[1] - 1))
        if float(rk.eigenvalues[-1]) > 1e-10 * (nN + np.finfo(float).tiny) / nB:
            return float("inf")
    # the bracket scale needs a floor so a (near-)zero D cannot overflow it
    scale = (nN + 1.0) / max(dnorm, 1e-16 * (nN + 1.0))
    if bracket is None:
        bracket = (-scale, scale)
    c_lo, c_hi = float(bracket[0]), float(bracket[1])
    if not c_lo < c_hi:
        raise InputError(f"bracket ({c_lo}, {c_hi}) is not increasing")
    ceiling = 1e14 * max(scale, abs(c_lo), abs(c_hi))

    def g_pos(c: float) -> tuple[bool, float]:
        # "definitely above zero": the semidefinite test carries the same
        # relative slack as the D check, else exact-zero kernel blocks (the
        # rank-deficient modes) would chatter the sign at rounding level
        r = solve_gsym(N - c * D, B, subset=(N.shape[0] - 1, N.shape[0] - 1))
        val = float(r.eigenvalues[-1])
        return val > 1e-10 * (nN + abs(c) * dnorm) / nB, val

    # upper end: need g(hi) <= 0, else the ratio is unbounded above
    hi = c_hi
    while g_pos(hi)[0]:
        hi = max(2.0 * abs(hi), scale) if hi >= 0.0 else scale
        if hi > ceiling:
            return float("inf")
    # lower end: need g(lo) > 0, else nothing tops out below the bracket
    lo = c_lo
    while True:
        ok, gval = g_pos(lo)
        if ok:
            break
        hi = min(hi, lo)
        lo = -max(2.0 * abs(lo), scale) if lo <= 0.0 else -scale
        if lo < -ceiling:
            raise BracketExhausted(
                f"ratio sup not bracketed: g({-ceiling:.3e}-side) = {gval:.3e} <= 0")
    while hi - lo > rel_tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if g_pos(mid)[0]:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
