"""Deterministic two-resolvent calculus for a pair of deformations.

The object of interest is the deterministic approximation of <G1(z1) G2(z2)>,

    <M12> = <M1 M2> / (1 - <M1 M2>),

whose denominator 1 - <M1 M2> is the nontrivial eigenvalue of the stability
operator.  This module computes that eigenvalue together with its lower
bound, the shift

    s(z1, z2) = <M1 (D1 - D2) M2> / <M1 M2>,

the exact resolvent identity residual, and the integral of the one-body
stability factor 1/|1 - <M^2>| along the real axis.

:class:`MdePair` caches the eigenbases of both deformations and the overlap
matrix |U1^* U2|^2, after which every mixed trace on a (z1, z2) tensor grid
is a bilinear form; the contour engine and the parameter scans all run
through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDenominator,
    DegenerateStability,
    QuadratureUnderResolved,
)
from .mde import Deformation, MdeEvaluator, MdeSolution, as_deformation

__all__ = [
    "DEGENERACY_FLOOR",
    "StabilityReading",
    "ShiftValue",
    "M12Result",
    "MdePair",
    "m12",
    "stability_eigenvalue",
    "shift",
    "m_identity_residual",
    "one_body_stability_integral",
    "stability_scan",
]

#: below this absolute size, 1 - <M1 M2> and <M1 M2> are treated as degenerate
DEGENERACY_FLOOR = 1e-14


@dataclass(frozen=True)
class StabilityReading:
    """Nontrivial stability eigenvalue together with its theoretical floor."""

    eigenvalue: complex
    bound_rhs: float
    delta2: float

    @property
    def ratio(self) -> float:
        """|eigenvalue|^{-1} / bound_rhs, the empirical constant."""
        return 1.0 / (abs(self.eigenvalue) * self.bound_rhs)


@dataclass(frozen=True)
class ShiftValue:
    value: complex
    denominator: complex


@dataclass(frozen=True)
class M12Result:
    matrix: np.ndarray
    trace: complex


class MdePair:
    """Joint evaluator for mixed traces of M1(z1) X M2(z2).

    Diagonalizes both deformations once.  With M_j = U_j diag(v_j) U_j^*,
    any trace <M1 A M2 B> with A, B diagonal in the respective eigenbases
    reduces to a bilinear form through T = |U1^* U2|^2.
    """

    def __init__(self, D1, D2, tol: float = 1e-13):
        self.D1 = as_deformation(D1)
        self.D2 = as_deformation(D2)
        if self.D1.n != self.D2.n:
            raise ValueError("deformation dimensions differ")
        self.ev1 = MdeEvaluator(self.D1, tol=tol)
        self.ev2 = MdeEvaluator(self.D2, tol=tol)
        S = self.ev1.basis.conj().T @ self.ev2.basis
        self.overlap = np.abs(S) ** 2
        diff = self.D1.matrix - self.D2.matrix
        self.delta2 = float(np.linalg.norm(diff, ord="fro") ** 2 / self.D1.n)

    @property
    def n(self) -> int:
        return self.D1.n

    @property
    def delta(self) -> float:
        return float(np.sqrt(self.delta2))

    # -- single-point vectors -------------------------------------------------

    def _vec(self, which: int, z: complex, warm=None):
        ev = self.ev1 if which == 1 else self.ev2
        z = complex(z)
        if z.imag == 0.0:
            s, _ = ev.boundary_trace(z.real, side=1)
        else:
            s = ev.trace(z, s0=warm)
        return 1.0 / (ev.eigs - (z + s)), s

    def traces(self, z1: complex, z2: complex, v1=None, v2=None) -> dict:
        """All mixed traces needed by the pair calculus at one (z1, z2)."""
        if v1 is None:
            v1, _ = self._vec(1, z1)
        if v2 is None:
            v2, _ = self._vec(2, z2)
        n = self.n
        Tv2 = self.overlap @ v2
        Tav2 = self.overlap @ (self.ev2.eigs * v2)
        m1m2 = complex(v1 @ Tv2) / n
        m1d1m2 = complex((self.ev1.eigs * v1) @ Tv2) / n
        m1d2m2 = complex(v1 @ Tav2) / n
        return {
            "m1": complex(np.mean(v1)),
            "m2": complex(np.mean(v2)),
            "m1m2": m1m2,
            "m1d1m2": m1d1m2,
            "m1d2m2": m1d2m2,
            "v1": v1,
            "v2": v2,
        }

    def m1m2_trace(self, z1: complex, z2: complex) -> complex:
        return self.traces(z1, z2)["m1m2"]

    def shift_value(self, z1: complex, z2: complex, v1=None, v2=None) -> ShiftValue:
        t = self.traces(z1, z2, v1=v1, v2=v2)
        den = t["m1m2"]
        if abs(den) < DEGENERACY_FLOOR:
            raise DegenerateDenominator(
                f"|<M1 M2>| = {abs(den):.2e} below degeneracy floor")
        return ShiftValue(value=(t["m1d1m2"] - t["m1d2m2"]) / den, denominator=den)

    # -- tensor grids ----------------------------------------------------------

    def m1m2_grid(self, v1_cols: np.ndarray, v2_cols: np.ndarray) -> np.ndarray:
        """<M1 M2> on the tensor grid spanned by columns of diag vectors.

        v1_cols: (N, n1) diagonal vectors of M1 at n1 points; likewise
        v2_cols.  Returns an (n1, n2) array.
        """
        return (v1_cols.T @ (self.overlap @ v2_cols)) / self.n


# ---------------------------------------------------------------------------
# public operations on solution records
# ---------------------------------------------------------------------------

def _pair_trace(M1: MdeSolution, M2: MdeSolution) -> complex:
    n = M1.m_matrix.shape[0]
    return complex(np.sum(M1.m_matrix * M2.m_matrix.T)) / n


def m12(M1: MdeSolution, M2: MdeSolution) -> M12Result:
    """Two-resolvent deterministic approximation M1 M2 / (1 - <M1 M2>)."""
    p = _pair_trace(M1, M2)
    denom = 1.0 - p
    if abs(denom) < DEGENERACY_FLOOR:
        raise DegenerateStability(
            f"|1 - <M1 M2>| = {abs(denom):.2e} below degeneracy floor")
    mat = (M1.m_matrix @ M2.m_matrix) / denom
    return M12Result(matrix=mat, trace=p / denom)


def stability_eigenvalue(M1: MdeSolution, M2: MdeSolution,
                         delta2: float | None = None) -> StabilityReading:
    """Nontrivial eigenvalue 1 - <M1 M2> and the corresponding bound.

    bound_rhs is the right-hand side of the stability estimate

        |1 - <M1 M2>|^{-1} <= C * max(1/(Delta^2 + (Re z1 - Re z2)^2
            + (Im<M1> + Im<M2>)^2 + |Im z1 / <Im M1>| + |Im z2 / <Im M2>|), 1)

    with Delta^2 = <(D1 - D2)^2> taken from the attached deformations
    unless supplied explicitly.
    """
    if delta2 is None:
        if M1.deformation is None or M2.deformation is None:
            raise ValueError("delta2 required when solutions carry no deformation")
        diff = M1.deformation.matrix - M2.deformation.matrix
        delta2 = float(np.linalg.norm(diff, ord="fro") ** 2 / diff.shape[0])
    p = _pair_trace(M1, M2)
    im1, im2 = M1.m_trace.imag, M2.m_trace.imag
    with np.errstate(divide="ignore"):
        pen1 = abs(M1.z.imag / im1) if im1 != 0 else np.inf
        pen2 = abs(M2.z.imag / im2) if im2 != 0 else np.inf
    denom = (delta2 + (M1.z.real - M2.z.real) ** 2 + (im1 + im2) ** 2
             + pen1 + pen2)
    rhs = max(1.0 / denom if denom > 0 else np.inf, 1.0)
    return StabilityReading(eigenvalue=1.0 - p, bound_rhs=float(rhs),
                            delta2=float(delta2))


def shift(M1: MdeSolution, M2: MdeSolution, D1, D2) -> ShiftValue:
    """Shift s(z1, z2) = <M1 (D1 - D2) M2> / <M1 M2> from solution matrices."""
    D1 = as_deformation(D1)
    D2 = as_deformation(D2)
    n = M1.m_matrix.shape[0]
    den = _pair_trace(M1, M2)
    if abs(den) < DEGENERACY_FLOOR:
        raise DegenerateDenominator(
            f"|<M1 M2>| = {abs(den):.2e} below degeneracy floor")
    num = complex(np.trace(M1.m_matrix @ (D1.matrix - D2.matrix) @ M2.m_matrix)) / n
    return ShiftValue(value=num / den, denominator=den)


def m_identity_residual(M1: MdeSolution, M2: MdeSolution,
                        z1: complex, z2: complex, D1, D2) -> float:
    """Residual of the exact generalized resolvent identity.

    | <M1 M2>/(1 - <M1 M2>) - (<M1> - <M2>)/(z1 - z2 - s) | which vanishes
    identically for exact solutions; values above 1e-10 indicate a solver
    problem, not a model property.
    """
    s = shift(M1, M2, D1, D2).value
    p = _pair_trace(M1, M2)
    denom = 1.0 - p
    if abs(denom) < DEGENERACY_FLOOR:
        raise DegenerateStability("identity undefined at degenerate stability")
    lhs = p / denom
    rhs = (M1.m_trace - M2.m_trace) / (complex(z1) - complex(z2) - s)
    return float(abs(lhs - rhs))


# ---------------------------------------------------------------------------
# one-body stability integral
# ---------------------------------------------------------------------------

def _one_body_factor(ev: MdeEvaluator, E: np.ndarray, eta: float, s0=None):
    """1/|1 - <M^2(E + i eta)>| on a batch of real energies.

    With a warm start ``s0`` the solve is a direct Newton polish; entries
    that fail its certificate are re-solved through the full continuation
    ladder.  Returns (factor, subordination trace).
    """
    from .mde import _solve_trace, _trace_map

    E = np.atleast_1d(np.asarray(E, dtype=float))
    z = E + 1j * eta
    if s0 is not None:
        s, res, _ = _solve_trace(ev.eigs, z, s0=np.asarray(s0, dtype=complex),
                                 tol=ev.tol)
        bad = (res > 1e-10) | (np.imag(s) < -1e-12)
        if bad.any():
            if eta == 0.0:
                s_bad, _ = ev.boundary_trace(E[bad])
            else:
                s_bad = ev.trace(z[bad])
            s[bad] = np.atleast_1d(s_bad)
    elif eta == 0.0:
        s, _ = ev.boundary_trace(E)
    else:
        s = np.atleast_1d(ev.trace(z))
    v2 = np.mean(1.0 / (ev.eigs[:, None] - (z + s)[None, :]) ** 2, axis=0)
    out = np.abs(1.0 - v2)
    with np.errstate(divide="ignore"):
        return np.where(out > 0, 1.0 / out, np.inf), s


def one_body_stability_integral(D, eta: float, erange: tuple[float, float] | None = None,
                                step: float = 0.02, tol: float = 1e-5,
                                max_depth: int = 48) -> float:
    """Integral of 1/|1 - <M^2(E + i eta)>| over a real interval.

    Adaptive composite trapezoid: the base grid has spacing ``step``;
    panels whose values exceed 10x the median of the base grid are
    pre-split, after which panels are bisected until the local Richardson
    error estimate meets the (length-proportional) budget.  Integrable
    edge singularities at eta = 0 are handled by bisection down to widths
    where the midpoint contribution is below tolerance.

    Raises QuadratureUnderResolved when the depth cap is hit while the
    integrand still varies by more than 50% across a panel.
    """
    D = as_deformation(D)
    ev = MdeEvaluator(D)
    if erange is None:
        L = D.norm_bound
        erange = (-L - 2.0, L + 2.0)
    lo, hi = map(float, erange)
    if hi <= lo:
        raise ValueError("empty integration range")
    npts = max(int(np.ceil((hi - lo) / step)) + 1, 9)
    E = np.linspace(lo, hi, npts)
    f, s = _one_body_factor(ev, E, eta)
    finite = f[np.isfinite(f)]
    med = float(np.median(finite)) if finite.size else 1.0

    # hot panels (10x median rule) enter the queue with forced extra splits
    queue = []
    for a, b, fa, fb, sa, sb in zip(E[:-1], E[1:], f[:-1], f[1:], s[:-1], s[1:]):
        peak = max(fa if np.isfinite(fa) else np.inf,
                   fb if np.isfinite(fb) else np.inf)
        force = 2 if peak > 10 * med else 0
        queue.append((a, b, fa, fb, sa, sb, 0, force))

    total = 0.0
    span = hi - lo
    under_resolved = False
    while queue:
        mids = np.array([q[0] * 0.5 + q[1] * 0.5 for q in queue])
        warm = np.array([(q[4] + q[5]) * 0.5 for q in queue])
        fm, sm = _one_body_factor(ev, mids, eta, s0=warm)
        next_queue = []
        for (a, b, fa, fb, sa, sb, depth, force), m, fmid, smid in zip(
                queue, mids, fm, sm):
            width = b - a
            if not (np.isfinite(fa) and np.isfinite(fb) and np.isfinite(fmid)):
                if width > 1e-12 and depth < max_depth:
                    next_queue.append((a, m, fa, fmid, sa, smid, depth + 1, 0))
                    next_queue.append((m, b, fmid, fb, smid, sb, depth + 1, 0))
                elif np.isfinite(fmid):
                    # integrable endpoint: midpoint contribution of a sliver
                    total += fmid * width
                continue
            t1 = 0.5 * width * (fa + fb)
            t2 = 0.25 * width * (fa + 2 * fmid + fb)
            err = abs(t2 - t1) / 3.0
            budget = tol * max(width / span, 1e-12)
            rough = max(fa, fb, fmid) > 1.5 * min(fa, fb, fmid)
            if depth >= max_depth:
                if err > budget and rough:
                    under_resolved = True
                total += t2 + (t2 - t1) / 3.0
            elif err > budget or force > 0:
                nf = max(force - 1, 0)
                next_queue.append((a, m, fa, fmid, sa, smid, depth + 1, nf))
                next_queue.append((m, b, fmid, fb, smid, sb, depth + 1, nf))
            else:
                total += t2 + (t2 - t1) / 3.0
        queue = next_queue
    if under_resolved:
        raise QuadratureUnderResolved(
            "stability integrand still varies by > 50% at the depth cap")
    return float(total)


# ---------------------------------------------------------------------------
# parameter scans
# ---------------------------------------------------------------------------

def stability_scan(pairs, z_pairs) -> list[dict]:
    """Evaluate the stability bound on a sample of (D1, D2, z1, z2) tuples.

    ``pairs`` is a sequence of (D1, D2); ``z_pairs`` a matching sequence of
    (z1, z2).  Returns audit records with keys (z1, z2, delta, eigenvalue,
    bound_rhs, ratio) ready for tabular export.
    """
    rows = []
    for (D1, D2), (z1, z2) in zip(pairs, z_pairs):
        pair = MdePair(D1, D2)
        t = pair.traces(complex(z1), complex(z2))
        eig = 1.0 - t["m1m2"]
        im1, im2 = t["m1"].imag, t["m2"].imag
        pen1 = abs(np.imag(z1) / im1) if im1 != 0 else np.inf
        pen2 = abs(np.imag(z2) / im2) if im2 != 0 else np.inf
        denom = (pair.delta2 + (np.real(z1) - np.real(z2)) ** 2
                 + (im1 + im2) ** 2 + pen1 + pen2)
        rhs = max(1.0 / denom if denom > 0 else np.inf, 1.0)
        rows.append({
            "z1_re": float(np.real(z1)), "z1_im": float(np.imag(z1)),
            "z2_re": float(np.real(z2)), "z2_im": float(np.imag(z2)),
            "delta": pair.delta,
            "eigenvalue_re": eig.real, "eigenvalue_im": eig.imag,
            "bound_rhs": float(rhs),
            "ratio": float(1.0 / (abs(eig) * rhs)),
        })
    return rows
