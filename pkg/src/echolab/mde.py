"""Self-consistent resolvent approximation for deformed Wigner models.

For a Hermitian deformation D the deterministic approximation M(z) to the
resolvent of D + W solves

    -1/M(z) = z - D + <M(z)>,      Im z * Im M(z) > 0,

where <A> denotes the normalized trace.  This module provides the matrix
fixed-point solver, the self-consistent density of states rho, detection of
the kappa-bulk, continuation of M to the real axis, and an admissibility
test for the deformation.

Because the self-energy is the flat map <.>, the solution is always a
function of D:  M(z) = (D - omega(z))^{-1} with the scalar subordination
point omega(z) = z + <M(z)>.  :class:`MdeEvaluator` exploits this to solve
the scalar trace equation in the eigenbasis of D, which is what every grid
sweep in the package uses.  The matrix solver :func:`solve_mde` iterates the
damped fixed point on full matrices and serves as the independent route the
evaluator is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstraintViolation,
    ContinuationDiverged,
    EmptyBulk,
    NonConvergence,
)

__all__ = [
    "SpectralPoint",
    "Deformation",
    "MdeSolution",
    "BulkSet",
    "AdmissibilityReport",
    "MdeEvaluator",
    "semicircle_stieltjes",
    "solve_mde",
    "scdos",
    "kappa_bulk",
    "boundary_m",
    "check_admissible",
]

#: spectral parameters closer to the axis are rejected for direct solves
ETA_DIRECT_FLOOR = 1e-14

#: absolute eta floor of the boundary continuation ladder
ETA_LADDER_FLOOR = 1e-8

#: cushion subtracted from kappa when thresholding extrapolated densities,
#: guards against roundoff at exact-threshold comparisons
BULK_THRESHOLD_CUSHION = 1e-9


def semicircle_stieltjes(z):
    """Stieltjes transform of the semicircle density, m(z) = (-z + sqrt(z^2-4))/2.

    The square root is evaluated as sqrt(z-2)*sqrt(z+2) with principal
    branches, which selects Im m * Im z > 0 off the real axis and the
    boundary value from above on (-2, 2).
    """
    z = np.asarray(z, dtype=complex)
    m = 0.5 * (-z + np.sqrt(z - 2.0) * np.sqrt(z + 2.0))
    if m.ndim == 0:
        return complex(m)
    return m


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter z = e + i*eta with a signed half-plane offset."""

    e: float
    eta: float

    @property
    def z(self) -> complex:
        return complex(self.e, self.eta)

    @classmethod
    def from_complex(cls, z) -> "SpectralPoint":
        z = complex(z)
        return cls(z.real, z.imag)


@dataclass(frozen=True)
class Deformation:
    """Hermitian deterministic deformation with norm/trace metadata."""

    matrix: np.ndarray
    norm_bound: float
    trace: float

    @classmethod
    def from_matrix(cls, matrix, norm_bound: float | None = None,
                    herm_tol: float = 1e-12) -> "Deformation":
        """Wrap a Hermitian matrix, measuring its spectral norm and trace.

        Raises ValueError if the matrix is not Hermitian to ``herm_tol``
        (relative) or if its norm exceeds a supplied ``norm_bound``.
        """
        A = np.asarray(matrix, dtype=complex)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("deformation must be a square matrix")
        scale = max(1.0, float(np.linalg.norm(A, ord="fro")))
        defect = float(np.linalg.norm(A - A.conj().T, ord="fro")) / scale
        if defect > herm_tol:
            raise ValueError(f"matrix is not Hermitian (defect {defect:.2e})")
        norm = _norm2_hermitian(A)
        if norm_bound is not None and norm > norm_bound * (1 + 1e-12):
            raise ValueError(
                f"deformation norm {norm:.6g} exceeds bound {norm_bound:.6g}")
        tr = float(np.real(np.trace(A))) / max(A.shape[0], 1)
        return cls(matrix=A, norm_bound=float(norm_bound or norm), trace=tr)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def traceless(self) -> bool:
        return abs(self.trace) < 1e-12

    def evaluator(self) -> "MdeEvaluator":
        return MdeEvaluator(self)


def as_deformation(D) -> Deformation:
    """Coerce a matrix or Deformation to a Deformation."""
    if isinstance(D, Deformation):
        return D
    return Deformation.from_matrix(D)


@dataclass(frozen=True)
class MdeSolution:
    """Solution record of the self-consistent equation at one z."""

    z: complex
    m_matrix: np.ndarray
    m_trace: complex
    rho: float
    residual: float
    iterations: int
    deformation: Deformation | None = None
    meta: dict = field(default_factory=dict)

    def record(self) -> dict:
        """Flat record (z, <M>, rho, residual, iterations) for export."""
        return {
            "z_re": self.z.real,
            "z_im": self.z.imag,
            "m_re": self.m_trace.real,
            "m_im": self.m_trace.imag,
            "rho": self.rho,
            "residual": self.residual,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class BulkSet:
    """Union of closed intervals where the density stays above kappa."""

    kappa: float
    intervals: tuple
    grid_step: float

    def contains(self, x: float, margin: float = 0.0) -> bool:
        return any(lo + margin <= x <= hi - margin for lo, hi in self.intervals)

    @property
    def total_length(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)


def _is_diagonal(A: np.ndarray) -> bool:
    return not np.any(A - np.diag(np.diagonal(A)))


def _eig_hermitian(A: np.ndarray):
    """Eigendecomposition with a fast path for diagonal input."""
    n = A.shape[0]
    if _is_diagonal(A):
        d = np.real(np.diagonal(A)).astype(float)
        order = np.argsort(d, kind="stable")
        U = np.zeros((n, n), dtype=complex)
        U[order, np.arange(n)] = 1.0
        return d[order], U
    d, U = np.linalg.eigh(A)
    return d, U


def _norm2_hermitian(A: np.ndarray) -> float:
    if A.size == 0:
        return 0.0
    if _is_diagonal(A):
        return float(np.abs(np.real(np.diagonal(A))).max())
    return float(np.abs(np.linalg.eigvalsh(A)).max())


# ---------------------------------------------------------------------------
# scalar trace equation
# ---------------------------------------------------------------------------

def _trace_map(d: np.ndarray, z: np.ndarray, s: np.ndarray) -> np.ndarray:
    """g(s) = <(D - z - s)^{-1}> evaluated from the eigenvalues of D."""
    return np.mean(1.0 / (d[:, None] - (z + s)[None, :]), axis=0)


def _solve_trace(d: np.ndarray, z: np.ndarray, s0=None,
                 tol: float = 1e-13, max_iter: int = 400):
    """Solve s = <(D - z - s)^{-1}> for every entry of z (vectorized).

    Newton steps with a residual line search; entries that refuse shrink
    fall back to the (always contracting for Im z != 0) damped Picard map.
    Returns (s, residual, iterations).
    """
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    sign = np.where(np.imag(flat) >= 0, 1.0, -1.0)
    if s0 is None:
        s = 1j * sign
    else:
        s = np.array(np.broadcast_to(np.asarray(s0, dtype=complex).ravel(), flat.shape),
                     dtype=complex)
    h = _trace_map(d, flat, s) - s
    it_used = 0
    for it in range(1, max_iter + 1):
        active = np.abs(h) > tol
        if not active.any():
            break
        it_used = it
        za, sa, ha = flat[active], s[active], h[active]
        m2 = np.mean(1.0 / (d[:, None] - (za + sa)[None, :]) ** 2, axis=0)
        denom = 1.0 - m2
        denom = np.where(np.abs(denom) < 1e-30, 1e-30, denom)
        step = ha / denom
        beta = np.ones_like(sa, dtype=float)
        best = sa + step
        hbest = _trace_map(d, za, best) - best
        for _ in range(10):
            ok_plane = (np.imag(best) * sign[active] > 0) | (np.imag(za) == 0)
            improved = (np.abs(hbest) <= 0.5 * np.abs(ha)) & ok_plane
            if improved.all():
                break
            beta = np.where(improved, beta, 0.5 * beta)
            cand = sa + beta * step
            hcand = _trace_map(d, za, cand) - cand
            best = np.where(improved, best, cand)
            hbest = np.where(improved, hbest, hcand)
        # Picard fallback where the line search stalled
        ok_plane = (np.imag(best) * sign[active] > 0) | (np.imag(za) == 0)
        stalled = (np.abs(hbest) > np.abs(ha)) | ~ok_plane
        if stalled.any():
            pic = sa[stalled] + 0.5 * ha[stalled]
            best[stalled] = pic
            hbest[stalled] = _trace_map(d, za[stalled], pic) - pic
        s[active] = best
        h[active] = hbest
    res = np.abs(h)
    return s.reshape(z.shape), res.reshape(z.shape), it_used


class MdeEvaluator:
    """Fast trace/matrix evaluation of M(z) for one fixed deformation.

    Diagonalizes D once; every z-point then costs a scalar Newton solve.
    Results agree with :func:`solve_mde` to the oracle tolerance (tested).
    """

    def __init__(self, D, tol: float = 1e-13):
        self.deformation = as_deformation(D)
        self.tol = tol
        self.eigs, self.basis = _eig_hermitian(self.deformation.matrix)

    @property
    def n(self) -> int:
        return self.eigs.size

    def trace(self, z, s0=None):
        """<M(z)> for scalar or array z (Im z != 0).

        Cold starts at small |Im z| are warmed by a geometric continuation
        ladder from |Im z| = 1 down to the target offset.
        """
        z = np.asarray(z, dtype=complex)
        if np.any(np.imag(z) == 0):
            raise ValueError("trace() requires Im z != 0; use boundary_trace")
        if s0 is None:
            eta_min = float(np.min(np.abs(np.imag(z))))
            if eta_min < 0.5:
                s0 = self._continued_start(z, eta_min)
        s, res, _ = _solve_trace(self.eigs, z, s0=s0, tol=self.tol)
        if np.any(res > 1e3 * self.tol):
            raise NonConvergence(
                f"trace equation residual {float(np.max(res)):.2e}")
        return complex(s) if s.ndim == 0 else s

    def _continued_start(self, z, eta_min: float):
        """Warm start for small offsets: walk eta down geometrically."""
        z = np.asarray(z, dtype=complex)
        sign = np.where(np.imag(z) >= 0, 1.0, -1.0)
        eta_target = np.abs(np.imag(z))
        s = None
        eta = 1.0
        while True:
            lvl = np.maximum(eta_target, eta)
            zk = np.real(z) + 1j * sign * lvl
            s, _, _ = _solve_trace(self.eigs, zk, s0=s, tol=self.tol)
            if eta <= max(eta_min, 1e-300):
                break
            eta /= 8.0
            if eta < eta_min:
                eta = eta_min
        return s

    def vector(self, z, s=None):
        """Diagonal of M(z) in the eigenbasis of D."""
        if s is None:
            s = self.trace(z)
        return 1.0 / (self.eigs - (complex(z) + complex(s)))

    def matrix(self, z, s=None) -> np.ndarray:
        v = self.vector(z, s=s)
        return (self.basis * v[None, :]) @ self.basis.conj().T

    def boundary_trace(self, e, eta_seed: float = 1e-3, side: int = 1):
        """Boundary value <M(e + i*0*side)> via eta-ladder plus Newton polish.

        The ladder {eta_seed, eta_seed/2, ...} down to ETA_LADDER_FLOOR
        tracks the physical branch, a three-point Richardson step
        extrapolates to eta = 0, and a final Newton polish on the real-axis
        equation certifies the root.  Returns (s, info-dict).
        """
        e = np.asarray(e, dtype=float)
        scalar = e.ndim == 0
        E = np.atleast_1d(e).astype(float)
        etas = [eta_seed]
        while etas[-1] > ETA_LADDER_FLOOR:
            etas.append(etas[-1] / 2)
        ladder = []
        s = self._continued_start(E + 1j * side * etas[0], etas[0])
        for k, eta in enumerate(etas):
            s, res, _ = _solve_trace(self.eigs, E + 1j * side * eta, s0=s,
                                     tol=self.tol)
            if np.any(res > 1e3 * self.tol):
                raise ContinuationDiverged(
                    f"ladder solve failed at eta={eta:.2e}")
            ladder.append(s.copy())
        s2, s1, s0_ = ladder[-1], ladder[-2], ladder[-3]
        r_lin = 2.0 * s2 - s1
        rich = (8.0 * s2 - 6.0 * s1 + s0_) / 3.0
        polished, res, _ = _solve_trace(self.eigs, E.astype(complex), s0=rich,
                                        tol=self.tol)
        # keep the physical branch: Im s must not cross into the wrong half-plane
        bad = np.imag(polished) * side < -1e-13
        if bad.any():
            polished = np.where(bad, rich, polished)
        cert = np.abs(_trace_map(self.eigs, E.astype(complex), polished) - polished)
        if np.any(cert > 1e-9):
            raise ContinuationDiverged(
                f"boundary residual {float(np.max(cert)):.2e} after polish")
        info = {
            "eta_ladder": (etas[-3], etas[-2], etas[-1]),
            "extrapolation_residual": float(np.max(np.abs(polished - rich))),
            "richardson_spread": float(np.max(np.abs(rich - r_lin))),
            "certificate": float(np.max(cert)),
        }
        if scalar:
            return complex(polished[0]), info
        return polished, info

    def rho(self, e, eta=None):
        """Harmonic extension rho(e + i*eta), or the boundary density at eta=None."""
        if eta is None:
            s, _ = self.boundary_trace(e)
        else:
            s = self.trace(np.asarray(e, dtype=complex) + 1j * eta)
        return np.abs(np.imag(s)) / np.pi

    def boundary_density(self, E: np.ndarray, eta_pair=(2e-5, 1e-5)) -> np.ndarray:
        """Vectorized density on a real grid via two-point eta extrapolation.

        Cheaper than the full ladder; used for bulk detection where only
        rho >= kappa comparisons matter.
        """
        E = np.asarray(E, dtype=float)
        eta_hi, eta_lo = max(eta_pair), min(eta_pair)
        s_hi = self.trace(E + 1j * eta_hi)
        s_lo = self.trace(E + 1j * eta_lo, s0=s_hi)
        s = (eta_hi * s_lo - eta_lo * s_hi) / (eta_hi - eta_lo)
        return np.abs(np.imag(s)) / np.pi


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def solve_mde(D, z, tol: float = 1e-12, max_iter: int = 10_000,
              damping: float = 0.5, m0: np.ndarray | None = None) -> MdeSolution:
    """Solve the matrix self-consistent equation at one spectral point.

    Damped fixed point M <- (1-a) M + a * [-(z - D + <M>)^{-1}] starting
    from M0 = i*sign(Im z)*I, halving a whenever the residual
    ||M + (z - D + <M>)^{-1}||_F / sqrt(N) increases.

    Parameters
    ----------
    D : Deformation or ndarray
        Hermitian deformation.
    z : complex or SpectralPoint
        Spectral parameter with Im z != 0.
    tol : float
        Normalized Frobenius residual target.
    max_iter : int
        Iteration budget before NonConvergence is raised.
    damping : float
        Initial mixing parameter a.
    m0 : ndarray, optional
        Warm start (used by continuation sweeps).

    Returns
    -------
    MdeSolution
        With the constraint Im z * Im M > 0 verified.
    """
    D = as_deformation(D)
    if isinstance(z, SpectralPoint):
        z = z.z
    z = complex(z)
    if abs(z.imag) < ETA_DIRECT_FLOOR:
        raise ValueError(
            "|Im z| below direct-solve floor; use boundary_m for real-axis values")
    A = D.matrix
    n = A.shape[0]
    eye = np.eye(n, dtype=complex)
    M = m0.astype(complex).copy() if m0 is not None else 1j * np.sign(z.imag) * eye
    alpha = damping
    sqrt_n = np.sqrt(n)

    def fixed_point_image(M):
        omega = z + np.trace(M) / n
        return np.linalg.inv(A - omega * eye)

    F = fixed_point_image(M)
    residual = float(np.linalg.norm(M - F, ord="fro")) / sqrt_n
    iterations = 0
    while residual > tol:
        if iterations >= max_iter:
            raise NonConvergence(
                f"residual {residual:.3e} > tol {tol:.1e} after {max_iter} iterations")
        M_new = (1 - alpha) * M + alpha * F
        F_new = fixed_point_image(M_new)
        res_new = float(np.linalg.norm(M_new - F_new, ord="fro")) / sqrt_n
        if res_new > residual:
            alpha = max(alpha / 2, 1e-6)
        M, F, residual = M_new, F_new, res_new
        iterations += 1

    im_eigs = np.linalg.eigvalsh((M - M.conj().T) / 2j)
    if np.min(np.sign(z.imag) * im_eigs) < -1e-10:
        raise ConstraintViolation(
            "Im z * Im M lost positivity; the solver left the physical branch")
    m_trace = complex(np.trace(M) / n)
    return MdeSolution(
        z=z, m_matrix=M, m_trace=m_trace,
        rho=abs(m_trace.imag) / np.pi,
        residual=residual, iterations=iterations, deformation=D,
    )


def scdos(D, e: float, eta: float) -> float:
    """Self-consistent density of states pi^{-1} |<Im M(e + i*eta)>|."""
    if eta <= 0:
        raise ValueError("scdos requires eta > 0; use boundary_m for eta = 0")
    ev = as_deformation(D).evaluator()
    s = ev.trace(complex(e, eta))
    return abs(s.imag) / np.pi


def kappa_bulk(D, kappa: float, grid: float = 1e-3,
               span: tuple[float, float] | None = None) -> BulkSet:
    """Detect the kappa-bulk: maximal grid intervals with density >= kappa.

    The density is evaluated on the grid by two-point extrapolation of the
    trace to the real axis.  Raises EmptyBulk when no point qualifies.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    D = as_deformation(D)
    if span is None:
        L = D.norm_bound
        span = (-L - 2.0, L + 2.0)
    lo, hi = span
    npts = int(np.floor((hi - lo) / grid)) + 1
    E = lo + grid * np.arange(npts)
    ev = D.evaluator()
    dens = ev.boundary_density(E)
    mask = dens >= kappa - BULK_THRESHOLD_CUSHION
    if not mask.any():
        raise EmptyBulk(
            f"density never reaches kappa={kappa:.4g} on [{lo:.3g}, {hi:.3g}]")
    intervals = []
    idx = np.flatnonzero(mask)
    start = idx[0]
    prev = idx[0]
    for i in idx[1:]:
        if i != prev + 1:
            intervals.append((float(E[start]), float(E[prev])))
            start = i
        prev = i
    intervals.append((float(E[start]), float(E[prev])))
    return BulkSet(kappa=kappa, intervals=tuple(intervals), grid_step=grid)


def boundary_m(D, e: float, eta_seed: float = 1e-3) -> MdeSolution:
    """Boundary value M(e) on the real axis by ladder continuation.

    Solves on the ladder {eta_seed, eta_seed/2, ...} down to the eta floor,
    Richardson-extrapolates the trace over the last three rungs, polishes
    with Newton on the real-axis equation, and reconstructs the matrix from
    the certified subordination point.  Ladder metadata lands in ``meta``.
    """
    D = as_deformation(D)
    ev = D.evaluator()
    s, info = ev.boundary_trace(float(e), eta_seed=eta_seed)
    v = 1.0 / (ev.eigs - (e + s))
    M = (ev.basis * v[None, :]) @ ev.basis.conj().T
    residual = info["certificate"]
    return MdeSolution(
        z=complex(e, 0.0), m_matrix=M, m_trace=complex(s),
        rho=abs(s.imag) / np.pi, residual=residual,
        iterations=0, deformation=D,
        meta={"continuation": info, "eta_floor": ETA_LADDER_FLOOR},
    )


@dataclass(frozen=True)
class AdmissibilityReport:
    """Result of the Hoelder-1/2 partition test on sorted eigenvalues."""

    admissible: bool
    segments: tuple
    violating_pair: tuple | None
    max_ratio: float
    norm_ok: bool

    def __bool__(self) -> bool:
        return self.admissible


def check_admissible(D, L: float, segments=None) -> AdmissibilityReport:
    """Test the sufficient condition for a uniformly bounded M.

    The sorted eigenvalues d_1 <= ... <= d_N must admit a partition of
    [0, 1] into at most L segments such that within each segment
    |d_j - d_k| <= L |j/N - k/N|^{1/2}.  With ``segments=None`` the
    partition is built greedily; otherwise the declared partition (a list
    of (lo, hi) fractions of [0, 1]) is tested as given.  Also requires
    ||D|| <= L.  Total function: always returns a report.
    """
    D = as_deformation(D)
    d = np.sort(np.linalg.eigvalsh(D.matrix))
    n = d.size
    norm_ok = float(np.abs(d).max(initial=0.0)) <= L * (1 + 1e-12)
    max_seg = int(np.floor(L))

    def pair_ok(j_arr, k):
        # indices j < k inside one segment
        gap = d[k] - d[j_arr]
        bound = L * np.sqrt((k - j_arr) / n)
        ratios = np.where(bound > 0, gap / np.where(bound > 0, bound, 1.0), np.inf)
        return ratios

    if segments is not None:
        seg_bounds = []
        for lo, hi in segments:
            seg_bounds.append((int(np.ceil(lo * n - 1e-12)), int(np.floor(hi * n + 1e-12))))
        if len(seg_bounds) > max_seg:
            return AdmissibilityReport(False, tuple(segments), None, np.inf, norm_ok)
        worst = 0.0
        worst_pair = None
        for lo_i, hi_i in seg_bounds:
            lo_i = max(lo_i, 0)
            hi_i = min(hi_i, n)
            for k in range(lo_i + 1, hi_i):
                ratios = pair_ok(np.arange(lo_i, k), k)
                i_bad = int(np.argmax(ratios))
                if ratios[i_bad] > worst:
                    worst = float(ratios[i_bad])
                    worst_pair = (lo_i + i_bad, k)
        ok = norm_ok and worst <= 1.0 + 1e-12
        return AdmissibilityReport(ok, tuple(segments), None if ok else worst_pair,
                                   worst, norm_ok)

    # greedy partition: extend the segment until some pair violates the bound
    built = []
    start = 0
    worst = 0.0
    first_violation = None
    k = 1
    while k < n:
        ratios = pair_ok(np.arange(start, k), k)
        i_bad = int(np.argmax(ratios))
        worst = max(worst, float(np.max(ratios)))
        if ratios[i_bad] > 1.0 + 1e-12:
            if first_violation is None:
                first_violation = (start + i_bad, k)
            built.append((start / n, k / n))
            start = k
        k += 1
    built.append((start / n, 1.0))
    ok = norm_ok and len(built) <= max_seg
    pair = None
    if not ok:
        pair = first_violation
    return AdmissibilityReport(ok, tuple(built), pair, worst, norm_ok)
