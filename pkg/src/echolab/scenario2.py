"""Deterministic side of the single-deformation echo scenario.

A deterministic H0 with limiting density of states rho0 is perturbed by
lam * W.  The echo of a state localized at an admissible energy E0 decays
at the golden-rule rate 2 pi rho0(E0) lam^2; this module supplies rho0
handling (Stieltjes transform, quantile discretization, admissibility
detection), the predicted decay law, and the error budget controlling how
far a finite-(N, lam, t) experiment may sit from it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import EmptyAdmissibleSet, QuadratureUnderResolved
from .ensembles import SpectralData
from .mde import semicircle_stieltjes

__all__ = [
    "LimitingDensity",
    "semicircle_density",
    "density_from_table",
    "quantile_diagonal",
    "stieltjes_m0",
    "verify_h0_assumption",
    "admissible_energies",
    "predicted_decay",
    "error_budget",
]

NORMALIZATION_TOL = 1e-8


@dataclass(frozen=True)
class LimitingDensity:
    """Limiting density of states: evaluation handle plus support metadata.

    ``epsilon0`` and ``eta0_floor`` are measured sequences (per N) that a
    user may attach after running :func:`verify_h0_assumption`; they are
    metadata, not inputs to the evaluation.
    """

    pdf: object
    support: tuple
    name: str = ""
    epsilon0: float | None = None
    eta0_floor: float | None = None

    def __call__(self, x):
        return np.asarray(self.pdf(np.asarray(x, dtype=float)))

    @property
    def hull(self) -> tuple:
        return (min(lo for lo, _ in self.support),
                max(hi for _, hi in self.support))


def _check_normalized(rho: LimitingDensity) -> None:
    total = 0.0
    for lo, hi in rho.support:
        val, _ = integrate.quad(lambda x: float(rho(x)), lo, hi, limit=200)
        total += val
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"density integrates to {total:.10f}, not 1")


def semicircle_density() -> LimitingDensity:
    """The semicircle density sqrt(4 - x^2)/(2 pi) on [-2, 2]."""
    def pdf(x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(np.clip(4.0 - x ** 2, 0.0, None)) / (2.0 * np.pi)
    return LimitingDensity(pdf=pdf, support=((-2.0, 2.0),), name="semicircle")


def density_from_table(x, rho, name: str = "tabulated") -> LimitingDensity:
    """Linear-interpolation density from samples; must integrate to 1."""
    x = np.asarray(x, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if x.ndim != 1 or x.size != rho.size or x.size < 3:
        raise ValueError("need matching 1-d arrays with at least 3 points")
    if np.any(np.diff(x) <= 0):
        raise ValueError("abscissae must be strictly increasing")
    if np.any(rho < 0):
        raise ValueError("density values must be nonnegative")
    total = np.trapezoid(rho, x)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"tabulated density integrates to {total:.10f}, not 1")

    def pdf(q):
        return np.interp(np.asarray(q, dtype=float), x, rho, left=0.0, right=0.0)

    return LimitingDensity(pdf=pdf, support=((float(x[0]), float(x[-1])),),
                           name=name)


def quantile_diagonal(rho0: LimitingDensity, n: int,
                      grid_step: float = 1e-4) -> np.ndarray:
    """Quantiles x_k with F(x_k) = (k - 1/2)/n; the default H0 is diag of these."""
    lo, hi = rho0.hull
    m = max(int(np.ceil((hi - lo) / grid_step)), 2000)
    x = np.linspace(lo, hi, m + 1)
    dens = rho0(x)
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * np.diff(x) / 2)])
    cdf /= cdf[-1]
    targets = (np.arange(n) + 0.5) / n
    return np.interp(targets, cdf, x)


def stieltjes_m0(rho0: LimitingDensity, z) -> complex | np.ndarray:
    """Stieltjes transform m0(z) = int rho0(x)/(x - z) dx.

    Uses the closed form for the built-in semicircle; otherwise adaptive
    quadrature of the real and imaginary parts with the support endpoints
    as break points.
    """
    z_arr = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z_arr.imag == 0):
        raise ValueError("stieltjes_m0 requires Im z != 0")
    if rho0.name == "semicircle":
        out = semicircle_stieltjes(z_arr)
        out = np.atleast_1d(out)
    else:
        lo, hi = rho0.hull
        inner = [e for seg in rho0.support for e in seg if lo < e < hi]
        out = np.empty(z_arr.shape, dtype=complex)
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            for k, zk in enumerate(z_arr):
                def re_part(x):
                    return float(np.real(rho0(x) / (x - zk)))

                def im_part(x):
                    return float(np.imag(rho0(x) / (x - zk)))
                try:
                    re, _ = integrate.quad(re_part, lo, hi, points=inner, limit=200)
                    im, _ = integrate.quad(im_part, lo, hi, points=inner, limit=200)
                except integrate.IntegrationWarning as exc:
                    raise QuadratureUnderResolved(str(exc)) from exc
                out[k] = re + 1j * im
    if np.isscalar(z) or np.asarray(z).ndim == 0:
        return complex(out[0])
    return out.reshape(np.shape(z))


def verify_h0_assumption(H0, rho0: LimitingDensity, z_grid,
                         eta_floor: float) -> tuple:
    """Measure epsilon0 = max over the grid of |<(H0 - z)^{-1}> - m0(z)|.

    ``H0`` may be a matrix, SpectralData, or an eigenvalue vector.  Grid
    points with |Im z| < eta_floor are rejected.  Returns (epsilon0,
    report rows).
    """
    if isinstance(H0, SpectralData):
        eigs = H0.eigenvalues
    else:
        H0 = np.asarray(H0)
        eigs = H0 if H0.ndim == 1 else np.linalg.eigvalsh(H0)
    z_grid = np.atleast_1d(np.asarray(z_grid, dtype=complex))
    if np.any(np.abs(z_grid.imag) < eta_floor):
        raise ValueError(f"grid contains |Im z| < eta_floor = {eta_floor:g}")
    emp = np.mean(1.0 / (eigs[None, :] - z_grid[:, None]), axis=1)
    ref = np.atleast_1d(stieltjes_m0(rho0, z_grid))
    dev = np.abs(emp - ref)
    rows = [{"z_re": zk.real, "z_im": zk.imag,
             "m0_re": rk.real, "m0_im": rk.imag,
             "emp_re": ek.real, "emp_im": ek.imag, "dev": float(dk)}
            for zk, rk, ek, dk in zip(z_grid, ref, emp, dev)]
    return float(dev.max()), rows


def admissible_energies(rho0: LimitingDensity, kappa: float, c: float,
                        grid_step: float | None = None) -> list:
    """Energies where rho0 > c on a kappa-window and is C^{1,1}-tame there.

    The local C^{1,1} norm (sup of |rho| + |rho'| + Lipschitz constant of
    rho') is estimated from central differences at three scales, taking
    the largest estimate; the admissibility condition is
    inf_window rho > c and norm <= 1/c.
    """
    if kappa <= 0 or c <= 0:
        raise ValueError("kappa and c must be positive")
    lo, hi = rho0.hull
    h = grid_step if grid_step is not None else min(kappa / 40.0, 2e-3)
    m = int(np.ceil((hi - lo) / h))
    x = np.linspace(lo, hi, m + 1)
    h = x[1] - x[0]
    pad = int(np.round(kappa / h))
    vals = rho0(x)

    def deriv_estimates(scale: int):
        s = scale
        d1 = np.full_like(vals, np.inf)
        d2 = np.full_like(vals, np.inf)
        core = slice(s, vals.size - s)
        d1[core] = (vals[2 * s:] - vals[:-2 * s]) / (2 * s * h)
        d2[core] = (vals[2 * s:] - 2 * vals[s:-s] + vals[:-2 * s]) / (s * h) ** 2
        return np.abs(d1), np.abs(d2)

    d1s, d2s = zip(*(deriv_estimates(s) for s in (1, 2, 4)))
    d1 = np.maximum.reduce(d1s)
    d2 = np.maximum.reduce(d2s)

    size = 2 * pad + 1
    inf_rho = minimum_filter1d(vals, size=size, mode="constant", cval=0.0)
    sup_rho = maximum_filter1d(vals, size=size, mode="constant", cval=0.0)
    sup_d1 = maximum_filter1d(np.where(np.isfinite(d1), d1, np.inf),
                              size=size, mode="constant", cval=np.inf)
    sup_d2 = maximum_filter1d(np.where(np.isfinite(d2), d2, np.inf),
                              size=size, mode="constant", cval=np.inf)
    norm = sup_rho + sup_d1 + sup_d2
    ok = (inf_rho > c) & (norm <= 1.0 / c)
    # windows must fit inside the evaluation range
    if pad > 0:
        ok[:pad] = False
        ok[-pad:] = False
    if not ok.any():
        raise EmptyAdmissibleSet(
            f"no admissible energy at kappa={kappa:g}, c={c:g}")
    intervals = []
    idx = np.flatnonzero(ok)
    start = prev = idx[0]
    for i in idx[1:]:
        if i != prev + 1:
            intervals.append((float(x[start]), float(x[prev])))
            start = i
        prev = i
    intervals.append((float(x[start]), float(x[prev])))
    return intervals


def predicted_decay(rho0: LimitingDensity, E0: float, lam: float,
                    t) -> float | np.ndarray:
    """Golden-rule law exp(-2 pi rho0(E0) lam^2 t)."""
    rate = 2.0 * np.pi * float(rho0(E0)) * lam ** 2
    out = np.exp(-rate * np.asarray(t, dtype=float))
    return float(out) if np.ndim(t) == 0 else out


def error_budget(lam: float, t: float, width: float, epsilon0: float) -> float:
    """Accuracy budget of the golden-rule approximation.

    E = lam^2 t width + lam (1 + lam^2 t) + (lam/width)(1 + lam/width)
        + lam^2 t epsilon0,

    where ``width`` is the localization half-width of the initial state.
    """
    if min(lam, t, width, epsilon0) < 0:
        raise ValueError("all budget inputs must be nonnegative")
    lt = lam ** 2 * t
    return float(lt * width + lam * (1.0 + lt)
                 + (lam / width) * (1.0 + lam / width) + lt * epsilon0)
