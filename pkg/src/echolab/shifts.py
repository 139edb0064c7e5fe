"""Energy renormalization and echo decay parameters.

The renormalization f = f^{eta1,eta2}(E2) solves

    Re( f - E2 - s(f - i*eta1, E2 + i*eta2) ) = 0,

and the renormalized shift is s0 = s(f - i*eta1, E2 + i*eta2).  Its
imaginary part at the inverse-renormalized energy gives the exponential
decay rate Gamma = 2 Im s0 at eta1 = eta2 = 0, reached here by a linear
fit over a small eta-ladder (with a direct boundary evaluation available
as a cross-check).  The parabolic coefficient gamma of the short-time
decay comes from the closed formula <(D - <P D>)^2 P> with
P = Im M1(E0 + i*eta0) / <Im M1(E0 + i*eta0)>.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ExtrapolationUnstable, NewtonStall, NoBracket, OutOfRange
from .mde import MdeEvaluator, as_deformation
from .two_resolvent import MdePair

__all__ = [
    "RenormalizationResult",
    "DecayParameters",
    "energy_renormalization",
    "renormalized_shift",
    "inverse_renormalization",
    "gamma_rate",
    "parabolic_coefficient",
    "decay_parameters",
]

#: largest Delta for which the shift calculus is trusted (configurable cap)
DELTA_VALIDITY_CAP = 0.25

#: default eta ladder for the Gamma extrapolation, in units of Delta
GAMMA_LADDER_FRACTIONS = (1 / 8, 1 / 16, 1 / 32)


@dataclass(frozen=True)
class RenormalizationResult:
    f_value: float
    s0: complex
    newton_iterations: int
    bracket: tuple


@dataclass(frozen=True)
class DecayParameters:
    """Decay parameters of the averaged echo; either field may be absent."""

    gamma: float | None
    Gamma: float | None
    E0: float
    eta0: float
    extrapolation_residual: float | None = None
    meta: dict = field(default_factory=dict)


def _make_h(pair: MdePair, E2: float, eta1: float, eta2: float):
    """Closure h(E1) = E1 - E2 - Re s(E1 - i eta1, E2 + i eta2).

    The z2 = E2 + i*eta2 solve happens once; each h-evaluation costs one
    z1 solve plus two bilinear forms.  Also returns the shift evaluator.
    """
    z2 = complex(E2, eta2)
    v2, _ = pair._vec(2, z2)
    state = {"warm": None}

    def shift_of(E1: float) -> complex:
        z1 = complex(E1, -eta1)
        if eta1 == 0.0:
            s1, _ = pair.ev1.boundary_trace(E1, side=-1)
            v1 = 1.0 / (pair.ev1.eigs - (E1 + s1))
        else:
            s1 = pair.ev1.trace(z1, s0=state["warm"])
            state["warm"] = s1
            v1 = 1.0 / (pair.ev1.eigs - (z1 + s1))
        return pair.shift_value(z1, z2, v1=v1, v2=v2).value

    def h(E1: float) -> float:
        return E1 - E2 - shift_of(E1).real

    return h, shift_of


def _safeguarded_newton(h, lo: float, hi: float, tol: float, max_iter: int):
    """Newton with finite-difference slope inside a maintained bracket."""
    h_lo, h_hi = h(lo), h(hi)
    if h_lo == 0.0:
        return lo, 0
    if h_hi == 0.0:
        return hi, 0
    if h_lo > 0 or h_hi < 0:
        raise NoBracket(f"no sign change on [{lo:.6g}, {hi:.6g}]")
    x = 0.5 * (lo + hi)
    hx = h(x)
    for it in range(1, max_iter + 1):
        if abs(hx) <= tol:
            return x, it
        fd = max(1e-7, 1e-3 * (hi - lo))
        slope = (h(x + fd) - hx) / fd
        x_new = x - hx / slope if slope != 0 else None
        if x_new is None or not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        h_new = h(x_new)
        if h_new > 0:
            hi = x_new
        else:
            lo = x_new
        x, hx = x_new, h_new
    if abs(hx) <= tol:
        return x, max_iter
    raise NewtonStall(f"|h| = {abs(hx):.2e} > {tol:.1e} after {max_iter} iterations")


def energy_renormalization(D1, D2, E2: float, eta1: float = 0.0,
                           eta2: float = 0.0, pair: MdePair | None = None,
                           bracket_scale: float = 2.0, tol: float = 1e-10,
                           max_iter: int = 80) -> RenormalizationResult:
    """Solve Re(f - E2 - s(f - i eta1, E2 + i eta2)) = 0 for f.

    The root is bracketed in [E2 - c*Delta, E2 + c*Delta] (c grown
    geometrically from ``bracket_scale`` while the sign condition fails)
    and located by safeguarded Newton with bisection fallback.  For
    coincident deformations the result is exact without iteration.
    """
    pair = pair or MdePair(D1, D2)
    delta = pair.delta
    if delta < 1e-15:
        return RenormalizationResult(f_value=float(E2), s0=0j,
                                     newton_iterations=0,
                                     bracket=(float(E2), float(E2)))
    h, shift_of = _make_h(pair, float(E2), float(eta1), float(eta2))
    c = bracket_scale
    while True:
        lo, hi = E2 - c * delta, E2 + c * delta
        try:
            f, iters = _safeguarded_newton(h, lo, hi, tol, max_iter)
            break
        except NoBracket:
            c *= 2.0
            if c * delta > 2.0:
                raise NoBracket(
                    f"sign condition failed out to |f - E2| = {c * delta:.3g}; "
                    "Delta may be too large for the shift calculus")
    return RenormalizationResult(f_value=float(f), s0=shift_of(f),
                                 newton_iterations=iters,
                                 bracket=(float(lo), float(hi)))


def renormalized_shift(D1, D2, E2: float, eta1: float = 0.0,
                       eta2: float = 0.0, pair: MdePair | None = None) -> complex:
    """s0^{eta1,eta2}(E2), the shift at the renormalized energy pair."""
    return energy_renormalization(D1, D2, E2, eta1, eta2, pair=pair).s0


def inverse_renormalization(D1, D2, E0: float, eta1: float = 0.0,
                            eta2: float = 0.0, pair: MdePair | None = None,
                            tol: float = 1e-10) -> float:
    """Solve f^{eta1,eta2}(E2) = E0 for E2 (monotone since df/dE2 ~ 1)."""
    pair = pair or MdePair(D1, D2)
    delta = pair.delta
    if delta < 1e-15:
        return float(E0)

    def g(E2: float) -> float:
        return energy_renormalization(D1, D2, E2, eta1, eta2,
                                      pair=pair, tol=tol).f_value - E0

    c = 2.0
    while True:
        lo, hi = E0 - c * delta, E0 + c * delta
        try:
            e2, _ = _safeguarded_newton(g, lo, hi, tol, 60)
            return float(e2)
        except NoBracket:
            c *= 2.0
            if c * delta > 2.0:
                raise OutOfRange(
                    f"E0 = {E0:.6g} not bracketed by the renormalization image")


def gamma_rate(D1, D2, E0: float, pair: MdePair | None = None,
               ladder: tuple | None = None, method: str = "ladder",
               instability_tol: float = 0.10) -> DecayParameters:
    """Exponential decay rate Gamma = 2 Im s0 extrapolated to eta = 0.

    method="ladder" (default): evaluate Im s0^{eta,eta} at the inverse-
    renormalized energy on the ladder eta in Delta*(1/8, 1/16, 1/32) and
    extrapolate linearly to eta = 0; the fit is rejected when the
    three-point and two-point extrapolations disagree beyond
    ``instability_tol``.  method="boundary": evaluate directly at
    eta1 = eta2 = 0 (cross-check path).
    """
    pair = pair or MdePair(D1, D2)
    delta = pair.delta
    if delta < 1e-15:
        return DecayParameters(gamma=None, Gamma=0.0, E0=float(E0), eta0=0.0,
                               extrapolation_residual=0.0,
                               meta={"method": method, "delta": 0.0})
    if method == "boundary":
        e2 = inverse_renormalization(D1, D2, E0, 0.0, 0.0, pair=pair)
        s0 = renormalized_shift(D1, D2, e2, 0.0, 0.0, pair=pair)
        return DecayParameters(gamma=None, Gamma=2.0 * s0.imag, E0=float(E0),
                               eta0=0.0, extrapolation_residual=0.0,
                               meta={"method": "boundary", "E2": e2,
                                     "delta": delta})
    if ladder is None:
        ladder = tuple(f * delta for f in GAMMA_LADDER_FRACTIONS)
    etas = np.asarray(sorted(ladder, reverse=True), dtype=float)
    ims = []
    for eta in etas:
        e2 = inverse_renormalization(D1, D2, E0, eta, eta, pair=pair)
        s0 = renormalized_shift(D1, D2, e2, eta, eta, pair=pair)
        ims.append(s0.imag)
    ims = np.asarray(ims)
    coef = np.polynomial.polynomial.polyfit(etas, ims, 1)
    im_at_zero = coef[0]
    fit_residual = float(np.max(np.abs(
        np.polynomial.polynomial.polyval(etas, coef) - ims)))
    # two-point extrapolation from the smallest rungs as a stability check
    e_a, e_b = etas[-1], etas[-2]
    i_a, i_b = ims[-1], ims[-2]
    im_two = i_a + (i_b - i_a) * (0.0 - e_a) / (e_b - e_a)
    scale = max(abs(im_at_zero), 1e-300)
    if abs(im_two - im_at_zero) / scale > instability_tol:
        raise ExtrapolationUnstable(
            f"3-point vs 2-point extrapolations differ by "
            f"{abs(im_two - im_at_zero) / scale:.1%}")
    return DecayParameters(
        gamma=None, Gamma=2.0 * float(im_at_zero), E0=float(E0), eta0=0.0,
        extrapolation_residual=fit_residual,
        meta={"method": "ladder", "ladder": [float(e) for e in etas],
              "im_s0": [float(v) for v in ims], "delta": delta,
              "two_point_Gamma": 2.0 * float(im_two)},
    )


def parabolic_coefficient(D1, D2, E0: float, eta0: float,
                          ev1: MdeEvaluator | None = None) -> DecayParameters:
    """Short-time curvature gamma = <(D - <P D>)^2 P>, D = D2 - D1.

    P = Im M1(E0 + i*eta0)/<Im M1(E0 + i*eta0)> is computed in the
    eigenbasis of D1, where Im M1 is diagonal.
    """
    D1 = as_deformation(D1)
    D2 = as_deformation(D2)
    ev1 = ev1 or MdeEvaluator(D1)
    z0 = complex(E0, eta0)
    v = ev1.vector(z0)
    p = np.imag(v)
    p_mean = float(np.mean(p))
    if p_mean <= 0:
        raise ValueError("E0 + i*eta0 carries no spectral weight for D1")
    p /= p_mean
    diff = ev1.basis.conj().T @ (D2.matrix - D1.matrix) @ ev1.basis
    c = float(np.real(np.sum(np.diagonal(diff) * p))) / ev1.n
    shifted = diff - c * np.eye(ev1.n)
    sq_diag = np.einsum("kj,jk->k", shifted, shifted).real
    gamma = float(np.sum(sq_diag * p) / ev1.n)
    return DecayParameters(gamma=gamma, Gamma=None, E0=float(E0),
                           eta0=float(eta0), meta={"p_mean": p_mean})


def decay_parameters(D1, D2, E0: float, eta0: float,
                     pair: MdePair | None = None) -> DecayParameters:
    """Both decay parameters (gamma at eta0, Gamma extrapolated to 0)."""
    pair = pair or MdePair(D1, D2)
    g = parabolic_coefficient(pair.D1, pair.D2, E0, eta0, ev1=pair.ev1)
    G = gamma_rate(pair.D1, pair.D2, E0, pair=pair)
    meta = dict(G.meta)
    meta["gamma_meta"] = g.meta
    return DecayParameters(gamma=g.gamma, Gamma=G.Gamma, E0=float(E0),
                           eta0=float(eta0),
                           extrapolation_residual=G.extrapolation_residual,
                           meta=meta)
