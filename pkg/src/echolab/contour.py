"""Double-contour evaluation of the deterministic echo amplitude.

The averaged echo amplitude has an exact residue-calculus representation
over two closed semicircular contours: the outer one (radius 2R, flat run
just below the real axis at -i*eta1) carries the forward phase e^{i t z1}
and the Cauchy kernel centered at E0 + i*eta0; the inner one (radius R,
flat run just above the axis at +i*eta2) carries the backward phase
e^{-i t z2}.  Replacing <G1 G2> by the deterministic pair approximation
<M12> = <M1 M2>/(1 - <M1 M2>) turns it into the computable quantity

    I(t) = (2 pi i)^{-2} oint oint e^{i t (z1 - z2)} K(z1) <M12> dz1 dz2
           + (4 pi)^{-1} oint e^{i t (z0 - z2)} <M(z0, z2)> dz2,

with K(z) = eta0 / ((z - E0)^2 + eta0^2) and z0 = E0 + i*eta0, whose
modulus should follow the phase law e^{i t s0} <Im M1(z0)>.

Quadrature is composite Gauss-Legendre per panel.  Flat panels obey the
oscillation rule (width ~ pi/2t), are capped near the spectral hull where
the integrand varies on the scale eta1 + eta2, and are refined around the
kernel window; arc panels keep the angular node spacing below
2*pi/(10*t*R_arc).  The error estimate comes from recomputing with all
panel widths halved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RadiusTooSmall
from .mde import as_deformation
from .shifts import energy_renormalization, inverse_renormalization
from .two_resolvent import MdePair

__all__ = [
    "ContourSpec",
    "DeterministicAmplitude",
    "build_contours",
    "deterministic_echo_amplitude",
    "phase_prediction",
    "cauchy_convolution",
    "eta1_rule",
    "eta2_rule",
    "regime_tag",
]

GL_NODES = 10

DEFAULT_REGIME = {"K": 1.0, "c1": 1.0, "c3": 1.0, "c4": 1.0}


def eta1_rule(t: float, eta0: float) -> float:
    """Offset of the outer flat run: eta1 = min(1/t, eta0/2)."""
    return min(1.0 / t, eta0 / 2.0)


def eta2_rule(t: float, eta0: float, delta: float) -> float:
    """Offset of the inner flat run: eta2 = min(4/t, eta0/4, delta/8).

    The delta/8 cap is skipped for coincident deformations.
    """
    caps = [4.0 / t, eta0 / 4.0]
    if delta > 0:
        caps.append(delta / 8.0)
    return min(caps)


def regime_tag(t: float, eta0: float, delta: float, config=None) -> str:
    """Classify t into the three eta2 regimes (short / mid / long)."""
    cfg = dict(DEFAULT_REGIME)
    if config:
        cfg.update(config)
    t1 = 4 * cfg["K"] * cfg["c3"] / (cfg["c4"] * delta) if delta > 0 else np.inf
    t2 = 2 * cfg["K"] * cfg["c3"] / eta0
    if t < t1:
        return "short"
    if t < t2:
        return "mid"
    return "long"


@dataclass(frozen=True)
class ContourSpec:
    """Quadrature nodes and weights for both contours.

    ``segments`` maps segment names (gamma1_flat, gamma1_arc, gamma2_flat,
    gamma2_arc) to (nodes, weights) pairs; the weights already contain the
    dz factor of the parametrization, oriented counterclockwise.
    """

    R: float
    eta1: float
    eta2: float
    t: float
    segments: dict
    regime_tag: str
    config: dict = field(default_factory=dict)

    def contour_nodes(self, which: int):
        z = np.concatenate([self.segments[f"gamma{which}_flat"][0],
                            self.segments[f"gamma{which}_arc"][0]])
        w = np.concatenate([self.segments[f"gamma{which}_flat"][1],
                            self.segments[f"gamma{which}_arc"][1]])
        return z, w


@dataclass(frozen=True)
class DeterministicAmplitude:
    value: complex
    quadrature_error_estimate: float
    regime_tag: str
    second_line: complex
    meta: dict = field(default_factory=dict)


def _gl_cache():
    x, w = np.polynomial.legendre.leggauss(GL_NODES)
    return x, w


_GL_X, _GL_W = _gl_cache()


def _panel_nodes(breaks: np.ndarray):
    """Gauss-Legendre nodes/weights on each interval of ``breaks``."""
    a = breaks[:-1]
    b = breaks[1:]
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    x = (mid + half * _GL_X[None, :]).ravel()
    w = (half * _GL_W[None, :]).ravel()
    return x, w


def _split_breaks(lo: float, hi: float, width: float) -> np.ndarray:
    n = max(int(np.ceil((hi - lo) / width)), 1)
    return np.linspace(lo, hi, n + 1)


def _flat_breaks(lo: float, hi: float, base: float, windows) -> np.ndarray:
    """Breakpoints with uniform base width, refined inside windows.

    ``windows`` is a list of (a, b, max_width); overlapping windows apply
    the smallest width.
    """
    pts = [lo, hi]
    for a, b, _ in windows:
        a, b = max(a, lo), min(b, hi)
        if a < b:
            pts += [a, b]
    pts = np.unique(np.asarray(pts))
    breaks = []
    for a, b in zip(pts[:-1], pts[1:]):
        width = base
        mid = 0.5 * (a + b)
        for wa, wb, wmax in windows:
            if wa <= mid <= wb:
                width = min(width, wmax)
        breaks.append(_split_breaks(a, b, width)[:-1])
    breaks.append(np.array([hi]))
    return np.concatenate(breaks)


def build_contours(D1, D2, t: float, eta0: float, E0: float = 0.0,
                   regime_config=None, R: float | None = None,
                   scale: float = 1.0) -> ContourSpec:
    """Construct the two semicircular contours for time t.

    The radius R must satisfy supp(rho1) u supp(rho2) in [-(R-1), R-1];
    when omitted it is derived from the deformation norms.  ``scale``
    multiplies every panel width (0.5 = one halving, used for the error
    estimate).

    Raises RadiusTooSmall when a supplied R does not enclose the supports.
    """
    D1 = as_deformation(D1)
    D2 = as_deformation(D2)
    if t < 1.0:
        raise ValueError("contour construction assumes t >= 1")
    hull = max(D1.norm_bound, D2.norm_bound) + 2.0
    if R is None:
        R = hull + 1.0
    elif R - 1.0 < hull:
        raise RadiusTooSmall(
            f"R - 1 = {R - 1:.3g} does not cover the spectral hull {hull:.3g}")
    delta = float(np.sqrt(np.linalg.norm(D1.matrix - D2.matrix, ord='fro') ** 2
                          / D1.n))
    eta1 = eta1_rule(t, eta0)
    eta2 = eta2_rule(t, eta0, delta)
    tag = regime_tag(t, eta0, delta, regime_config)

    base = min(0.35, np.pi / (2.0 * t)) * scale
    pole_width = 0.8 * (eta1 + eta2) * scale
    kernel_width = (eta0 / 3.0) * scale
    windows_common = [(-hull, hull, pole_width),
                      (E0 - 6 * eta0, E0 + 6 * eta0, min(pole_width, kernel_width))]

    b1 = _flat_breaks(-2 * R, 2 * R, base, windows_common)
    x1, w1 = _panel_nodes(b1)
    z1_flat = x1 - 1j * eta1
    zw1_flat = w1.astype(complex)

    # gamma2 flat runs from +R to -R (counterclockwise): reversed orientation
    b2 = _flat_breaks(-R, R, base, windows_common)
    x2, w2 = _panel_nodes(b2)
    z2_flat = x2 + 1j * eta2
    zw2_flat = -w2.astype(complex)

    def arc(radius, center_im, phi_lo, phi_hi):
        width = min(np.pi / 8, 2 * np.pi / (t * radius)) * scale
        breaks = _split_breaks(phi_lo, phi_hi, width)
        phi, wph = _panel_nodes(breaks)
        z = radius * np.exp(1j * phi) + 1j * center_im
        w = 1j * radius * np.exp(1j * phi) * wph
        return z, w

    z1_arc, zw1_arc = arc(2 * R, -eta1, 0.0, np.pi)
    z2_arc, zw2_arc = arc(R, eta2, np.pi, 2 * np.pi)

    return ContourSpec(
        R=float(R), eta1=float(eta1), eta2=float(eta2), t=float(t),
        segments={
            "gamma1_flat": (z1_flat, zw1_flat),
            "gamma1_arc": (z1_arc, zw1_arc),
            "gamma2_flat": (z2_flat, zw2_flat),
            "gamma2_arc": (z2_arc, zw2_arc),
        },
        regime_tag=tag,
        config={"E0": float(E0), "eta0": float(eta0), "delta": delta,
                "scale": float(scale), "hull": hull,
                "regime": dict(regime_config or DEFAULT_REGIME)},
    )


def _cauchy_kernel(z, E0: float, eta0: float):
    return eta0 / ((z - E0) ** 2 + eta0 ** 2)


PRUNE_REL = 1e-22
CHUNK = 1024


def _evaluate_spec(pair: MdePair, E0: float, eta0: float, t: float,
                   spec: ContourSpec, direction: int = 1):
    """Both lines of the deterministic amplitude on a given contour spec.

    direction=+1 is the forward amplitude; direction=-1 evaluates the
    time-reversed construction (mirrored contours expected in ``spec``),
    which must reproduce the complex conjugate.
    """
    sgn = 1 if direction >= 0 else -1
    z0 = complex(E0, sgn * eta0)
    z1, w1 = spec.contour_nodes(1)
    z2, w2 = spec.contour_nodes(2)

    a1 = w1 * np.exp(1j * sgn * t * z1) * _cauchy_kernel(z1, E0, eta0)
    a2 = w2 * np.exp(-1j * sgn * t * z2)
    keep1 = np.abs(a1) > PRUNE_REL * np.abs(a1).max()
    keep2 = np.abs(a2) > PRUNE_REL * np.abs(a2).max()
    z1k, a1k = z1[keep1], a1[keep1]
    z2k, a2k = z2[keep2], a2[keep2]

    s1 = pair.ev1.trace(z1k)
    s2 = pair.ev2.trace(z2k)
    v1 = 1.0 / (pair.ev1.eigs[:, None] - (z1k + s1)[None, :])
    v2 = 1.0 / (pair.ev2.eigs[:, None] - (z2k + s2)[None, :])

    B = pair.overlap @ v2 / pair.n
    # first line, chunked over z1 nodes
    line1 = 0.0 + 0.0j
    for i0 in range(0, z1k.size, CHUNK):
        i1 = min(i0 + CHUNK, z1k.size)
        P = v1[:, i0:i1].T @ B
        F = P / (1.0 - P)
        line1 += a1k[i0:i1] @ (F @ a2k)
    line1 *= (1.0 / (2j * np.pi)) ** 2

    # second line: first slot pinned at z0
    s0_ = pair.ev1.trace(z0)
    v0 = 1.0 / (pair.ev1.eigs - (z0 + s0_))
    P0 = (v0 @ (pair.overlap @ v2)) / pair.n
    F0 = P0 / (1.0 - P0)
    line2 = np.exp(1j * sgn * t * z0) * np.sum(a2k * F0) / (4.0 * np.pi)
    return line1, line2


def deterministic_echo_amplitude(D1, D2, E0: float, eta0: float, t: float,
                                 spec: ContourSpec | None = None,
                                 pair: MdePair | None = None,
                                 error_estimate: bool = True,
                                 regime_config=None) -> DeterministicAmplitude:
    """Quadrature value of the deterministic echo amplitude I(t).

    Computes both contour lines on the base spec and, unless
    ``error_estimate=False``, once more with all panels halved; the
    halved result is returned with |difference| as the error estimate.
    """
    pair = pair or MdePair(D1, D2)
    if spec is None:
        spec = build_contours(pair.D1, pair.D2, t, eta0, E0=E0,
                              regime_config=regime_config)
    line1, line2 = _evaluate_spec(pair, E0, eta0, t, spec)
    value = line1 + line2
    err = np.nan
    if error_estimate:
        fine = build_contours(pair.D1, pair.D2, t, eta0, E0=E0,
                              regime_config=regime_config, R=spec.R,
                              scale=0.5 * spec.config.get("scale", 1.0))
        f1, f2 = _evaluate_spec(pair, E0, eta0, t, fine)
        err = abs((f1 + f2) - value)
        value, line1, line2 = f1 + f2, f1, f2
    return DeterministicAmplitude(
        value=complex(value),
        quadrature_error_estimate=float(err),
        regime_tag=spec.regime_tag,
        second_line=complex(line2),
        meta={"first_line": complex(line1), "eta1": spec.eta1,
              "eta2": spec.eta2, "R": spec.R, "t": t},
    )


def mirrored_amplitude(D1, D2, E0: float, eta0: float, t: float,
                       pair: MdePair | None = None) -> complex:
    """Time-reversed amplitude from mirrored contours.

    Independent construction of the conjugate quantity: the outer flat run
    sits at +i*eta1 with its arc closing below, the kernel pole enclosed is
    E0 - i*eta0, and the phases are reversed.  Equals the conjugate of
    :func:`deterministic_echo_amplitude` up to quadrature error.
    """
    pair = pair or MdePair(D1, D2)
    spec = build_contours(pair.D1, pair.D2, t, eta0, E0=E0)
    mirrored = {}
    for name, (z, w) in spec.segments.items():
        mirrored[name] = (np.conj(z), np.conj(w))
    mspec = ContourSpec(R=spec.R, eta1=spec.eta1, eta2=spec.eta2, t=spec.t,
                        segments=mirrored, regime_tag=spec.regime_tag,
                        config=spec.config)
    line1, line2 = _evaluate_spec(pair, E0, eta0, t, mspec, direction=-1)
    return complex(line1 + line2)


def phase_prediction(D1, D2, E0: float, eta0: float, t: float,
                     pair: MdePair | None = None,
                     regime_config=None) -> complex:
    """Phase-law prediction e^{i t s0} <Im M1(E0 + i eta0)>.

    s0 is the renormalized shift at the (eta1, eta2) pair the contour
    construction uses for this t.
    """
    pair = pair or MdePair(D1, D2)
    eta1 = eta1_rule(t, eta0)
    eta2 = eta2_rule(t, eta0, pair.delta)
    e2 = inverse_renormalization(pair.D1, pair.D2, E0, eta1, eta2, pair=pair)
    s0 = energy_renormalization(pair.D1, pair.D2, e2, eta1, eta2, pair=pair).s0
    im_m1 = pair.ev1.trace(complex(E0, eta0)).imag
    return complex(np.exp(1j * t * s0) * im_m1)


def cauchy_convolution(E1: float, eta1: float, E2: float, eta2: float) -> float:
    """Exact convolution of two Cauchy kernels.

    integral of eta1/((x-E1)^2 + eta1^2) * eta2/((x-E2)^2 + eta2^2) dx
      = pi (eta1 + eta2) / ((E1 - E2)^2 + (eta1 + eta2)^2),

    used as the closed-form oracle for quadrature checks.
    """
    if eta1 <= 0 or eta2 <= 0:
        raise ValueError("Cauchy kernels require positive widths")
    es = eta1 + eta2
    return float(np.pi * es / ((E1 - E2) ** 2 + es ** 2))
