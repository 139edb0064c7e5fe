"""Monte-Carlo measurement of echo observables.

Scenario I draws one Wigner matrix W per sample shared by H1 = D1 + W and
H2 = D2 + W and measures the averaged echo amplitude

    A(t) = <e^{i t H1} Im G1(E0 + i eta0) e^{-i t H2}> / <Im M1(E0 + i eta0)>,

reported as the sample mean of |A|^2 with standard errors.  One
eigendecomposition of each Hamiltonian serves every time point: with
H1 = U diag(mu) U^*, H2 = V diag(nu) V^* and P = U^* V,

    A(t) = (e^{i t mu} k)^T  C  e^{-i t nu} / (N <Im M1>),

where k is the eta0-Cauchy kernel of mu at E0 and C = |P|^2 (or
P * R^T with R = V^* e^{-i delta Wt} U when a scrambling pulse is
inserted).  Scenario II evolves a fixed localized state under H0 and
H_lambda = H0 + lambda W with fresh W per sample.

Reductions over samples happen in fixed index order, so results are
bit-identical for a given (seed, n_samples) regardless of worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np
from scipy.special import j1 as _bessel_j1

from .errors import EmptyWindow, EnergyUnreachable
from .mde import MdeEvaluator, as_deformation
from .ensembles import SpectralData, _wigner_matrix, eigendecompose, sample_rng
from .two_resolvent import MdePair

__all__ = [
    "EchoCurve",
    "LocalizedState",
    "LawCheckStats",
    "averaged_echo",
    "echo_process",
    "scrambled_averaged_echo",
    "scramble_comparison",
    "bessel_phi",
    "prepare_localized_state",
    "fidelity_echo",
    "scrambled_fidelity_echo",
    "two_resolvent_law_check",
    "deterministic_short_time_echo",
]


@dataclass(frozen=True)
class EchoCurve:
    """Sampled echo curve: mean amplitude, mean squared modulus, errors."""

    times: np.ndarray
    amplitude: np.ndarray
    modulus2: np.ndarray
    stderr: np.ndarray
    n_samples: int
    params: dict = field(default_factory=dict)
    abscissa: str = "t"

    def rows(self):
        for k in range(self.times.size):
            yield (self.times[k], self.amplitude[k].real, self.amplitude[k].imag,
                   self.modulus2[k], self.stderr[k], self.n_samples)


@dataclass(frozen=True)
class LocalizedState:
    """Unit vector spectrally localized in a window of H0."""

    vector: np.ndarray
    energy: float
    window: tuple
    indices: np.ndarray
    coefficients: np.ndarray


@dataclass(frozen=True)
class LawCheckStats:
    deviations: np.ndarray
    mean: float
    max: float
    m12_trace: complex
    params: dict = field(default_factory=dict)


def _run_samples(n: int, fn, n_workers: int = 1) -> list:
    """Evaluate fn(0..n-1), returning results in index order."""
    out = [None] * n
    if n_workers <= 1:
        for i in range(n):
            out[i] = fn(i)
        return out
    with ThreadPoolExecutor(max_workers=n_workers) as ex:
        futures = {ex.submit(fn, i): i for i in range(n)}
        for fut in as_completed(futures):
            out[futures[fut]] = fut.result()
    return out


def _curve_from_amplitudes(times, amps, params, abscissa="t") -> EchoCurve:
    """Reduce per-sample complex amplitudes (n_samples x n_times)."""
    amps = np.asarray(amps)
    n = amps.shape[0]
    mod2 = np.abs(amps) ** 2
    stderr = (np.std(mod2, axis=0, ddof=1) / np.sqrt(n)) if n > 1 else \
        np.zeros(amps.shape[1])
    return EchoCurve(
        times=np.asarray(times, dtype=float),
        amplitude=np.mean(amps, axis=0),
        modulus2=np.mean(mod2, axis=0),
        stderr=stderr,
        n_samples=n,
        params=params,
        abscissa=abscissa,
    )


# ---------------------------------------------------------------------------
# Scenario I: two deformations, one shared Wigner matrix
# ---------------------------------------------------------------------------

def _scenario1_data(D1m, D2m, E0, eta0, seed, index, sym_class, law):
    """Eigen-data of one shared-noise sample."""
    n = D1m.shape[0]
    W = _wigner_matrix(n, sym_class, law, sample_rng(seed, index, stream=0))
    mu, U = np.linalg.eigh(D1m + W)
    nu, V = np.linalg.eigh(D2m + W)
    P = U.conj().T @ V
    kern = eta0 / ((mu - E0) ** 2 + eta0 ** 2)
    return mu, nu, U, V, P, kern


def _pair_amplitudes(times, mu, nu, C, kern, norm):
    X = np.exp(1j * np.outer(times, mu)) * kern[None, :]
    Y = np.exp(-1j * np.outer(times, nu))
    return np.einsum("tj,tj->t", X @ C, Y) / norm


def _im_m1(D1, E0, eta0) -> float:
    return MdeEvaluator(as_deformation(D1)).trace(complex(E0, eta0)).imag


def averaged_echo(D1, D2, E0: float, eta0: float, times, n_samples: int,
                  seed: int, sym_class: str = "hermitian",
                  law: str = "gaussian", n_workers: int = 1) -> EchoCurve:
    """Averaged echo curve over shared-noise samples.

    Per sample, H1 = D1 + W and H2 = D2 + W share one Wigner draw; the
    curve reports the sample mean of |A(t)|^2 with standard errors.
    """
    D1 = as_deformation(D1)
    D2 = as_deformation(D2)
    times = np.asarray(times, dtype=float)
    norm = D1.n * _im_m1(D1, E0, eta0)

    def one(i):
        mu, nu, U, V, P, kern = _scenario1_data(
            D1.matrix, D2.matrix, E0, eta0, seed, i, sym_class, law)
        return _pair_amplitudes(times, mu, nu, np.abs(P) ** 2, kern, norm)

    amps = _run_samples(n_samples, one, n_workers)
    params = {"observable": "averaged_echo", "N": D1.n, "E0": E0, "eta0": eta0,
              "n_samples": n_samples, "seed": seed, "sym_class": sym_class,
              "law": law}
    return _curve_from_amplitudes(times, amps, params)


def echo_process(D1, D2, E0: float, eta0: float, t: float, s_grid,
                 n_samples: int, seed: int, sym_class: str = "hermitian",
                 law: str = "gaussian", n_workers: int = 1) -> EchoCurve:
    """Echo process over s in [0, 2t]: outward leg then return leg.

    For s <= t the overlap is |<e^{i s H1} Im G1>|, for s > t the return
    amplitude |<e^{i t H1} Im G1 e^{-i (s - t) H2}>| (both normalized by
    <Im M1>).  The grid should include s = t and s = 2t.
    """
    D1 = as_deformation(D1)
    D2 = as_deformation(D2)
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any(s_grid < 0) or np.any(s_grid > 2 * t + 1e-12):
        raise ValueError("s grid must lie in [0, 2t]")
    fwd = s_grid <= t
    norm = D1.n * _im_m1(D1, E0, eta0)

    def one(i):
        mu, nu, U, V, P, kern = _scenario1_data(
            D1.matrix, D2.matrix, E0, eta0, seed, i, sym_class, law)
        amps = np.empty(s_grid.size, dtype=complex)
        if fwd.any():
            phases = np.exp(1j * np.outer(s_grid[fwd], mu))
            amps[fwd] = (phases @ kern) / norm
        if (~fwd).any():
            C = np.abs(P) ** 2
            amps[~fwd] = _pair_amplitudes(s_grid[~fwd] - t, mu, nu, C,
                                          kern * np.exp(1j * t * mu), norm)
        return amps

    amps = _run_samples(n_samples, one, n_workers)
    params = {"observable": "echo_process", "N": D1.n, "E0": E0, "eta0": eta0,
              "t": t, "n_samples": n_samples, "seed": seed,
              "sym_class": sym_class, "law": law}
    return _curve_from_amplitudes(s_grid, amps, params, abscissa="s")


def scramble_comparison(D1, D2, deltas, E0: float, eta0: float, times,
                        n_samples: int, seed: int, sym_class: str = "hermitian",
                        law: str = "gaussian", n_workers: int = 1):
    """Base echo curve plus scrambled curves for each delta, sharing samples.

    The scrambling pulse e^{-i delta Wt} uses one independent Wigner draw
    Wt per sample (stream 1), reused across all deltas.  Returns
    (base_curve, {delta: curve}).
    """
    D1 = as_deformation(D1)
    D2 = as_deformation(D2)
    times = np.asarray(times, dtype=float)
    deltas = [float(d) for d in deltas]
    norm = D1.n * _im_m1(D1, E0, eta0)

    def one(i):
        mu, nu, U, V, P, kern = _scenario1_data(
            D1.matrix, D2.matrix, E0, eta0, seed, i, sym_class, law)
        Wt = _wigner_matrix(D1.n, sym_class, law, sample_rng(seed, i, stream=1))
        wt, X = np.linalg.eigh(Wt)
        G1 = V.conj().T @ X
        G2 = X.conj().T @ U
        out = [_pair_amplitudes(times, mu, nu, np.abs(P) ** 2, kern, norm)]
        for d in deltas:
            R = (G1 * np.exp(-1j * d * wt)[None, :]) @ G2
            out.append(_pair_amplitudes(times, mu, nu, P * R.T, kern, norm))
        return out

    results = _run_samples(n_samples, one, n_workers)
    base_params = {"observable": "averaged_echo", "N": D1.n, "E0": E0,
                   "eta0": eta0, "n_samples": n_samples, "seed": seed,
                   "sym_class": sym_class, "law": law}
    base = _curve_from_amplitudes(times, [r[0] for r in results], base_params)
    curves = {}
    for k, d in enumerate(deltas):
        p = dict(base_params)
        p.update(observable="scrambled_averaged_echo", delta=d)
        curves[d] = _curve_from_amplitudes(times, [r[k + 1] for r in results], p)
    return base, curves


def scrambled_averaged_echo(D1, D2, delta: float, E0: float, eta0: float,
                            times, n_samples: int, seed: int,
                            sym_class: str = "hermitian", law: str = "gaussian",
                            n_workers: int = 1) -> EchoCurve:
    """Averaged echo with a scrambling pulse e^{-i delta Wt} inserted."""
    _, curves = scramble_comparison(D1, D2, [delta], E0, eta0, times,
                                    n_samples, seed, sym_class, law, n_workers)
    return curves[float(delta)]


def bessel_phi(delta: float) -> float:
    """Fourier transform of the semicircle density: phi(d) = J1(2d)/d."""
    delta = float(delta)
    if abs(delta) < 1e-8:
        return 1.0 - delta ** 2 / 2.0
    return float(_bessel_j1(2.0 * delta) / delta)


# ---------------------------------------------------------------------------
# Scenario II: single deformation, fresh Wigner noise
# ---------------------------------------------------------------------------

def prepare_localized_state(S0: SpectralData, E0: float, width: float,
                            seed: int = 0,
                            coefficient_law: str = "gaussian") -> LocalizedState:
    """Random unit state supported in the spectral window [E0 +- width].

    Coefficients are iid standard complex Gaussians on the window
    (or all-equal with coefficient_law="uniform"), then exponentially
    tilted so the energy <psi, H0 psi> lands exactly on E0, and normalized.
    """
    mu = S0.eigenvalues
    idx = np.flatnonzero(np.abs(mu - E0) <= width)
    if idx.size < 2:
        raise EmptyWindow(
            f"window [{E0 - width:.4g}, {E0 + width:.4g}] holds "
            f"{idx.size} eigenvalue(s); need at least 2")
    mw = mu[idx]
    if not (mw.min() < E0 < mw.max()):
        raise EnergyUnreachable(
            f"E0 = {E0:.6g} outside the hull [{mw.min():.6g}, {mw.max():.6g}] "
            "of in-window eigenvalues")
    if coefficient_law == "uniform":
        c = np.ones(idx.size, dtype=complex)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                           spawn_key=(0, 23)))
        c = (rng.standard_normal(idx.size)
             + 1j * rng.standard_normal(idx.size)) / np.sqrt(2.0)
        c[np.abs(c) < 1e-8] = 1e-8  # keep the window fully occupied

    def energy_at(tau):
        w = np.abs(c) ** 2 * np.exp(-tau * (mw - E0))
        return float(np.sum(w * mw) / np.sum(w))

    lo, hi = -1.0, 1.0
    while energy_at(lo) < E0:
        lo *= 2.0
        if lo < -1e8:
            raise EnergyUnreachable("tilt failed to reach E0 from below")
    while energy_at(hi) > E0:
        hi *= 2.0
        if hi > 1e8:
            raise EnergyUnreachable("tilt failed to reach E0 from above")
    from scipy.optimize import brentq
    tau = brentq(lambda s: energy_at(s) - E0, lo, hi, xtol=1e-14)
    c = c * np.exp(-0.5 * tau * (mw - E0))
    c /= np.linalg.norm(c)
    psi = S0.eigenvectors[:, idx] @ c
    return LocalizedState(vector=psi, energy=energy_at(tau),
                          window=(E0 - width, E0 + width), indices=idx,
                          coefficients=c)


def fidelity_echo(H0, lam: float, psi0: LocalizedState, times, n_samples: int,
                  seed: int, sym_class: str = "hermitian",
                  law: str = "gaussian", n_workers: int = 1) -> EchoCurve:
    """Loschmidt echo |<psi0, e^{i t (H0 + lam W)} e^{-i t H0} psi0>|^2.

    W is drawn fresh for every sample; the state and H0 stay fixed.
    """
    S0 = H0 if isinstance(H0, SpectralData) else eigendecompose(H0)
    times = np.asarray(times, dtype=float)
    n = S0.n
    mw = S0.eigenvalues[psi0.indices]
    U0w = S0.eigenvectors[:, psi0.indices]
    H0m = (S0.eigenvectors * S0.eigenvalues[None, :]) @ S0.eigenvectors.conj().T

    def one(i):
        W = _wigner_matrix(n, sym_class, law, sample_rng(seed, i, stream=0))
        nu, V = np.linalg.eigh(H0m + lam * W)
        x = V.conj().T @ psi0.vector
        O = V.conj().T @ U0w
        Z = np.exp(-1j * np.outer(times, mw)) * psi0.coefficients[None, :]
        return np.einsum("k,tk->t", np.conj(x),
                         np.exp(1j * np.outer(times, nu)) * (Z @ O.T))

    amps = _run_samples(n_samples, one, n_workers)
    params = {"observable": "fidelity_echo", "N": n, "lambda": lam,
              "E0": psi0.energy, "window": list(psi0.window),
              "n_samples": n_samples, "seed": seed, "sym_class": sym_class,
              "law": law}
    return _curve_from_amplitudes(times, amps, params)


def scrambled_fidelity_echo(H0, lam: float, delta: float,
                            psi0: LocalizedState, times, n_samples: int,
                            seed: int, sym_class: str = "hermitian",
                            law: str = "gaussian", n_workers: int = 1) -> EchoCurve:
    """Fidelity echo with e^{-i delta Wt} inserted between the evolutions."""
    S0 = H0 if isinstance(H0, SpectralData) else eigendecompose(H0)
    times = np.asarray(times, dtype=float)
    n = S0.n
    mw = S0.eigenvalues[psi0.indices]
    U0w = S0.eigenvectors[:, psi0.indices]
    H0m = (S0.eigenvectors * S0.eigenvalues[None, :]) @ S0.eigenvectors.conj().T

    def one(i):
        W = _wigner_matrix(n, sym_class, law, sample_rng(seed, i, stream=0))
        Wt = _wigner_matrix(n, sym_class, law, sample_rng(seed, i, stream=1))
        nu, V = np.linalg.eigh(H0m + lam * W)
        wt, X = np.linalg.eigh(Wt)
        x = V.conj().T @ psi0.vector
        G = (V.conj().T @ X) * np.exp(-1j * delta * wt)[None, :]
        O = (G @ (X.conj().T @ U0w))
        Z = np.exp(-1j * np.outer(times, mw)) * psi0.coefficients[None, :]
        return np.einsum("k,tk->t", np.conj(x),
                         np.exp(1j * np.outer(times, nu)) * (Z @ O.T))

    amps = _run_samples(n_samples, one, n_workers)
    params = {"observable": "scrambled_fidelity_echo", "N": n, "lambda": lam,
              "delta": delta, "E0": psi0.energy, "window": list(psi0.window),
              "n_samples": n_samples, "seed": seed, "sym_class": sym_class,
              "law": law}
    return _curve_from_amplitudes(times, amps, params)


# ---------------------------------------------------------------------------
# two-resolvent law check
# ---------------------------------------------------------------------------

def two_resolvent_law_check(D1, D2, z1: complex, z2: complex, n_samples: int,
                            seed: int, sym_class: str = "hermitian",
                            law: str = "gaussian", n_workers: int = 1,
                            pair: MdePair | None = None) -> LawCheckStats:
    """Sampled deviations |<G1(z1) G2(z2)> - <M12>| under shared noise."""
    pair = pair or MdePair(D1, D2)
    n = pair.n
    z1, z2 = complex(z1), complex(z2)
    p = pair.m1m2_trace(z1, z2)
    m12_trace = p / (1.0 - p)

    def one(i):
        W = _wigner_matrix(n, sym_class, law, sample_rng(seed, i, stream=0))
        mu, U = np.linalg.eigh(pair.D1.matrix + W)
        nu, V = np.linalg.eigh(pair.D2.matrix + W)
        Q = np.abs(U.conj().T @ V) ** 2
        g12 = ((1.0 / (mu - z1)) @ Q @ (1.0 / (nu - z2))) / n
        return abs(g12 - m12_trace)

    devs = np.array(_run_samples(n_samples, one, n_workers))
    return LawCheckStats(
        deviations=devs, mean=float(devs.mean()), max=float(devs.max()),
        m12_trace=complex(m12_trace),
        params={"N": n, "z1": z1, "z2": z2, "n_samples": n_samples,
                "seed": seed, "sym_class": sym_class, "law": law})


# ---------------------------------------------------------------------------
# deterministic short-time oracle
# ---------------------------------------------------------------------------

def deterministic_short_time_echo(D1, D2, E0: float, eta0: float, times,
                                  pair: MdePair | None = None) -> np.ndarray:
    """Noise-free echo |<P e^{i t D1} e^{-i t D2}>|^2 at the M-level.

    P = Im M1(E0 + i eta0)/<Im M1> commutes with D1, so the curvature of
    this curve at t = 0 is exactly twice the parabolic coefficient; it
    serves as the independent oracle for the closed-form gamma.
    """
    pair = pair or MdePair(D1, D2)
    times = np.asarray(times, dtype=float)
    v = pair.ev1.vector(complex(E0, eta0))
    p = np.imag(v)
    p = p / np.mean(p)
    a = pair.ev1.eigs
    b = pair.ev2.eigs
    X = np.exp(1j * np.outer(times, a)) * p[None, :]
    Y = np.exp(-1j * np.outer(times, b))
    amp = np.einsum("tj,tj->t", X @ pair.overlap, Y) / pair.n
    return np.abs(amp) ** 2
