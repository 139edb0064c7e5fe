"""Wigner sampling, deformation-pair shapes, and spectral primitives.

Entry normalization: off-diagonal variance E|w_ij|^2 = 1/N for both
symmetry classes; the diagonal variance is 1/N (complex Hermitian) or 2/N
(real symmetric).  A bounded non-Gaussian entry law (symmetric +-1) is
available to exercise universality.  Seeding is counter-based: sample k of
a run with master seed m draws from SeedSequence(entropy=m,
spawn_key=(k, stream)), so parallel sampling is reproducible and distinct
samples are independent streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecompositionFailure, ShapeInfeasible
from .mde import Deformation, check_admissible

__all__ = [
    "WignerSample",
    "SpectralData",
    "sample_wigner",
    "sample_deformation_pair",
    "eigendecompose",
    "unitary_evolution",
    "resolvent",
    "sample_rng",
    "DEFORMATION_SHAPES",
]

SYMMETRY_CLASSES = ("hermitian", "symmetric")
ENTRY_LAWS = ("gaussian", "rademacher")


@dataclass(frozen=True)
class WignerSample:
    matrix: np.ndarray
    symmetry_class: str
    seed: int
    entry_law: str

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class SpectralData:
    """Sorted eigenvalues and orthonormal eigenvectors of a Hermitian matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.size


def sample_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for sample ``index`` under one master seed."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index, stream))
    return np.random.default_rng(ss)


def _wigner_matrix(n: int, sym_class: str, law: str,
                   rng: np.random.Generator) -> np.ndarray:
    if sym_class not in SYMMETRY_CLASSES:
        raise ValueError(f"unknown symmetry class {sym_class!r}")
    if law not in ENTRY_LAWS:
        raise ValueError(f"unknown entry law {law!r}")
    if law == "gaussian":
        if sym_class == "hermitian":
            A = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
            A /= np.sqrt(2.0)
            return (A + A.conj().T) / np.sqrt(2.0 * n)
        B = rng.standard_normal((n, n))
        return (B + B.T) / np.sqrt(2.0 * n)
    # symmetric +-1 entries with the same second moments as the Gaussian law
    sign = lambda size: rng.integers(0, 2, size=size) * 2.0 - 1.0
    iu = np.triu_indices(n, k=1)
    W = np.zeros((n, n), dtype=complex if sym_class == "hermitian" else float)
    if sym_class == "hermitian":
        off = (sign(iu[0].size) + 1j * sign(iu[0].size)) / np.sqrt(2.0)
        diag = sign(n)
    else:
        off = sign(iu[0].size)
        diag = np.sqrt(2.0) * sign(n)
    W[iu] = off
    W += W.conj().T
    W[np.diag_indices(n)] = diag
    return W / np.sqrt(n)


def sample_wigner(n: int, sym_class: str = "hermitian", seed: int = 0,
                  law: str = "gaussian") -> WignerSample:
    """Draw one Wigner matrix; identical seeds give bit-identical samples."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    W = _wigner_matrix(n, sym_class, law, rng)
    return WignerSample(matrix=W, symmetry_class=sym_class, seed=seed,
                        entry_law=law)


# ---------------------------------------------------------------------------
# deformation pair shapes
# ---------------------------------------------------------------------------

def _unit_profile(n: int) -> np.ndarray:
    """Traceless equally spaced profile with <u^2> = 1."""
    u = np.linspace(-1.0, 1.0, n)
    u -= u.mean()
    return u / np.sqrt(np.mean(u ** 2))


def _shape_zero_plus_diag(delta: float, n: int, rng) -> tuple:
    base = np.zeros((n, n))
    direction = np.diag(_unit_profile(n))
    return base, base + delta * direction


def _shape_two_block(delta: float, n: int, rng) -> tuple:
    half = n // 2
    base = 0.5 * np.diag(np.concatenate([-np.ones(n - half), np.ones(half)]))
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    V = Q @ np.diag(_unit_profile(n)) @ Q.T
    V -= np.trace(V) / n * np.eye(n)
    return base, base + delta * V


def _shape_random(delta: float, n: int, rng) -> tuple:
    A = rng.standard_normal((n, n))
    A = (A + A.T) / np.sqrt(2 * n)
    A -= np.trace(A) / n * np.eye(n)
    A *= 0.5 / max(np.abs(np.linalg.eigvalsh(A)).max(), 1e-12)
    B = rng.standard_normal((n, n))
    V = (B + B.T) / np.sqrt(2 * n)
    V -= np.trace(V) / n * np.eye(n)
    return A, A + delta * V


DEFORMATION_SHAPES = {
    "zero_plus_diag": _shape_zero_plus_diag,
    "two_block": _shape_two_block,
    "random": _shape_random,
}


def sample_deformation_pair(shape, delta: float, n: int, seed: int = 0,
                            norm_bound: float = 6.0,
                            check: bool = False) -> tuple:
    """Build a traceless deformation pair with <(D1 - D2)^2> = Delta^2.

    ``shape`` is a registered name or a callable (delta, n, rng) ->
    (matrix1, matrix2).  The difference direction is rescaled so the
    pair distance is exact; both matrices are made exactly traceless.
    With ``check=True`` the admissibility test is run on both outputs.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    fn = DEFORMATION_SHAPES.get(shape, shape) if isinstance(shape, str) else shape
    if not callable(fn):
        raise ValueError(f"unknown deformation shape {shape!r}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(0, 17)))
    A1, A2 = fn(delta, n, rng)
    A1 = np.asarray(A1, dtype=float if np.isrealobj(A1) else complex)
    A2 = np.asarray(A2, dtype=float if np.isrealobj(A2) else complex)
    A1 = A1 - np.real(np.trace(A1)) / n * np.eye(n)
    diff = A2 - A1
    diff -= np.real(np.trace(diff)) / n * np.eye(n)
    dist = np.sqrt(np.sum(np.abs(diff) ** 2) / n)
    if delta > 0:
        if dist < 1e-14:
            raise ShapeInfeasible("shape produced a null difference direction")
        diff *= delta / dist
    else:
        diff *= 0.0
    A2 = A1 + diff
    D1 = Deformation.from_matrix(A1)
    D2 = Deformation.from_matrix(A2)
    if max(D1.norm_bound, D2.norm_bound) > norm_bound:
        raise ShapeInfeasible(
            f"pair norm {max(D1.norm_bound, D2.norm_bound):.3g} exceeds "
            f"{norm_bound:.3g}")
    if check:
        for D in (D1, D2):
            rep = check_admissible(D, max(norm_bound, 4.0))
            if not rep:
                raise ShapeInfeasible(f"deformation failed admissibility: {rep}")
    return D1, D2


# ---------------------------------------------------------------------------
# spectral primitives
# ---------------------------------------------------------------------------

def eigendecompose(H) -> SpectralData:
    """Eigendecomposition of a Hermitian matrix (or WignerSample)."""
    if isinstance(H, WignerSample):
        H = H.matrix
    if isinstance(H, Deformation):
        H = H.matrix
    H = np.asarray(H)
    scale = max(1.0, float(np.linalg.norm(H, ord="fro")))
    if float(np.linalg.norm(H - H.conj().T, ord="fro")) / scale > 1e-12:
        raise DecompositionFailure("input is not Hermitian")
    try:
        vals, vecs = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc
    return SpectralData(eigenvalues=vals, eigenvectors=vecs)


def unitary_evolution(S: SpectralData, t: float) -> np.ndarray:
    """Propagator e^{-i t H} from spectral data."""
    phases = np.exp(-1j * t * S.eigenvalues)
    return (S.eigenvectors * phases[None, :]) @ S.eigenvectors.conj().T


def resolvent(S: SpectralData, z: complex) -> np.ndarray:
    """(H - z)^{-1} from spectral data; requires Im z != 0."""
    z = complex(z)
    if z.imag == 0:
        raise ValueError("resolvent requires Im z != 0")
    vals = 1.0 / (S.eigenvalues - z)
    return (S.eigenvectors * vals[None, :]) @ S.eigenvectors.conj().T
