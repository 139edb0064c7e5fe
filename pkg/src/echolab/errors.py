"""Exception types raised by the echolab modules.

Every error that signals a violated numerical contract (as opposed to a
plain programming mistake) derives from :class:`EcholabError`, so callers
can catch the whole family at once.
"""


class EcholabError(Exception):
    """Base class for all echolab-specific errors."""


# --- self-consistent equation / density of states ---------------------------

class NonConvergence(EcholabError):
    """Fixed-point residual stayed above tolerance after max_iter sweeps.

    Usually signals too-aggressive damping or a spectral parameter too close
    to the real axis for a direct solve.
    """


class ConstraintViolation(EcholabError):
    """Im z * Im M lost positive definiteness (wrong solution branch)."""


class EmptyBulk(EcholabError):
    """No grid point reaches the requested density threshold."""


class ContinuationDiverged(EcholabError):
    """The eta-ladder continuation to the real axis failed to stabilize."""


# --- two-resolvent calculus --------------------------------------------------

class DegenerateStability(EcholabError):
    """|1 - <M1 M2>| fell below the degeneracy floor."""


class DegenerateDenominator(EcholabError):
    """|<M1 M2>| fell below the degeneracy floor; the shift is undefined."""


class QuadratureUnderResolved(EcholabError):
    """Quadrature nodes do not resolve the integrand to the requested level."""


# --- energy renormalization / decay rates ------------------------------------

class NoBracket(EcholabError):
    """The root of the renormalization equation could not be bracketed."""


class NewtonStall(EcholabError):
    """Safeguarded Newton failed to reach the root certificate tolerance."""


class ExtrapolationUnstable(EcholabError):
    """Ladder fits for the eta -> 0 extrapolation disagree beyond tolerance."""


class OutOfRange(EcholabError):
    """Requested energy lies outside the image of the renormalization map."""


# --- contour engine -----------------------------------------------------------

class RadiusTooSmall(EcholabError):
    """Contour radius does not enclose the spectral supports."""


# --- ensembles / echo simulation ----------------------------------------------

class ShapeInfeasible(EcholabError):
    """A deformation-pair shape cannot be realized with the given parameters."""


class DecompositionFailure(EcholabError):
    """Eigendecomposition failed or its invariants were violated."""


class EmptyWindow(EcholabError):
    """The localization window contains no eigenvalues."""


class EnergyUnreachable(EcholabError):
    """Target energy lies outside the convex hull of in-window eigenvalues."""


# --- scenario II theory ---------------------------------------------------------

class EmptyAdmissibleSet(EcholabError):
    """No energy satisfies the admissibility conditions."""


# --- experiment driver -----------------------------------------------------------

class ConfigInvalid(EcholabError):
    """Experiment configuration violates a named constraint."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ResourceExceeded(EcholabError):
    """Estimated cost of the run exceeds the configured ceiling."""
