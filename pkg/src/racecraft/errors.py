"""Exception hierarchy shared by all racecraft modules."""


class RacecraftError(Exception):
    """Base class for all domain errors raised by this package."""


# --- track ---------------------------------------------------------------

class MalformedFile(RacecraftError):
    pass


class NonMonotoneArcLength(RacecraftError):
    pass


class SelfIntersectingBoundary(RacecraftError):
    pass


class MissingMinisector(RacecraftError):
    pass


class TooCoarse(RacecraftError):
    pass


class OutOfRange(RacecraftError):
    pass


class NoPitLane(RacecraftError):
    pass


class NegativeLoss(RacecraftError):
    pass


# --- vehicle -------------------------------------------------------------

class KinematicSingularity(RacecraftError):
    pass


class PowerLimitExceeded(RacecraftError):
    pass


class NonPositiveNormalLoad(RacecraftError):
    pass


# --- ocp / nlp -----------------------------------------------------------

class InfeasibleBudget(RacecraftError):
    pass


class BadBoundary(RacecraftError):
    pass


class MaxIterations(RacecraftError):
    pass


class SingularKktSystem(RacecraftError):
    pass


class NanEncountered(RacecraftError):
    pass


class SolverNoise(RacecraftError):
    pass


# --- game ----------------------------------------------------------------

class NewtonDivergence(RacecraftError):
    pass


class ScheduleCycling(RacecraftError):
    pass


class NoConvergence(RacecraftError):
    pass


# --- transition ----------------------------------------------------------

class TooManyFailures(RacecraftError):
    pass


class EmptyGrid(RacecraftError):
    pass


class NonMonotoneAxis(RacecraftError):
    pass


class InvalidRange(RacecraftError):
    pass


class InfeasibleRace(RacecraftError):
    pass


# --- strategy environment ------------------------------------------------

class EnvDesync(RacecraftError):
    pass


# --- rl ------------------------------------------------------------------

class NanLoss(RacecraftError):
    pass


class NonFiniteOutput(RacecraftError):
    pass


# --- config / cli --------------------------------------------------------

class ParseError(RacecraftError):
    pass


class ValidationError(RacecraftError):
    pass


class HashMismatch(RacecraftError):
    """Artifact file was produced under a different run configuration."""
