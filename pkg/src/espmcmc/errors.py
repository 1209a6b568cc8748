"""Exception types raised by the samplers and models."""

from __future__ import annotations


class ESPMCMCError(Exception):
    """Base class for package errors."""


class ConfigurationError(ESPMCMCError, ValueError):
    """Invalid sampler, proposal or experiment configuration."""


class InputError(ESPMCMCError, ValueError):
    """Malformed inputs (dimension mismatch, bad observation series)."""


class UnsupportedOperationError(ESPMCMCError, NotImplementedError):
    """The model does not provide the requested capability."""


class DegenerateWeightsError(ESPMCMCError, FloatingPointError):
    """All weights at some time are zero (log-weights all -inf or NaN)."""

    def __init__(self, t: int | None = None, what: str = "weights"):
        self.t = t
        where = "" if t is None else f" at time index t={t}"
        super().__init__(f"degenerate {what}{where}")


class ProposalError(ESPMCMCError, FloatingPointError):
    """A proposal produced a non-finite value or could not be constructed."""


class SingularInnovationError(ESPMCMCError, FloatingPointError):
    """Innovation covariance R is singular in the linearisation proposal."""
