"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and feasibility problems
exit 2, oracle failures exit 3, I/O problems exit 4.
"""


class PrunevidError(Exception):
    """Base class for all package errors."""


class DimensionError(PrunevidError, ValueError):
    """Operand shapes are inconsistent."""


class ConfigError(PrunevidError, ValueError):
    """A configuration value is invalid or internally inconsistent."""


class FeasibilityError(ConfigError):
    """A scheduled pruning cannot keep more tokens than the keyframe owns."""

    def __init__(self, n_tokens: int, n_keyframe: int, keep_rate: float):
        self.n_tokens = n_tokens
        self.n_keyframe = n_keyframe
        self.keep_rate = keep_rate
        super().__init__(
            f"pruning infeasible: floor(N*rho) = floor({n_tokens}*{keep_rate}) "
            f"= {int(n_tokens * keep_rate)} must exceed the keyframe token "
            f"count N1 = {n_keyframe}"
        )


class ContractError(PrunevidError, ValueError):
    """A runtime precondition or invariant was violated."""
