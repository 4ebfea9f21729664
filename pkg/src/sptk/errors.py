"""Exception hierarchy shared across the toolkit."""


class SptkError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(SptkError, ValueError):
    """Tensor shapes do not line up for the requested operation."""


class ContractError(SptkError, ValueError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


class RangeError(SptkError, IndexError):
    """An id or index lies outside its valid range."""


class InputError(SptkError, ValueError):
    """User-supplied data is unusable (empty corpus, mismatched ids, ...)."""


class ConfigError(SptkError, ValueError):
    """A configuration value violates its invariants."""


class LoadError(SptkError, ValueError):
    """A persisted artifact is corrupted, truncated, or of the wrong version."""


class FiniteError(SptkError, FloatingPointError):
    """A tensor op produced NaN/Inf while finite checking was enabled."""


class NanLossError(SptkError, RuntimeError):
    """Training loss became non-finite; carries diagnostics."""

    def __init__(self, step, lr, batch_fingerprint):
        self.step = step
        self.lr = lr
        self.batch_fingerprint = batch_fingerprint
        super().__init__(
            f"non-finite loss at step {step} (lr={lr:.3e}, batch={batch_fingerprint})"
        )


class UndefinedMetricError(SptkError, ValueError):
    """The metric is mathematically undefined for the given inputs."""


class IncompleteGridError(SptkError, ValueError):
    """A result grid is missing cells; lists the missing (row, column) pairs."""

    def __init__(self, missing_pairs):
        self.missing_pairs = list(missing_pairs)
        pairs = ", ".join(f"({r}, {c})" for r, c in self.missing_pairs)
        super().__init__(f"incomplete grid, missing cells: {pairs}")


class SpecError(SptkError, ValueError):
    """A synthetic-dataset spec is internally inconsistent."""
