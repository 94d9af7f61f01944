"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file or in-memory plane violates the annotation format."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss.

    Carries the step index and the per-term breakdown at the point of failure.
    """

    def __init__(self, step: int, terms: dict):
        self.step = step
        self.terms = terms
        detail = ", ".join(f"{k}={v}" for k, v in terms.items())
        super().__init__(f"non-finite loss at step {step}: {detail}")
