from __future__ import annotations


class HarnessError(Exception):
    """Base for every error the harness raises on purpose."""

    def __init__(self, message: str, *, phase: str | None = None, epoch: int | None = None):
        super().__init__(message)
        self.message = message
        self.phase = phase
        self.epoch = epoch

    def with_context(self, phase: str | None = None, epoch: int | None = None) -> "HarnessError":
        if phase is not None:
            self.phase = phase
        if epoch is not None:
            self.epoch = epoch
        return self

    def __str__(self) -> str:
        ctx = []
        if self.phase is not None:
            ctx.append(f"phase={self.phase}")
        if self.epoch is not None:
            ctx.append(f"epoch={self.epoch}")
        return f"[{', '.join(ctx)}] {self.message}" if ctx else self.message


class ConfigurationError(HarnessError):
    pass


class ShapeError(HarnessError):
    pass


class PreconditionError(HarnessError):
    pass


class EmptySurfaceError(PreconditionError):
    """Grid has no zero crossing, so there is no surface to extract."""


class GroundTruthAccessError(HarnessError):
    """Raised when training code reads ground truth of an unlabeled sample."""


class NumericError(HarnessError):
    def __init__(self, message: str, *, batch_index: int | None = None, **kwargs):
        super().__init__(message, **kwargs)
        self.batch_index = batch_index

    def __str__(self) -> str:
        base = super().__str__()
        if self.batch_index is not None:
            return f"{base} (batch index {self.batch_index})"
        return base
