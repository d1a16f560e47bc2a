from __future__ import annotations

from typing import Optional


EXIT_OK = 0
EXIT_USAGE_ERROR = 2  # same code argparse uses
EXIT_SCHEMA_ERROR = 3
EXIT_PROPERTY_FAILURE = 4
EXIT_IO_ERROR = 5


class PmbNllError(Exception):
    """Base class for errors raised by pmb_nll."""


class SchemaError(PmbNllError, ValueError):
    """Malformed ground-truth or prediction input."""

    def __init__(
        self,
        message: str,
        image_id: Optional[int] = None,
        field: Optional[str] = None,
    ) -> None:
        self.image_id = image_id
        self.field = field
        context = []
        if image_id is not None:
            context.append(f"image_id={image_id}")
        if field is not None:
            context.append(f"field={field}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class BruteForceLimitError(PmbNllError, ValueError):
    """Instance too large for exhaustive enumeration."""


class KinkError(PmbNllError, ValueError):
    """Gradient requested at a point where |b - mean| is not differentiable."""

    def __init__(self, prediction: int, coordinate: int) -> None:
        self.prediction = prediction
        self.coordinate = coordinate
        super().__init__(
            f"box coordinate {coordinate} of prediction {prediction} sits exactly on its mean; "
            "the L1 term has no derivative there"
        )


class PropertyFailure(PmbNllError):
    """A self-test property did not hold."""

    def __init__(self, name: str, detail: str) -> None:
        self.name = name
        self.detail = detail
        super().__init__(f"{name}: {detail}")
