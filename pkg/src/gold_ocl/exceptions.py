"""
Custom exceptions for the GOLD object-centric laboratory.

This module defines the exception hierarchy raised by scene generation,
the learned modules, training, evaluation and the command-line front door.
"""

from pathlib import Path
from typing import Any, Dict, Optional, Union


class GoldError(Exception):
    """Base exception for all gold_ocl errors."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or {}


class InvalidArgumentError(GoldError, ValueError):
    """Exception raised when an argument or configuration value is invalid."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message, details)


class LoadError(GoldError):
    """Exception raised when a dataset, checkpoint or record cannot be loaded."""

    def __init__(
        self,
        message: str,
        path: Union[str, Path, None] = None,
        sample_index: Optional[int] = None,
    ) -> None:
        super().__init__(message)
        self.path = Path(path) if path is not None else None
        self.sample_index = sample_index

    def __str__(self) -> str:
        base_msg = self.message
        if self.sample_index is not None:
            base_msg += f" (sample {self.sample_index})"
        if self.path is not None:
            base_msg += f"\nPath: {self.path}"
        return base_msg


class UndefinedMetricError(GoldError):
    """Exception raised when a metric has no defined value for its input."""

    def __init__(self, message: str) -> None:
        super().__init__(message)


class NonFiniteLossError(GoldError):
    """Exception raised when training produces a NaN or infinite loss."""

    def __init__(self, step: int, stage: int, terms: Dict[str, float]) -> None:
        super().__init__(
            f"Non-finite loss at stage {stage}, step {step}",
            {"step": step, "stage": stage, "terms": terms},
        )
        self.step = step
        self.stage = stage
        self.terms = terms

    def __str__(self) -> str:
        breakdown = ", ".join(f"{name}={value:.6g}" for name, value in self.terms.items())
        return f"{self.message}\nTerms: {breakdown}"


class UsageError(GoldError):
    """Exception raised when the command line is used incorrectly."""

    def __init__(self, message: str) -> None:
        super().__init__(message)
