"""Scoring rules for (truth, prediction) pairs.

Both rules are vectorised over numpy arrays. ``brier`` scores a probability
forecast against an outcome *probability*: it is the Brier score averaged
over a Bernoulli(truth) outcome.
"""

from __future__ import annotations

import enum

import numpy as np
from numpy.typing import ArrayLike


class LossDomainError(ValueError):
    """A loss was evaluated outside its domain."""


class LossKind(str, enum.Enum):
    SQUARED_ERROR = "squared_error"
    BRIER = "brier"

    def __call__(self, truth: ArrayLike, prediction: ArrayLike):
        return loss(self, truth, prediction)

    @property
    def requires_probabilities(self) -> bool:
        return self is LossKind.BRIER

    @classmethod
    def parse(cls, value: "str | LossKind") -> "LossKind":
        if isinstance(value, LossKind):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            allowed = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown loss {value!r}; expected one of {allowed}") from None


def check_probabilities(values: ArrayLike, what: str) -> None:
    # NaN marks a missing forecast cell and is passed through
    arr = np.asarray(values, dtype=float)
    present = arr[~np.isnan(arr)]
    if present.size and np.any((present < 0.0) | (present > 1.0)):
        lo, hi = float(present.min()), float(present.max())
        raise LossDomainError(
            f"brier loss needs {what} in [0, 1]; got values in [{lo:g}, {hi:g}]"
        )


def squared_error(truth: ArrayLike, prediction: ArrayLike):
    diff = np.subtract(truth, prediction)
    return diff * diff


def brier(truth: ArrayLike, prediction: ArrayLike):
    """Expected Brier score when the outcome occurs with probability ``truth``.

    Equal to ``truth * (1 - prediction)**2 + (1 - truth) * prediction**2``,
    which decomposes as ``truth * (1 - truth) + (truth - prediction)**2``.
    """
    check_probabilities(truth, "truth")
    check_probabilities(prediction, "prediction")
    t = np.asarray(truth, dtype=float)
    p = np.asarray(prediction, dtype=float)
    return t * (1.0 - p) ** 2 + (1.0 - t) * p**2


def polynomial_coefficients(kind: "LossKind | str", prediction: ArrayLike):
    """``(a, b, c)`` with ``loss(truth, prediction) == a + b * truth + c * truth**2``.

    Both rules are polynomials in the truth, which lets weighted sums over
    forecasters be taken once per treatment instead of once per draw.
    """
    kind = LossKind.parse(kind)
    p = np.asarray(prediction, dtype=float)
    if kind is LossKind.SQUARED_ERROR:
        return p * p, -2.0 * p, np.ones_like(p)
    check_probabilities(p, "prediction")
    return p * p, 1.0 - 2.0 * p, np.zeros_like(p)


def loss(kind: "LossKind | str", truth: ArrayLike, prediction: ArrayLike):
    kind = LossKind.parse(kind)
    if kind is LossKind.SQUARED_ERROR:
        out = squared_error(truth, prediction)
    else:
        out = brier(truth, prediction)
    if np.ndim(out) == 0:
        return float(out)
    return out
