"""Cyclic shift division and time-domain sample generation."""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidArgument
from .estimation import CsiMeasurement
from .signal import DEFAULT_TIMING, preamble_basis

RELATIVE_EPSILON = 1e-9


@dataclass
class ProcessedCsi:
    h_tilde: np.ndarray
    device_id: int = 0

    def __post_init__(self):
        self.h_tilde = np.asarray(self.h_tilde, dtype=np.complex128)
        if self.h_tilde.shape != (52,) or not np.all(np.isfinite(self.h_tilde)):
            raise InvalidArgument("processed CSI must be 52 finite values")


@dataclass
class FeatureVector:
    u: np.ndarray
    device_id: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.complex128)
        if self.u.shape != (320,) or not np.all(np.isfinite(self.u)):
            raise InvalidArgument("feature vector must be 320 finite values")


def degenerate_mask(h, epsilon=None):
    """True for rows of ``h`` with any entry at or below the guard.

    The default guard is ``1e-9 * max|h|`` per row.
    """
    mag = np.abs(np.atleast_2d(h))
    if epsilon is None:
        eps = RELATIVE_EPSILON * mag.max(axis=-1, keepdims=True)
    else:
        eps = epsilon
    return np.any(mag <= eps, axis=-1)


def cyclic_shift_divide(h):
    """``h_k / h_{k-1}`` with the first entry divided by the last."""
    h = np.asarray(h, dtype=np.complex128)
    return h / np.roll(h, 1, axis=-1)


def cim(H, epsilon=None):
    """Channel interference mitigation on one measurement."""
    if degenerate_mask(H.h, epsilon)[0]:
        raise DegenerateInput(f"CSI of device {H.device_id} has a near-zero subcarrier")
    return ProcessedCsi(cyclic_shift_divide(H.h), H.device_id)


def tdsg_batch(weights, timing=DEFAULT_TIMING):
    """Sample ``x_S(t) + x_L(t - T)`` for a stack of weights ``(..., 52)``."""
    weights = np.asarray(weights, dtype=np.complex128)
    if weights.shape[-1] != timing.n_subcarriers:
        raise InvalidArgument("weights must have 52 entries")
    return weights @ preamble_basis(timing).T


def tdsg(processed, timing=DEFAULT_TIMING):
    return FeatureVector(tdsg_batch(processed.h_tilde, timing), processed.device_id)


def transform_pipeline(H, timing=DEFAULT_TIMING, epsilon=None, skip_cim=False):
    """``tdsg(cim(H))``, or TDSG directly on the raw CSI when ``skip_cim``."""
    if skip_cim:
        return tdsg(ProcessedCsi(H.h, H.device_id), timing)
    return tdsg(cim(H, epsilon), timing)


def transform_batch(h, timing=DEFAULT_TIMING, epsilon=None, skip_cim=False):
    """Vectorised pipeline over ``(n, 52)`` CSI.

    Returns ``(features, keep)`` where ``keep`` marks the non-degenerate rows
    that produced a feature vector.
    """
    h = np.atleast_2d(np.asarray(h, dtype=np.complex128))
    if skip_cim:
        return tdsg_batch(h, timing), np.ones(len(h), dtype=bool)
    keep = ~degenerate_mask(h, epsilon)
    return tdsg_batch(cyclic_shift_divide(h[keep]), timing), keep


__all__ = [
    "CsiMeasurement", "FeatureVector", "ProcessedCsi", "cim", "cyclic_shift_divide",
    "degenerate_mask", "tdsg", "tdsg_batch", "transform_batch", "transform_pipeline",
]
