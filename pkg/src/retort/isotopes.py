"""Isotope-ratio post-processing for nitrate."""

from __future__ import annotations

import numpy as np

from .errors import DomainError

R_STD = 0.0229


def compute_delta15N(n14, n15, r_std: float = R_STD):
    """Substrate ratio R_S = 15[15N] / (14[14N]) and delta15N in per mil.

    Concentrations in mol/L.  Returns two arrays ``(r_s, delta)``.
    """
    a14 = np.asarray(n14, dtype=float)
    a15 = np.asarray(n15, dtype=float)
    if np.any(a14 == 0.0):
        raise DomainError("14N concentration is zero; the isotope ratio is undefined")
    if np.any(a14 < 0.0) or np.any(a15 < 0.0):
        raise DomainError("concentrations must be nonnegative")
    r_s = 15.0 * a15 / (14.0 * a14)
    return r_s, (r_s / r_std - 1.0) * 1000.0
