"""Soil constitutive relations: retention, relative permeability, pedotransfer, clogging.

Suction and heads are in metres of water (negative when unsaturated).  The
scalar functions follow the documented public contracts; the ``*_array``
variants are the vectorised forms the flow solver calls every iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputError

log = logging.getLogger(__name__)

BROOKS_COREY = "bc"
VAN_GENUCHTEN = "vg"

# Reference water properties for the Cosby conductivity -> permeability step.
WATER_VISCOSITY = 1.0e-3
WATER_DENSITY = 1000.0
GRAVITY = 9.81

_INCH_PER_HOUR = 0.0254 / 3600.0


@dataclass(frozen=True)
class MaterialRecord:
    name: str
    k: float
    phi: float
    psi_s: float
    b: float
    slr: float = 0.0
    sgr: float = 0.0
    rho_m: float = 2650.0
    model: str = BROOKS_COREY
    alpha: float | None = None
    n: float | None = None

    def problems(self) -> list[str]:
        """Return the violated invariants, empty when the record is valid."""
        out = []
        if not self.k > 0:
            out.append("k must be > 0")
        if not 0 < self.phi < 1:
            out.append("phi must lie in (0, 1)")
        if not self.psi_s < 0:
            out.append("psi_s must be < 0")
        if not self.b > 0:
            out.append("b must be > 0")
        if not (self.slr >= 0 and self.sgr >= 0 and self.slr + self.sgr < 1):
            out.append("need 0 <= slr + sgr < 1")
        if not self.rho_m > 0:
            out.append("rho_m must be > 0")
        if self.model not in (BROOKS_COREY, VAN_GENUCHTEN):
            out.append(f"unknown retention model {self.model!r}")
        if self.model == VAN_GENUCHTEN:
            if self.alpha is None or not self.alpha > 0:
                out.append("van Genuchten needs alpha > 0")
            if self.n is None or not self.n > 1:
                out.append("van Genuchten needs n > 1")
        return out

    @property
    def entry_head(self) -> float:
        """Head above which the material is saturated."""
        return self.psi_s if self.model == BROOKS_COREY else 0.0


def effective_saturation(s_l, mat: MaterialRecord):
    return (np.asarray(s_l, dtype=float) - mat.slr) / (1.0 - mat.slr)


def retention_suction(s_l: float, mat: MaterialRecord) -> float:
    """Suction head (m) at liquid saturation ``s_l``."""
    if not s_l > mat.slr:
        raise DomainError(f"S_L={s_l!r} is not above residual saturation {mat.slr!r}")
    se = min(float(effective_saturation(s_l, mat)), 1.0)
    if mat.model == BROOKS_COREY:
        return mat.psi_s * se ** (-mat.b)
    m = 1.0 - 1.0 / mat.n
    if se >= 1.0:
        return 0.0
    return -((se ** (-1.0 / m) - 1.0) ** (1.0 / mat.n)) / mat.alpha


def _clamp_se(se):
    se = np.asarray(se, dtype=float)
    if np.any((se < 0.0) | (se > 1.0)):
        log.debug("clamping effective saturation outside [0, 1]")
    return np.clip(se, 0.0, 1.0)


def relative_permeability(s_l, s_b, mat: MaterialRecord):
    """Liquid relative permeability.

    ``s_b`` is the biomass saturation; liquid fills the pore space left free
    by biomass, so the retention curve sees ``s_l / (1 - s_b)``.
    """
    s_rel = np.asarray(s_l, dtype=float) / (1.0 - np.asarray(s_b, dtype=float))
    kr = relative_permeability_se(_clamp_se(effective_saturation(s_rel, mat)), mat)
    return float(kr) if np.ndim(kr) == 0 else kr


def relative_permeability_se(se, mat: MaterialRecord):
    se = np.asarray(se, dtype=float)
    if mat.model == BROOKS_COREY:
        return se ** (2.0 * mat.b + 3.0)
    m = 1.0 - 1.0 / mat.n
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = 1.0 - (1.0 - se ** (1.0 / m)) ** m
    return np.where(se > 0.0, np.sqrt(se) * inner**2, 0.0)


def clogged_permeability(k: float, s_b):
    """Permeability reduced by biomass occupying the pores."""
    return k * (1.0 - s_b) ** 2


def cosby_pedotransfer(sand: float, silt: float, clay: float) -> tuple[float, float, float, float]:
    """Porosity, pore-size index, air-entry suction (m) and permeability (m2).

    Cosby et al. (1984) univariate regressions on sand and clay percentages.
    """
    parts = (sand, silt, clay)
    if any(not math.isfinite(p) or p < 0 for p in parts):
        raise InputError("texture fractions must be finite and nonnegative")
    total = sand + silt + clay
    if not 99.0 <= total <= 101.0:
        raise InputError(f"sand+silt+clay = {total:g} %, expected 100 +/- 1")
    phi = 0.489 - 0.00126 * sand
    b = 2.91 + 0.159 * clay
    psi_s = -(10.0 ** (1.88 - 0.0131 * sand)) / 100.0
    ks = 10.0 ** (-0.884 + 0.0153 * sand) * _INCH_PER_HOUR
    k = ks * WATER_VISCOSITY / (WATER_DENSITY * GRAVITY)
    return phi, b, psi_s, k


# -- vectorised head <-> saturation used by the flow solver -----------------

def saturation_from_head(h, mat: MaterialRecord):
    """Relative liquid saturation (fraction of biomass-free pore space) at head ``h``."""
    h = np.asarray(h, dtype=float)
    if mat.model == BROOKS_COREY:
        ratio = np.where(h < mat.psi_s, h / mat.psi_s, 1.0)
        se = ratio ** (-1.0 / mat.b)
    else:
        m = 1.0 - 1.0 / mat.n
        x = mat.alpha * np.maximum(-h, 0.0)
        se = (1.0 + x**mat.n) ** (-m)
    return mat.slr + (1.0 - mat.slr) * se


def saturation_slope(h, mat: MaterialRecord):
    """d(relative saturation)/dh, zero in the saturated range."""
    h = np.asarray(h, dtype=float)
    if mat.model == BROOKS_COREY:
        unsat = h < mat.psi_s
        ratio = np.where(unsat, h / mat.psi_s, 1.0)
        d = (-1.0 / mat.b) * ratio ** (-1.0 / mat.b - 1.0) / mat.psi_s
        return np.where(unsat, (1.0 - mat.slr) * d, 0.0)
    m = 1.0 - 1.0 / mat.n
    x = mat.alpha * np.maximum(-h, 0.0)
    d = m * mat.n * mat.alpha * x ** (mat.n - 1.0) * (1.0 + x**mat.n) ** (-m - 1.0)
    return np.where(h < 0.0, (1.0 - mat.slr) * d, 0.0)


def head_from_saturation(s_rel, mat: MaterialRecord):
    """Inverse of :func:`saturation_from_head` on the unsaturated branch."""
    se = _clamp_se(effective_saturation(s_rel, mat))
    se = np.maximum(se, 1e-300)
    if mat.model == BROOKS_COREY:
        return mat.psi_s * se ** (-mat.b)
    m = 1.0 - 1.0 / mat.n
    return -((np.maximum(se ** (-1.0 / m) - 1.0, 0.0)) ** (1.0 / mat.n)) / mat.alpha
