"""Closed-form path loss models and near/far-field criteria.

Includes Friis free-space path loss, the Rayleigh distance, the planar
approximation phase error, and the cross-field path loss model

    PL = 20 log10(4*pi/lambda * d_ref * K)
    K  = 1 + c1 ** p,   p = ((dx/c3)**2 + (dz/c4)**2) / lambda - c2 * d0

Lengths are meters throughout. ``c2`` carries 1/m so that ``p`` is
dimensionless when offsets and wavelength are in meters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .geometry import ScenarioGeometry

SPEED_OF_LIGHT = 299_792_458.0
CENTER_FREQUENCY = 290e9
#: Wavelength at the sweep center frequency (about 1.0338 mm).
CENTER_WAVELENGTH = SPEED_OF_LIGHT / CENTER_FREQUENCY

Region = Literal["FF", "Boundary", "NF"]


class SaturationWarning(RuntimeWarning):
    """The cross-field exponent was clamped to avoid overflow."""


@dataclass(frozen=True)
class CrossFieldParams:
    d_ref: float
    c1: float
    c2: float
    c3: float
    c4: float

    def __post_init__(self) -> None:
        vals = (self.d_ref, self.c1, self.c2, self.c3, self.c4)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"parameters must be finite: {self}")
        if self.d_ref <= 0:
            raise ValueError(f"d_ref must be positive, got {self.d_ref}")
        if self.c1 <= 1:
            raise ValueError(f"c1 must exceed 1, got {self.c1}")
        if self.c3 <= 0 or self.c4 <= 0:
            raise ValueError(f"c3 and c4 must be positive, got {self.c3}, {self.c4}")

    def to_json(self) -> dict[str, float]:
        return {"d_ref_m": self.d_ref, "c1": self.c1, "c2_per_m": self.c2, "c3": self.c3, "c4": self.c4}

    @classmethod
    def from_json(cls, data: dict) -> CrossFieldParams:
        return cls(
            d_ref=float(data["d_ref_m"]),
            c1=float(data["c1"]),
            c2=float(data["c2_per_m"]),
            c3=float(data["c3"]),
            c4=float(data["c4"]),
        )

    def rescaled(self, s: float) -> CrossFieldParams:
        """Equivalent parameters under the gauge ``c1 -> c1**s``.

        ``c2`` is divided by ``s`` and ``c3``, ``c4`` multiplied by ``sqrt(s)``,
        which leaves K unchanged everywhere.
        """
        if s <= 0:
            raise ValueError("scale must be positive")
        return CrossFieldParams(
            d_ref=self.d_ref,
            c1=self.c1**s,
            c2=self.c2 / s,
            c3=self.c3 * math.sqrt(s),
            c4=self.c4 * math.sqrt(s),
        )

    def canonical(self, d0: float) -> CrossFieldParams:
        """Representative with ``c2 * d0 == 1``, for comparing fitted sets by eye."""
        if self.c2 <= 0:
            return self
        return self.rescaled(self.c2 * d0)


#: Values fitted to the 64x64 measurement at d0 = 0.86 m.
REFERENCE_PARAMS = CrossFieldParams(d_ref=0.4459, c1=1.3295, c2=1.1433, c3=0.8885, c4=1.2318)


@dataclass(frozen=True)
class RayleighAssessment:
    rayleigh_distance: float
    region: Region
    max_phase_error: float

    @property
    def linear_phase(self) -> bool:
        """True when the planar approximation error stays below pi/8."""
        return self.max_phase_error < math.pi / 8

    def to_json(self) -> dict:
        out = asdict(self)
        out["pi_over_8"] = math.pi / 8
        out["below_pi_over_8"] = self.linear_phase
        return out


def _check_positive(**kwargs: float) -> None:
    for name, value in kwargs.items():
        v = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError(f"{name} must be positive and finite")


def friis_fspl(d, wavelength):
    """Free-space path loss ``20 log10(4 pi d / lambda)`` in dB."""
    _check_positive(d=d, wavelength=wavelength)
    return 20.0 * np.log10(4.0 * np.pi * np.asarray(d, dtype=float) / wavelength)


def rayleigh_distance(aperture_d: float, wavelength: float, theta: float = 0.0) -> float:
    """Angle-dependent Rayleigh distance ``2 D**2 cos(theta)**2 / lambda``."""
    if aperture_d < 0:
        raise ValueError("aperture must be non-negative")
    _check_positive(wavelength=wavelength)
    if not (0.0 <= theta <= math.pi / 2):
        raise ValueError(f"theta must lie in [0, pi/2], got {theta}")
    # cos(pi/2) is 6e-17 in floating point, not zero
    c = 0.0 if theta == math.pi / 2 else math.cos(theta)
    return 2.0 * aperture_d**2 * c**2 / wavelength


def max_phase_error(scenario: ScenarioGeometry, wavelength: float) -> float:
    """Largest deviation of the spherical element phases from a planar wavefront.

    The planar reference is anchored at the array center and its x/z slopes
    are the least-squares fit to the exact phases, so for broadside incidence
    the result is ``2 pi / lambda * max(d - d0)``.
    """
    _check_positive(wavelength=wavelength)
    upa = scenario.upa
    dx, dz = upa.dx, upa.dz
    # excess path d - d0 in cancellation-free form (d**2 - d0**2) / (d + d0)
    rx = scenario.rx_position
    d = scenario.distances()
    excess = (dx**2 + dz**2 - 2.0 * dx * rx[0]) / (d + scenario.d0)
    A = np.column_stack([dx, dz])
    if np.any(A):
        slopes, *_ = np.linalg.lstsq(A, excess, rcond=None)
        resid = excess - A @ slopes
    else:
        resid = excess
    return float(2.0 * np.pi / wavelength * np.max(np.abs(resid)))


def classify_region(
    scenario: ScenarioGeometry, wavelength: float = CENTER_WAVELENGTH, boundary_band: float = 0.15
) -> RayleighAssessment:
    """Label the receive point as far field, boundary, or near field.

    The boundary band is a relative interval around the Rayleigh distance R:
    NF when ``d0 < (1 - band) R``, FF when ``d0 > (1 + band) R``.
    """
    if not 0 <= boundary_band < 1:
        raise ValueError("boundary_band must lie in [0, 1)")
    r = rayleigh_distance(scenario.upa.aperture, wavelength, scenario.theta)
    if scenario.d0 < (1 - boundary_band) * r:
        region: Region = "NF"
    elif scenario.d0 > (1 + boundary_band) * r:
        region = "FF"
    else:
        region = "Boundary"
    return RayleighAssessment(r, region, max_phase_error(scenario, wavelength))


def cross_field_exponent(dx, dz, wavelength, d0, params: CrossFieldParams):
    dx = np.asarray(dx, dtype=float)
    dz = np.asarray(dz, dtype=float)
    return ((dx / params.c3) ** 2 + (dz / params.c4) ** 2) / wavelength - params.c2 * d0


def cross_field_factor(
    dx,
    dz,
    wavelength: float,
    d0: float,
    params: CrossFieldParams,
    max_exponent: float | None = None,
    return_saturation: bool = False,
):
    """Cross-field factor ``K = 1 + c1**p``.

    The exponent is clamped at ``max_exponent`` (default ``700 / ln c1``) so
    ``c1**p`` stays finite. Clamping emits :class:`SaturationWarning`; pass
    ``return_saturation=True`` to also get the boolean mask of clamped inputs.
    """
    _check_positive(wavelength=wavelength, d0=d0)
    ln_c1 = math.log(params.c1)
    if max_exponent is None:
        max_exponent = 700.0 / ln_c1
    p = cross_field_exponent(dx, dz, wavelength, d0, params)
    saturated = p > max_exponent
    if np.any(saturated):
        warnings.warn(
            f"cross-field exponent clamped at {max_exponent:.6g} for {int(np.sum(saturated))} input(s)",
            SaturationWarning,
            stacklevel=2,
        )
        p = np.minimum(p, max_exponent)
    k = 1.0 + np.exp(ln_c1 * p)
    if k.ndim == 0:
        k = float(k)
        saturated = bool(saturated)
    return (k, saturated) if return_saturation else k


def cross_field_pl(dx, dz, wavelength: float, d0: float, params: CrossFieldParams, max_exponent: float | None = None):
    """Cross-field path loss in dB; equals Friis loss at distance ``d_ref * K``."""
    k = cross_field_factor(dx, dz, wavelength, d0, params, max_exponent=max_exponent)
    return 20.0 * np.log10(4.0 * np.pi * params.d_ref * np.asarray(k) / wavelength)
