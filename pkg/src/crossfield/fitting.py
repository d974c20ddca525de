"""Least-squares fit of the cross-field path loss model to per-element gains.

The objective is the mean squared dB error between the model path loss and
the observed path loss (``-gain_db``). Minimization is Nelder-Mead over the
transformed vector ``(log d_ref, log(c1 - 1), c2, log c3, log c4)``, which
keeps every iterate inside the valid parameter domain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .models import SPEED_OF_LIGHT, CrossFieldParams, SaturationWarning, cross_field_factor, cross_field_pl
from .spectral import PathObservations

N_PARAMS = 5

DEFAULT_BOUNDS: tuple[tuple[float, float], ...] = (
    (math.log(1e-4), math.log(1e3)),
    (-30.0, 5.0),
    (-1e3, 1e3),
    (-10.0, 10.0),
    (-10.0, 10.0),
)


class DegenerateGrid(ValueError):
    """Too few distinct element positions to constrain the model."""


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 2000
    tolerance: float = 1e-10
    restarts: int = 8
    seed: int = 0
    bounds: tuple[tuple[float, float], ...] = DEFAULT_BOUNDS
    #: Nelder-Mead is rerun from its own result up to this many times; a fresh
    #: simplex gets it out of the collapsed-simplex stalls it is prone to.
    polish_rounds: int = 6

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if len(self.bounds) != N_PARAMS or any(not lo < hi for lo, hi in self.bounds):
            raise ValueError("bounds must be five (lower, upper) pairs with lower < upper")


@dataclass
class FitReport:
    params: CrossFieldParams
    mse: float
    iterations: int
    converged: bool
    residual_grid: np.ndarray = field(repr=False)
    restart_mse: list[float] = field(default_factory=list)
    best_restart: int = 0
    saturated: bool = False

    def to_json(self, d0: float | None = None) -> dict:
        out = {
            "params": self.params.to_json(),
            "mse_db2": self.mse,
            "iterations": self.iterations,
            "converged": self.converged,
            "best_restart": self.best_restart,
            "restart_mse_db2": list(self.restart_mse),
            "saturated": self.saturated,
        }
        if d0 is not None:
            out["canonical_params"] = self.params.canonical(d0).to_json()
        return out


def to_transformed(params: CrossFieldParams) -> np.ndarray:
    return np.array(
        [math.log(params.d_ref), math.log(params.c1 - 1.0), params.c2, math.log(params.c3), math.log(params.c4)]
    )


def from_transformed(t) -> CrossFieldParams:
    return CrossFieldParams(
        d_ref=math.exp(t[0]), c1=1.0 + math.exp(t[1]), c2=float(t[2]), c3=math.exp(t[3]), c4=math.exp(t[4])
    )


def _residuals(params, dx, dz, observed_pl, wavelength, d0):
    k, sat = cross_field_factor(dx, dz, wavelength, d0, params, return_saturation=True)
    model = 20.0 * np.log10(4.0 * np.pi * params.d_ref * k / wavelength)
    return model - observed_pl, bool(np.any(sat))


def _mse(resid: np.ndarray) -> float:
    # compensated summation keeps the result independent of element order
    return math.fsum((resid * resid).tolist()) / resid.size


def objective(params: CrossFieldParams, observations: PathObservations, wavelength: float, d0: float) -> float:
    """Mean squared dB error of the model path loss against ``-gain_db``.

    Emits :class:`~crossfield.models.SaturationWarning` when the exponent
    clamp was active for any element, since the fit is then degraded.
    """
    if len(observations) == 0:
        raise ValueError("observation grid is empty")
    upa = observations.geometry.upa
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        resid, sat = _residuals(params, upa.dx, upa.dz, observations.path_loss_db, wavelength, d0)
    if sat:
        warnings.warn("cross-field exponent saturated during objective evaluation", SaturationWarning, stacklevel=2)
    return _mse(resid)


def initial_guess(observed_pl: np.ndarray, wavelength: float, d0: float) -> CrossFieldParams:
    """Heuristic start: Friis-equivalent distance of the best element, halved."""
    d_eq = 10.0 ** (float(np.min(observed_pl)) / 20.0) * wavelength / (4.0 * math.pi)
    return CrossFieldParams(d_ref=d_eq / 2.0, c1=1.33, c2=1.0 / d0, c3=1.0, c4=1.0)


def _check_grid(observations: PathObservations) -> None:
    offsets = observations.geometry.upa.offsets
    if len(observations) < N_PARAMS:
        raise DegenerateGrid(f"need at least {N_PARAMS} elements, got {len(observations)}")
    if np.all(offsets == offsets[0]):
        raise DegenerateGrid("all element offsets coincide")
    if not np.all(np.isfinite(observations.gain_db)):
        raise ValueError("observations contain non-finite gains")


def fit(observations: PathObservations, wavelength: float, d0: float, config: FitConfig = FitConfig()) -> FitReport:
    """Fit cross-field parameters to an observation grid.

    Restart 0 starts from :func:`initial_guess`; the others from seeded
    Gaussian perturbations of it. The restart with the lowest MSE wins, ties
    going to the lower restart index.
    """
    _check_grid(observations)
    if not (wavelength > 0 and d0 > 0):
        raise ValueError("wavelength and d0 must be positive")
    upa = observations.geometry.upa
    dx, dz = upa.dx, upa.dz
    observed = observations.path_loss_db.astype(float)

    def f(t: np.ndarray) -> float:
        try:
            params = from_transformed(t)
        except (ValueError, OverflowError):
            return math.inf
        resid, _ = _residuals(params, dx, dz, observed, wavelength, d0)
        return _mse(resid) if np.all(np.isfinite(resid)) else math.inf

    t0 = to_transformed(initial_guess(observed, wavelength, d0))
    scale = np.array([0.3, 0.3, 0.3 / d0, 0.3, 0.3])
    rng = np.random.default_rng(config.seed)
    starts = [t0] + [t0 + scale * rng.standard_normal(N_PARAMS) for _ in range(config.restarts - 1)]
    lo = np.array([b[0] for b in config.bounds])
    hi = np.array([b[1] for b in config.bounds])

    results = []
    total_iter = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        for start in starts:
            x = np.clip(start, lo, hi)
            fx = f(x)
            converged = False
            for _ in range(config.polish_rounds):
                res = minimize(
                    f,
                    x,
                    method="Nelder-Mead",
                    bounds=list(config.bounds),
                    options={
                        "maxiter": config.max_iterations,
                        "maxfev": 4 * config.max_iterations,
                        "xatol": 1e-10,
                        "fatol": config.tolerance,
                        "adaptive": True,
                    },
                )
                total_iter += int(res.nit)
                improved = fx - res.fun
                if res.fun <= fx:
                    x, fx = res.x, float(res.fun)
                spread = float(np.ptp(res.final_simplex[1]))
                converged = spread < config.tolerance
                if improved <= config.tolerance:
                    break
            results.append((fx, x, converged))

    # sort by (mse, restart index); best-so-far is then trivially monotone
    best_idx = min(range(len(results)), key=lambda i: (results[i][0], i))
    best_mse, best_x, converged = results[best_idx]
    params = from_transformed(best_x)
    resid, sat = _residuals(params, dx, dz, observed, wavelength, d0)
    return FitReport(
        params=params,
        mse=_mse(resid),
        iterations=total_iter,
        converged=converged,
        residual_grid=resid,
        restart_mse=[r[0] for r in results],
        best_restart=best_idx,
        saturated=sat,
    )


def model_observations(scenario, params: CrossFieldParams, wavelength: float) -> PathObservations:
    """Observation grid whose gains follow the cross-field model exactly.

    Delays are the exact geometric ones and phases are zero; only the gains
    matter to the fit.
    """
    upa = scenario.upa
    gain = -cross_field_pl(upa.dx, upa.dz, wavelength, scenario.d0, params)
    return PathObservations(scenario, scenario.distances() / SPEED_OF_LIGHT, gain, np.zeros(upa.n_elements))
