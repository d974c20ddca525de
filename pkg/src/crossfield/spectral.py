"""CTF to CIR conversion and dominant-path extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .geometry import ScenarioGeometry
from .models import SPEED_OF_LIGHT
from .propagation import CtfGrid, SweepPlan

Window = Literal["rectangular", "hann"]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class NoPathFound(ValueError):
    """No element shows a peak above the configured floor."""


def window_weights(window: Window, n: int) -> np.ndarray:
    if window == "rectangular":
        return np.ones(n)
    if window == "hann":
        # symmetric Hann, nonzero at the edges so no sample is discarded
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * (np.arange(n) + 1) / (n + 1))
    raise ValueError(f"unknown window {window!r}")


@dataclass(frozen=True)
class CirGrid:
    geometry: ScenarioGeometry
    sweep: SweepPlan
    taps: np.ndarray = field(repr=False, compare=False)
    window: Window = "rectangular"

    @property
    def tap_spacing(self) -> float:
        return self.sweep.tap_spacing

    def delays(self) -> np.ndarray:
        return np.arange(self.sweep.n_points) * self.tap_spacing

    def power_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(self.taps))


@dataclass(frozen=True)
class PathObservation:
    delay: float
    distance: float
    gain_db: float
    phase: float


@dataclass(frozen=True)
class PathObservations:
    """Per-element dominant-path observables in scan order."""

    geometry: ScenarioGeometry
    delay: np.ndarray = field(repr=False, compare=False)
    gain_db: np.ndarray = field(repr=False, compare=False)
    phase: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self) -> None:
        n = self.geometry.upa.n_elements
        for name in ("delay", "gain_db", "phase"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")

    @property
    def distance(self) -> np.ndarray:
        return self.delay * SPEED_OF_LIGHT

    @property
    def path_loss_db(self) -> np.ndarray:
        return -self.gain_db

    def __len__(self) -> int:
        return self.delay.size

    def __getitem__(self, index: int) -> PathObservation:
        return PathObservation(
            float(self.delay[index]),
            float(self.delay[index] * SPEED_OF_LIGHT),
            float(self.gain_db[index]),
            float(self.phase[index]),
        )


def ctf_to_cir(ctf: CtfGrid, window: Window = "rectangular") -> CirGrid:
    """Inverse DFT of every element's CTF, with ``1/N`` normalization.

    Tap ``k`` sits at delay ``k / (N * df)``. The window is applied across the
    sweep before the transform.
    """
    w = window_weights(window, ctf.sweep.n_points)
    taps = np.fft.ifft(ctf.samples * w, axis=1)
    return CirGrid(ctf.geometry, ctf.sweep, taps, window)


def _coherent_sum(h: np.ndarray, freqs: np.ndarray, fc: float, tau: np.ndarray) -> np.ndarray:
    """``sum_f h(f) exp(+j 2 pi (f - fc) tau)`` for each row of ``h``."""
    return np.einsum("ef,ef->e", h, np.exp(2j * np.pi * (freqs - fc)[None, :] * tau[:, None]))


def _quadratic_offset(left: np.ndarray, mid: np.ndarray, right: np.ndarray) -> np.ndarray:
    denom = left - 2.0 * mid + right
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom != 0, 0.5 * (left - right) / denom, 0.0)
    return np.clip(off, -0.5, 0.5)


def _golden_max(h, freqs, fc, lo, hi, iters=80):
    """Vectorized golden-section maximization of the coherent-sum magnitude."""
    a, b = lo.copy(), hi.copy()
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc_ = np.abs(_coherent_sum(h, freqs, fc, c))
    fd_ = np.abs(_coherent_sum(h, freqs, fc, d))
    for _ in range(iters):
        left = fc_ > fd_
        # shrink toward the larger side
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - _GOLDEN * (b - a), d)
        new_d = np.where(left, c, a + _GOLDEN * (b - a))
        probe = np.where(left, new_c, new_d)
        fp = np.abs(_coherent_sum(h, freqs, fc, probe))
        fc_, fd_ = np.where(left, fp, fd_), np.where(left, fc_, fp)
        c, d = new_c, new_d
        if np.all(b - a <= 1e-9 * np.abs(b + a) * 0.5 + 1e-22):
            break
    return 0.5 * (a + b)


def extract_dominant_path(
    cir: CirGrid,
    ctf: CtfGrid,
    floor_db: float = 30.0,
    refine: Literal["argmax", "quadratic", "coherent"] = "coherent",
    block: int = 256,
) -> PathObservations:
    """Estimate delay, gain and phase of the strongest ray at every element.

    The delay starts at the CIR magnitude peak, moves by three-point quadratic
    interpolation, and (with ``refine="coherent"``) is then polished by
    maximizing the delay-compensated coherent sum within one bin of the peak.

    Gain and phase come from the weighted sum
    ``sum_f w(f) H(f) (f/fc) exp(+j 2 pi (f - fc) tau) / sum_f w(f)``:
    the ``f/fc`` factor removes the free-space amplitude tilt so the gain is
    referenced to the sweep center, and dividing by the window sum makes the
    result independent of the window. The phase is the carrier phase at the
    center frequency, wrapped to [-pi, pi).

    Raises :class:`NoPathFound` if any element's peak lies more than
    ``floor_db`` below the strongest peak in the grid.
    """
    if cir.taps.shape != ctf.samples.shape or cir.sweep != ctf.sweep:
        raise ValueError("CIR and CTF must come from the same sweep and geometry")
    sweep = ctf.sweep
    n_el, n = cir.taps.shape
    ts = sweep.tap_spacing
    freqs = sweep.frequencies()
    fc = sweep.center
    mag = np.abs(cir.taps)

    k = np.argmax(mag, axis=1)
    peak = mag[np.arange(n_el), k]
    grid_max = float(peak.max()) if n_el else 0.0
    if not grid_max > 0:
        raise NoPathFound("CIR is identically zero")
    weak = peak < grid_max * 10.0 ** (-floor_db / 20.0)
    if np.any(weak):
        raise NoPathFound(f"{int(weak.sum())} element(s) peak more than {floor_db} dB below the grid maximum")

    idx = np.arange(n_el)
    left = mag[idx, (k - 1) % n]
    right = mag[idx, (k + 1) % n]
    if refine == "argmax":
        tau = k * ts
    else:
        tau = (k + _quadratic_offset(left, peak, right)) * ts

    w = window_weights(cir.window, n)
    weights = w * freqs / fc
    delay = np.empty(n_el)
    amp = np.empty(n_el, dtype=complex)
    for start in range(0, n_el, block):
        sl = slice(start, min(start + block, n_el))
        h = ctf.samples[sl] * weights
        t = tau[sl]
        if refine == "coherent":
            t = _golden_max(h, freqs, fc, (k[sl] - 1) * ts, (k[sl] + 1) * ts)
        delay[sl] = t
        amp[sl] = _coherent_sum(h, freqs, fc, t) / w.sum()

    gain_db = 20.0 * np.log10(np.abs(amp))
    phase = np.angle(amp)
    phase = np.where(phase >= np.pi, phase - 2.0 * np.pi, phase)
    return PathObservations(ctf.geometry, delay, gain_db, phase)


def unwrap_phase_grid(observations: PathObservations) -> np.ndarray:
    """Unwrap element phases into a ``(rows, cols)`` surface.

    The first column is unwrapped along z, then each row along x starting from
    its (already unwrapped) first element. Only multiples of 2 pi are added.
    """
    grid = observations.geometry.upa.as_grid(observations.phase).astype(float)
    first_col = np.unwrap(grid[:, 0])
    out = np.unwrap(grid, axis=1)
    shift = np.round((first_col - grid[:, 0]) / (2.0 * np.pi)) * 2.0 * np.pi
    return out + shift[:, None]
