"""Uniform planar array lattice and Tx-Rx scenario geometry.

The array lies in the x-z plane, centered on the origin. The receiver sits on
the y axis at distance ``d0`` when ``theta`` is zero. Elements are stored in
scan order: x varies fastest, then z, starting at the (-x, -z) corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Table of measurement presets: case -> (rows, cols, spacing in meters).
CASES: dict[int, tuple[int, int, float]] = {
    1: (16, 16, 0.5e-3),
    2: (32, 32, 0.5e-3),
    3: (64, 64, 0.5e-3),
}

DEFAULT_D0 = 0.86
DEFAULT_SPACING = 0.5e-3


@dataclass(frozen=True)
class UpaGeometry:
    """Rectangular lattice of ``rows`` x ``cols`` elements.

    ``offsets`` is an ``(rows*cols, 2)`` array of ``(dx, dz)`` in meters,
    measured from the array center, in scan order.
    """

    rows: int
    cols: int
    spacing: float
    offsets: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self) -> None:
        self.offsets.setflags(write=False)

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols

    @property
    def side_x(self) -> float:
        return (self.cols - 1) * self.spacing

    @property
    def side_z(self) -> float:
        return (self.rows - 1) * self.spacing

    @property
    def aperture(self) -> float:
        """Lattice diagonal, used as the aperture D in the Rayleigh distance."""
        return math.hypot(self.side_x, self.side_z)

    @property
    def dx(self) -> np.ndarray:
        return self.offsets[:, 0]

    @property
    def dz(self) -> np.ndarray:
        return self.offsets[:, 1]

    def index_of(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise IndexError(f"element ({row}, {col}) outside {self.rows}x{self.cols} lattice")
        return row * self.cols + col

    def row_col(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.n_elements:
            raise IndexError(f"element index {index} out of range")
        return divmod(index, self.cols)

    def as_grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape a per-element vector in scan order to ``(rows, cols)``."""
        return np.asarray(values).reshape(self.rows, self.cols)

    def with_offsets(self, offsets: np.ndarray) -> UpaGeometry:
        offsets = np.array(offsets, dtype=float)
        if offsets.shape != (self.n_elements, 2):
            raise ValueError(f"expected offsets of shape ({self.n_elements}, 2), got {offsets.shape}")
        return UpaGeometry(self.rows, self.cols, self.spacing, offsets)


@dataclass(frozen=True)
class ScenarioGeometry:
    """A UPA plus a single receive point at distance ``d0`` and angle ``theta``.

    ``theta`` is the angle between the receive direction and the array
    broadside; the receiver is displaced in the x-y plane for nonzero angles.
    """

    upa: UpaGeometry
    d0: float = DEFAULT_D0
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.d0) and self.d0 > 0):
            raise ValueError(f"d0 must be positive and finite, got {self.d0}")
        if not (0.0 <= self.theta < math.pi / 2):
            raise ValueError(f"theta must lie in [0, pi/2), got {self.theta}")

    @property
    def rx_position(self) -> np.ndarray:
        return np.array([self.d0 * math.sin(self.theta), self.d0 * math.cos(self.theta), 0.0])

    def element_positions(self) -> np.ndarray:
        """Element coordinates as an ``(n, 3)`` array in the (x, y, z) frame."""
        n = self.upa.n_elements
        pos = np.zeros((n, 3))
        pos[:, 0] = self.upa.dx
        pos[:, 2] = self.upa.dz
        return pos

    def distances(self) -> np.ndarray:
        """Exact element-to-receiver distances in scan order."""
        return element_distance(self, self.upa.offsets)


def build_upa(rows: int, cols: int, spacing: float) -> UpaGeometry:
    """Build a center-referenced ``rows`` x ``cols`` lattice with uniform spacing."""
    if int(rows) != rows or int(cols) != cols or rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be positive integers, got {rows}x{cols}")
    if not (math.isfinite(spacing) and spacing > 0):
        raise ValueError(f"spacing must be positive, got {spacing}")
    rows, cols = int(rows), int(cols)
    x = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    z = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    zz, xx = np.meshgrid(z, x, indexing="ij")
    offsets = np.column_stack([xx.ravel(), zz.ravel()])
    return UpaGeometry(rows, cols, float(spacing), offsets)


def build_case(case: int, d0: float = DEFAULT_D0) -> ScenarioGeometry:
    """Scenario for one of the measured deployment presets (1, 2 or 3)."""
    try:
        rows, cols, spacing = CASES[case]
    except KeyError:
        raise ValueError(f"unknown case {case!r}; expected one of {sorted(CASES)}") from None
    return ScenarioGeometry(build_upa(rows, cols, spacing), d0=d0)


def element_distance(scenario: ScenarioGeometry, offset) -> np.ndarray | float:
    """Exact distance from element(s) at ``offset=(dx, dz)`` to the receiver.

    ``offset`` may be a single pair or an ``(n, 2)`` array. For broadside
    scenarios this is ``sqrt(d0**2 + dx**2 + dz**2)``.
    """
    off = np.asarray(offset, dtype=float)
    dx = off[..., 0]
    dz = off[..., 1]
    rx, ry, _ = scenario.rx_position
    d = np.sqrt((rx - dx) ** 2 + ry**2 + dz**2)
    if d.ndim == 0:
        return float(d)
    return d
