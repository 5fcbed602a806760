"""Receiver-array / transmitter geometry and the azimuth angle convention.

All positions are 3-D in meters.  Each receiver array is a uniform
rectangular M_r x M_c grid of antennas spanned by a row axis (typically
vertical) and a column axis (horizontal), with the boresight normal to the
array plane.  Azimuth is measured in the (boresight, column-axis) plane,
positive towards the column axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_float_array, check_unit_vectors, check_positive, freeze

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True, eq=False)
class ScenarioGeometry:
    """Static deployment geometry: arrays, transmitters and signal constants.

    Attributes
    ----------
    n_arrays, n_rows, n_cols : int
        Number of receiver arrays and per-array antenna grid size.
    n_subcarriers : int
        Number of nonzero OFDM subcarriers in a CSI snapshot.
    n_tx : int
        Number of transmitters.
    carrier_freq_hz, bandwidth_hz : float
        Center frequency and occupied signal bandwidth.
    array_centers, array_boresights, array_row_axes, array_col_axes
        (n_arrays, 3) arrays; boresight/row/column axes are orthonormal.
    element_spacing_m : float
        Antenna pitch; defaults to half a carrier wavelength.
    tx_positions : (n_tx, 3) array.
    """

    n_arrays: int
    n_rows: int
    n_cols: int
    n_subcarriers: int
    n_tx: int
    carrier_freq_hz: float
    bandwidth_hz: float
    array_centers: np.ndarray
    array_boresights: np.ndarray
    array_row_axes: np.ndarray
    array_col_axes: np.ndarray
    tx_positions: np.ndarray
    element_spacing_m: float = 0.0

    def __post_init__(self):
        if self.n_arrays < 1 or self.n_rows < 1 or self.n_subcarriers < 1 or self.n_tx < 1:
            raise ValueError("array/antenna/subcarrier/transmitter counts must be >= 1")
        if self.n_cols < 2:
            raise ValueError("n_cols must be >= 2 (azimuth estimation needs a column baseline)")
        check_positive(self.carrier_freq_hz, "carrier_freq_hz")
        check_positive(self.bandwidth_hz, "bandwidth_hz")
        B = self.n_arrays
        for name in ("array_centers", "array_boresights", "array_row_axes", "array_col_axes"):
            object.__setattr__(self, name, freeze(as_float_array(getattr(self, name), name, (B, 3))))
        object.__setattr__(
            self, "tx_positions", freeze(as_float_array(self.tx_positions, "tx_positions", (self.n_tx, 3)))
        )
        for name in ("array_boresights", "array_row_axes", "array_col_axes"):
            check_unit_vectors(getattr(self, name), name)
        # boresight, row axis, col axis must form an orthonormal triad per array
        triads = np.stack([self.array_boresights, self.array_row_axes, self.array_col_axes], axis=1)
        gram = np.einsum("bij,bkj->bik", triads, triads)
        if not np.allclose(gram, np.eye(3)[None], atol=1e-6):
            raise ValueError("boresight, row axis and column axis must be mutually orthonormal per array")
        if self.element_spacing_m == 0.0:
            object.__setattr__(self, "element_spacing_m", self.wavelength_m / 2.0)
        check_positive(self.element_spacing_m, "element_spacing_m")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def csi_shape(self) -> tuple:
        return (self.n_arrays, self.n_rows, self.n_cols, self.n_subcarriers)

    @property
    def csi_size(self) -> int:
        """Length Q of a vectorized CSI snapshot."""
        return int(np.prod(self.csi_shape))

    def subcarrier_freqs_hz(self) -> np.ndarray:
        """Absolute subcarrier frequencies: a symmetric grid of width W around f_c."""
        n = self.n_subcarriers
        if n == 1:
            return np.array([self.carrier_freq_hz])
        offsets = (np.arange(n) - (n - 1) / 2.0) * (self.bandwidth_hz / (n - 1))
        return self.carrier_freq_hz + offsets

    def antenna_positions(self) -> np.ndarray:
        """Antenna element positions, shape (n_arrays, n_rows, n_cols, 3)."""
        r = np.arange(self.n_rows) - (self.n_rows - 1) / 2.0
        c = np.arange(self.n_cols) - (self.n_cols - 1) / 2.0
        return (
            self.array_centers[:, None, None, :]
            + self.element_spacing_m * r[None, :, None, None] * self.array_row_axes[:, None, None, :]
            + self.element_spacing_m * c[None, None, :, None] * self.array_col_axes[:, None, None, :]
        )

    def azimuth_to(self, b: int, point) -> float:
        """Azimuth of `point` as seen from array `b`, in (-pi, pi].

        The angle is measured in the array's (boresight, column-axis) plane;
        any row-axis component of the direction is projected out.
        """
        v = as_float_array(point, "point", (3,)) - self.array_centers[b]
        along_col = float(v @ self.array_col_axes[b])
        along_bore = float(v @ self.array_boresights[b])
        if along_col == 0.0 and along_bore == 0.0:
            raise ValueError(f"point coincides with the center axis of array {b}; azimuth undefined")
        return float(np.arctan2(along_col, along_bore))

    def to_dict(self) -> dict:
        return {
            "n_arrays": self.n_arrays,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "n_subcarriers": self.n_subcarriers,
            "n_tx": self.n_tx,
            "carrier_freq_hz": self.carrier_freq_hz,
            "bandwidth_hz": self.bandwidth_hz,
            "array_centers": self.array_centers.tolist(),
            "array_boresights": self.array_boresights.tolist(),
            "array_row_axes": self.array_row_axes.tolist(),
            "array_col_axes": self.array_col_axes.tolist(),
            "tx_positions": self.tx_positions.tolist(),
            "element_spacing_m": self.element_spacing_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioGeometry":
        return cls(**d)

    def __eq__(self, other):
        if not isinstance(other, ScenarioGeometry):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class Area:
    """Axis-aligned rectangular measurement area at a fixed target height."""

    x_min: float = 0.0
    x_max: float = 4.5
    y_min: float = 0.0
    y_max: float = 4.5
    height: float = 1.0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("area rectangle must have positive extent")

    @property
    def widths(self) -> tuple:
        return (self.x_max - self.x_min, self.y_max - self.y_min)

    def contains(self, xy) -> bool:
        xy = np.asarray(xy, dtype=float)
        return bool(
            np.all(xy[..., 0] >= self.x_min - 1e-9)
            and np.all(xy[..., 0] <= self.x_max + 1e-9)
            and np.all(xy[..., 1] >= self.y_min - 1e-9)
            and np.all(xy[..., 1] <= self.y_max + 1e-9)
        )

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min,
                "y_max": self.y_max, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Area":
        return cls(**d)


def default_geometry() -> ScenarioGeometry:
    """The reference deployment: four 2x4 arrays at the edges of a 4.5 m x 4.5 m
    area looking inward, four ceiling transmitters, Wi-Fi channel 13."""
    centers = [[2.25, 0.0, 1.0], [4.5, 2.25, 1.0], [2.25, 4.5, 1.0], [0.0, 2.25, 1.0]]
    bores = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]]
    rows = [[0.0, 0.0, 1.0]] * 4
    cols = np.cross(rows, bores).tolist()
    tx = [[1.125, 1.125, 2.8], [3.375, 1.125, 2.8], [1.125, 3.375, 2.8], [3.375, 3.375, 2.8]]
    return ScenarioGeometry(
        n_arrays=4,
        n_rows=2,
        n_cols=4,
        n_subcarriers=53,
        n_tx=4,
        carrier_freq_hz=2.472e9,
        bandwidth_hz=16.5625e6,
        array_centers=centers,
        array_boresights=bores,
        array_row_axes=rows,
        array_col_axes=cols,
        tx_positions=tx,
    )
