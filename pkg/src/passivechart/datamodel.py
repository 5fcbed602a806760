"""Dataset container, on-disk PCCD format and time-window clustering.

A dataset is a time-sorted collection of per-packet records: a complex CSI
array of shape (n_arrays, n_rows, n_cols, n_subcarriers), the labeled 3-D
target position, a timestamp and the 1-based transmitter index.  For bulk
numerics the records are stored column-wise as contiguous ndarrays; the
`Datapoint` view materializes a single record.

PCCD format ("pccd-1"): a directory with
  meta.json  -- geometry fields, record count L and format version
  data.bin   -- L fixed-size records, little-endian: float64 timestamp,
                3x float64 position, uint32 tx_index, then the CSI entries
                as interleaved float32 re/im pairs in (b, m_r, m_c, n)
                row-major order
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ScenarioGeometry
from ._validation import freeze

PCCD_VERSION = "pccd-1"


@dataclass(frozen=True, eq=False)
class Datapoint:
    """One Wi-Fi packet: CSI array, position label, timestamp, transmitter."""

    csi: np.ndarray
    position: np.ndarray
    timestamp: float
    tx_index: int

    def __eq__(self, other):
        if not isinstance(other, Datapoint):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and self.tx_index == other.tx_index
            and np.array_equal(self.position, other.position)
            and np.array_equal(self.csi, other.csi)
        )


class Dataset:
    """Immutable, time-sorted CSI dataset backed by contiguous arrays.

    Parameters
    ----------
    geometry : ScenarioGeometry
    csi : (L, B, M_r, M_c, N_sub) complex64
    positions : (L, 3) float64
    timestamps : (L,) float64, nondecreasing (sorted on construction if not)
    tx_indices : (L,) uint32, 1-based
    """

    def __init__(self, geometry, csi, positions, timestamps, tx_indices):
        csi = np.ascontiguousarray(csi, dtype=np.complex64)
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        timestamps = np.ascontiguousarray(timestamps, dtype=np.float64)
        tx_indices = np.ascontiguousarray(tx_indices, dtype=np.uint32)
        L = len(timestamps)
        if csi.shape != (L,) + geometry.csi_shape:
            raise ValueError(
                f"csi shape {csi.shape} does not match geometry {(L,) + geometry.csi_shape}"
            )
        if positions.shape != (L, 3) or tx_indices.shape != (L,):
            raise ValueError("positions/tx_indices shapes do not match timestamp count")
        if not np.all(np.isfinite(timestamps)):
            raise ValueError("timestamps must be finite")
        if L and (tx_indices.min() < 1 or tx_indices.max() > geometry.n_tx):
            raise ValueError(f"tx_indices must be in [1, {geometry.n_tx}]")
        if L and np.any(np.diff(timestamps) < 0):
            order = np.argsort(timestamps, kind="stable")
            csi, positions = csi[order], positions[order]
            timestamps, tx_indices = timestamps[order], tx_indices[order]
        self.geometry = geometry
        self.csi = freeze(csi)
        self.positions = freeze(positions)
        self.timestamps = freeze(timestamps)
        self.tx_indices = freeze(tx_indices)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, l: int) -> Datapoint:
        return Datapoint(
            csi=self.csi[l],
            position=self.positions[l],
            timestamp=float(self.timestamps[l]),
            tx_index=int(self.tx_indices[l]),
        )

    def __iter__(self):
        return (self[l] for l in range(len(self)))

    @property
    def datapoints(self):
        return list(self)

    def vectorized_csi(self) -> np.ndarray:
        """CSI flattened to (L, Q) with Q = B*M_r*M_c*N_sub, row-major."""
        return self.csi.reshape(len(self), self.geometry.csi_size)

    def with_csi(self, csi) -> "Dataset":
        """Same labels/timestamps/ordering with replacement CSI."""
        return Dataset(self.geometry, csi, self.positions, self.timestamps, self.tx_indices)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.csi, other.csi)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.tx_indices, other.tx_indices)
        )


@dataclass(frozen=True, eq=False)
class Cluster:
    """All datapoints falling in one time window, with their mean labels.

    `indices` are dataset row indices; `per_tx_indices` partitions them by
    transmitter (1-based keys, only transmitters present in the window).
    """

    window: int
    indices: np.ndarray
    mean_time: float
    mean_position: np.ndarray
    per_tx_indices: dict

    def __post_init__(self):
        freeze(np.asarray(self.indices))
        freeze(np.asarray(self.mean_position))

    def __len__(self) -> int:
        return len(self.indices)


def _record_dtype(geometry: ScenarioGeometry) -> np.dtype:
    return np.dtype(
        [
            ("timestamp", "<f8"),
            ("position", "<f8", (3,)),
            ("tx_index", "<u4"),
            ("csi", "<c8", geometry.csi_shape),
        ]
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as a PCCD directory (meta.json + data.bin)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = dataset.geometry.to_dict()
    meta["L"] = len(dataset)
    meta["format"] = PCCD_VERSION
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rec = np.empty(len(dataset), dtype=_record_dtype(dataset.geometry))
    rec["timestamp"] = dataset.timestamps
    rec["position"] = dataset.positions
    rec["tx_index"] = dataset.tx_indices
    rec["csi"] = dataset.csi
    rec.tofile(path / "data.bin")


def load_dataset(path) -> Dataset:
    """Read a PCCD directory back into a Dataset.

    Raises ValueError on version/shape mismatch between metadata and payload.
    """
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    version = meta.pop("format", None)
    if version != PCCD_VERSION:
        raise ValueError(f"unsupported dataset format {version!r} (expected {PCCD_VERSION!r})")
    L = int(meta.pop("L"))
    geometry = ScenarioGeometry.from_dict(meta)
    dtype = _record_dtype(geometry)
    data_path = path / "data.bin"
    if not data_path.exists():
        raise FileNotFoundError(f"{data_path} not found")
    expected = L * dtype.itemsize
    actual = data_path.stat().st_size
    if actual != expected:
        raise ValueError(f"data.bin holds {actual} bytes, metadata implies {expected}")
    rec = np.fromfile(data_path, dtype=dtype, count=L)
    return Dataset(
        geometry,
        rec["csi"],
        rec["position"],
        rec["timestamp"],
        rec["tx_index"],
    )


def cluster_datapoints(dataset: Dataset, delta_t: float = 1.0) -> list:
    """Group datapoints into absolute-time windows of length `delta_t`.

    A datapoint with timestamp t belongs to window floor(t / delta_t);
    windows are aligned to absolute time rather than the first packet, so
    clustering is deterministic and order-independent.  Returns clusters in
    ascending window order; every datapoint appears in exactly one cluster.
    """
    if not delta_t > 0:
        raise ValueError("delta_t must be positive")
    if len(dataset) == 0:
        return []
    windows = np.floor(dataset.timestamps / delta_t).astype(np.int64)
    clusters = []
    # timestamps are sorted, so identical windows are contiguous
    boundaries = np.flatnonzero(np.diff(windows)) + 1
    for idx in np.split(np.arange(len(dataset)), boundaries):
        members = idx.astype(np.int64)
        per_tx = {}
        tx = dataset.tx_indices[members]
        for t in np.unique(tx):
            per_tx[int(t)] = members[tx == t]
        clusters.append(
            Cluster(
                window=int(windows[members[0]]),
                indices=members,
                mean_time=float(dataset.timestamps[members].mean()),
                mean_position=dataset.positions[members].mean(axis=0),
                per_tx_indices=per_tx,
            )
        )
    return clusters
