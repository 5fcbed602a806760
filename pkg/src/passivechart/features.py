"""Neural-network input features from clutter-rejected CSI.

Frequency-domain snapshots are transformed to the delay (time-tap) domain
with a unitary transform over the subcarrier axis; a fixed tap window
keeps only the delays carrying signal energy.  Per cluster, transmitter,
array and tap, the (M_r M_c) x (M_r M_c) covariance of the vectorized
per-array snapshots is accumulated; the stacked real and imaginary parts
of all covariance blocks form the feature vector.  Covariances cancel the
unknown per-packet phase and make the features permutation-invariant in
the cluster members.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import ScenarioGeometry
from .datamodel import Dataset

FEATURE_MAGIC = b"PCCF"
FEATURE_FORMAT_VERSION = 1
FEATURE_ORDERING_VERSION = 1  # blocks lexicographic in (tx, array, tap); [Re | Im]


@dataclass(frozen=True)
class TapConfig:
    """Delay-domain windowing: transform length and retained tap range."""

    fft_length: int = 53
    tap_start: int = 22
    n_taps: int = 12

    def __post_init__(self):
        if self.fft_length < 1 or self.n_taps < 1 or self.tap_start < 0:
            raise ValueError("fft_length/n_taps must be >= 1 and tap_start >= 0")
        if self.tap_start + self.n_taps > self.fft_length:
            raise ValueError("tap window [tap_start, tap_start + n_taps) exceeds fft_length")


def feature_length(geometry: ScenarioGeometry, cfg: TapConfig) -> int:
    block = (geometry.n_rows * geometry.n_cols) ** 2
    return 2 * geometry.n_tx * geometry.n_arrays * cfg.n_taps * block


def to_time_domain(h_tgt, cfg: TapConfig = TapConfig()) -> np.ndarray:
    """Unitary frequency-to-delay transform along the last axis, then slice
    the configured tap window.

    A channel exp(-2j pi d n / N) over subcarriers n concentrates at delay
    tap d.  Energy is preserved before slicing (Parseval).
    """
    h_tgt = np.asarray(h_tgt)
    if h_tgt.shape[-1] < 1:
        raise ValueError("empty subcarrier axis")
    taps = np.fft.ifft(h_tgt, n=cfg.fft_length, axis=-1, norm="ortho")
    return taps[..., cfg.tap_start : cfg.tap_start + cfg.n_taps]


def cluster_features(
    member_csi_taps,
    member_tx,
    geometry: ScenarioGeometry,
    cfg: TapConfig = TapConfig(),
    normalize: bool = True,
) -> np.ndarray:
    """Feature vector of one cluster from time-domain member CSI.

    Parameters
    ----------
    member_csi_taps : (n_members, B, M_r, M_c, n_taps) complex
    member_tx : (n_members,) 1-based transmitter index per member
    normalize : divide by the summed block traces (total energy) so feature
        scale is independent of the cluster's packet count.

    Returns the float32 feature vector; a transmitter absent from the
    cluster contributes all-zero blocks.
    """
    member_csi_taps = np.asarray(member_csi_taps)
    member_tx = np.asarray(member_tx)
    if len(member_csi_taps) == 0:
        raise ValueError("cluster is empty")
    n_mem, n_arr, n_rows, n_cols, n_taps = member_csi_taps.shape
    if n_taps != cfg.n_taps or n_arr != geometry.n_arrays:
        raise ValueError("member CSI shape does not match geometry/tap config")
    ant = n_rows * n_cols
    blocks = np.zeros((geometry.n_tx, n_arr, n_taps, ant, ant), dtype=np.complex128)
    snaps = member_csi_taps.reshape(n_mem, n_arr, ant, n_taps).astype(np.complex128)
    for tx in range(1, geometry.n_tx + 1):
        sel = np.flatnonzero(member_tx == tx)
        if len(sel) == 0:
            continue
        # vec H'[l, b, :, :, t] outer products, summed over the tx's members
        x = snaps[sel]  # (m, B, ant, taps)
        blocks[tx - 1] = np.einsum("mbat,mbct->btac", x, x.conj())
    vec = blocks.reshape(-1)
    f = np.concatenate([vec.real, vec.imag])
    if normalize:
        trace_sum = float(np.einsum("xbtaa->", blocks).real)
        f = f / (trace_sum + 1e-12)
    return f.astype(np.float32)


def build_feature_matrix(
    rejected: Dataset,
    clusters,
    cfg: TapConfig = TapConfig(),
    normalize: bool = True,
    chunk_size: int = 8192,
) -> np.ndarray:
    """Feature vectors for every cluster, shape (n_clusters, feature_length)."""
    geometry = rejected.geometry
    n = len(rejected)
    taps = np.empty(rejected.csi.shape[:-1] + (cfg.n_taps,), dtype=np.complex64)
    for start in range(0, n, chunk_size):  # chunked to bound the transform workspace
        stop = min(start + chunk_size, n)
        taps[start:stop] = to_time_domain(rejected.csi[start:stop], cfg)
    out = np.empty((len(clusters), feature_length(geometry, cfg)), dtype=np.float32)
    for ci, cluster in enumerate(clusters):
        out[ci] = cluster_features(
            taps[cluster.indices], rejected.tx_indices[cluster.indices], geometry, cfg, normalize
        )
    return out


def save_features(path, cluster_ids, features) -> None:
    """Feature cache: header (magic, versions, counts) then per cluster a
    uint32 id followed by the float32 vector, all little-endian."""
    features = np.ascontiguousarray(features, dtype=np.float32)
    cluster_ids = np.ascontiguousarray(cluster_ids, dtype=np.uint32)
    n, width = features.shape
    if len(cluster_ids) != n:
        raise ValueError("cluster_ids and features disagree on cluster count")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIII", FEATURE_FORMAT_VERSION, FEATURE_ORDERING_VERSION, n, width))
        for i in range(n):
            fh.write(struct.pack("<I", int(cluster_ids[i])))
            fh.write(features[i].tobytes())


def load_features(path):
    """Read a feature cache; returns (cluster_ids uint32 (n,), features float32 (n, width))."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"not a feature cache file (magic {magic!r})")
        fmt, ordering, n, width = struct.unpack("<IIII", fh.read(16))
        if fmt != FEATURE_FORMAT_VERSION or ordering != FEATURE_ORDERING_VERSION:
            raise ValueError(f"unsupported feature cache version {fmt}/{ordering}")
        ids = np.empty(n, dtype=np.uint32)
        feats = np.empty((n, width), dtype=np.float32)
        for i in range(n):
            (ids[i],) = struct.unpack("<I", fh.read(4))
            feats[i] = np.frombuffer(fh.read(4 * width), dtype="<f4")
    return ids, feats
