"""Pairwise pseudo-distances between clusters.

Per cluster and array, the member snapshots over all subcarriers are
condensed into a single antenna-domain vector (principal component of the
antenna covariance).  The cosine-based dissimilarity compares per-antenna
energy distributions of two clusters and is therefore insensitive to both
global phase and scaling.  Short time gaps bound physical displacement, so
gated pairs are fused with a seconds-to-dissimilarity slope; a k-nearest
neighbor graph and shortest paths yield geodesic dissimilarities suitable
for metric learning, optionally rescaled to meters against triangulated
positions.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from .datamodel import Dataset
from ._validation import freeze

DISSIM_MAGIC = b"PCCD"
DISSIM_FORMAT_VERSION = 1

KIND_COSINE = "CS"
KIND_FUSED = "CS-fuse"
KIND_GEODESIC = "CS-fuse,geo"
KIND_METERS = "scaled-meters"
_KINDS = (KIND_COSINE, KIND_FUSED, KIND_GEODESIC, KIND_METERS)


@dataclass(frozen=True, eq=False)
class DissimilarityMatrix:
    """Symmetric nonnegative cluster-pair dissimilarities with a kind tag."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown dissimilarity kind {self.kind!r}")
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("dissimilarity matrix must be square")
        freeze(v)

    def __len__(self):
        return len(self.values)


def combine_cluster_csi(cluster_csi) -> np.ndarray:
    """Condense a cluster's snapshots into one (B, M_r, M_c) complex array.

    Per array, the principal eigenvector of the antenna covariance over all
    members and subcarriers, scaled by the square root of its eigenvalue.
    The eigenvector's arbitrary global phase is fixed by rotating the
    largest-magnitude entry to the positive real axis.  An all-zero array
    slice stays zero (warned).
    """
    cluster_csi = np.asarray(cluster_csi)
    if cluster_csi.ndim != 5 or len(cluster_csi) == 0:
        raise ValueError("cluster_csi must be nonempty (n_members, B, M_r, M_c, N_sub)")
    n_mem, n_arr, n_rows, n_cols, n_sub = cluster_csi.shape
    ant = n_rows * n_cols
    out = np.zeros((n_arr, n_rows, n_cols), dtype=np.complex128)
    zero_slices = 0
    for b in range(n_arr):
        snaps = cluster_csi[:, b].reshape(n_mem, ant, n_sub).transpose(1, 0, 2).reshape(ant, -1)
        snaps = snaps.astype(np.complex128)
        cov = snaps @ snaps.conj().T
        if np.linalg.norm(cov) == 0:
            zero_slices += 1
            continue
        w, v = np.linalg.eigh(cov)
        vec = v[:, -1] * np.sqrt(max(float(w[-1]), 0.0))
        k = int(np.argmax(np.abs(vec)))
        phase = vec[k] / abs(vec[k]) if vec[k] != 0 else 1.0
        out[b] = (vec / phase).reshape(n_rows, n_cols)
    if zero_slices:
        warnings.warn(f"{zero_slices} all-zero array slice(s) in combined cluster CSI")
    return out


def combine_all_clusters(rejected: Dataset, clusters) -> np.ndarray:
    """combine_cluster_csi for every cluster, shape (n_clusters, B, M_r, M_c)."""
    out = np.empty((len(clusters),) + rejected.csi.shape[1:4], dtype=np.complex128)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for ci, cluster in enumerate(clusters):
            out[ci] = combine_cluster_csi(rejected.csi[cluster.indices])
    return out


def _power_profiles(combined) -> np.ndarray:
    """Per-array antenna energy distributions, normalized to unit sum;
    all-zero slices map to the zero profile (contributing dissimilarity 1)."""
    combined = np.asarray(combined)
    n = combined.shape[0]
    u = np.abs(combined.reshape(n, combined.shape[1], -1)) ** 2
    s = u.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(s > 0, u / s, 0.0)
    return u


def cosine_dissimilarity(combined_i, combined_j) -> float:
    """Cosine-based dissimilarity between two combined CSI arrays.

    d = B - sum over arrays and antennas of |h_i^* h_j|^2 normalized by the
    product of squared array Frobenius norms; lies in [0, B], symmetric,
    invariant to per-array global phase and positive scaling.
    """
    ui = _power_profiles(np.asarray(combined_i)[None])[0]
    uj = _power_profiles(np.asarray(combined_j)[None])[0]
    if ui.shape != uj.shape:
        raise ValueError("combined CSI shapes differ")
    return float(ui.shape[0] - np.sum(ui * uj))


def cosine_dissimilarity_matrix(combined) -> DissimilarityMatrix:
    """All-pairs cosine dissimilarities from (n, B, M_r, M_c) combined CSI."""
    u = _power_profiles(combined)
    n, n_arr = u.shape[0], u.shape[1]
    flat = u.reshape(n, -1)
    d = n_arr - flat @ flat.T
    d = np.maximum(d, 0.0)
    d = 0.5 * (d + d.T)
    return DissimilarityMatrix(values=d.astype(np.float32), kind=KIND_COSINE)


def calibrate_time_slope(d_cs, mean_times, t_thresh: float) -> float:
    """Self-calibrated seconds-to-dissimilarity slope: the median gated
    time-scaled distance matches the median gated cosine dissimilarity."""
    t = np.asarray(mean_times, dtype=float)
    dt = np.abs(t[:, None] - t[None, :])
    gate = (dt <= t_thresh) & (dt > 0)
    if not gate.any():
        raise ValueError("no cluster pairs inside the time gate; cannot calibrate")
    med_dt = float(np.median(dt[gate]))
    med_d = float(np.median(np.asarray(d_cs, dtype=float)[gate]))
    if med_dt == 0:
        raise ValueError("degenerate time gate (median gap 0)")
    return med_d / med_dt


def fuse_with_time(
    d_cs: DissimilarityMatrix,
    mean_times,
    time_slope: float | None = None,
    t_thresh: float = 3.0,
) -> DissimilarityMatrix:
    """Fuse cosine dissimilarities with time gaps.

    Inside the gate |dt| <= t_thresh the fused value is
    min(d_cs, time_slope * |dt|); outside it is d_cs unchanged.  The
    diagonal is forced to zero.  `time_slope` defaults to the
    self-calibrated slope (see `calibrate_time_slope`).
    """
    if t_thresh <= 0:
        raise ValueError("t_thresh must be positive")
    d = np.asarray(d_cs.values, dtype=np.float64).copy()
    t = np.asarray(mean_times, dtype=float)
    if len(t) != len(d):
        raise ValueError("mean_times length does not match matrix size")
    if time_slope is None:
        time_slope = calibrate_time_slope(d, t, t_thresh)
    if time_slope <= 0:
        raise ValueError("time_slope must be positive")
    dt = np.abs(t[:, None] - t[None, :])
    gate = dt <= t_thresh
    d[gate] = np.minimum(d[gate], time_slope * dt[gate])
    np.fill_diagonal(d, 0.0)
    d = 0.5 * (d + d.T)
    return DissimilarityMatrix(values=d.astype(np.float32), kind=KIND_FUSED)


def geodesic_dissimilarities(
    d_fuse: DissimilarityMatrix, k: int = 20, disconnect_factor: float = 1.5
) -> DissimilarityMatrix:
    """Shortest-path dissimilarities over the symmetric k-nearest-neighbor graph.

    An edge is kept when either endpoint selects it.  Pairs in different
    graph components get the largest finite geodesic times
    `disconnect_factor` (warned) so downstream training stays usable.
    """
    d = np.asarray(d_fuse.values, dtype=np.float64)
    n = len(d)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        raise ValueError(f"k = {k} must be smaller than the number of clusters {n}")
    order = np.argsort(d, axis=1, kind="stable")
    neighbors = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        row = order[i]
        neighbors[i] = row[row != i][:k]
    rows = np.repeat(np.arange(n), k)
    cols = neighbors.ravel()
    graph = sp.coo_matrix((d[rows, cols], (rows, cols)), shape=(n, n)).tocsr()
    graph = graph.maximum(graph.T)
    geo = csgraph.shortest_path(graph, method="D", directed=False)
    infinite = ~np.isfinite(geo)
    if infinite.any():
        finite = geo[~infinite]
        finite_max = float(finite.max()) if finite.size else 0.0
        geo[infinite] = disconnect_factor * finite_max
        warnings.warn(
            f"{int(infinite.sum()) // 2} disconnected cluster pair(s); "
            f"filled with {disconnect_factor} x largest finite geodesic"
        )
        np.fill_diagonal(geo, 0.0)
    return DissimilarityMatrix(values=geo.astype(np.float32), kind=KIND_GEODESIC)


def scale_to_meters(
    d_geo: DissimilarityMatrix,
    positions,
    max_pairs: int = 1_000_000,
    seed: int = 0,
) -> tuple:
    """Least-squares scale from geodesic units to meters against reference
    positions (e.g. triangulated estimates).

    Rows with non-finite positions are ignored.  Uses all pairs up to
    `max_pairs`, then a seeded random subset.  Returns
    (DissimilarityMatrix in meters, scale).
    """
    d = np.asarray(d_geo.values, dtype=np.float64)
    pos = np.asarray(positions, dtype=float)
    if len(pos) != len(d):
        raise ValueError("positions length does not match matrix size")
    ok = np.flatnonzero(np.all(np.isfinite(pos), axis=1))
    if len(ok) < 2:
        raise ValueError("need at least 2 clusters with reference positions")
    iu, ju = np.triu_indices(len(ok), 1)
    iu, ju = ok[iu], ok[ju]
    if len(iu) > max_pairs:
        rng = np.random.default_rng(seed)
        sel = rng.choice(len(iu), size=max_pairs, replace=False)
        iu, ju = iu[sel], ju[sel]
    dg = d[iu, ju]
    dm = np.linalg.norm(pos[iu, :2] - pos[ju, :2], axis=1)
    denom = float(np.sum(dg * dg))
    if denom == 0:
        raise ValueError("geodesic dissimilarities are all zero; cannot scale")
    scale = float(np.sum(dg * dm) / denom)
    return DissimilarityMatrix(values=(scale * d).astype(np.float32), kind=KIND_METERS), scale


def save_dissimilarity(path, matrix: DissimilarityMatrix, cluster_ids) -> None:
    """Cache format: magic, version, kind tag, cluster-id index, then the
    square float32 matrix row-major, all little-endian."""
    ids = np.ascontiguousarray(cluster_ids, dtype=np.uint32)
    values = np.ascontiguousarray(matrix.values, dtype=np.float32)
    if len(ids) != len(values):
        raise ValueError("cluster_ids length does not match matrix size")
    kind = matrix.kind.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DISSIM_MAGIC)
        fh.write(struct.pack("<II", DISSIM_FORMAT_VERSION, len(kind)))
        fh.write(kind)
        fh.write(struct.pack("<I", len(ids)))
        fh.write(ids.tobytes())
        fh.write(values.tobytes())


def load_dissimilarity(path) -> tuple:
    """Read a dissimilarity cache; returns (DissimilarityMatrix, cluster_ids)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DISSIM_MAGIC:
            raise ValueError(f"not a dissimilarity cache file (magic {magic!r})")
        version, kind_len = struct.unpack("<II", fh.read(8))
        if version != DISSIM_FORMAT_VERSION:
            raise ValueError(f"unsupported dissimilarity cache version {version}")
        kind = fh.read(kind_len).decode("utf-8")
        (n,) = struct.unpack("<I", fh.read(4))
        ids = np.frombuffer(fh.read(4 * n), dtype="<u4").copy()
        values = np.frombuffer(fh.read(4 * n * n), dtype="<f4").reshape(n, n).copy()
    return DissimilarityMatrix(values=values, kind=kind), ids
