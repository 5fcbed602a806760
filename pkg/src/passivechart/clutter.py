"""Clutter subspace estimation and removal, per transmitter.

The static environment (direct paths, fixed reflectors) dominates every
CSI snapshot.  Its subspace is estimated from the dominant eigenvectors of
the snapshot autocovariance and projected out of each measurement, leaving
the target-induced channel perturbation.  Estimation and removal operate
independently per transmitter since the static channel differs per
transmitter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator

from .datamodel import Dataset
from ._validation import freeze


@dataclass(frozen=True, eq=False)
class ClutterModel:
    """Orthonormal clutter basis of order K for one transmitter.

    `basis` is Q x K complex with orthonormal columns spanning the K
    strongest autocovariance directions; `eigenvalues` holds the retained
    eigenvalues in descending order.
    """

    basis: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        freeze(self.basis)
        freeze(self.eigenvalues)

    @property
    def order(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return self.basis.shape[0]


def accumulate_autocovariance(vectors) -> np.ndarray:
    """Sum of outer products h h^H over the given Q-vectors.

    Accepts a sequence of vectors or an (L, Q) array; an empty input yields
    the 0x0 zero matrix only if the width is unknown, else Q x Q zeros.
    The result is Hermitian positive semidefinite by construction.
    """
    arr = np.asarray(vectors)
    if arr.ndim == 1 and arr.size == 0:
        return np.zeros((0, 0), dtype=np.complex128)
    if arr.ndim != 2:
        raise ValueError(f"expected a list of equal-length vectors, got shape {arr.shape}")
    if not np.iscomplexobj(arr):
        arr = arr.astype(np.complex128)
    # R[p, q] = sum_l h[l, p] * conj(h[l, q])
    return arr.T @ arr.conj()


def estimate_clutter_subspace(R, order: int) -> ClutterModel:
    """Eigenvectors of the `order` largest eigenvalues of a Hermitian R.

    The spanned subspace is unique whenever the retained and discarded
    spectra are separated; under an exact eigenvalue tie any orthonormal
    completion may be returned.
    """
    R = np.asarray(R)
    q = R.shape[0]
    if R.ndim != 2 or R.shape[1] != q:
        raise ValueError("R must be square")
    if not (1 <= order <= q):
        raise ValueError(f"clutter order must be in [1, {q}], got {order}")
    if not np.all(np.isfinite(R)):
        raise ValueError("R contains non-finite entries")
    w, v = sla.eigh(np.asarray(R, dtype=np.complex128), subset_by_index=[q - order, q - 1])
    # eigh returns ascending order
    w = np.maximum(w[::-1], 0.0)
    v = np.ascontiguousarray(v[:, ::-1])
    return ClutterModel(basis=v, eigenvalues=w)


def choose_clutter_order(R, max_order: int = 8) -> int:
    """Eigenvalue-gap heuristic: the smallest K with maximal ratio
    lambda_K / lambda_{K+1} among the top `max_order` eigenvalues."""
    R = np.asarray(R)
    q = R.shape[0]
    m = min(max_order + 1, q)
    if m < 2:
        return 1
    w = sla.eigh(np.asarray(R, dtype=np.complex128), subset_by_index=[q - m, q - 1], eigvals_only=True)
    w = np.maximum(w[::-1], 0.0)
    ratios = w[:-1] / np.maximum(w[1:], np.finfo(float).tiny)
    return int(np.argmax(ratios)) + 1


def remove_clutter(h, model: ClutterModel) -> np.ndarray:
    """Project the clutter component out of one snapshot: h - C (C^H h).

    Computed in complex128 so the output is orthogonal to the basis to
    near machine precision regardless of input dtype.
    """
    h = np.asarray(h, dtype=np.complex128)
    if h.shape != (model.dim,):
        raise ValueError(f"vector length {h.shape} does not match basis dim {model.dim}")
    basis = model.basis
    return h - basis @ (basis.conj().T @ h)


class ClutterRemover(BaseEstimator):
    """Estimator interface around per-transmitter clutter rejection.

    Parameters
    ----------
    order : int or "auto"
        Number of clutter eigenvectors removed per transmitter; "auto"
        applies the eigenvalue-gap rule per transmitter.
    chunk_size : int
        Rows projected per block in transform (memory bound, no effect on
        values).

    Attributes
    ----------
    models_ : dict mapping 1-based transmitter index to ClutterModel
    orders_ : dict mapping transmitter index to the order actually used
    """

    def __init__(self, order="auto", chunk_size: int = 4096):
        self.order = order
        self.chunk_size = chunk_size

    def _check_order(self):
        if self.order == "auto":
            return None
        k = int(self.order)
        if k < 1:
            raise ValueError(f"clutter order must be >= 1, got {self.order}")
        return k

    def fit(self, dataset: Dataset, y=None):
        """Estimate one clutter subspace per transmitter present in the data."""
        k_fixed = self._check_order()
        vec = dataset.vectorized_csi()
        self.models_ = {}
        self.orders_ = {}
        for tx in range(1, dataset.geometry.n_tx + 1):
            idx = np.flatnonzero(dataset.tx_indices == tx)
            if len(idx) == 0:
                continue
            R = accumulate_autocovariance(vec[idx])
            k = choose_clutter_order(R) if k_fixed is None else k_fixed
            if len(idx) < k:
                raise ValueError(
                    f"transmitter {tx} has {len(idx)} datapoints, fewer than clutter order {k}"
                )
            self.models_[tx] = estimate_clutter_subspace(R, k)
            self.orders_[tx] = k
        if not self.models_:
            raise ValueError("dataset holds no datapoints for any transmitter")
        return self

    def transform(self, dataset: Dataset) -> Dataset:
        """Return a clutter-rejected copy; labels, timestamps and ordering
        are preserved."""
        if not hasattr(self, "models_"):
            raise ValueError("ClutterRemover must be fitted before transform")
        vec = dataset.vectorized_csi()
        out = np.empty_like(vec)
        seen = np.zeros(len(dataset), dtype=bool)
        for tx, model in self.models_.items():
            idx = np.flatnonzero(dataset.tx_indices == tx)
            seen[idx] = True
            basis = model.basis
            for start in range(0, len(idx), self.chunk_size):
                sel = idx[start : start + self.chunk_size]
                block = vec[sel].astype(np.complex128)
                block -= (block @ basis.conj()) @ basis.T
                out[sel] = block.astype(np.complex64)
        if not seen.all():
            missing = np.unique(dataset.tx_indices[~seen]).tolist()
            raise ValueError(f"no clutter model for transmitter(s) {missing}")
        return dataset.with_csi(out.reshape(dataset.csi.shape))

    def fit_transform(self, dataset: Dataset, y=None) -> Dataset:
        return self.fit(dataset).transform(dataset)


def apply_crap(dataset: Dataset, order="auto") -> Dataset:
    """Fit per-transmitter clutter subspaces on `dataset` and project them out."""
    return ClutterRemover(order=order).fit_transform(dataset)
