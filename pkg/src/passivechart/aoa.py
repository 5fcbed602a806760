"""Classical bearing-based localization: per-cluster azimuth covariance,
single-source root-MUSIC, a von Mises bearing likelihood and its argmax.

The azimuth convention matches `ScenarioGeometry.azimuth_to`: angles are
measured in each array's (boresight, column-axis) plane, positive towards
the column axis.  A uniform column spacing of `element_spacing_m` is
assumed for the MUSIC polynomial.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as sopt
import scipy.special as spec_fn

from .geometry import Area, ScenarioGeometry
from .datamodel import Dataset, cluster_datapoints
from .clutter import apply_crap
from ._validation import freeze

DEFAULT_KAPPA_MAX = 50.0
DEFAULT_KAPPA_POWER = 4.0
CENTER_EXCLUSION_M = 1e-3  # bearing angle undefined this close to an array center


class TriangulationError(RuntimeError):
    """Raised when a cluster cannot be triangulated (too few usable bearings)."""


@dataclass(frozen=True)
class AoAEstimate:
    """One array's azimuth estimate with its von Mises concentration."""

    array_index: int
    azimuth: float
    concentration: float

    def __post_init__(self):
        if not np.isfinite(self.concentration) or self.concentration < 0:
            raise ValueError("concentration must be finite and >= 0")
        if not -np.pi / 2 < self.azimuth < np.pi / 2:
            raise ValueError("azimuth must lie in the open interval (-pi/2, pi/2)")


def azimuth_covariance(cluster_csi, b: int) -> np.ndarray:
    """Column-space covariance of one array over a cluster.

    Sums outer products of the length-M_c column vectors over all cluster
    members, antenna rows and subcarriers:
        R = sum_{l, m_r, n} H[l, b, m_r, :, n] H[l, b, m_r, :, n]^H
    `cluster_csi` has shape (n_members, B, M_r, M_c, N_sub).
    """
    cluster_csi = np.asarray(cluster_csi)
    if cluster_csi.ndim != 5:
        raise ValueError("cluster_csi must be (n_members, B, M_r, M_c, N_sub)")
    if len(cluster_csi) == 0:
        raise ValueError("cluster is empty")
    # gather (snapshots, M_c) with snapshots = members * rows * subcarriers
    snaps = cluster_csi[:, b].transpose(0, 1, 3, 2).reshape(-1, cluster_csi.shape[3])
    snaps = snaps.astype(np.complex128)
    return snaps.T @ snaps.conj()


def root_music_single_source(R, spacing_wavelengths: float):
    """Single-source root-MUSIC azimuth from an M_c x M_c covariance.

    Returns (azimuth_rad, root_magnitude) with root_magnitude in [0, 1],
    or None when the dominant root phase maps outside the unambiguous
    field of view (estimate rejected).  Raises on degenerate input.
    """
    R = np.asarray(R, dtype=np.complex128)
    m = R.shape[0]
    if R.ndim != 2 or R.shape[1] != m or m < 2:
        raise ValueError("R must be square with at least 2 columns")
    norm = np.linalg.norm(R)
    if norm == 0:
        raise ValueError("covariance matrix is identically zero")
    _, v = np.linalg.eigh(R)
    noise = v[:, : m - 1]  # all eigenvectors but the strongest
    proj = noise @ noise.conj().T
    coeffs = np.array([np.trace(proj, offset=k) for k in range(m - 1, -m, -1)])
    roots = np.roots(coeffs)
    inside = roots[np.abs(roots) <= 1.0 + 1e-9]
    if len(inside) == 0:
        return None
    z = inside[np.argmax(np.abs(inside))]
    sin_az = np.angle(z) / (2.0 * np.pi * spacing_wavelengths)
    if abs(sin_az) >= 1.0:
        return None
    return float(np.arcsin(sin_az)), float(min(np.abs(z), 1.0))


def kappa_from_root(
    root_magnitude: float,
    kappa_max: float = DEFAULT_KAPPA_MAX,
    power: float = DEFAULT_KAPPA_POWER,
) -> float:
    """Heuristic concentration from the MUSIC root radius:
    kappa = kappa_max * |z|^power; monotone with kappa(0) = 0."""
    if not 0.0 <= root_magnitude <= 1.0:
        raise ValueError("root_magnitude must be in [0, 1]")
    return float(kappa_max * root_magnitude**power)


def _log_i0(kappa):
    # stable log of the order-0 modified Bessel function
    kappa = np.asarray(kappa, dtype=float)
    return kappa + np.log(spec_fn.i0e(kappa))


def bearing_log_likelihood(xy, alphas, kappas, geometry: ScenarioGeometry, height: float):
    """Log of the product-von-Mises bearing likelihood.

    Parameters
    ----------
    xy : (n, 2) candidate planar positions at the given height
    alphas, kappas : (B,) or (n, B); kappa = 0 marks an uninformative array
    Returns (n,) log-likelihood values.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    alphas = np.asarray(alphas, dtype=float)
    kappas = np.asarray(kappas, dtype=float)
    v = np.empty((len(xy), geometry.n_arrays, 3))
    v[:, :, :2] = xy[:, None, :] - geometry.array_centers[None, :, :2]
    v[:, :, 2] = height - geometry.array_centers[None, :, 2]
    a = np.einsum("nbk,bk->nb", v, geometry.array_col_axes)
    c = np.einsum("nbk,bk->nb", v, geometry.array_boresights)
    theta = np.arctan2(a, c)
    return np.sum(kappas * np.cos(theta - alphas) - np.log(2 * np.pi) - _log_i0(kappas), axis=1)


def bearing_log_likelihood_grad(xy, alphas, kappas, geometry: ScenarioGeometry, height: float):
    """Gradient of `bearing_log_likelihood` w.r.t. the planar coordinates.

    The angle-plane radius is clamped at 1 cm so gradients stay bounded
    when an optimizer wanders onto an array center.  Returns (n, 2).
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    alphas = np.asarray(alphas, dtype=float)
    kappas = np.asarray(kappas, dtype=float)
    v = np.empty((len(xy), geometry.n_arrays, 3))
    v[:, :, :2] = xy[:, None, :] - geometry.array_centers[None, :, :2]
    v[:, :, 2] = height - geometry.array_centers[None, :, 2]
    a = np.einsum("nbk,bk->nb", v, geometry.array_col_axes)
    c = np.einsum("nbk,bk->nb", v, geometry.array_boresights)
    theta = np.arctan2(a, c)
    denom = np.maximum(a**2 + c**2, 1e-4)
    col_xy = geometry.array_col_axes[:, :2]
    bore_xy = geometry.array_boresights[:, :2]
    # dtheta/dxy = (c * col - a * bore) / (a^2 + c^2)
    dtheta = (c[:, :, None] * col_xy[None] - a[:, :, None] * bore_xy[None]) / denom[:, :, None]
    w = -kappas * np.sin(theta - alphas)
    return np.sum(w[:, :, None] * dtheta, axis=1)


def vonmises_likelihood(x, estimates, geometry: ScenarioGeometry, height: float = None) -> float:
    """Product of per-array von Mises bearing densities at planar position x.

    Evaluated in the log domain internally; arrays absent from `estimates`
    contribute a uniform factor (kappa = 0).
    """
    if not estimates:
        raise ValueError("estimates must be nonempty")
    x = np.asarray(x, dtype=float)
    if height is None:
        height = float(np.mean(geometry.array_centers[:, 2]))
    dxy = np.linalg.norm(geometry.array_centers[:, :2] - x[None, :2], axis=1)
    if dxy.min() < CENTER_EXCLUSION_M:
        raise ValueError("position coincides with an array center; bearing angle undefined")
    alphas = np.zeros(geometry.n_arrays)
    kappas = np.zeros(geometry.n_arrays)
    for est in estimates:
        alphas[est.array_index] = est.azimuth
        kappas[est.array_index] = est.concentration
    return float(np.exp(bearing_log_likelihood(x[:2], alphas, kappas, geometry, height)[0]))


def triangulate(
    estimates,
    geometry: ScenarioGeometry,
    area: Area,
    grid_pitch: float = 0.1,
    kappa_min: float = 0.1,
    refine_tol: float = 1e-3,
) -> np.ndarray:
    """Argmax of the bearing likelihood: coarse grid search over the area
    followed by Nelder-Mead refinement of the log-likelihood.

    Raises TriangulationError with "no information" when every bearing has
    zero concentration and "insufficient bearings" when fewer than two
    exceed `kappa_min`.
    """
    informative = [e for e in estimates if e.concentration > kappa_min]
    if all(e.concentration == 0 for e in estimates):
        raise TriangulationError("no information: all bearing concentrations are zero")
    if len(informative) < 2:
        raise TriangulationError(
            f"insufficient bearings: {len(informative)} informative estimate(s), need >= 2"
        )
    alphas = np.zeros(geometry.n_arrays)
    kappas = np.zeros(geometry.n_arrays)
    for est in informative:
        alphas[est.array_index] = est.azimuth
        kappas[est.array_index] = est.concentration
    height = area.height

    gx = np.arange(area.x_min, area.x_max + 1e-9, grid_pitch)
    gy = np.arange(area.y_min, area.y_max + 1e-9, grid_pitch)
    grid = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    dist = np.linalg.norm(
        grid[:, None, :] - geometry.array_centers[None, :, :2], axis=2
    ).min(axis=1)
    grid = grid[dist > CENTER_EXCLUSION_M]
    values = bearing_log_likelihood(grid, alphas, kappas, geometry, height)
    x0 = grid[int(np.argmax(values))]

    def objective(xy):
        if np.linalg.norm(geometry.array_centers[:, :2] - xy[None], axis=1).min() < CENTER_EXCLUSION_M:
            return 1e30
        return -float(bearing_log_likelihood(xy, alphas, kappas, geometry, height)[0])

    res = sopt.minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"xatol": refine_tol, "fatol": 1e-12, "maxiter": 400},
    )
    return np.asarray(res.x, dtype=float)


@dataclass(frozen=True, eq=False)
class ClusterEstimate:
    """Triangulation outcome for one cluster (valid=False marks a flagged
    cluster, excluded from metrics)."""

    cluster_id: int
    window: int
    mean_time: float
    mean_position: np.ndarray
    azimuths: np.ndarray  # (B,) rad, NaN where no usable bearing
    kappas: np.ndarray  # (B,) zero where no usable bearing
    estimate: np.ndarray | None
    valid: bool
    message: str = ""

    def __post_init__(self):
        freeze(np.asarray(self.azimuths))
        freeze(np.asarray(self.kappas))


def estimate_cluster_bearings(
    cluster_csi,
    geometry: ScenarioGeometry,
    kappa_max: float = DEFAULT_KAPPA_MAX,
    kappa_power: float = DEFAULT_KAPPA_POWER,
):
    """Per-array root-MUSIC bearings for one cluster of clutter-rejected CSI.

    Returns (azimuths (B,), kappas (B,), estimates list); rejected arrays
    get NaN azimuth and zero kappa.
    """
    spacing_wl = geometry.element_spacing_m / geometry.wavelength_m
    azimuths = np.full(geometry.n_arrays, np.nan)
    kappas = np.zeros(geometry.n_arrays)
    estimates = []
    for b in range(geometry.n_arrays):
        R = azimuth_covariance(cluster_csi, b)
        if np.linalg.norm(R) == 0:
            continue
        out = root_music_single_source(R, spacing_wl)
        if out is None:
            continue
        alpha, rmag = out
        kappa = kappa_from_root(rmag, kappa_max, kappa_power)
        azimuths[b] = alpha
        kappas[b] = kappa
        estimates.append(AoAEstimate(array_index=b, azimuth=alpha, concentration=kappa))
    return azimuths, kappas, estimates


def triangulation_baseline(
    dataset: Dataset,
    order="auto",
    delta_t: float = 1.0,
    area: Area | None = None,
    grid_pitch: float = 0.1,
    kappa_min: float = 0.1,
    kappa_max: float = DEFAULT_KAPPA_MAX,
    kappa_power: float = DEFAULT_KAPPA_POWER,
    threads: int = 1,
) -> list:
    """End-to-end bearing baseline: clutter removal, clustering, per-array
    root-MUSIC and likelihood argmax per cluster.

    Clusters that cannot be triangulated are returned flagged (valid=False)
    so callers can exclude them from metrics and report the count.
    """
    rejected = apply_crap(dataset, order=order)
    clusters = cluster_datapoints(rejected, delta_t)
    if area is None:
        height = float(np.mean(dataset.positions[:, 2])) if len(dataset) else 1.0
        area = Area(height=height)
    geometry = dataset.geometry
    csi = rejected.csi

    def solve(item):
        ci, cluster = item
        az, kp, ests = estimate_cluster_bearings(csi[cluster.indices], geometry, kappa_max, kappa_power)
        try:
            xy = triangulate(ests, geometry, area, grid_pitch=grid_pitch, kappa_min=kappa_min)
            return ClusterEstimate(
                cluster_id=ci,
                window=cluster.window,
                mean_time=cluster.mean_time,
                mean_position=cluster.mean_position,
                azimuths=az,
                kappas=kp,
                estimate=xy,
                valid=True,
            )
        except TriangulationError as err:
            return ClusterEstimate(
                cluster_id=ci,
                window=cluster.window,
                mean_time=cluster.mean_time,
                mean_position=cluster.mean_position,
                azimuths=az,
                kappas=kp,
                estimate=None,
                valid=False,
                message=str(err),
            )

    items = list(enumerate(clusters))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, items))
    else:
        results = [solve(item) for item in items]
    return results
