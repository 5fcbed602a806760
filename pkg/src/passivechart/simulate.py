"""Synthetic multi-static CSI generation.

The physical model: each transmitter illuminates a static environment
(direct path to every receive antenna plus a fixed set of point scatterers)
and one mobile point scatterer, the target.  Every path contributes
amplitude 1/(product of leg distances) and the geometric delay mapped to
per-subcarrier phase; receivers are mutually phase-coherent while each
packet carries an unknown common phase and optionally a common timing
offset.  A constant base delay models the receivers' sampling offset
relative to the (unsynchronized) transmitters and places the impulse
response away from time-domain tap zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import Area, ScenarioGeometry, SPEED_OF_LIGHT, default_geometry
from .datamodel import Dataset
from ._validation import as_float_array, check_nonnegative, check_positive, freeze

MIN_SCATTER_CLEARANCE = 0.01  # m; reject targets collocated with antennas/transmitters

# fixed per-component RNG stream keys so that environment, packet schedule,
# packet phases and noise are independent and reproducible
_STREAM_ENV, _STREAM_SCHEDULE, _STREAM_PACKET, _STREAM_NOISE = range(4)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(stream))))


@dataclass(frozen=True)
class SimConfig:
    """Simulation knobs; deterministic under a fixed seed."""

    geometry: ScenarioGeometry = field(default_factory=default_geometry)
    area: Area = field(default_factory=Area)
    clutter_paths_per_tx: int = 6
    target_gain: float = 0.1
    noise_std: float = 1e-3
    phase_random: bool = True
    timing_jitter_std: float = 0.0
    packet_rate_per_tx: float = 25.0
    base_delay_s: float = 1.5e-6
    seed: int = 0

    def __post_init__(self):
        if self.clutter_paths_per_tx < 0:
            raise ValueError("clutter_paths_per_tx must be >= 0")
        check_nonnegative(self.noise_std, "noise_std")
        check_nonnegative(self.timing_jitter_std, "timing_jitter_std")
        check_nonnegative(self.target_gain, "target_gain")
        check_positive(self.packet_rate_per_tx, "packet_rate_per_tx")
        check_nonnegative(self.base_delay_s, "base_delay_s")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.to_dict()
        d["area"] = self.area.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "geometry" in d:
            d["geometry"] = ScenarioGeometry.from_dict(d["geometry"])
        if "area" in d:
            d["area"] = Area.from_dict(d["area"])
        return cls(**d)


@dataclass(frozen=True)
class Trajectory:
    """Target path samples: strictly increasing times, fixed-height positions."""

    times: np.ndarray
    positions: np.ndarray  # (n, 3)

    def __post_init__(self):
        object.__setattr__(self, "times", freeze(as_float_array(self.times, "times")))
        object.__setattr__(
            self, "positions", freeze(as_float_array(self.positions, "positions", (len(self.times), 3)))
        )
        if len(self.times) and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def at(self, t) -> np.ndarray:
        """Linear interpolation of the position at times `t`."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(t), 3))
        for k in range(3):
            out[:, k] = np.interp(t, self.times, self.positions[:, k])
        return out

    def arc_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0), axis=1)))


def generate_trajectory(
    seed: int,
    duration: float,
    area: Area = Area(),
    speed: float = 0.4,
    sample_rate: float = 100.0,
    margin: float = 0.3,
    turn_std: float = 0.8,
    max_turn_rate: float = 2.0,
) -> Trajectory:
    """Smooth constant-speed random walk with reflecting boundaries.

    The heading performs a clipped Gaussian random walk (turn rate bounded
    by `max_turn_rate` rad/s); positions stay inside the area inset by
    `margin`.  speed = 0 degenerates to a stationary target.
    """
    check_positive(duration, "duration")
    check_nonnegative(speed, "speed")
    check_positive(sample_rate, "sample_rate")
    lo = np.array([area.x_min + margin, area.y_min + margin])
    hi = np.array([area.x_max - margin, area.y_max - margin])
    if np.any(hi <= lo):
        raise ValueError("area too small for the requested margin")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 100)))
    dt = 1.0 / sample_rate
    n = int(np.floor(duration * sample_rate)) + 1
    xy = np.empty((n, 2))
    xy[0] = rng.uniform(lo, hi)
    heading = rng.uniform(0.0, 2 * np.pi)
    max_step_turn = max_turn_rate * dt
    for i in range(1, n):
        heading += float(np.clip(turn_std * np.sqrt(dt) * rng.standard_normal(), -max_step_turn, max_step_turn))
        p = xy[i - 1] + speed * dt * np.array([np.cos(heading), np.sin(heading)])
        for k in range(2):
            if p[k] < lo[k]:
                p[k] = 2 * lo[k] - p[k]
                heading = np.pi - heading if k == 0 else -heading
            elif p[k] > hi[k]:
                p[k] = 2 * hi[k] - p[k]
                heading = np.pi - heading if k == 0 else -heading
        xy[i] = p
    times = np.arange(n) * dt
    positions = np.concatenate([xy, np.full((n, 1), area.height)], axis=1)
    return Trajectory(times=times, positions=positions)


class ClutterEnvironment:
    """Fixed specular scatterers per transmitter plus the direct paths.

    Scatterer positions are a pure function of the config seed, so repeated
    construction yields the identical static environment.
    """

    def __init__(self, config: SimConfig):
        g = config.geometry
        rng = _rng(config.seed, _STREAM_ENV)
        lo = np.array([config.area.x_min + 0.2, config.area.y_min + 0.2, 0.0])
        hi = np.array([config.area.x_max - 0.2, config.area.y_max - 0.2, 3.0])
        ant = g.antenna_positions().reshape(-1, 3)
        obstacles = np.concatenate([ant, g.tx_positions], axis=0)
        scatterers = np.zeros((g.n_tx, config.clutter_paths_per_tx, 3))
        for t in range(g.n_tx):
            for p in range(config.clutter_paths_per_tx):
                while True:
                    cand = rng.uniform(lo, hi)
                    if np.min(np.linalg.norm(obstacles - cand, axis=1)) > 0.1:
                        scatterers[t, p] = cand
                        break
        self.config = config
        self.scatterer_positions = freeze(scatterers)
        self._antennas = ant
        self._freqs = g.subcarrier_freqs_hz()
        self._static = None

    def static_response(self, tx: int) -> np.ndarray:
        """Noise/phase-free static channel for transmitter `tx` (1-based),
        shape (B, M_r, M_c, N_sub) complex128."""
        if self._static is None:
            g = self.config.geometry
            resp = np.zeros((g.n_tx, len(self._antennas), g.n_subcarriers), dtype=np.complex128)
            for t in range(g.n_tx):
                src = g.tx_positions[t]
                resp[t] = bistatic_response(src, None, self._antennas, self._freqs, self.config.base_delay_s)
                for p in range(self.config.clutter_paths_per_tx):
                    resp[t] += bistatic_response(
                        src, self.scatterer_positions[t, p], self._antennas, self._freqs, self.config.base_delay_s
                    )
            self._static = freeze(resp.reshape((g.n_tx,) + g.csi_shape))
        return self._static[tx - 1]

    def target_response(self, tx: int, target_pos) -> np.ndarray:
        """Noise/phase-free scattered-path channel for one target position."""
        g = self.config.geometry
        target_pos = as_float_array(target_pos, "target_pos", (3,))
        d_ant = np.linalg.norm(self._antennas - target_pos, axis=1)
        d_tx = np.linalg.norm(g.tx_positions - target_pos, axis=1)
        if d_ant.min() < MIN_SCATTER_CLEARANCE or d_tx.min() < MIN_SCATTER_CLEARANCE:
            raise ValueError("target collocated with an antenna or transmitter")
        resp = self.config.target_gain * bistatic_response(
            g.tx_positions[tx - 1], target_pos, self._antennas, self._freqs, self.config.base_delay_s
        )
        return resp.reshape(g.csi_shape)


def bistatic_response(src, via, antennas, freqs, extra_delay=0.0) -> np.ndarray:
    """Complex channel response of one propagation path.

    Direct path when `via` is None, else src -> via -> antenna.  Amplitude
    is the reciprocal of the product of leg distances; the delay maps to
    phase exp(-2j pi f tau) at the absolute subcarrier frequencies.
    Returns (n_antennas, n_freqs) complex128.
    """
    src = np.asarray(src, dtype=float)
    antennas = np.asarray(antennas, dtype=float)
    if via is None:
        dist = np.linalg.norm(antennas - src, axis=1)
        amp = 1.0 / dist
        tau = dist / SPEED_OF_LIGHT + extra_delay
    else:
        via = np.asarray(via, dtype=float)
        d1 = np.linalg.norm(via - src)
        d2 = np.linalg.norm(antennas - via, axis=1)
        amp = 1.0 / (d1 * d2)
        tau = (d1 + d2) / SPEED_OF_LIGHT + extra_delay
    return amp[:, None] * np.exp(-2j * np.pi * freqs[None, :] * tau[:, None])


def synthesize_target_response(config: SimConfig, target_pos, tx: int) -> np.ndarray:
    """Deterministic target-only channel (no clutter, noise or packet phase)."""
    return ClutterEnvironment(config).target_response(tx, target_pos)


def synthesize_csi(
    config: SimConfig,
    target_pos,
    tx: int,
    rng: np.random.Generator | None = None,
    environment: ClutterEnvironment | None = None,
) -> np.ndarray:
    """One packet's CSI array (B, M_r, M_c, N_sub), complex64.

    Draws the per-packet common phase, timing offset and noise from `rng`
    (in that order); with phase randomization off, zero jitter and zero
    noise the output is the pure static+target response and repeated calls
    are identical.
    """
    g = config.geometry
    if not 1 <= tx <= g.n_tx:
        raise ValueError(f"tx must be in [1, {g.n_tx}]")
    env = environment if environment is not None else ClutterEnvironment(config)
    h = env.static_response(tx) + env.target_response(tx, target_pos)
    if rng is None:
        rng = _rng(config.seed, _STREAM_PACKET)
    if config.phase_random:
        h = h * np.exp(1j * rng.uniform(0.0, 2 * np.pi))
    if config.timing_jitter_std > 0:
        tau = rng.normal(0.0, config.timing_jitter_std)
        delta_f = g.subcarrier_freqs_hz() - g.carrier_freq_hz
        h = h * np.exp(-2j * np.pi * tau * delta_f)[None, None, None, :]
    if config.noise_std > 0:
        scale = config.noise_std / np.sqrt(2.0)
        noise = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
        h = h + scale * noise
    return h.astype(np.complex64)


def simulate_dataset(config: SimConfig, trajectory: Trajectory, chunk_size: int = 2048) -> Dataset:
    """Simulate Poisson-scheduled packets from every transmitter along a trajectory.

    Packet counts follow a Poisson process at `packet_rate_per_tx` per
    transmitter over the trajectory duration; each packet is labeled with
    the interpolated target position.  The result is time-sorted and
    bit-reproducible for a fixed seed.
    """
    g = config.geometry
    duration = trajectory.duration
    if duration <= 0:
        raise ValueError("trajectory must span a positive duration")
    t0 = float(trajectory.times[0])

    sched = _rng(config.seed, _STREAM_SCHEDULE)
    times_per_tx = []
    for _ in range(g.n_tx):
        count = sched.poisson(config.packet_rate_per_tx * duration)
        times_per_tx.append(np.sort(sched.uniform(0.0, duration, size=count)) + t0)

    all_times = np.concatenate(times_per_tx)
    all_tx = np.concatenate([np.full(len(t), i + 1, dtype=np.uint32) for i, t in enumerate(times_per_tx)])
    order = np.argsort(all_times, kind="stable")
    all_times, all_tx = all_times[order], all_tx[order]
    L = len(all_times)
    positions = trajectory.at(all_times)

    env = ClutterEnvironment(config)
    ant = g.antenna_positions().reshape(-1, 3)
    freqs = g.subcarrier_freqs_hz()
    delta_f = freqs - g.carrier_freq_hz
    n_ant = len(ant)

    pk = _rng(config.seed, _STREAM_PACKET)
    phases = pk.uniform(0.0, 2 * np.pi, size=L) if config.phase_random else np.zeros(L)
    jitters = (
        pk.normal(0.0, config.timing_jitter_std, size=L)
        if config.timing_jitter_std > 0
        else np.zeros(L)
    )
    noise_rng = _rng(config.seed, _STREAM_NOISE)

    csi = np.empty((L, n_ant, g.n_subcarriers), dtype=np.complex64)
    for tx in range(1, g.n_tx + 1):
        idx = np.flatnonzero(all_tx == tx)
        static = env.static_response(tx).reshape(n_ant, g.n_subcarriers)
        src = g.tx_positions[tx - 1]
        for start in range(0, len(idx), chunk_size):
            sel = idx[start : start + chunk_size]
            via = positions[sel]
            d1 = np.linalg.norm(via - src, axis=1)
            d2 = np.linalg.norm(ant[None, :, :] - via[:, None, :], axis=2)
            if d2.min() < MIN_SCATTER_CLEARANCE or d1.min() < MIN_SCATTER_CLEARANCE:
                raise ValueError("target collocated with an antenna or transmitter")
            amp = config.target_gain / (d1[:, None] * d2)
            tau = (d1[:, None] + d2) / SPEED_OF_LIGHT + config.base_delay_s
            h = amp[:, :, None] * np.exp(-2j * np.pi * tau[:, :, None] * freqs[None, None, :])
            h += static[None, :, :]
            factor = np.exp(1j * phases[sel])[:, None] * np.exp(
                -2j * np.pi * jitters[sel][:, None] * delta_f[None, :]
            )
            h *= factor[:, None, :]
            if config.noise_std > 0:
                scale = config.noise_std / np.sqrt(2.0)
                h += scale * (noise_rng.standard_normal(h.shape) + 1j * noise_rng.standard_normal(h.shape))
            csi[sel] = h.astype(np.complex64)

    return Dataset(g, csi.reshape((L,) + g.csi_shape), positions, all_times, all_tx)


def standard_scenario(seed: int = 7, duration: float = 600.0, speed: float = 0.4) -> tuple:
    """Reference synthetic scenario: paper-scale geometry, 10-minute walk.

    Returns (SimConfig, Trajectory).
    """
    config = SimConfig(seed=seed)
    trajectory = generate_trajectory(seed=seed, duration=duration, area=config.area, speed=speed)
    return config, trajectory
