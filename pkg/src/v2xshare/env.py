"""V2X world: vehicle drop and grid mobility, per-step channels, rates and observations.

Vehicle index layout inside a :class:`Topology` is fixed: D2D transmitters
``0..K-1``, D2D receivers ``K..2K-1``, CUEs ``2K..2K+N-1``.  CUE ``n`` owns
uplink channel ``n``.

Each D2D receiver follows its transmitter along the same path at a fixed
along-road lag (same speed, same turns), so the pair separation never exceeds
the pairing radius.

Observation rows are ``[gain_db x N, interference_dbm x N, power_dbm]`` in the
raw dB domain; :func:`normalize_observation` maps them to network inputs.
"""

from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import channel
from .channel import LinkGain, ShadowState


class ConfigError(ValueError):
    pass


class AllocationError(ValueError):
    pass


@dataclass
class EnvConfig:
    n_links: int = 4                       # K, D2D pairs
    n_channels: int = 4                    # N, CUEs / channels
    area_width_m: float = 1299.0
    area_height_m: float = 750.0
    grid_blocks_x: int = 3
    grid_blocks_y: int = 3
    turn_probability: float = 0.4
    speed_range_kmh: tuple[float, float] = (10.0, 15.0)
    dt_s: float = 0.1
    pairing_radius_m: float = 50.0
    min_pair_distance_m: float = 10.0
    drop_radius_m: float | None = 100.0    # D2D transmitters dropped near a common anchor; None = whole grid
    carrier_ghz: float = 2.0
    bs_height_m: float = 25.0
    vehicle_height_m: float = 1.5
    bs_antenna_gain_dbi: float = 8.0
    vehicle_antenna_gain_dbi: float = 3.0
    bs_noise_figure_db: float = 5.0
    vehicle_noise_figure_db: float = 9.0
    v2v_power_dbm: float = 10.0
    v2i_power_dbm: float = 23.0
    noise_power_dbm: float = -114.0
    bandwidth_hz: float = 1e6
    v2i_shadow_std_db: float = channel.V2I_SHADOW_STD_DB
    v2v_shadow_std_db: float = channel.V2V_SHADOW_STD_DB
    v2i_decorrelation_m: float = channel.V2I_DECORRELATION_M
    v2v_decorrelation_m: float = channel.V2V_DECORRELATION_M

    def __post_init__(self):
        self.speed_range_kmh = tuple(self.speed_range_kmh)
        if self.n_links < 1 or self.n_channels < 1:
            raise ConfigError("need at least one D2D pair and one channel")
        if self.dt_s <= 0 or self.bandwidth_hz <= 0:
            raise ConfigError("dt and bandwidth must be positive")
        shortest_road = min(self.area_width_m, self.area_height_m)
        if not 0 < self.min_pair_distance_m <= self.pairing_radius_m < shortest_road / 2:
            raise ConfigError(
                f"pairing radius {self.pairing_radius_m} m infeasible: need "
                f"0 < min_pair_distance <= radius < {shortest_road / 2} m")
        if self.drop_radius_m is not None and self.drop_radius_m <= 0:
            raise ConfigError("drop radius must be positive or None")

    @property
    def obs_dim(self) -> int:
        return 2 * self.n_channels + 1

    @property
    def n_actions(self) -> int:
        return self.n_channels ** self.n_links

    @property
    def bs_position(self) -> np.ndarray:
        return np.array([self.area_width_m / 2, self.area_height_m / 2])

    @property
    def v2v_power_w(self) -> float:
        return dbm_to_watt(self.v2v_power_dbm)

    @property
    def v2i_power_w(self) -> float:
        return dbm_to_watt(self.v2i_power_dbm)

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watt(self.noise_power_dbm)

    @property
    def v2v_budget_loss_db(self) -> float:
        # antenna gains and receiver noise figure folded into the link loss
        return self.vehicle_noise_figure_db - 2 * self.vehicle_antenna_gain_dbi

    @property
    def v2i_budget_loss_db(self) -> float:
        return self.bs_noise_figure_db - self.vehicle_antenna_gain_dbi - self.bs_antenna_gain_dbi

    @classmethod
    def from_dict(cls, data: dict | None) -> "EnvConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown env config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speed_range_kmh"] = list(self.speed_range_kmh)
        return d


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


# --------------------------------------------------------------------------- mobility

@dataclass
class Topology:
    positions: np.ndarray        # (V, 2) metres
    headings: np.ndarray         # (V, 2) unit grid vectors
    speeds_kmh: np.ndarray       # (V,)
    n_links: int
    n_channels: int
    bs_position: np.ndarray
    plans: list = field(default_factory=list)   # per-vehicle deque of (x, y, hx, hy) turns to replay

    @property
    def tx(self) -> np.ndarray:
        return self.positions[: self.n_links]

    @property
    def rx(self) -> np.ndarray:
        return self.positions[self.n_links: 2 * self.n_links]

    @property
    def cues(self) -> np.ndarray:
        return self.positions[2 * self.n_links:]

    def follower_of(self, v: int) -> int | None:
        return v + self.n_links if v < self.n_links else None

    def copy(self) -> "Topology":
        return copy.deepcopy(self)


def road_coordinates(config: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(0.0, config.area_width_m, config.grid_blocks_x + 1)
    ys = np.linspace(0.0, config.area_height_m, config.grid_blocks_y + 1)
    return xs, ys


def _random_lane_point(config: EnvConfig, rng: np.random.Generator):
    xs, ys = road_coordinates(config)
    horizontal_len = len(ys) * config.area_width_m
    vertical_len = len(xs) * config.area_height_m
    if rng.random() < horizontal_len / (horizontal_len + vertical_len):
        pos = np.array([rng.uniform(0, config.area_width_m), ys[rng.integers(len(ys))]])
        heading = np.array([1.0, 0.0])
    else:
        pos = np.array([xs[rng.integers(len(xs))], rng.uniform(0, config.area_height_m)])
        heading = np.array([0.0, 1.0])
    if rng.random() < 0.5:
        heading = -heading
    return pos, heading


def _in_area(p, config: EnvConfig, tol: float = 1e-9) -> bool:
    return (-tol <= p[0] <= config.area_width_m + tol
            and -tol <= p[1] <= config.area_height_m + tol)


def drop_vehicles(config: EnvConfig, rng: np.random.Generator) -> Topology:
    """Place K D2D pairs and N CUEs on the lane grid."""
    K, N = config.n_links, config.n_channels
    V = 2 * K + N
    positions = np.zeros((V, 2))
    headings = np.zeros((V, 2))
    speeds = np.zeros(V)

    anchor = None
    if config.drop_radius_m is not None:
        anchor, _ = _random_lane_point(config, rng)

    for k in range(K):
        for _ in range(100_000):
            pos, heading = _random_lane_point(config, rng)
            if anchor is None or np.hypot(*(pos - anchor)) <= config.drop_radius_m:
                break
        else:
            raise ConfigError(f"could not drop a transmitter within {config.drop_radius_m} m of the anchor")
        lag = rng.uniform(config.min_pair_distance_m, config.pairing_radius_m)
        rx_pos = pos - heading * lag
        if not _in_area(rx_pos, config):
            heading = -heading
            rx_pos = pos - heading * lag
        speed = rng.uniform(*config.speed_range_kmh)
        positions[k], headings[k], speeds[k] = pos, heading, speed
        positions[K + k], headings[K + k], speeds[K + k] = rx_pos, heading, speed

    for n in range(N):
        pos, heading = _random_lane_point(config, rng)
        positions[2 * K + n], headings[2 * K + n] = pos, heading
        speeds[2 * K + n] = rng.uniform(*config.speed_range_kmh)

    return Topology(positions, headings, speeds, K, N, config.bs_position,
                    plans=[deque() for _ in range(V)])


def _distance_to_next_intersection(pos, heading, xs, ys, eps=1e-9):
    axis = 0 if heading[0] != 0 else 1
    coords = xs if axis == 0 else ys
    here = pos[axis]
    if heading[axis] > 0:
        ahead = coords[coords > here + eps]
        return (ahead[0] - here) if len(ahead) else math.inf, axis
    ahead = coords[coords < here - eps]
    return (here - ahead[-1]) if len(ahead) else math.inf, axis


def _turn_options(pos, heading, config: EnvConfig):
    """Allowed (heading, weight) pairs at an intersection; straight, left, right."""
    straight = heading
    left = np.array([-heading[1], heading[0]])
    right = np.array([heading[1], -heading[0]])
    step = 1.0
    opts = []
    for h, w in ((straight, 1.0 - config.turn_probability),
                 (left, config.turn_probability / 2),
                 (right, config.turn_probability / 2)):
        if _in_area(pos + step * h, config, tol=0.0):
            opts.append((h, w))
    if not opts:
        opts.append((-heading, 1.0))
    return opts


def move_vehicles(topology: Topology, config: EnvConfig, dt: float,
                  rng: np.random.Generator) -> tuple[Topology, np.ndarray]:
    """Advance every vehicle by ``speed * dt`` along the grid.

    Returns the new topology and the per-vehicle path length travelled.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    topo = topology.copy()
    xs, ys = road_coordinates(config)
    travelled = topo.speeds_kmh / 3.6 * dt
    for v in range(len(topo.positions)):
        pos = topo.positions[v]
        heading = topo.headings[v]
        remaining = travelled[v]
        follower = topo.follower_of(v)
        plan = topo.plans[v]
        while remaining > 0:
            dist, axis = _distance_to_next_intersection(pos, heading, xs, ys)
            if remaining < dist:
                pos = pos + heading * remaining
                break
            pos = pos + heading * dist
            pos[axis] = (xs if axis == 0 else ys)[np.argmin(np.abs((xs if axis == 0 else ys) - pos[axis]))]
            remaining -= dist
            if plan and abs(plan[0][0] - pos[0]) < 1e-6 and abs(plan[0][1] - pos[1]) < 1e-6:
                heading = np.array(plan.popleft()[2:])
            else:
                opts = _turn_options(pos, heading, config)
                is_rx = topo.n_links <= v < 2 * topo.n_links
                # receivers go straight unless replaying their transmitter's turn
                if not (is_rx and any(np.array_equal(h, heading) for h, _ in opts)):
                    w = np.array([o[1] for o in opts])
                    heading = opts[rng.choice(len(opts), p=w / w.sum())][0].copy()
            if follower is not None:
                topo.plans[follower].append((pos[0], pos[1], heading[0], heading[1]))
        topo.positions[v] = pos
        topo.headings[v] = heading
    return topo, travelled


# --------------------------------------------------------------------------- channels

@dataclass
class Shadows:
    direct: ShadowState    # (K,)
    cross: ShadowState     # (K, K) tx l -> rx k
    cue_rx: ShadowState    # (N, K)
    cue_bs: ShadowState    # (N,)


@dataclass
class ChannelRealization:
    direct: LinkGain       # h_k^n, (K, N)
    cross: LinkGain        # h_{l,k}^n, (K, K, N); diagonal unused
    cue_rx: LinkGain       # g^n_k, (N, K)
    cue_bs: LinkGain       # g_n, (N,) diagnostics only

    @property
    def h(self) -> np.ndarray:
        return self.direct.composite_linear

    @property
    def h_cross(self) -> np.ndarray:
        return self.cross.composite_linear

    @property
    def g_cue(self) -> np.ndarray:
        return self.cue_rx.composite_linear

    @property
    def g_bs(self) -> np.ndarray:
        return self.cue_bs.composite_linear


def initial_shadows(config: EnvConfig, rng: np.random.Generator) -> Shadows:
    K, N = config.n_links, config.n_channels
    v2v = (config.v2v_decorrelation_m, config.v2v_shadow_std_db)
    v2i = (config.v2i_decorrelation_m, config.v2i_shadow_std_db)
    return Shadows(
        direct=channel.initial_shadowing((K,), *v2v, rng),
        cross=channel.initial_shadowing((K, K), *v2v, rng),
        cue_rx=channel.initial_shadowing((N, K), *v2v, rng),
        cue_bs=channel.initial_shadowing((N,), *v2i, rng),
    )


def _pathlosses(topology: Topology, config: EnvConfig):
    tx, rx, cues = topology.tx, topology.rx, topology.cues
    pl = lambda a, b: channel.pathloss_v2v(a, b, config.carrier_ghz,
                                           config.vehicle_height_m, config.vehicle_height_m)
    direct = pl(tx, rx) + config.v2v_budget_loss_db
    cross = pl(tx[:, None, :], rx[None, :, :]) + config.v2v_budget_loss_db
    cue_rx = pl(cues[:, None, :], rx[None, :, :]) + config.v2v_budget_loss_db
    dz = config.bs_height_m - config.vehicle_height_m
    d_bs = np.sqrt(np.sum((cues - topology.bs_position) ** 2, axis=1) + dz * dz) / 1000.0
    cue_bs = np.atleast_1d(channel.pathloss_v2i(d_bs)) + config.v2i_budget_loss_db
    return direct, cross, cue_rx, cue_bs


def realize_channels(topology: Topology, shadows: Shadows, config: EnvConfig,
                     rng: np.random.Generator, travelled: np.ndarray | None = None
                     ) -> tuple[ChannelRealization, Shadows]:
    """Evolve shadowing by the distance moved and draw fresh fast fading.

    ``travelled`` is the per-vehicle path length of the last move; a link's
    shadowing advances by the sum of its endpoints' displacements.  ``None``
    keeps shadowing unchanged (used for the first realization of an episode).
    """
    K, N = config.n_links, config.n_channels
    if travelled is not None:
        t_tx, t_rx, t_cue = travelled[:K], travelled[K:2 * K], travelled[2 * K:]
        shadows = Shadows(
            direct=channel.update_shadowing(shadows.direct, t_tx + t_rx, rng),
            cross=channel.update_shadowing(shadows.cross, t_tx[:, None] + t_rx[None, :], rng),
            cue_rx=channel.update_shadowing(shadows.cue_rx, t_cue[:, None] + t_rx[None, :], rng),
            cue_bs=channel.update_shadowing(shadows.cue_bs, t_cue, rng),
        )
    pl_direct, pl_cross, pl_cue_rx, pl_cue_bs = _pathlosses(topology, config)
    f_direct = channel.sample_fast_fading(rng, (K, N))
    f_cross = channel.sample_fast_fading(rng, (K, K, N))
    f_cue_rx = channel.sample_fast_fading(rng, (N, K))
    f_cue_bs = channel.sample_fast_fading(rng, (N,))
    realization = ChannelRealization(
        direct=channel.link_gain(pl_direct[:, None], shadows.direct.value_db[:, None], f_direct),
        cross=channel.link_gain(pl_cross[:, :, None], shadows.cross.value_db[:, :, None], f_cross),
        cue_rx=channel.link_gain(pl_cue_rx, shadows.cue_rx.value_db, f_cue_rx),
        cue_bs=channel.link_gain(pl_cue_bs, shadows.cue_bs.value_db, f_cue_bs),
    )
    return realization, shadows


# --------------------------------------------------------------------------- rates

def validate_allocation(allocation, n_links: int, n_channels: int) -> np.ndarray:
    rho = np.asarray(allocation)
    if rho.shape != (n_links, n_channels):
        raise AllocationError(f"allocation shape {rho.shape} != {(n_links, n_channels)}")
    if not np.all((rho == 0) | (rho == 1)) or not np.all(rho.sum(axis=1) == 1):
        raise AllocationError("every D2D pair must select exactly one channel")
    return rho.astype(float)


def allocation_from_channels(channels, n_channels: int) -> np.ndarray:
    channels = np.asarray(channels, dtype=int)
    rho = np.zeros((len(channels), n_channels))
    rho[np.arange(len(channels)), channels] = 1.0
    return rho


def interference_matrix(allocation, realization: ChannelRealization,
                        config: EnvConfig) -> np.ndarray:
    """I_k^n for every (k, n) in watts, shape (K, N)."""
    rho = validate_allocation(allocation, config.n_links, config.n_channels)
    K = config.n_links
    cross = realization.h_cross * (1.0 - np.eye(K))[:, :, None]
    v2v = config.v2v_power_w * np.einsum("ln,lkn->kn", rho, cross)
    return v2v + config.v2i_power_w * realization.g_cue.T


def rate_matrix(allocation, realization: ChannelRealization, config: EnvConfig) -> np.ndarray:
    """r_k^n in bits/s, shape (K, N); zero where the pair is not on channel n."""
    rho = validate_allocation(allocation, config.n_links, config.n_channels)
    interf = interference_matrix(rho, realization, config)
    sinr = rho * config.v2v_power_w * realization.h / (interf + config.noise_power_w)
    return config.bandwidth_hz * np.log2(1.0 + sinr)


def interference(k: int, n: int, allocation, realization: ChannelRealization,
                 config: EnvConfig) -> float:
    return float(interference_matrix(allocation, realization, config)[k, n])


def rate(k: int, n: int, allocation, realization: ChannelRealization,
         config: EnvConfig) -> float:
    return float(rate_matrix(allocation, realization, config)[k, n])


def sum_rates_for_channels(channels: np.ndarray, realization: ChannelRealization,
                           config: EnvConfig) -> np.ndarray:
    """Reward of many joint channel choices at once; ``channels`` has shape (M, K)."""
    c = np.asarray(channels, dtype=int)
    K = config.n_links
    links = np.arange(K)
    signal = config.v2v_power_w * realization.h[links, c]                  # (M, K)
    # cross[m, l, k] = h_{l,k} on the victim k's channel
    cross = realization.h_cross[links[:, None], links[None, :], c[:, None, :]]
    same = (c[:, :, None] == c[:, None, :]) & ~np.eye(K, dtype=bool)
    interf = config.v2v_power_w * np.sum(same * cross, axis=1)
    interf += config.v2i_power_w * realization.g_cue[c, links]
    sinr = signal / (interf + config.noise_power_w)
    return config.bandwidth_hz * np.log2(1.0 + sinr).sum(axis=1)


# --------------------------------------------------------------------------- observations

GAIN_SHIFT_DB, GAIN_SCALE_DB = 120.0, 60.0
INTERF_SHIFT_DB, INTERF_SCALE_DB = 120.0, 60.0
POWER_SCALE_DB = 23.0


@dataclass
class Observation:
    gains_db: np.ndarray          # (N,)
    interference_dbm: np.ndarray  # (N,)
    power_dbm: float

    def raw(self) -> np.ndarray:
        return np.concatenate([self.gains_db, self.interference_dbm, [self.power_dbm]])

    def normalized(self) -> np.ndarray:
        return normalize_observation(self.raw())


def normalize_observation(raw: np.ndarray) -> np.ndarray:
    """Affine dB-domain scaling; works on any array whose last axis is 2N+1."""
    raw = np.asarray(raw, dtype=float)
    N = (raw.shape[-1] - 1) // 2
    out = np.empty_like(raw)
    out[..., :N] = (raw[..., :N] + GAIN_SHIFT_DB) / GAIN_SCALE_DB
    out[..., N:2 * N] = (raw[..., N:2 * N] + INTERF_SHIFT_DB) / INTERF_SCALE_DB
    out[..., 2 * N] = raw[..., 2 * N] / POWER_SCALE_DB
    return out


def observe_all(realization: ChannelRealization, last_allocation,
                config: EnvConfig) -> np.ndarray:
    """Raw observations of every link, shape (K, 2N+1)."""
    interf = interference_matrix(last_allocation, realization, config)
    K = config.n_links
    return np.concatenate([
        10.0 * np.log10(realization.h),
        10.0 * np.log10(interf) + 30.0,
        np.full((K, 1), config.v2v_power_dbm),
    ], axis=1)


def build_observation(k: int, realization: ChannelRealization, last_allocation,
                      config: EnvConfig) -> Observation:
    raw = observe_all(realization, last_allocation, config)[k]
    N = config.n_channels
    return Observation(raw[:N], raw[N:2 * N], float(raw[2 * N]))


# --------------------------------------------------------------------------- environment

@dataclass
class StepOutcome:
    per_link_rate: np.ndarray   # (K,) bits/s
    reward: float               # bits/s
    observations: np.ndarray    # (K, 2N+1) raw, from the next realization
    rates: np.ndarray           # (K, N)


class V2XEnv:
    """Single-threaded simulator instance owning its RNG, topology and shadowing."""

    def __init__(self, config: EnvConfig, rng: np.random.Generator | int | None = None):
        self.config = config
        self.rng = np.random.default_rng(rng)
        self.topology: Topology | None = None
        self.shadows: Shadows | None = None
        self.realization: ChannelRealization | None = None
        self.last_allocation: np.ndarray | None = None

    def reset(self, rng: np.random.Generator | int | None = None) -> np.ndarray:
        """Drop a fresh set of vehicles and return the initial raw observations."""
        if rng is not None:
            self.rng = np.random.default_rng(rng)
        cfg = self.config
        self.topology = drop_vehicles(cfg, self.rng)
        self.shadows = initial_shadows(cfg, self.rng)
        self.realization, self.shadows = realize_channels(self.topology, self.shadows, cfg, self.rng)
        channels = self.rng.integers(cfg.n_channels, size=cfg.n_links)
        self.last_allocation = allocation_from_channels(channels, cfg.n_channels)
        return self.observe()

    def observe(self) -> np.ndarray:
        return observe_all(self.realization, self.last_allocation, self.config)

    def step(self, allocation) -> StepOutcome:
        """Score ``allocation`` on the current channels, then move and re-realize."""
        cfg = self.config
        rho = validate_allocation(allocation, cfg.n_links, cfg.n_channels)
        rates = rate_matrix(rho, self.realization, cfg)
        per_link = rates.sum(axis=1)
        self.topology, travelled = move_vehicles(self.topology, cfg, cfg.dt_s, self.rng)
        self.realization, self.shadows = realize_channels(
            self.topology, self.shadows, cfg, self.rng, travelled)
        self.last_allocation = rho
        return StepOutcome(per_link, float(per_link.sum()), self.observe(), rates)

    def step_action(self, action: int) -> StepOutcome:
        from .policy import action_decode
        return self.step(action_decode(action, self.config.n_links, self.config.n_channels))
