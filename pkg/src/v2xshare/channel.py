"""Link-gain generation: pathloss, correlated log-normal shadowing, Rayleigh fading.

All functions are pure given an explicit ``numpy.random.Generator`` and accept
numpy arrays where that is natural, so the environment can realize every link
of a step in a handful of vectorized calls.

V2V pathloss follows the WINNER II B1 line-of-sight model (two slopes)::

    d'_BP = 4 * (h_tx - 1) * (h_rx - 1) * f_c / c
    PL    = 22.7 log10(d) + 41.0 + 20 log10(f_c / 5 GHz)                 d <  d'_BP
    PL    = 40 log10(d) + 9.45 - 17.3 log10(h_tx - 1) - 17.3 log10(h_rx - 1)
            + 2.7 log10(f_c / 5 GHz)                                      d >= d'_BP

with ``d`` in metres, clamped below at ``MIN_DISTANCE_M``.  With 1.5 m antennas
and 2 GHz the breakpoint is about 6.67 m and the two branches meet within
0.01 dB, the far branch being the larger, so the curve is non-decreasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
MIN_DISTANCE_M = 3.0

V2I_DECORRELATION_M = 50.0
V2V_DECORRELATION_M = 10.0
V2I_SHADOW_STD_DB = 8.0
V2V_SHADOW_STD_DB = 3.0


class Position(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class ShadowState:
    """Shadowing value(s) of one link class; ``value_db`` may be an array."""

    value_db: np.ndarray | float
    decorrelation_distance: float
    std_dev: float


@dataclass(frozen=True)
class LinkGain:
    pathloss_db: np.ndarray | float
    shadow_db: np.ndarray | float
    fast_fading_power: np.ndarray | float
    composite_linear: np.ndarray | float


def pathloss_v2i(distance_km):
    """Macro-cell V2I pathloss in dB for a vehicle-to-BS distance in km."""
    d = np.asarray(distance_km, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise ValueError(f"V2I distance must be positive and finite, got {distance_km!r}")
    pl = 128.1 + 37.6 * np.log10(d)
    return float(pl) if pl.ndim == 0 else pl


def b1_los_pathloss(distance_m, carrier_ghz: float = 2.0,
                    h_tx: float = 1.5, h_rx: float = 1.5):
    """WINNER II B1 LoS pathloss in dB for distance(s) in metres."""
    d = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M)
    h_tx_eff = h_tx - 1.0
    h_rx_eff = h_rx - 1.0
    d_bp = 4.0 * h_tx_eff * h_rx_eff * carrier_ghz * 1e9 / SPEED_OF_LIGHT
    f_term = math.log10(carrier_ghz / 5.0)
    near = 22.7 * np.log10(d) + 41.0 + 20.0 * f_term
    far = (40.0 * np.log10(d) + 9.45 - 17.3 * math.log10(h_tx_eff)
           - 17.3 * math.log10(h_rx_eff) + 2.7 * f_term)
    pl = np.where(d < d_bp, near, far)
    return float(pl) if pl.ndim == 0 else pl


def pathloss_v2v(tx, rx, carrier_ghz: float = 2.0,
                 h_tx: float = 1.5, h_rx: float = 1.5):
    """B1 LoS pathloss between two positions (or arrays of positions, last axis xy)."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    d = np.hypot(tx[..., 0] - rx[..., 0], tx[..., 1] - rx[..., 1])
    return b1_los_pathloss(d, carrier_ghz, h_tx, h_rx)


def update_shadowing(state: ShadowState, moved_distance, rng: np.random.Generator) -> ShadowState:
    """Advance a Gauss-Markov shadowing process by ``moved_distance`` metres.

    The innovation is scaled so that Normal(0, std_dev**2) is stationary.
    """
    moved = np.asarray(moved_distance, dtype=float)
    if np.any(moved < 0):
        raise ValueError("moved distance must be non-negative")
    a = np.exp(-moved / state.decorrelation_distance)
    old = np.asarray(state.value_db, dtype=float)
    z = rng.standard_normal(np.broadcast_shapes(old.shape, a.shape))
    new = a * old + np.sqrt(1.0 - a * a) * state.std_dev * z
    if new.ndim == 0:
        new = float(new)
    return ShadowState(new, state.decorrelation_distance, state.std_dev)


def initial_shadowing(shape, decorrelation_distance: float, std_dev: float,
                      rng: np.random.Generator) -> ShadowState:
    """Draw shadowing from its stationary distribution."""
    return ShadowState(std_dev * rng.standard_normal(shape), decorrelation_distance, std_dev)


def sample_fast_fading(rng: np.random.Generator, size=None):
    """Rayleigh fading power |h|^2 with h ~ CN(0, 1); exponential with unit mean."""
    re = rng.standard_normal(size)
    im = rng.standard_normal(size)
    return (re * re + im * im) / 2.0


def composite_gain(pathloss_db, shadow_db, fast_power):
    """Linear power gain ``10^(-(PL + S)/10) * |h|^2``."""
    return 10.0 ** (-(np.asarray(pathloss_db) + np.asarray(shadow_db)) / 10.0) * fast_power


def link_gain(pathloss_db, shadow_db, fast_power) -> LinkGain:
    return LinkGain(pathloss_db, shadow_db, fast_power,
                    composite_gain(pathloss_db, shadow_db, fast_power))
