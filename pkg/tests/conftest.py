import sys

import numpy as np
import pytest

from v2xshare.channel import link_gain
from v2xshare.env import ChannelRealization, EnvConfig


def fixed_realization(h, cross, g_cue, g_bs=None) -> ChannelRealization:
    """Realization whose composite gains are exactly the given arrays."""
    h, cross, g_cue = (np.asarray(a, dtype=float) for a in (h, cross, g_cue))
    g_bs = np.ones(g_cue.shape[0]) if g_bs is None else np.asarray(g_bs, dtype=float)
    lg = lambda a: link_gain(np.zeros_like(a), np.zeros_like(a), a)
    return ChannelRealization(lg(h), lg(cross), lg(g_cue), lg(g_bs))


def random_realization(rng: np.random.Generator, K: int, N: int) -> ChannelRealization:
    """Gains spanning realistic magnitudes (1e-11 .. 1e-5)."""
    scale = lambda *s: 10.0 ** rng.uniform(-11, -5, s)
    return fixed_realization(scale(K, N), scale(K, K, N), scale(N, K), scale(N))


@pytest.fixture
def unit_config():
    """1 W transmit powers, 1e-10 W noise, 1 Hz bandwidth."""
    return EnvConfig(n_links=2, n_channels=2, v2v_power_dbm=30.0, v2i_power_dbm=30.0,
                     noise_power_dbm=-70.0, bandwidth_hz=1.0)


def central_difference(loss_fn, params, h=1e-5, coords=None):
    """Central-difference gradient of ``loss_fn()`` w.r.t. arrays in ``params`` (perturbed in place).

    ``coords`` optionally restricts each array to a list of flat indices; the
    result then holds only those entries.
    """
    out = []
    for i, p in enumerate(params):
        flat = p.reshape(-1)
        idx = range(flat.size) if coords is None else coords[i]
        g = np.empty(len(idx))
        for j, c in enumerate(idx):
            old = flat[c]
            flat[c] = old + h
            up = loss_fn()
            flat[c] = old - h
            down = loss_fn()
            flat[c] = old
            g[j] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a, b) -> float:
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def pytest_terminal_summary(terminalreporter):
    """Print the per-criterion lines collected by test_acceptance."""
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
