"""Per-link feedback encoders, the base-station Q-network, and the joint action codec.

Joint actions are base-N integers: digit ``k`` (least significant first) is the
channel of D2D pair ``k``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import DenseLayer, Identity, Network, ShapeError, SignSTE

MODES = ("real", "binary", "none")
ENCODER_HIDDEN = (16, 32, 16)
QNET_HIDDEN = (1200, 800, 600)


def make_encoder(obs_dim: int, n_feedback: int, mode: str, n_bits: int,
                 rng: np.random.Generator, hidden=ENCODER_HIDDEN) -> Network:
    sizes = [obs_dim, *hidden, n_feedback]
    net = Network.build(sizes, ["relu"] * len(hidden) + ["linear"], rng)
    if mode == "binary":
        net.layers.append(DenseLayer.init(n_feedback, n_bits, "tanh", rng))
        net.layers.append(SignSTE())
    return net


def make_qnet(n_in: int, n_actions: int, rng: np.random.Generator, hidden=QNET_HIDDEN) -> Network:
    sizes = [n_in, *hidden, n_actions]
    return Network.build(sizes, ["relu"] * len(hidden) + ["linear"], rng)


def encode(encoder: Network, observation, mode: str = "real") -> np.ndarray:
    """Feedback vector of one link from its normalized observation."""
    if mode not in ("real", "binary"):
        raise ValueError(f"cannot encode in mode {mode!r}")
    return encoder(observation)


def q_values(qnet: Network, feedbacks) -> np.ndarray:
    state = np.concatenate([np.asarray(f, dtype=float).ravel() for f in feedbacks])
    if state.shape[0] != qnet.n_in:
        raise ShapeError(f"feedback width {state.shape[0]} != Q-network input {qnet.n_in}")
    return qnet(state)


def action_decode(index: int, n_links: int, n_channels: int) -> np.ndarray:
    """Joint action index -> K x N one-hot allocation."""
    return _one_hot(action_channels(index, n_links, n_channels), n_channels)


def action_channels(index: int, n_links: int, n_channels: int) -> np.ndarray:
    index = int(index)
    if not 0 <= index < n_channels ** n_links:
        raise ValueError(f"action {index} outside [0, {n_channels ** n_links})")
    return np.array([(index // n_channels ** k) % n_channels for k in range(n_links)])


def action_encode(allocation) -> int:
    rho = np.asarray(allocation)
    if rho.ndim != 2 or not np.all(rho.sum(axis=1) == 1):
        raise ValueError("allocation rows must be one-hot")
    n_channels = rho.shape[1]
    channels = rho.argmax(axis=1)
    return int(sum(int(c) * n_channels ** k for k, c in enumerate(channels)))


def all_joint_channels(n_links: int, n_channels: int) -> np.ndarray:
    """Channel choices of every joint action, shape (N**K, K), row i = decode(i)."""
    idx = np.arange(n_channels ** n_links)
    return np.stack([(idx // n_channels ** k) % n_channels for k in range(n_links)], axis=1)


def _one_hot(channels, n_channels):
    rho = np.zeros((len(channels), n_channels))
    rho[np.arange(len(channels)), channels] = 1.0
    return rho


class CompositeNet:
    """K encoders feeding one Q-network, plus a frozen target copy of all of them."""

    def __init__(self, n_links: int, n_channels: int, mode: str = "real",
                 n_feedback: int = 3, n_bits: int = 36,
                 rng: np.random.Generator | int | None = None,
                 encoder_hidden=ENCODER_HIDDEN, qnet_hidden=QNET_HIDDEN,
                 _networks=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "binary" and n_bits < 1:
            raise ValueError("binary mode needs at least one bit per link")
        if mode != "none" and n_feedback < 1:
            raise ValueError("feedback modes need at least one feedback value")
        self.n_links, self.n_channels, self.mode = n_links, n_channels, mode
        self.n_feedback, self.n_bits = n_feedback, n_bits
        self.encoder_hidden, self.qnet_hidden = tuple(encoder_hidden), tuple(qnet_hidden)
        self.encoders: list[Network] = []
        self.qnet: Network | None = None
        if mode != "none":
            if _networks is not None:
                self.encoders, self.qnet = _networks
            else:
                rng = np.random.default_rng(rng)
                obs_dim = 2 * n_channels + 1
                self.encoders = [make_encoder(obs_dim, n_feedback, mode, n_bits, rng, encoder_hidden)
                                 for _ in range(n_links)]
                self.qnet = make_qnet(n_links * self.feedback_width, self.n_actions, rng, qnet_hidden)
        self.target_encoders = [e.copy() for e in self.encoders]
        self.target_qnet = self.qnet.copy() if self.qnet is not None else None

    @property
    def n_actions(self) -> int:
        return self.n_channels ** self.n_links

    @property
    def feedback_width(self) -> int:
        return {"real": self.n_feedback, "binary": self.n_bits, "none": 0}[self.mode]

    def parameters(self) -> list[np.ndarray]:
        nets = [*self.encoders, self.qnet] if self.qnet is not None else []
        return [p for net in nets for p in net.parameters()]

    def target_parameters(self) -> list[np.ndarray]:
        nets = [*self.target_encoders, self.target_qnet] if self.target_qnet is not None else []
        return [p for net in nets for p in net.parameters()]

    def _nets(self, target: bool):
        if self.mode == "none":
            raise RuntimeError("mode 'none' has no networks; the BS acts randomly")
        return (self.target_encoders, self.target_qnet) if target else (self.encoders, self.qnet)

    def _check_obs(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 2
        if single:
            obs = obs[None]
        if obs.shape[1:] != (self.n_links, 2 * self.n_channels + 1):
            raise ShapeError(f"observation batch shape {obs.shape} incompatible with K={self.n_links}, "
                             f"N={self.n_channels}")
        return obs, single

    def feedback(self, obs, target: bool = False) -> np.ndarray:
        """Feedback of every link: (K, w) for one joint observation or (B, K, w) for a batch."""
        encoders, _ = self._nets(target)
        obs, single = self._check_obs(obs)
        fb = np.stack([enc(obs[:, k]) for k, enc in enumerate(encoders)], axis=1)
        return fb[0] if single else fb

    def q_from_feedback(self, feedback, target: bool = False) -> np.ndarray:
        _, qnet = self._nets(target)
        fb = np.asarray(feedback, dtype=np.float64)
        return qnet(fb.reshape(*fb.shape[:-2], -1))

    def q_values(self, obs, target: bool = False) -> np.ndarray:
        return self.q_from_feedback(self.feedback(obs, target), target)

    def forward(self, obs):
        """Online Q-values of a batch (B, K, 2N+1) with a cache for :meth:`backward`."""
        encoders, qnet = self._nets(False)
        obs, _ = self._check_obs(obs)
        enc_out, enc_caches = [], []
        for k, enc in enumerate(encoders):
            y, c = enc.forward(obs[:, k])
            enc_out.append(y)
            enc_caches.append(c)
        q, q_cache = qnet.forward(np.concatenate(enc_out, axis=1))
        return q, (enc_caches, q_cache)

    def backward(self, cache, grad_q) -> list[np.ndarray]:
        """Gradients aligned with :meth:`parameters`, flowing through every encoder."""
        enc_caches, q_cache = cache
        q_grads, grad_fb = self.qnet.backward(q_cache, grad_q)
        w = self.feedback_width
        enc_grads = []
        for k, (enc, c) in enumerate(zip(self.encoders, enc_caches)):
            g, _ = enc.backward(c, grad_fb[:, k * w:(k + 1) * w])
            enc_grads.extend(g)
        return enc_grads + q_grads

    def sync_target(self) -> "CompositeNet":
        for dst, src in zip(self.target_parameters(), self.parameters(), strict=True):
            np.copyto(dst, src)
        return self

    def smooth_surrogate(self) -> "CompositeNet":
        """Copy with every sign layer replaced by identity (for gradient checks)."""
        swap = lambda net: Network([Identity() if isinstance(l, SignSTE) else l
                                    for l in net.copy().layers])
        return CompositeNet(self.n_links, self.n_channels, self.mode, self.n_feedback, self.n_bits,
                            encoder_hidden=self.encoder_hidden, qnet_hidden=self.qnet_hidden,
                            _networks=([swap(e) for e in self.encoders], self.qnet.copy()))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": "v2xshare-checkpoint", "version": 1,
            "n_links": self.n_links, "n_channels": self.n_channels, "mode": self.mode,
            "n_feedback": self.n_feedback, "n_bits": self.n_bits,
            "feedback_width": self.feedback_width,
            "encoder_hidden": list(self.encoder_hidden), "qnet_hidden": list(self.qnet_hidden),
            "files": {},
        }
        if self.mode != "none":
            files = {}
            for k in range(self.n_links):
                files[f"encoder_{k}"] = f"encoder_{k}.txt"
                files[f"target_encoder_{k}"] = f"target_encoder_{k}.txt"
                self.encoders[k].save(directory / files[f"encoder_{k}"])
                self.target_encoders[k].save(directory / files[f"target_encoder_{k}"])
            files["qnet"], files["target_qnet"] = "qnet.txt", "target_qnet.txt"
            self.qnet.save(directory / "qnet.txt")
            self.target_qnet.save(directory / "target_qnet.txt")
            manifest["files"] = files
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> "CompositeNet":
        directory = Path(directory)
        m = json.loads((directory / "manifest.json").read_text())
        if m.get("format") != "v2xshare-checkpoint":
            raise ValueError(f"{directory}: not a checkpoint directory")
        kwargs = dict(encoder_hidden=m["encoder_hidden"], qnet_hidden=m["qnet_hidden"])
        if m["mode"] == "none":
            return cls(m["n_links"], m["n_channels"], "none", m["n_feedback"], m["n_bits"], **kwargs)
        f = m["files"]
        encoders = [Network.load(directory / f[f"encoder_{k}"]) for k in range(m["n_links"])]
        net = cls(m["n_links"], m["n_channels"], m["mode"], m["n_feedback"], m["n_bits"],
                  _networks=(encoders, Network.load(directory / f["qnet"])), **kwargs)
        net.target_encoders = [Network.load(directory / f[f"target_encoder_{k}"])
                               for k in range(m["n_links"])]
        net.target_qnet = Network.load(directory / f["target_qnet"])
        return net


def greedy_action(composite: CompositeNet, observations) -> int:
    """Argmax joint action for one normalized joint observation (K, 2N+1); lowest index on ties."""
    return int(np.argmax(composite.q_values(observations)))


def sync_target(composite: CompositeNet) -> CompositeNet:
    return composite.sync_target()
