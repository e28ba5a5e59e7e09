"""Evaluation protocol and experiment sweeps.

Every evaluation step scores the policy action, the brute-force optimum and a
uniform random action on the same channel realization, taking all three from
one reward table so ``policy <= optimal`` holds exactly.  The environment's
random stream is not touched by actions, so evaluations with the same test seed
see the same channel sequence regardless of the policy being scored.

Noise ratios are power ratios in dB: a component ``v`` receives additive
Gaussian noise with standard deviation ``|v| * 10**(ratio_db / 20)``.  ``None``
disables the noise.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baseline import brute_force, random_policy
from .env import ConfigError, EnvConfig, V2XEnv, normalize_observation
from .nn import ShapeError
from .policy import CompositeNet
from .train import TrainConfig, run_training

log = logging.getLogger(__name__)

FIGURES = ("fig2", "fig3", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10")


@dataclass
class ExperimentSpec:
    figure: str = "fig2"
    mode: str = "real"                     # real | binary | none
    n_feedback: int = 3                    # N_k
    n_bits: int = 12                       # N_b, bits per feedback value (binary mode)
    batch_size: int = 512
    feedback_interval: int = 1             # F
    input_noise_db: float | None = None
    feedback_noise_db: float | None = None
    train_seed: int = 0
    test_seeds: list = field(default_factory=lambda: [1000])
    episodes: int | None = None            # training episodes; None -> train config
    steps_per_episode: int | None = None   # training steps; None -> train config
    test_episodes: int = 100
    test_steps: int = 100
    trace_episode: int | None = None       # record per-link rates of this test episode

    def __post_init__(self):
        if self.figure not in FIGURES:
            raise ConfigError(f"unknown figure {self.figure!r}; expected one of {FIGURES}")
        if self.mode not in ("real", "binary", "none"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.feedback_interval < 1:
            raise ConfigError("feedback interval must be >= 1")
        if self.mode == "binary" and self.n_bits < 1:
            raise ConfigError("binary mode needs n_bits >= 1")
        if self.mode != "none" and self.n_feedback < 1:
            raise ConfigError("feedback modes need n_feedback >= 1; use mode 'none' for zero")
        self.test_seeds = list(self.test_seeds)

    @property
    def bits_per_link(self) -> int:
        return self.n_feedback * self.n_bits if self.mode == "binary" else 0

    @property
    def feedback_width(self) -> int:
        return {"real": self.n_feedback, "binary": self.bits_per_link, "none": 0}[self.mode]

    def train_config(self, base: TrainConfig) -> TrainConfig:
        return replace(base, mode=self.mode, n_feedback=max(self.n_feedback, 1),
                       n_bits=max(self.bits_per_link, 1), batch_size=self.batch_size,
                       episodes=self.episodes if self.episodes is not None else base.episodes,
                       steps_per_episode=(self.steps_per_episode if self.steps_per_episode is not None
                                          else base.steps_per_episode))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EvalReport:
    policy_returns: np.ndarray
    optimal_returns: np.ndarray
    random_returns: np.ndarray
    episode_seeds: np.ndarray
    link_rates: np.ndarray | None = None     # (T, K) bits/s of the traced episode

    @property
    def arp(self) -> float:
        return arp(self.policy_returns, self.optimal_returns)

    @property
    def random_arp(self) -> float:
        return arp(self.random_returns, self.optimal_returns)

    @property
    def normalized_policy(self) -> np.ndarray:
        return self.policy_returns / self.optimal_returns

    @property
    def normalized_random(self) -> np.ndarray:
        return self.random_returns / self.optimal_returns

    def arp_by_seed(self) -> dict[int, float]:
        return {int(s): arp(self.policy_returns[self.episode_seeds == s],
                            self.optimal_returns[self.episode_seeds == s])
                for s in np.unique(self.episode_seeds)}


def arp(policy_returns, optimal_returns) -> float:
    """Average return percentage: mean policy return over mean optimal return, x100."""
    p = np.asarray(policy_returns, dtype=float)
    o = np.asarray(optimal_returns, dtype=float)
    if p.shape != o.shape or p.size == 0:
        raise ValueError("need equal-length, non-empty return lists")
    denom = o.mean()
    if denom == 0:
        raise ZeroDivisionError("optimal mean return is zero")
    return float(100.0 * p.mean() / denom)


def add_input_noise(observation, ratio_db, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise proportional to each raw (dB-domain) component."""
    v = np.asarray(observation, dtype=float)
    if ratio_db is None or ratio_db == -math.inf:
        return v
    std = np.abs(v) * 10.0 ** (ratio_db / 20.0)
    return v + std * rng.standard_normal(v.shape)


def add_feedback_noise(feedback, ratio_db, rng: np.random.Generator) -> np.ndarray:
    """Same additive model as the input noise, applied to what reaches the Q-network."""
    return add_input_noise(feedback, ratio_db, rng)


def _check_compat(composite: CompositeNet | None, env_cfg: EnvConfig, spec: ExperimentSpec):
    if spec.mode == "none":
        return
    if composite is None:
        raise ShapeError("feedback modes need a trained policy")
    if (composite.n_links, composite.n_channels) != (env_cfg.n_links, env_cfg.n_channels):
        raise ShapeError("policy K/N differ from the environment")
    if composite.mode != spec.mode or composite.feedback_width != spec.feedback_width:
        raise ShapeError(f"policy feedback ({composite.mode}, width {composite.feedback_width}) "
                         f"incompatible with spec ({spec.mode}, width {spec.feedback_width})")


def evaluate(composite: CompositeNet | None, env_cfg: EnvConfig, spec: ExperimentSpec,
             compute_optimal: bool = True) -> EvalReport:
    """Greedy (epsilon = 0) test episodes over every test seed of ``spec``.

    With ``compute_optimal=False`` the optimal and random returns are NaN and
    only policy returns are meaningful (used by the feedback-interval study).
    """
    _check_compat(composite, env_cfg, spec)
    K, N = env_cfg.n_links, env_cfg.n_channels
    F = spec.feedback_interval
    pol, opt, rnd, seeds = [], [], [], []
    trace = None
    ep_counter = 0
    for seed in spec.test_seeds:
        env_ss, noise_ss, rand_ss, pol_ss = np.random.SeedSequence(seed).spawn(4)
        env = V2XEnv(env_cfg, np.random.default_rng(env_ss))
        noise_rng = np.random.default_rng(noise_ss)
        rand_rng = np.random.default_rng(rand_ss)
        pol_rng = np.random.default_rng(pol_ss)
        for _ in range(spec.test_episodes):
            env.reset()
            p_ret = o_ret = r_ret = 0.0
            tracing = spec.trace_episode is not None and ep_counter == spec.trace_episode
            rates = []
            q = None
            for t in range(spec.test_steps):
                if spec.mode == "none":
                    action = random_policy(pol_rng, K, N)
                else:
                    if t % F == 0:
                        raw = add_input_noise(env.observe(), spec.input_noise_db, noise_rng)
                        fb = composite.feedback(normalize_observation(raw))
                        fb = add_feedback_noise(fb, spec.feedback_noise_db, noise_rng)
                        q = composite.q_from_feedback(fb)
                    action = int(np.argmax(q))
                if compute_optimal:
                    table = brute_force(env.realization, env_cfg, keep_table=True).reward_table
                    p_ret += table[action]
                    o_ret += table.max()
                    r_ret += table[random_policy(rand_rng, K, N)]
                out = env.step_action(action)
                if not compute_optimal:
                    p_ret += out.reward
                if tracing:
                    rates.append(out.per_link_rate)
            if tracing:
                trace = np.array(rates)
            if not compute_optimal:
                o_ret = r_ret = math.nan
            pol.append(p_ret)
            opt.append(o_ret)
            rnd.append(r_ret)
            seeds.append(seed)
            ep_counter += 1
    return EvalReport(np.array(pol), np.array(opt), np.array(rnd), np.array(seeds), trace)


@dataclass
class IntervalReport:
    report: EvalReport
    reference: EvalReport

    @property
    def normalized_return(self) -> float:
        return float(self.report.policy_returns.mean() / self.reference.policy_returns.mean())


def run_interval_eval(composite: CompositeNet, env_cfg: EnvConfig, spec: ExperimentSpec,
                      reference: EvalReport | None = None) -> IntervalReport:
    """Evaluate with stale feedback every ``spec.feedback_interval`` steps.

    The return is normalized by the same policy with fresh feedback every step
    on the same test seeds; no brute-force search is run.
    """
    report = evaluate(composite, env_cfg, spec, compute_optimal=False)
    if spec.feedback_interval == 1:
        return IntervalReport(report, report)
    if reference is None:
        reference = evaluate(composite, env_cfg, replace(spec, feedback_interval=1),
                             compute_optimal=False)
    return IntervalReport(report, reference)


# --------------------------------------------------------------------------- sweeps

CSV_COLUMNS = {
    "fig2": ["spec", "test_seed", "episode", "policy_return", "optimal_return", "random_return",
             "policy_normalized", "optimal_normalized", "random_normalized"],
    "fig3": ["spec", "step", "link", "rate_bps"],
    "fig5": ["spec", "batch_size", "n_feedback", "arp", "random_arp"],
    "fig6": ["spec", "batch_size", "n_feedback", "bits_per_value", "total_bits", "arp", "random_arp"],
    "fig7": ["spec", "total_bits", "test_seed", "average_return", "arp"],
    "fig8": ["spec", "mode", "feedback_interval", "normalized_return"],
    "fig9": ["spec", "mode", "input_noise_db", "arp", "random_arp"],
    "fig10": ["spec", "mode", "feedback_noise_db", "arp", "random_arp"],
}

CSV_NAMES = {
    "fig2": "fig2_return_comparison.csv",
    "fig3": "fig3_link_rates.csv",
    "fig5": "fig5_arp_vs_real_feedback.csv",
    "fig6": "fig6_arp_vs_feedback_bits.csv",
    "fig7": "fig7_testing_seeds.csv",
    "fig8": "fig8_feedback_interval.csv",
    "fig9": "fig9_input_noise.csv",
    "fig10": "fig10_feedback_noise.csv",
}

# (x column, y column, group column, title)
PLOT_LAYOUT = {
    "fig2": ("episode", "policy_normalized", "spec", "Normalized return per test episode"),
    "fig3": ("step", "rate_bps", "link", "Rate per V2V link"),
    "fig5": ("n_feedback", "arp", "batch_size", "ARP vs real feedback"),
    "fig6": ("total_bits", "arp", "batch_size", "ARP vs feedback bits"),
    "fig7": ("total_bits", "arp", "test_seed", "ARP vs testing seeds"),
    "fig8": ("feedback_interval", "normalized_return", "mode", "Normalized return vs feedback interval"),
    "fig9": ("input_noise_db", "arp", "mode", "ARP vs noisy input"),
    "fig10": ("feedback_noise_db", "arp", "mode", "ARP vs noisy feedback"),
}

PLOT_TEMPLATE = '''"""Plot {csv_name}; reads only the CSV next to this script."""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
series = defaultdict(list)
with open(here / "{csv_name}", newline="") as fh:
    for row in csv.DictReader(fh):
        x = row["{x}"]
        series[row["{group}"]].append((float("nan") if x == "off" else float(x), float(row["{y}"])))

fig, ax = plt.subplots()
for name, pts in sorted(series.items()):
    pts.sort()
    ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label="{group}=" + name)
ax.set_xlabel("{x}")
ax.set_ylabel("{y}")
ax.set_title("{title}")
ax.legend()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else here / "{stem}.png", dpi=150)
'''


def expand_experiments(entries: list[dict]) -> list[ExperimentSpec]:
    """Cartesian expansion of list-valued keys (``test_seeds`` is always a list)."""
    specs = []
    for entry in entries:
        keys = [k for k, v in entry.items() if isinstance(v, list) and k != "test_seeds"]
        for combo in itertools.product(*(entry[k] for k in keys)):
            d = dict(entry)
            d.update(zip(keys, combo))
            if d.get("mode") != "none" and d.get("n_feedback", 1) == 0:
                d["mode"] = "none"
            if d.get("mode") == "binary" and d.get("n_bits", 1) == 0:
                d["mode"] = "none"
            specs.append(ExperimentSpec.from_dict(d))
    return specs


def _fmt(v) -> str:
    if v is None:
        return "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _spec_label(spec: ExperimentSpec) -> str:
    parts = [spec.mode]
    if spec.mode == "real":
        parts.append(f"nk{spec.n_feedback}")
    elif spec.mode == "binary":
        parts.append(f"nk{spec.n_feedback}b{spec.n_bits}")
    parts.append(f"D{spec.batch_size}")
    if spec.feedback_interval != 1:
        parts.append(f"F{spec.feedback_interval}")
    if spec.input_noise_db is not None:
        parts.append(f"in{spec.input_noise_db:g}dB")
    if spec.feedback_noise_db is not None:
        parts.append(f"fb{spec.feedback_noise_db:g}dB")
    parts.append(f"s{spec.train_seed}")
    return "-".join(parts)


class PolicyCache:
    """Trains each distinct (mode, widths, batch, seed, budget) policy once."""

    def __init__(self, env_cfg: EnvConfig, train_cfg: TrainConfig, checkpoint_root=None):
        self.env_cfg, self.train_cfg = env_cfg, train_cfg
        self.checkpoint_root = Path(checkpoint_root) if checkpoint_root else None
        self._cache: dict = {}

    def get(self, spec: ExperimentSpec) -> CompositeNet | None:
        if spec.mode == "none":
            return None
        cfg = spec.train_config(self.train_cfg)
        key = (cfg.mode, cfg.n_feedback, cfg.n_bits, cfg.batch_size, spec.train_seed,
               cfg.episodes, cfg.steps_per_episode)
        if key not in self._cache:
            log.info("training %s", key)
            result = run_training(self.env_cfg, cfg, seed=spec.train_seed)
            self._cache[key] = result.composite
            if self.checkpoint_root is not None:
                name = "-".join(str(k) for k in key)
                result.composite.save(self.checkpoint_root / name)
        return self._cache[key]


def _rows_for(spec: ExperimentSpec, label: str, composite, env_cfg: EnvConfig,
              interval_refs: dict) -> list[list]:
    fig = spec.figure
    if fig == "fig8":
        ref_key = (id(composite), tuple(spec.test_seeds), spec.test_episodes, spec.test_steps,
                   spec.input_noise_db, spec.feedback_noise_db)
        rep = run_interval_eval(composite, env_cfg, spec, interval_refs.get(ref_key))
        interval_refs[ref_key] = rep.reference
        return [[label, spec.mode, spec.feedback_interval, rep.normalized_return]]
    rep = evaluate(composite, env_cfg, spec)
    if fig == "fig2":
        return [[label, int(s), i, p, o, r, p / o, 1.0, r / o]
                for i, (s, p, o, r) in enumerate(zip(rep.episode_seeds, rep.policy_returns,
                                                     rep.optimal_returns, rep.random_returns))]
    if fig == "fig3":
        if rep.link_rates is None:
            raise ConfigError("fig3 experiments need trace_episode set")
        return [[label, t, k, float(v)] for t, row in enumerate(rep.link_rates)
                for k, v in enumerate(row)]
    if fig == "fig5":
        n = spec.n_feedback if spec.mode != "none" else 0
        return [[label, spec.batch_size, n, rep.arp, rep.random_arp]]
    if fig == "fig6":
        bits = spec.n_bits if spec.mode == "binary" else 0
        return [[label, spec.batch_size, spec.n_feedback, bits, spec.bits_per_link,
                 rep.arp, rep.random_arp]]
    if fig == "fig7":
        rows = []
        for s, a in rep.arp_by_seed().items():
            mask = rep.episode_seeds == s
            rows.append([label, spec.bits_per_link, s, float(rep.policy_returns[mask].mean()), a])
        return rows
    if fig == "fig9":
        return [[label, spec.mode, spec.input_noise_db, rep.arp, rep.random_arp]]
    if fig == "fig10":
        return [[label, spec.mode, spec.feedback_noise_db, rep.arp, rep.random_arp]]
    raise ConfigError(f"unhandled figure {fig}")


def sweep(specs: list[ExperimentSpec], env_cfg: EnvConfig, train_cfg: TrainConfig,
          out_dir, checkpoint_root=None, policies: PolicyCache | None = None) -> list[Path]:
    """Train/evaluate every spec; write one CSV and one plot script per figure present."""
    if not specs:
        return []
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    policies = policies or PolicyCache(env_cfg, train_cfg, checkpoint_root)
    rows: dict[str, list] = {}
    interval_refs: dict = {}
    for spec in specs:
        label = _spec_label(spec)
        log.info("evaluating %s (%s)", label, spec.figure)
        composite = policies.get(spec)
        rows.setdefault(spec.figure, []).extend(
            _rows_for(spec, label, composite, env_cfg, interval_refs))
    written = []
    for fig in FIGURES:
        if fig not in rows:
            continue
        path = out_dir / CSV_NAMES[fig]
        try:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(CSV_COLUMNS[fig])
                for row in rows[fig]:
                    w.writerow([_fmt(v) for v in row])
            x, y, group, title = PLOT_LAYOUT[fig]
            script = out_dir / f"plot_{path.stem}.py"
            script.write_text(PLOT_TEMPLATE.format(csv_name=path.name, x=x, y=y, group=group,
                                                   title=title, stem=path.stem))
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc
        written.append(path)
    return written
