"""Mode discovery, top-k score, goodness-of-fit and oracle accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import SeededRng
from .envs.enumerate import DEFAULT_LIMIT, TerminalDistribution, enumerate_terminals
from .gfn import exact_policy_distribution, sample_trajectories


def _batch_best(env, batch):
    """Max realized reward per object key within one batch, in sorted key order."""
    best = {}
    for t in batch:
        k = env.key(t.terminal)
        r = float(t.terminal_reward)
        if k not in best or r > best[k]:
            best[k] = r
    return sorted(best.items())


@dataclass
class ModeTracker:
    """Counts distinct objects whose reward clears ``threshold`` on first sighting.

    An object is judged by the best reward it shows in the batch where it first
    appears, so the count does not depend on the order within a batch.
    """

    threshold: float
    seen: set = field(default_factory=set)
    discovered: set = field(default_factory=set)
    history: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.discovered)

    def update(self, env, batch) -> int:
        new = 0
        for key, reward in _batch_best(env, batch):
            if key in self.seen:
                continue
            self.seen.add(key)
            if reward >= self.threshold:
                self.discovered.add(key)
                new += 1
        self.history.append(self.count)
        return new


@dataclass
class TopKTracker:
    """The ``k`` highest-reward unique objects seen so far."""

    k: int = 100
    best: dict = field(default_factory=dict)

    def update(self, env, batch) -> None:
        for key, reward in _batch_best(env, batch):
            if key in self.best:
                self.best[key] = max(self.best[key], reward)
            elif len(self.best) < self.k:
                self.best[key] = reward
            else:
                worst = min(self.best, key=lambda kk: (self.best[kk], repr(kk)))
                if reward > self.best[worst]:
                    del self.best[worst]
                    self.best[key] = reward

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.best.values()))) if self.best else 0.0


def record_round(modes: ModeTracker, topk: TopKTracker, env, batch):
    """Fold a batch of sampled trajectories into both trackers."""
    modes.update(env, batch)
    topk.update(env, batch)
    return modes, topk


@dataclass
class FitReport:
    l1_distance: float
    relative_mean_error: float
    sample_count: int


def fit_report(target: TerminalDistribution, estimate: dict, sample_count=0) -> FitReport:
    """Compare an estimated terminal distribution (``key -> prob``) with the target."""
    index = target.index()
    p_hat = np.zeros(len(target))
    for key, p in estimate.items():
        p_hat[index[key]] += p
    l1 = float(np.abs(p_hat - target.probs).sum())
    mu_star = float(target.probs @ target.rewards)
    mu_hat = float(p_hat @ target.rewards)
    return FitReport(l1, abs(mu_hat - mu_star) / mu_star, int(sample_count))


def empirical_distribution(env, model, n_samples, rng: SeededRng, chunk=10_000) -> dict:
    """Frequencies of terminal keys over ``n_samples`` exploration-free rollouts."""
    counts: dict = {}
    remaining = n_samples
    while remaining > 0:
        m = min(chunk, remaining)
        for t in sample_trajectories(env, model, m, 0.0, rng):
            k = env.key(t.terminal)
            counts[k] = counts.get(k, 0) + 1
        remaining -= m
    return {k: c / n_samples for k, c in counts.items()}


def goodness_of_fit(env, model, n_samples=0, rng=None, exact=True, target=None,
                    limit=DEFAULT_LIMIT) -> FitReport:
    """L1 distance and relative mean error of the sampler against ``R^beta / Z``.

    ``exact=True`` uses the dynamic-programming marginal of P_F; otherwise
    ``n_samples`` rollouts with exploration off.
    """
    target = target if target is not None else enumerate_terminals(env, limit=limit)
    if exact:
        return fit_report(target, exact_policy_distribution(env, model, limit), 0)
    rng = rng if rng is not None else SeededRng(0, stream=0xE7A1)
    return fit_report(target, empirical_distribution(env, model, n_samples, rng), n_samples)


def oracle_report(oracle) -> tuple[int, int]:
    return oracle.terminal_calls, oracle.intermediate_calls
