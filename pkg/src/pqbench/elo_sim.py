"""Simulation harness for validating the Elo rating engine.

Synthetic populations carry hidden ground-truth scores; simulated raters
choose between two items with the logistic probability implied by the truth
scores, which automatically makes the preference transitive and consistent
with the true order.  Convergence is measured as the Spearman correlation
between live Elo scores and the ground truth, sampled at fixed judgement
checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .benchmark import srcc
from .elo import EloConfig, EloState, JudgementRecord, expected_probability

__all__ = [
    "Population",
    "ConvergenceCurve",
    "ExpandabilityResult",
    "make_population",
    "simulate_judgement",
    "run_simulation",
    "run_expandability",
]


@dataclass(frozen=True)
class Population:
    """Items with hidden ground-truth scores and the truth-model scale."""

    items: tuple[tuple[str, float], ...]
    truth_m: float = 400.0

    def __post_init__(self):
        ids = [item_id for item_id, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate item ids in population")
        if self.truth_m <= 0:
            raise ValueError("truth_m must be positive")

    @property
    def ids(self) -> list[str]:
        return [item_id for item_id, _ in self.items]

    @property
    def truths(self) -> np.ndarray:
        return np.array([truth for _, truth in self.items], dtype=np.float64)

    def truth_of(self) -> dict[str, float]:
        return dict(self.items)

    def merged(self, other: "Population") -> "Population":
        overlap = set(self.ids) & set(other.ids)
        if overlap:
            raise ValueError(f"item ids collide: {sorted(overlap)[:5]}")
        if other.truth_m != self.truth_m:
            raise ValueError("populations use different truth scales")
        return Population(items=self.items + other.items, truth_m=self.truth_m)


@dataclass(frozen=True)
class ConvergenceCurve:
    """(judgement count, Spearman vs truth) checkpoints, strictly increasing."""

    checkpoints: tuple[tuple[int, float], ...]

    def __post_init__(self):
        counts = [n for n, _ in self.checkpoints]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError("checkpoint judgement counts must strictly increase")

    @property
    def final_srcc(self) -> float:
        return self.checkpoints[-1][1]

    def first_reaching(self, threshold: float) -> int | None:
        """Judgement count of the first checkpoint at or above the threshold."""
        for count, value in self.checkpoints:
            if value >= threshold:
                return count
        return None

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["judgements", "srcc"])
            for count, value in self.checkpoints:
                writer.writerow([count, f"{value:.6f}"])


def make_population(
    n: int,
    seed: int,
    score_spread: float = 400.0,
    truth_m: float = 400.0,
    id_prefix: str = "item",
) -> Population:
    """Draw ``n`` items with normal ground-truth scores around 1400.

    The default spread of 400 (one probability scale unit) makes a random
    pair decisively ordered more often than not, the regime in which pairing
    similarly-scored items pays off.  Exact ties (measure zero, but guarded
    anyway) are perturbed so the truth induces a strict total order.
    """
    if n < 2:
        raise ValueError(f"population needs at least 2 items, got {n}")
    rng = np.random.default_rng(seed)
    truths = rng.normal(1400.0, score_spread, size=n)
    while len(np.unique(truths)) != n:
        values, counts = np.unique(truths, return_counts=True)
        for value in values[counts > 1]:
            dupes = np.nonzero(truths == value)[0][1:]
            truths[dupes] += rng.normal(0.0, 1e-9, size=len(dupes))
    items = tuple((f"{id_prefix}-{i:04d}", float(truths[i])) for i in range(n))
    return Population(items=items, truth_m=truth_m)


def simulate_judgement(
    pop: Population, item_a: str, item_b: str, rng: np.random.Generator
) -> str:
    """One simulated rater choice under the logistic truth model."""
    if item_a == item_b:
        raise ValueError("cannot compare an item with itself")
    truth = pop.truth_of()
    p_a = expected_probability(truth[item_a], truth[item_b], pop.truth_m)
    return item_a if rng.random() < p_a else item_b


class _Simulator:
    """Drives one Elo state against simulated raters; reused across phases."""

    def __init__(self, pop: Population, config: EloConfig, seed: int, strategy: str):
        self.pop = pop
        self.truth = pop.truth_of()
        self.state = EloState(config)
        for item_id in pop.ids:
            self.state.register_item(item_id, "default")
        self.rng = np.random.default_rng(seed)
        self.strategy = strategy
        self.judgements = 0

    def extend_population(self, added: Population) -> None:
        self.pop = self.pop.merged(added)
        self.truth = self.pop.truth_of()
        for item_id in added.ids:
            self.state.register_item(item_id, "default")

    def step(self) -> None:
        item_a, item_b = self.state.next_pair(strategy=self.strategy, rng=self.rng)
        p_a = expected_probability(self.truth[item_a], self.truth[item_b], self.pop.truth_m)
        winner = item_a if self.rng.random() < p_a else item_b
        self.judgements += 1
        self.state.apply(
            JudgementRecord(
                seq=self.judgements,
                item_a=item_a,
                item_b=item_b,
                winner=winner,
                rater_id="sim",
                timestamp_ms=self.judgements,
            )
        )

    def srcc_vs_truth(self, ids: list[str] | None = None) -> float:
        ids = ids if ids is not None else self.pop.ids
        scores = [self.state.score(item_id) for item_id in ids]
        truths = [self.truth[item_id] for item_id in ids]
        return srcc(scores, truths)

    def run(self, judgements: int, checkpoint_every: int) -> list[tuple[int, float]]:
        checkpoints = []
        target = self.judgements + judgements
        while self.judgements < target:
            self.step()
            if self.judgements % checkpoint_every == 0 or self.judgements == target:
                checkpoints.append((self.judgements, self.srcc_vs_truth()))
        return checkpoints


def run_simulation(
    pop: Population,
    config: EloConfig,
    strategy: str = "similar",
    total_judgements: int = 200_000,
    checkpoint_every: int = 2_000,
    seed: int = 0,
) -> ConvergenceCurve:
    """Rate a synthetic population and record Spearman-vs-truth checkpoints."""
    if checkpoint_every < 1 or total_judgements < checkpoint_every:
        raise ValueError("need total_judgements >= checkpoint_every >= 1")
    sim = _Simulator(pop, config, seed, strategy)
    return ConvergenceCurve(tuple(sim.run(total_judgements, checkpoint_every)))


@dataclass(frozen=True)
class ExpandabilityResult:
    curve: ConvergenceCurve
    pre_add_scores: dict[str, float]
    post_add_scores: dict[str, float]


def run_expandability(
    pop: Population,
    added: Population,
    config: EloConfig,
    phase1_judgements: int,
    phase2_judgements: int,
    checkpoint_every: int = 2_000,
    seed: int = 0,
    strategy: str = "similar",
) -> ExpandabilityResult:
    """Rate ``pop``, then inject ``added`` at the initial score and keep rating.

    The returned curve covers both phases (checkpoints after the injection
    correlate all live items against the combined truth).  The original
    items' scores immediately before and at the end of phase two let callers
    measure how much the extension disturbed settled ratings.
    """
    sim = _Simulator(pop, config, seed, strategy)
    original_ids = pop.ids
    checkpoints = sim.run(phase1_judgements, checkpoint_every)
    pre_add = {item_id: sim.state.score(item_id) for item_id in original_ids}
    if len(added.items) > 0:
        sim.extend_population(added)
        checkpoints.extend(sim.run(phase2_judgements, checkpoint_every))
    post_add = {item_id: sim.state.score(item_id) for item_id in original_ids}
    return ExpandabilityResult(
        curve=ConvergenceCurve(tuple(checkpoints)),
        pre_add_scores=pre_add,
        post_add_scores=post_add,
    )
