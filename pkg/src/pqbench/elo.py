"""Elo rating engine for pairwise image-preference judgements.

Every item starts at a configured initial score.  A judgement between two
items of the same reference group moves the winner up and the loser down by
at most ``k`` points, weighted by how surprising the outcome was under the
logistic expected-win model

    P(a beats b) = 1 / (1 + 10 ** ((score_b - score_a) / m)).

Mean opinion scores are the averages of each item's trailing post-update
scores, which smooths the per-step jitter once ratings have converged.  The
engine is deliberately replayable: applying the same judgement log to a fresh
state always reproduces the same scores bit for bit.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

__all__ = [
    "EloConfig",
    "JudgementRecord",
    "JudgementRejected",
    "LogIntegrityError",
    "SchedulingExhausted",
    "EloState",
    "expected_probability",
    "apply_judgement",
    "next_pair",
    "finalize_mos",
    "replay",
    "read_log_lines",
]

LOG_FIELDS = ("seq", "item_a", "item_b", "winner", "rater_id", "timestamp_ms")


class JudgementRejected(ValueError):
    """Invalid judgement.  ``code`` is a stable machine-readable reason."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class LogIntegrityError(ValueError):
    """A judgement log is out of order, has gaps, or is malformed."""

    def __init__(self, message: str, seq: int | None = None):
        super().__init__(message)
        self.seq = seq


class SchedulingExhausted(RuntimeError):
    """No group holds two items, so no pair can be scheduled."""


@dataclass(frozen=True)
class EloConfig:
    k: float = 16.0
    m: float = 400.0
    initial_score: float = 1400.0
    mos_window: int = 32

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.m <= 0:
            raise ValueError(f"m must be positive, got {self.m}")
        if self.mos_window < 1:
            raise ValueError(f"mos_window must be >= 1, got {self.mos_window}")


@dataclass(frozen=True)
class JudgementRecord:
    seq: int
    item_a: str
    item_b: str
    winner: str
    rater_id: str
    timestamp_ms: int

    def __post_init__(self):
        if self.item_a == self.item_b:
            raise JudgementRejected("same_item", f"item paired with itself: {self.item_a!r}")
        if self.winner not in (self.item_a, self.item_b):
            raise JudgementRejected(
                "winner_not_in_pair",
                f"winner {self.winner!r} is neither {self.item_a!r} nor {self.item_b!r}",
            )

    def to_json_line(self) -> str:
        payload = {name: getattr(self, name) for name in LOG_FIELDS}
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "JudgementRecord":
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogIntegrityError(f"malformed log line: {exc}") from None
        if not isinstance(payload, dict) or set(payload) != set(LOG_FIELDS):
            raise LogIntegrityError(
                f"log line fields must be exactly {LOG_FIELDS}, got {sorted(payload)}"
            )
        return cls(**payload)


def expected_probability(score_a: float, score_b: float, m: float) -> float:
    """Probability that the first item is preferred, strictly inside (0, 1)."""
    if m <= 0:
        raise ValueError(f"m must be positive, got {m}")
    diff = (score_b - score_a) / m
    # 10**-|diff| keeps the intermediate in (0, 1]; the two symmetric calls
    # then share one denominator, so P(a>b) + P(b>a) sums to 1 exactly.
    t = 10.0 ** (-abs(diff))
    p = t / (1.0 + t) if diff >= 0 else 1.0 / (1.0 + t)
    # Extreme gaps saturate in floats; pin to the nearest representable
    # value so the probability stays strictly inside (0, 1).
    if p >= 1.0:
        return math.nextafter(1.0, 0.0)
    if p <= 0.0:
        return math.nextafter(0.0, 1.0)
    return p


@dataclass
class _ItemRecord:
    group_id: str
    index: int
    n_judgements: int = 0
    trailing: deque = field(default_factory=deque)


class _Group:
    __slots__ = ("ids", "scores")

    def __init__(self):
        self.ids: list[str] = []
        self.scores = np.empty(0, dtype=np.float64)

    def add(self, item_id: str, score: float) -> int:
        self.ids.append(item_id)
        self.scores = np.append(self.scores, score)
        return len(self.ids) - 1


class EloState:
    """Mutable rating state: registered items, scores, and judgement counters.

    All mutation goes through :meth:`apply`, which enforces a gapless,
    strictly increasing sequence number so that any state is reproducible
    from its judgement log.  The class itself is not thread-safe; callers
    that share a state across threads must serialize writes.
    """

    def __init__(self, config: EloConfig | None = None):
        self.config = config or EloConfig()
        self._items: dict[str, _ItemRecord] = {}
        self._groups: dict[str, _Group] = {}
        self.last_seq = 0
        self.total_judgements = 0

    # -- registration and access --------------------------------------

    def register_item(self, item_id: str, group_id: str = "default") -> None:
        if item_id in self._items:
            raise ValueError(f"item {item_id!r} already registered")
        group = self._groups.setdefault(group_id, _Group())
        index = group.add(item_id, self.config.initial_score)
        self._items[item_id] = _ItemRecord(group_id=group_id, index=index)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._items

    def __len__(self) -> int:
        return len(self._items)

    def item_ids(self) -> list[str]:
        return list(self._items)

    def group_of(self, item_id: str) -> str:
        return self._items[item_id].group_id

    def score(self, item_id: str) -> float:
        rec = self._items[item_id]
        return float(self._groups[rec.group_id].scores[rec.index])

    def scores(self) -> dict[str, float]:
        return {item_id: self.score(item_id) for item_id in self._items}

    def n_judgements(self, item_id: str) -> int:
        return self._items[item_id].n_judgements

    def schedulable_groups(self) -> list[str]:
        return [gid for gid, g in self._groups.items() if len(g.ids) >= 2]

    # -- updates --------------------------------------------------------

    def _require(self, item_id: str) -> _ItemRecord:
        rec = self._items.get(item_id)
        if rec is None:
            raise JudgementRejected("unknown_item", f"item {item_id!r} is not registered")
        return rec

    def validate_judgement(self, item_a: str, item_b: str) -> str:
        """Check a prospective pair without mutating; returns the shared group."""
        rec_a = self._require(item_a)
        rec_b = self._require(item_b)
        if rec_a.group_id != rec_b.group_id:
            raise JudgementRejected(
                "cross_group",
                f"{item_a!r} ({rec_a.group_id}) and {item_b!r} "
                f"({rec_b.group_id}) are in different groups",
            )
        return rec_a.group_id

    def apply(self, record: JudgementRecord) -> tuple[float, float]:
        """Apply one judgement; returns the pair's updated scores."""
        self.validate_judgement(record.item_a, record.item_b)
        rec_a = self._items[record.item_a]
        rec_b = self._items[record.item_b]
        if record.seq != self.last_seq + 1:
            raise LogIntegrityError(
                f"expected seq {self.last_seq + 1}, got {record.seq}", seq=record.seq
            )
        cfg = self.config
        group = self._groups[rec_a.group_id]
        score_a = float(group.scores[rec_a.index])
        score_b = float(group.scores[rec_b.index])
        p_a = expected_probability(score_a, score_b, cfg.m)
        p_b = expected_probability(score_b, score_a, cfg.m)
        outcome_a = 1.0 if record.winner == record.item_a else 0.0
        new_a = score_a + cfg.k * (outcome_a - p_a)
        new_b = score_b + cfg.k * ((1.0 - outcome_a) - p_b)
        group.scores[rec_a.index] = new_a
        group.scores[rec_b.index] = new_b
        for rec, new in ((rec_a, new_a), (rec_b, new_b)):
            rec.n_judgements += 1
            rec.trailing.append(new)
            if len(rec.trailing) > cfg.mos_window:
                rec.trailing.popleft()
        self.last_seq = record.seq
        self.total_judgements += 1
        return new_a, new_b

    # -- pair scheduling -------------------------------------------------

    def next_pair(
        self,
        strategy: str = "similar",
        rng: np.random.Generator | int | None = None,
        window: int = 8,
    ) -> tuple[str, str]:
        """Draw the next pair to judge, always within one group.

        ``"random"`` picks a uniform group and a uniform distinct pair in it.
        ``"similar"`` picks a uniform anchor item and a uniform opponent among
        the ``window`` group-mates with nearest scores, which concentrates
        judgements on hard-to-order pairs.
        """
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        eligible = self.schedulable_groups()
        if not eligible:
            raise SchedulingExhausted("no group holds two or more items")
        if strategy == "random":
            group = self._groups[eligible[int(rng.integers(len(eligible)))]]
            i, j = rng.choice(len(group.ids), size=2, replace=False)
            return group.ids[int(i)], group.ids[int(j)]
        if strategy == "similar":
            counts = np.array([len(self._groups[gid].ids) for gid in eligible])
            pick = int(rng.integers(counts.sum()))
            group_idx = int(np.searchsorted(np.cumsum(counts), pick, side="right"))
            group = self._groups[eligible[group_idx]]
            anchor = pick - int(np.concatenate([[0], np.cumsum(counts)])[group_idx])
            diffs = np.abs(group.scores - group.scores[anchor])
            diffs[anchor] = np.inf
            # All candidates tied with the window'th nearest stay eligible, so
            # equal-scored items (e.g. a cold start) are drawn uniformly.
            k = min(window, len(group.ids) - 1)
            cutoff = np.partition(diffs, k - 1)[k - 1]
            nearest = np.nonzero(diffs <= cutoff)[0]
            opponent = int(nearest[int(rng.integers(len(nearest)))])
            return group.ids[anchor], group.ids[opponent]
        raise ValueError(f"unknown strategy {strategy!r}")

    # -- aggregation -----------------------------------------------------

    def finalize_mos(self) -> dict[str, float]:
        """MOS per item: mean of the trailing scores, or the raw score if unjudged."""
        result = {}
        for item_id, rec in self._items.items():
            if rec.trailing:
                result[item_id] = float(sum(rec.trailing) / len(rec.trailing))
            else:
                result[item_id] = self.score(item_id)
        return result

    def snapshot(self) -> dict:
        """JSON-shaped view: item_id -> {score, n_judgements, trailing_scores}."""
        return {
            item_id: {
                "score": self.score(item_id),
                "n_judgements": rec.n_judgements,
                "trailing_scores": list(rec.trailing),
            }
            for item_id, rec in self._items.items()
        }


# ---------------------------------------------------------------------------
# Free-function forms and replay
# ---------------------------------------------------------------------------


def apply_judgement(state: EloState, record: JudgementRecord) -> tuple[float, float]:
    return state.apply(record)


def next_pair(
    state: EloState,
    strategy: str = "similar",
    rng: np.random.Generator | int | None = None,
    window: int = 8,
) -> tuple[str, str]:
    return state.next_pair(strategy=strategy, rng=rng, window=window)


def finalize_mos(state: EloState) -> dict[str, float]:
    return state.finalize_mos()


def replay(
    records: Iterable[JudgementRecord],
    config: EloConfig,
    items: Iterable[tuple[str, str]],
) -> EloState:
    """Rebuild state from scratch by applying an ordered judgement log.

    ``items`` is the registry of (item_id, group_id) pairs.  Sequence numbers
    must run 1, 2, 3, ... without gaps or duplicates.
    """
    state = EloState(config)
    for item_id, group_id in items:
        state.register_item(item_id, group_id)
    for record in records:
        state.apply(record)
    return state


def read_log_lines(lines: Iterable[str]) -> Iterator[JudgementRecord]:
    """Parse JSON-lines judgement records, skipping blank lines."""
    for line in lines:
        line = line.strip()
        if line:
            yield JudgementRecord.from_json_line(line)
