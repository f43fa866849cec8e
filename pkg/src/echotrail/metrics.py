"""Episode metrics: SR, Sub-SR, RRR and ROR, overall and per task / difficulty."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .inference import EpisodeResult
from .sim import SimEnv, Suite, UnknownTaskError

DIFFICULTIES = ("easy", "medium", "hard")


@dataclass(frozen=True)
class Metrics:
    episodes: int
    sr: float
    sub_sr: float
    rrr: float
    ror: float
    # False when there were no successes, in which case rrr is reported as 0
    rrr_defined: bool

    def to_dict(self) -> dict:
        return {"episodes": self.episodes, "sr": self.sr, "sub_sr": self.sub_sr,
                "rrr": self.rrr, "ror": self.ror, "rrr_defined": self.rrr_defined}


@dataclass(frozen=True)
class MetricsReport:
    overall: Metrics
    per_task: dict[str, Metrics] = field(default_factory=dict)
    difficulty: dict[str, Metrics] = field(default_factory=dict)

    @property
    def sr(self) -> float:
        return self.overall.sr

    @property
    def sub_sr(self) -> float:
        return self.overall.sub_sr

    @property
    def rrr(self) -> float:
        return self.overall.rrr

    @property
    def ror(self) -> float:
        return self.overall.ror

    def to_dict(self) -> dict:
        return {**self.overall.to_dict(),
                "difficulty": {k: v.to_dict() for k, v in self.difficulty.items()},
                "per_task": {k: v.to_dict() for k, v in self.per_task.items()}}


def reasonable_ops(r: EpisodeResult) -> tuple[int, int]:
    """(reasonable, total) operations: state-changing steps, plus a Finish that ends a success."""
    total = r.steps_taken + (1 if r.finish_emitted else 0)
    good = sum(1 for c in r.changed if c) + (1 if r.finish_emitted and r.success else 0)
    return good, total


def _aggregate(results: list[EpisodeResult], expert: dict[str, int]) -> Metrics:
    n = len(results)
    if n == 0:
        return Metrics(0, 0.0, 0.0, 0.0, 0.0, False)
    wins = [r for r in results if r.success]
    done = sum(sum(1 for f in r.sub_goal_flags if f) for r in results)
    goals = sum(len(r.sub_goal_flags) for r in results)
    ratios = [100.0 * expert[r.task_id] / max(r.steps_taken, 1) for r in wins]
    ops = [reasonable_ops(r) for r in results]
    total_ops = sum(t for _, t in ops)
    return Metrics(
        episodes=n,
        sr=100.0 * len(wins) / n,
        sub_sr=100.0 * done / goals if goals else 0.0,
        rrr=sum(ratios) / len(ratios) if ratios else 0.0,
        ror=100.0 * sum(g for g, _ in ops) / total_ops if total_ops else 0.0,
        rrr_defined=bool(ratios),
    )


def compute_metrics(results: Iterable[EpisodeResult], suite: Suite | SimEnv | None = None
                    ) -> MetricsReport:
    if isinstance(suite, SimEnv):
        suite = suite.suite
    suite = suite or Suite.load()
    results = list(results)
    expert, diff = {}, {}
    for r in results:
        if r.task_id not in suite.tasks:
            raise UnknownTaskError(r.task_id)
        t = suite.tasks[r.task_id]
        expert[t.id] = len(t.expert_steps)
        diff[t.id] = t.difficulty
    by_task: dict[str, list[EpisodeResult]] = {}
    for r in results:
        by_task.setdefault(r.task_id, []).append(r)
    per_task = {tid: _aggregate(by_task[tid], expert) for tid in sorted(by_task)}
    difficulty = {d: _aggregate([r for r in results if diff[r.task_id] == d], expert)
                  for d in DIFFICULTIES}
    return MetricsReport(_aggregate(results, expert), per_task, difficulty)
