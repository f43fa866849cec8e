"""Experiment drivers: ablations, the K sweep, stage quality and embedding export."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import (AbstractedStep, AbstractedTrajectory, CriticScore, abstract_trajectory, dumps,
                   summarize_observation)
from .exploration import EpisodeLog, ExplorationRun, ExplorerConfig, run_exploration
from .inference import EpisodeResult, run_task
from .memory import MemoryDB
from .metrics import MetricsReport, compute_metrics
from .retrieval import RetrievalConfig, Retriever
from .sim import SimEnv, Suite

VARIANTS = ("full", "no_critic_filter", "no_hybrid", "no_guidance", "baseline")
N_STAGES = 4


@dataclass(frozen=True)
class ExperimentSpec:
    variants: tuple[str, ...] = VARIANTS
    seeds: tuple[int, ...] = tuple(range(8))
    episodes: int = 200
    k: int = 2
    alpha: float = 0.5
    ks: tuple[int, ...] = (0, 1, 2, 4, 8)
    suite: Optional[str] = None
    out_dir: str = "results"

    def __post_init__(self):
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ValueError(f"unknown variants {bad}; choose from {list(VARIANTS)}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if any(k < 0 for k in self.ks) or self.k < 0:
            raise ValueError("K values must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown spec keys {sorted(extra)}")
        d = dict(d)
        for key in ("variants", "seeds", "ks"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))

    def to_dict(self) -> dict:
        return {"variants": list(self.variants), "seeds": list(self.seeds),
                "episodes": self.episodes, "k": self.k, "alpha": self.alpha,
                "ks": list(self.ks), "suite": self.suite, "out_dir": self.out_dir}


class ExplorationCache:
    """Memoises exploration runs by (seed, episodes, guidance) within one experiment."""

    def __init__(self, env: SimEnv):
        self.env = env
        self._runs: dict[tuple, ExplorationRun] = {}

    def get(self, seed: int, episodes: int, guidance: bool) -> ExplorationRun:
        key = (seed, episodes, guidance)
        if key not in self._runs:
            cfg = ExplorerConfig(N=episodes, seed=seed, guidance_enabled=guidance)
            self._runs[key] = run_exploration(cfg, self.env)
        return self._runs[key]


def ungated_memory(run: ExplorationRun) -> MemoryDB:
    """Every terminated trajectory of ``run``, with no critic gate."""
    db = MemoryDB(enforce_gate=False)
    for ep in run.episodes:
        if ep.trajectory.steps:
            db.add(abstract_trajectory(ep.trajectory, summarize_observation))
    return db


def build_memory(variant: str, seed: int, spec: ExperimentSpec, cache: ExplorationCache
                 ) -> tuple[Optional[MemoryDB], RetrievalConfig]:
    cfg = RetrievalConfig(alpha=spec.alpha, K=spec.k)
    if variant == "baseline":
        return None, replace(cfg, K=0)
    if variant == "no_guidance":
        return cache.get(seed, spec.episodes, False).d_mem, cfg
    full = cache.get(seed, spec.episodes, True)
    if variant == "full":
        return full.d_mem, cfg
    if variant == "no_critic_filter":
        return ungated_memory(full), cfg
    if variant == "no_hybrid":
        return full.d_mem, replace(cfg, mode="random")
    raise ValueError(f"unknown variant {variant!r}")


def run_suite(db: Optional[MemoryDB], cfg: RetrievalConfig, seed: int, env: SimEnv,
              task_ids: Optional[Sequence[str]] = None) -> list[EpisodeResult]:
    retriever = Retriever(db, cfg) if db is not None else None
    tasks = [env.task(t) for t in task_ids] if task_ids else env.tasks
    return [run_task(t, db, cfg, seed, env, retriever) for t in tasks]


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def report_rows(named: Iterable[tuple[str, MetricsReport]], key: str = "variant") -> str:
    rows = [[key, "episodes", "sr", "sub_sr", "rrr", "ror",
             "sr_easy", "sr_medium", "sr_hard"]]
    for name, rep in named:
        o = rep.overall
        rows.append([name, o.episodes, _fmt(o.sr), _fmt(o.sub_sr), _fmt(o.rrr), _fmt(o.ror)]
                    + [_fmt(rep.difficulty[d].sr) for d in ("easy", "medium", "hard")])
    return _csv(rows)


def run_ablation(spec: ExperimentSpec, env: Optional[SimEnv] = None,
                 out_dir: str | Path | None = None,
                 cache: Optional[ExplorationCache] = None) -> dict[str, MetricsReport]:
    """Run every variant over every seed; writes ablation.json and ablation.csv when ``out_dir`` is set."""
    env = env or SimEnv(Suite.load(spec.suite))
    cache = cache or ExplorationCache(env)
    results: dict[str, list[EpisodeResult]] = defaultdict(list)
    for seed in spec.seeds:
        for variant in spec.variants:
            db, cfg = build_memory(variant, seed, spec, cache)
            results[variant].extend(run_suite(db, cfg, seed, env))
    reports = {v: compute_metrics(results[v], env) for v in spec.variants}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"spec": spec.to_dict(),
                   "variants": {v: reports[v].to_dict() for v in spec.variants}}
        (out / "ablation.json").write_text(dumps(payload) + "\n", encoding="utf-8")
        (out / "ablation.csv").write_text(report_rows(reports.items()), encoding="utf-8")
    return reports


def sweep_k(spec: ExperimentSpec, env: Optional[SimEnv] = None,
            out_dir: str | Path | None = None,
            cache: Optional[ExplorationCache] = None) -> dict[int, MetricsReport]:
    """Full-variant success rate as a function of the number of retrieved memories."""
    env = env or SimEnv(Suite.load(spec.suite))
    cache = cache or ExplorationCache(env)
    results: dict[int, list[EpisodeResult]] = defaultdict(list)
    for seed in spec.seeds:
        db = cache.get(seed, spec.episodes, True).d_mem
        for k in spec.ks:
            cfg = RetrievalConfig(alpha=spec.alpha, K=k)
            results[k].extend(run_suite(db, cfg, seed, env))
    reports = {k: compute_metrics(results[k], env) for k in spec.ks}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = ((str(k), r) for k, r in reports.items())
        (out / "sweep_k.csv").write_text(report_rows(rows, key="k"), encoding="utf-8")
    return reports


# -- quality over time ----------------------------------------------------------

def stage_sizes(n: int, stages: int = N_STAGES) -> list[int]:
    """Consecutive stage sizes; the remainder goes to the earliest stages."""
    base, rem = divmod(n, stages)
    return [base + (1 if i < rem else 0) for i in range(stages)]


def stage_of(n: int, stages: int = N_STAGES) -> list[int]:
    out = []
    for s, size in enumerate(stage_sizes(n, stages)):
        out.extend([s] * size)
    return out


@dataclass
class StageQuality:
    """Counts of high-quality trajectories per app and stage, poolable across runs."""
    theta: int = 4
    stages: int = N_STAGES
    good: dict[str, list[int]] = field(default_factory=dict)
    total: dict[str, list[int]] = field(default_factory=dict)

    def add_run(self, episodes: Sequence[EpisodeLog]) -> "StageQuality":
        for ep, s in zip(episodes, stage_of(len(episodes), self.stages)):
            app = ep.app or "none"
            for key in (app, "all"):
                self.good.setdefault(key, [0] * self.stages)
                self.total.setdefault(key, [0] * self.stages)
                self.total[key][s] += 1
                self.good[key][s] += int(ep.score is not None and ep.score >= self.theta)
        return self

    def rate(self, app: str, stage: int) -> float:
        t = self.total.get(app, [0] * self.stages)[stage]
        return self.good[app][stage] / t if t else 0.0

    def apps(self) -> list[str]:
        return sorted(a for a in self.total if a != "all") + (["all"] if "all" in self.total else [])

    def to_csv(self) -> str:
        rows = [["app", "stage", "episodes", "high_quality", "rate"]]
        for app in self.apps():
            for s in range(self.stages):
                rows.append([app, s + 1, self.total[app][s], self.good[app][s],
                             _fmt(self.rate(app, s))])
        return _csv(rows)

    def per_app(self) -> dict:
        return {app: [self.rate(app, s) for s in range(self.stages)] for app in self.apps()}


def quality_over_time(runs: Iterable[Sequence[EpisodeLog]], theta: int = 4,
                      stages: int = N_STAGES) -> StageQuality:
    q = StageQuality(theta, stages)
    for episodes in runs:
        q.add_run(episodes)
    return q


# -- embeddings ------------------------------------------------------------------

def embeddings_csv(db: MemoryDB) -> str:
    dim = len(db.records[0].intent_embedding) if len(db) else 0
    rows = [["id", "final_intent", "score"] + [f"e{i}" for i in range(dim)]]
    for r in db.records:
        rows.append([r.id, r.final_intent, r.score] + [repr(x) for x in r.intent_embedding])
    return _csv(rows)


# -- result files ------------------------------------------------------------------

def write_results(results: Sequence[EpisodeResult], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in results:
            fh.write(dumps(r.to_dict()) + "\n")
    return path


def read_results(path: str | Path) -> list[EpisodeResult]:
    with Path(path).open(encoding="utf-8") as fh:
        return [EpisodeResult.from_dict(json.loads(line)) for line in fh if line.strip()]


def replay_result(result: EpisodeResult, env: SimEnv) -> list:
    """Re-apply the logged actions and return the observations they produce."""
    state = env.initial_state(result.task_id, result.seed)
    observations = [env.observe(state)]
    for a in result.actions:
        eff = env.apply(state, a)
        state = eff.state
        observations.append(eff.new_observation)
    return observations


def replay_episode_log(ep: EpisodeLog, env: SimEnv) -> list:
    """Observations seen before each logged exploration step, recomputed from the seed."""
    tau = ep.trajectory
    state = env.initial_state(tau.task_hint, tau.episode_seed)
    observations = []
    for step in tau.steps:
        observations.append(env.observe(state))
        state = env.apply(state, step.action).state
    return observations


def expert_memory(env: SimEnv, score: int = 5) -> MemoryDB:
    """A memory DB holding each task's expert trajectory, labelled with its instruction."""
    db = MemoryDB()
    for task in env.tasks:
        state = env.initial_state(task, 0)
        steps = []
        for a in task.expert_steps:
            desc = summarize_observation(env.observe(state))
            steps.append(AbstractedStep(desc, task.instruction.text, a))
            state = env.apply(state, a).state
        db.add(AbstractedTrajectory(f"expert-{task.id}", task.instruction.text, tuple(steps),
                                    CriticScore(score)))
    return db
