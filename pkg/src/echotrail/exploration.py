"""Critic-guided self-exploration.

Each episode starts in curiosity mode (least-visited widgets first) and, after
``T_focus`` steps, commits to a goal template of the current app and follows a
shortest plan towards it. The plan-follower is imperfect: with probability
``slip_prob`` it takes some other action instead, which stands in for the
mistakes of a model-driven explorer. Real-time guidance from the processing DB
lowers that probability when the intended action recently worked on the same
screen, and keeps slips away from actions that recently did nothing.

Terminated trajectories are scored by a rubric critic; only those scoring at
least ``theta_good`` are abstracted into the memory DB.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .core import (EXPLORE_INTENT, Action, CriticScore, Observation, RawStep, Trajectory,
                   ValidationError, abstract_trajectory, derive_seed, dumps,
                   summarize_observation, trajectory_id)
from .memory import THETA_GOOD, MemoryDB, ProcessingDB
from .sim import DeviceState, GoalTemplate, InvalidActionError, SimEnv, quoted_strings

SUCCEEDED = "succeeded"
FAILED = "failed"
GUIDANCE_CAP = 3


@dataclass(frozen=True)
class ExplorerConfig:
    N: int = 200
    seed: int = 0
    T_max: int = 30
    T_focus: int = 6
    guidance_enabled: bool = True
    # probability that the plan-follower deviates from its intended action
    slip_prob: float = 0.9
    # same, when guidance confirms the intended action worked here recently
    guided_slip_prob: float = 0.35
    # share of slips that are a premature Finish (otherwise uniform over other actions)
    finish_share: float = 0.2
    # False inserts every terminated trajectory (the no-critic ablation)
    gate_enabled: bool = True
    theta_good: int = THETA_GOOD

    def __post_init__(self):
        if not 1 <= self.T_focus < self.T_max:
            raise ValueError(f"need 1 <= T_focus < T_max, got {self.T_focus}, {self.T_max}")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        for p in (self.slip_prob, self.guided_slip_prob, self.finish_share):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"slip probability {p} outside [0, 1]")


# -- guidance -----------------------------------------------------------------

@dataclass(frozen=True)
class GuidanceEntry:
    matched_context: str
    outcome: str
    action: Action

    def to_dict(self) -> dict:
        return {"matched_context": self.matched_context, "outcome": self.outcome,
                "action": self.action.to_dict()}


@dataclass(frozen=True)
class Guidance:
    entries: tuple[GuidanceEntry, ...] = ()

    def suggested(self) -> set[Action]:
        return {e.action for e in self.entries if e.outcome == SUCCEEDED}

    def avoided(self) -> set[Action]:
        return {e.action for e in self.entries if e.outcome == FAILED}

    def __len__(self) -> int:
        return len(self.entries)


def retrieve_guidance(d_proc: ProcessingDB, partial: Trajectory, obs: Observation,
                      enabled: bool = True, cap: int = GUIDANCE_CAP,
                      focus: Iterable[Action] = ()) -> Guidance:
    """Up to ``cap`` distinct actions previously taken on ``obs``'s screen, most recent first.

    Entries are keyed by (screen_id, action). Steps that left the state
    unchanged become avoid entries, the rest suggest entries. Keys whose
    action is in ``focus`` (the actions the caller is considering) rank ahead
    of the others. ``partial`` is the caller's in-progress trajectory; its
    latest prefix is expected to be in ``d_proc`` already.
    """
    if not enabled:
        return Guidance()
    focus = set(focus)
    found: list[GuidanceEntry] = []
    seen: set[Action] = set()
    for entry in reversed(d_proc.entries()):
        for step, ok in zip(reversed(entry.steps), reversed(entry.outcomes)):
            if step.observation.screen_id != obs.screen_id or step.action in seen:
                continue
            seen.add(step.action)
            found.append(GuidanceEntry(obs.screen_id, SUCCEEDED if ok else FAILED, step.action))
    found.sort(key=lambda g: g.action not in focus)  # stable: recency kept within each group
    return Guidance(tuple(found[:cap]))


# -- policies -----------------------------------------------------------------

def curiosity_action(obs: Observation, visit_counts: Mapping[str, int],
                     rng: Optional[random.Random] = None,
                     avoid: Iterable[Action] = ()) -> Action:
    """Click the enabled widget with the fewest run-level visits; Back when there is none.

    Ties go to the earlier widget on screen. Widgets whose click is in
    ``avoid`` are skipped.
    """
    avoid = set(avoid)
    best, best_n = None, math.inf
    for w in obs.enabled_widgets():
        a = Action.click(w.widget_id)
        if a in avoid:
            continue
        n = visit_counts.get(w.widget_id, 0)
        if n < best_n:
            best, best_n = a, n
    return best if best is not None else Action.back()


def formulate_subgoal(partial: Trajectory, env: SimEnv, obs: Observation,
                      state: Optional[DeviceState] = None, seed: int = 0) -> GoalTemplate:
    """Pick a goal template of the current app (or, at home, the app most visited so far).

    Goals already satisfied in ``state`` are skipped when possible. The choice
    is a pure function of the action prefix, the current screen and ``seed``.
    """
    suite = env.suite
    app = obs.app_id
    if app == suite.home_app:
        counts = Counter(s.observation.app_id for s in partial.steps
                         if s.observation.app_id != suite.home_app)
        if counts:
            app = max(suite.app_order, key=lambda a: (counts.get(a, 0), -suite.app_order.index(a)))
        else:
            app = None
    prefix = "|".join(str(a) for a in partial.actions)
    rng = random.Random(derive_seed(seed, "subgoal", obs.screen_id, prefix))
    if app is None:
        app = rng.choice([a for a in suite.app_order if suite.goals_for(a)])
    goals = suite.goals_for(app)
    if state is not None:
        open_goals = [g for g in goals if not env.holds(state, g.when)]
        goals = open_goals or goals
    return rng.choice(goals)


def focused_action(env: SimEnv, state: DeviceState, obs: Observation, goal: GoalTemplate,
                   guidance: Guidance | Callable[[list[Action]], Guidance] | None,
                   rng: random.Random, cfg: ExplorerConfig) -> Action:
    """Next step of the plan towards ``goal``, or a slip to some other available action.

    ``guidance`` may be a callable taking the intended action(s), so that the
    lookup can rank entries for the intended action first.
    """
    plan = env.plan(state, goal)
    intended = plan[0] if plan else Action.back()
    if guidance is None:
        guidance = Guidance()
    elif callable(guidance):
        guidance = guidance([intended])
    p = cfg.guided_slip_prob if intended in guidance.suggested() else cfg.slip_prob
    if rng.random() >= p:
        return intended
    if rng.random() < cfg.finish_share:
        return Action.finish()
    avoid = guidance.avoided()
    alts = [a for a in env.candidate_actions(obs, quoted_strings(goal.text))
            if a != intended and a not in avoid]
    return rng.choice(alts) if alts else Action.back()


# -- critic -------------------------------------------------------------------

@dataclass(frozen=True)
class CriticRubric:
    w_success: float = 0.5
    w_efficiency: float = 0.3
    w_coherence: float = 0.2
    theta_good: int = THETA_GOOD

    def __post_init__(self):
        if not math.isclose(self.w_success + self.w_efficiency + self.w_coherence, 1.0):
            raise ValueError("rubric weights must sum to 1")
        if not 1 <= self.theta_good <= 5:
            raise ValueError("theta_good must be in [1, 5]")

    def value(self, success: float, efficiency: float, coherence: float) -> int:
        x = self.w_success * success + self.w_efficiency * efficiency + self.w_coherence * coherence
        # half-up rounding; Python's round() would send 2.5 to 2
        return 1 + int(math.floor(4.0 * x + 0.5 + 1e-12))


@dataclass(frozen=True)
class CriticVerdict:
    score: CriticScore
    success: bool
    efficiency: float
    coherence: float
    matched_goal: Optional[GoalTemplate]


def critic_verdict(env: SimEnv, final_state: DeviceState, changed: Sequence[bool],
                   rubric: CriticRubric = CriticRubric(),
                   preferred: Optional[GoalTemplate] = None) -> CriticVerdict:
    n = len(changed)
    if n == 0:
        raise ValidationError("cannot score an empty trajectory")
    matched = None
    if preferred is not None and env.holds(final_state, preferred.when):
        matched = preferred
    else:
        matched = next((g for g in env.suite.goals if env.holds(final_state, g.when)), None)
    success = matched is not None
    efficiency = 0.0
    if success:
        efficiency = min(1.0, (env.goal_expert_length(matched) or n) / n)
    coherence = sum(bool(c) for c in changed) / n
    value = rubric.value(float(success), efficiency, coherence)
    return CriticVerdict(CriticScore(value), success, efficiency, coherence, matched)


def replay(env: SimEnv, tau: Trajectory) -> tuple[DeviceState, list[bool]]:
    state = env.initial_state(tau.task_hint, tau.episode_seed)
    changed = []
    for step in tau.steps:
        if step.action.variant == "Finish":
            break
        eff = env.apply(state, step.action)
        changed.append(eff.changed_state)
        state = eff.state
    return state, changed


def score_trajectory(tau: Trajectory, env: SimEnv, rubric: CriticRubric = CriticRubric(),
                     preferred: Optional[GoalTemplate] = None) -> CriticScore:
    """Rubric critic: success, efficiency against the matched goal's shortest plan, coherence."""
    if not tau.steps:
        raise ValidationError(f"trajectory {tau.id!r} has no steps")
    state, changed = replay(env, tau)
    return critic_verdict(env, state, changed, rubric, preferred).score


def gate(score: CriticScore, theta: int = THETA_GOOD) -> bool:
    return score.value >= theta


# -- the exploration loop -----------------------------------------------------

@dataclass
class EpisodeLog:
    episode: int
    trajectory: Trajectory
    outcomes: list[bool]
    app: Optional[str]
    goal_id: Optional[str]
    success: bool
    efficiency: float
    coherence: float
    finish_emitted: bool
    admission: str
    error: Optional[str] = None

    @property
    def score(self) -> Optional[int]:
        cs = self.trajectory.critic_score
        return cs.value if cs else None

    def to_dict(self) -> dict:
        return {"episode": self.episode, "id": self.trajectory.id, "app": self.app,
                "goal_id": self.goal_id, "score": self.score, "success": self.success,
                "efficiency": self.efficiency, "coherence": self.coherence,
                "finish_emitted": self.finish_emitted, "admission": self.admission,
                "error": self.error, "outcomes": self.outcomes,
                "trajectory": self.trajectory.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeLog":
        return cls(d["episode"], Trajectory.from_dict(d["trajectory"]), list(d["outcomes"]),
                   d["app"], d["goal_id"], d["success"], d["efficiency"], d["coherence"],
                   d["finish_emitted"], d["admission"], d.get("error"))


@dataclass
class ExplorationRun:
    config: ExplorerConfig
    d_mem: MemoryDB
    episodes: list[EpisodeLog] = field(default_factory=list)

    def write_log(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for ep in self.episodes:
                fh.write(dumps(ep.to_dict()) + "\n")
        return path


def read_log(path: str | Path) -> list[EpisodeLog]:
    with Path(path).open(encoding="utf-8") as fh:
        return [EpisodeLog.from_dict(json.loads(line)) for line in fh if line.strip()]


def run_episode(env: SimEnv, cfg: ExplorerConfig, episode: int, d_proc: ProcessingDB,
                visits: Counter, rubric: CriticRubric) -> tuple[EpisodeLog, DeviceState]:
    tid = trajectory_id(cfg.seed, episode)
    ep_seed = derive_seed(cfg.seed, "episode", episode)
    rng = random.Random(ep_seed)
    state = env.initial_state(None, ep_seed)
    obs = env.observe(state)
    steps: list[RawStep] = []
    outcomes: list[bool] = []
    goal: Optional[GoalTemplate] = None
    finished = False
    for t in range(cfg.T_max):
        partial = Trajectory(tid, tuple(steps), "", ep_seed)
        if t <= cfg.T_focus:
            guidance = retrieve_guidance(d_proc, partial, obs, cfg.guidance_enabled)
            action, intent = curiosity_action(obs, visits, rng, guidance.avoided()), EXPLORE_INTENT
        else:
            if goal is None:
                goal = formulate_subgoal(partial, env, obs, state, cfg.seed)

            def guidance(focus, partial=partial, obs=obs):
                return retrieve_guidance(d_proc, partial, obs, cfg.guidance_enabled, focus=focus)
            action, intent = focused_action(env, state, obs, goal, guidance, rng, cfg), goal.text
        if action.variant == "Finish":
            finished = True
            break
        eff = env.apply(state, action)
        steps.append(RawStep(obs, action, intent))
        outcomes.append(eff.changed_state)
        if action.variant == "Click":
            visits[action.widget_id] += 1
        state, obs = eff.state, eff.new_observation
        d_proc.update(Trajectory(tid, tuple(steps), "", ep_seed), outcomes)
        if goal is not None and env.holds(state, goal.when):
            break
    verdict = critic_verdict(env, state, outcomes, rubric, goal)
    if verdict.success:
        final_intent = verdict.matched_goal.text
    else:
        final_intent = goal.text if goal is not None else EXPLORE_INTENT
    tau = Trajectory(tid, tuple(steps), final_intent, ep_seed, None, verdict.score)
    log = EpisodeLog(episode, tau, outcomes, goal.app if goal else None,
                     goal.id if goal else None, verdict.success, verdict.efficiency,
                     verdict.coherence, finished, "pending")
    return log, state


def run_exploration(config: ExplorerConfig, env: Optional[SimEnv] = None,
                    d_proc: Optional[ProcessingDB] = None,
                    d_mem: Optional[MemoryDB] = None,
                    rubric: Optional[CriticRubric] = None) -> ExplorationRun:
    """Run ``config.N`` episodes, archiving trajectories that pass the critic gate into ``d_mem``."""
    env = env or SimEnv()
    d_proc = d_proc if d_proc is not None else ProcessingDB()
    rubric = rubric or CriticRubric(theta_good=config.theta_good)
    if d_mem is None:
        d_mem = MemoryDB(theta_good=rubric.theta_good, enforce_gate=config.gate_enabled)
    if not config.gate_enabled and d_mem.enforce_gate:
        raise ValueError("an ungated exploration run needs a MemoryDB with enforce_gate=False")
    d_proc.clear()
    visits: Counter = Counter()
    run = ExplorationRun(config, d_mem)
    for e in range(config.N):
        try:
            log, _ = run_episode(env, config, e, d_proc, visits, rubric)
        except InvalidActionError as exc:
            tau = Trajectory(trajectory_id(config.seed, e), (), EXPLORE_INTENT,
                             derive_seed(config.seed, "episode", e))
            run.episodes.append(EpisodeLog(e, tau, [], None, None, False, 0.0, 0.0,
                                           False, "aborted", str(exc)))
            continue
        if log.trajectory.steps and (gate(log.trajectory.critic_score, rubric.theta_good)
                                     or not config.gate_enabled):
            log.admission = d_mem.add(abstract_trajectory(log.trajectory, summarize_observation))
        else:
            log.admission = "rejected"
        run.episodes.append(log)
    return run
