import pytest

from echotrail.core import AbstractedStep, AbstractedTrajectory, Action, CriticScore
from echotrail.exploration import ExplorerConfig, run_exploration
from echotrail.memory import MemoryRecord
from echotrail.sim import SimEnv, quoted_strings


@pytest.fixture(scope="session")
def env():
    return SimEnv()


@pytest.fixture(scope="session")
def small_run(env):
    return run_exploration(ExplorerConfig(N=60, seed=11), env)


def make_abstracted(rid: str, intent: str, description: str = "App notes screen s: widgets [button:Save]",
                    widget: str = "w", score: int = 5, step_intent: str = "") -> AbstractedTrajectory:
    step = AbstractedStep(description, step_intent or intent, Action.click(widget))
    return AbstractedTrajectory(rid, intent, (step,), CriticScore(score))


def make_record(rid: str, intent: str, **kw) -> MemoryRecord:
    return MemoryRecord.build(make_abstracted(rid, intent, **kw))


def brute_force_shorter_solution(env, task):
    """Breadth-first search over the full device state, up to one step short of the expert.

    Typing is restricted to the instruction's quoted strings, which are the only
    texts any sub-goal accepts.
    """
    start = env.initial_state(task, 0)
    texts = quoted_strings(task.instruction.text)
    frontier, seen = [start], {start}
    for depth in range(1, len(task.expert_steps)):
        nxt = []
        for s in frontier:
            for a in env.candidate_actions(env.observe(s), texts):
                t = env.apply(s, a).state
                if t in seen:
                    continue
                if env.is_complete(t, task):
                    return depth
                seen.add(t)
                nxt.append(t)
        frontier = nxt
    return None
