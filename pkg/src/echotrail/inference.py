"""Memory-augmented task execution.

Retrieved memories are rendered as numbered step guides and combined with the
instruction, the action history and the current screen into a
``ContextRecord``. The default policy follows those guides when a guide step
fits the current screen and otherwise falls back to a lexical baseline that
uses no memory at all.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

from .core import (Action, ActionHistory, AbstractedTrajectory, Observation, TaskInstruction,
                   derive_seed, summarize_observation, validate_action)
from .memory import MemoryDB, MemoryRecord
from .retrieval import RetrievalConfig, Retriever
from .sim import InvalidActionError, SimEnv, TaskSpec, quoted_strings
from .text import tokenize

__all__ = [
    "FormattedMemory", "ContextRecord", "EpisodeResult", "summarize_observation",
    "format_memories", "assemble_context", "guide_step", "baseline_action", "run_task",
]

LABEL_MATCH = 0.5
# a guide is followed only if its final intent is this similar to the instruction,
# and only guides tied for the highest similarity are followed
HEADER_MATCH = 0.2
T_MAX = 30
STOPWORDS = frozenset("a an the and to it for with of in on as then by at is be s".split())
_WIDGETS = re.compile(r"widgets \[(.*)\]\s*$")


@dataclass(frozen=True)
class FormattedMemory:
    source_id: str
    header: str
    steps: tuple[str, ...]
    source: Optional[AbstractedTrajectory] = field(default=None, compare=False, repr=False)

    def render(self) -> str:
        return "\n".join([f"Memory {self.source_id}: {self.header}", *self.steps])


def format_step(i: int, description: str, intent: str, action: Action) -> str:
    return f"{i}. {{interface: {description} | intent: {intent} | action: {action}}}"


def format_memories(records: Sequence[MemoryRecord | AbstractedTrajectory]) -> list[FormattedMemory]:
    out = []
    for r in records:
        a = r.abstracted if isinstance(r, MemoryRecord) else r
        lines = tuple(format_step(i, s.interface_description, s.intent, s.action)
                      for i, s in enumerate(a.steps, start=1))
        out.append(FormattedMemory(a.id, a.final_intent, lines, a))
    return out


@dataclass(frozen=True)
class ContextRecord:
    instruction: TaskInstruction
    memories: tuple[FormattedMemory, ...]
    history: ActionHistory
    observation: Observation
    observation_summary: str

    def render(self) -> str:
        """Canonical prompt text handed to model-backed policies."""
        parts = ["## Task", self.instruction.text, f"## Memories ({len(self.memories)})"]
        parts += [m.render() for m in self.memories] or ["(none)"]
        parts.append("## History")
        parts += [f"{i}. {a}" for i, a in enumerate(self.history, start=1)] or ["(none)"]
        parts += ["## Current screen", self.observation_summary]
        return "\n".join(parts) + "\n"


def assemble_context(instruction: TaskInstruction, memories: Sequence[FormattedMemory],
                     history: ActionHistory, observation: Observation,
                     summarizer: Callable[[Observation], str] = summarize_observation
                     ) -> ContextRecord:
    return ContextRecord(instruction, tuple(memories), history, observation,
                         summarizer(observation))


# -- label matching -----------------------------------------------------------

@lru_cache(maxsize=4096)
def description_tokens(description: str) -> frozenset[str]:
    """Tokens of the widget labels listed in an interface description."""
    m = _WIDGETS.search(description)
    if not m or not m.group(1):
        return frozenset()
    labels = [item.split(":", 1)[-1] for item in m.group(1).split(", ")]
    return frozenset(t for label in labels for t in tokenize(label))


def observation_tokens(obs: Observation) -> frozenset[str]:
    return frozenset(t for w in obs.widgets for t in tokenize(w.label))


def label_overlap(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


# -- guide following ----------------------------------------------------------

def _memory_actions(mem: FormattedMemory, instruction: TaskInstruction) -> list[Action]:
    """The guide's actions, with typed text swapped for the instruction's quoted text.

    A typed string that does not occur in the instruction is replaced by the
    instruction's quoted string of the same ordinal (by order of first use).
    """
    wanted = quoted_strings(instruction.text)
    typed: list[str] = []
    for s in mem.source.steps:
        if s.action.variant == "Type" and s.action.text not in typed:
            typed.append(s.action.text)
    sub = {}
    for i, t in enumerate(typed):
        if t not in wanted and i < len(wanted):
            sub[t] = wanted[i]
    out = []
    for s in mem.source.steps:
        a = s.action
        if a.variant == "Type" and a.text in sub:
            a = Action.type(a.widget_id, sub[a.text])
        out.append(a)
    return out


def guide_pointer(actions: Sequence[Action], history: Sequence[Action]) -> int:
    """Index of the first guide step not yet mirrored in ``history``.

    Widget actions may skip ahead to their next occurrence in the guide;
    navigation actions only advance the pointer when they are the next step.
    """
    ptr = 0
    for h in history:
        if ptr >= len(actions):
            break
        if actions[ptr] == h:
            ptr += 1
            continue
        if h.widget_id is None:
            continue
        for j in range(ptr + 1, len(actions)):
            if actions[j] == h:
                ptr = j + 1
                break
    return ptr


def memory_proposal(mem: FormattedMemory, ctx: ContextRecord) -> Optional[Action]:
    if mem.source is None or not mem.source.steps:
        return None
    actions = _memory_actions(mem, ctx.instruction)
    history = ctx.history.entries
    ptr = guide_pointer(actions, history)
    if ptr >= len(actions):
        if history and actions[-1] == history[-1]:
            return Action.finish()
        return None
    here = observation_tokens(ctx.observation)
    for j in range(ptr, len(actions)):
        desc = mem.source.steps[j].interface_description
        if label_overlap(description_tokens(desc), here) < LABEL_MATCH:
            continue
        if validate_action(ctx.observation, actions[j]):
            return actions[j]
    return None


def intent_similarity(header: str, instruction: str) -> float:
    """Jaccard overlap of content words, counting prefix-matched words as shared."""
    h, q = set(_content_tokens(header)), set(_content_tokens(instruction))
    if not h or not q:
        return 0.0
    shared = sum(1 for t in h if any(_match(t, u) for u in q))
    return shared / (len(h) + len(q) - shared)


def applicable_memories(ctx: ContextRecord) -> list[FormattedMemory]:
    """Memories whose final intent is as close to the instruction as the closest one."""
    scored = [(intent_similarity(m.header, ctx.instruction.text), m) for m in ctx.memories]
    best = max((s for s, _ in scored), default=0.0)
    if best < HEADER_MATCH:
        return []
    return [m for s, m in scored if s == best]


def guide_step(ctx: ContextRecord, rng: random.Random) -> Action:
    """One action of the memory-augmented policy.

    Each memory proposes its next applicable step; a single distinct proposal
    is taken, conflicting proposals are resolved uniformly at random, and
    with no proposal the memory-free baseline decides.
    """
    proposals: list[Action] = []
    for mem in applicable_memories(ctx):
        a = memory_proposal(mem, ctx)
        if a is not None and a not in proposals:
            proposals.append(a)
    if len(proposals) == 1:
        return proposals[0]
    if proposals:
        return rng.choice(proposals)
    return baseline_action(ctx, rng)


# -- memory-free baseline -----------------------------------------------------

def _content_tokens(text: str) -> list[str]:
    return [t for t in tokenize(text) if t not in STOPWORDS]


def _match(a: str, b: str) -> bool:
    if a == b:
        return True
    return min(len(a), len(b)) >= 4 and (a.startswith(b) or b.startswith(a))


def relevance(label: str, instruction_tokens: Sequence[str]) -> int:
    return sum(1 for t in set(_content_tokens(label))
               if any(_match(t, q) for q in instruction_tokens))


def _id_tokens(widget_id: str) -> list[str]:
    return [t for t in tokenize(widget_id.replace("_", " ")) if t not in STOPWORDS]


def baseline_action(ctx: ContextRecord, rng: random.Random) -> Action:
    """Lexical policy: open the hinted app, type quoted text, click label matches, then Finish."""
    instr = ctx.instruction
    obs = ctx.observation
    q_tokens = _content_tokens(instr.text)
    history = ctx.history.entries
    touched = {a.widget_id for a in history if a.widget_id is not None}
    typed = [a.text for a in history if a.variant == "Type"]
    pending = [q for q in quoted_strings(instr.text) if q not in typed]
    progress = bool(typed) or any(
        a.variant == "Click" and not a.widget_id.startswith("app_")
        and any(_match(t, q) for t in _id_tokens(a.widget_id) for q in q_tokens)
        for a in history)
    enabled = obs.enabled_widgets()

    hint = (instr.app_hint or "").lower()
    launchers = [w for w in enabled if hint and w.label.lower() == hint]
    if launchers and not progress:
        return Action.click(launchers[0].widget_id)

    fields = [w for w in enabled if w.kind == "field" and w.widget_id not in touched]
    if pending and fields:
        best = max(relevance(w.label, q_tokens) for w in fields)
        pick = rng.choice([w for w in fields if relevance(w.label, q_tokens) == best])
        return Action.type(pick.widget_id, pending[0])

    novel = [w for w in enabled if w.kind != "field" and w.widget_id not in touched]
    scored = [(relevance(w.label, q_tokens), w) for w in novel]
    best = max((s for s, _ in scored), default=0)
    if best > 0:
        return Action.click(rng.choice([w for s, w in scored if s == best]).widget_id)
    if progress and not pending:
        return Action.finish()
    if novel:
        return Action.click(rng.choice(novel).widget_id)
    return Action.back()


# -- episodes -----------------------------------------------------------------

@dataclass
class EpisodeResult:
    task_id: str
    seed: int
    success: bool
    sub_goal_flags: list[bool]
    steps_taken: int
    actions: list[Action]
    changed: list[bool]
    finish_emitted: bool
    retrieved: list[str] = field(default_factory=list)
    observations: list[Observation] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self, with_observations: bool = True) -> dict:
        d = {"task_id": self.task_id, "seed": self.seed, "success": self.success,
             "sub_goal_flags": self.sub_goal_flags, "steps_taken": self.steps_taken,
             "actions": [a.to_dict() for a in self.actions], "changed": self.changed,
             "finish_emitted": self.finish_emitted, "retrieved": self.retrieved,
             "error": self.error}
        if with_observations:
            d["observations"] = [o.to_dict() for o in self.observations]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        return cls(d["task_id"], d["seed"], d["success"], list(d["sub_goal_flags"]),
                   d["steps_taken"], [Action.from_dict(a) for a in d["actions"]],
                   list(d["changed"]), d["finish_emitted"], list(d.get("retrieved", [])),
                   [Observation.from_dict(o) for o in d.get("observations", [])],
                   d.get("error"))


Policy = Callable[[ContextRecord, random.Random], Action]


def run_task(task: TaskSpec | str, db: Optional[MemoryDB], cfg: RetrievalConfig = RetrievalConfig(),
             seed: int = 0, env: Optional[SimEnv] = None, retriever: Optional[Retriever] = None,
             policy: Policy = guide_step, T_max: int = T_MAX) -> EpisodeResult:
    """Retrieve memories once, then act until Finish or ``T_max`` actions."""
    env = env or SimEnv()
    task = env.task(task)
    instruction = task.instruction
    records: list[MemoryRecord] = []
    if cfg.K > 0 and db is not None and len(db):
        retriever = retriever or Retriever(db, cfg)
        records = retriever.topk(instruction, rng=random.Random(derive_seed(seed, task.id, "retrieve")))
    memories = format_memories(records)
    rng = random.Random(derive_seed(seed, task.id, "run"))
    state = env.initial_state(task, seed)
    obs = env.observe(state)
    history = ActionHistory()
    changed: list[bool] = []
    observations = [obs]
    finished, error = False, None
    for _ in range(T_max):
        action = policy(assemble_context(instruction, memories, history, obs), rng)
        if action.variant == "Finish":
            finished = True
            break
        try:
            eff = env.apply(state, action)
        except InvalidActionError as exc:
            error = str(exc)
            break
        history = history.append(action)
        changed.append(eff.changed_state)
        state, obs = eff.state, eff.new_observation
        observations.append(obs)
    flags = env.goal_status(state, task)
    return EpisodeResult(task.id, seed, error is None and all(flags), flags, len(history),
                         list(history.entries), changed, finished,
                         [r.id for r in records], observations, error)
