"""Shared data model: tasks, screens, actions, trajectories and their abstracted form.

All types are frozen dataclasses. Every type has a canonical JSON form
(``to_dict`` / ``from_dict``); ``dumps`` produces the byte-stable encoding
used for every line-oriented file in the package.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

WIDGET_KINDS = ("button", "field", "list_item", "toggle")
ACTION_VARIANTS = ("Click", "Type", "Scroll", "Back", "Home", "Finish")
EXPLORE_INTENT = "explore"


class ValidationError(ValueError):
    """Raised when a value violates a data-model invariant."""


def dumps(obj: Any) -> str:
    """Canonical compact JSON (insertion-ordered keys, no ASCII escaping)."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class TaskInstruction:
    id: str
    text: str
    app_hint: Optional[str] = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError(f"task {self.id!r}: empty instruction text")

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "app_hint": self.app_hint}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskInstruction":
        return cls(d["id"], d["text"], d.get("app_hint"))


@dataclass(frozen=True)
class Action:
    variant: str
    widget_id: Optional[str] = None
    text: Optional[str] = None
    direction: Optional[str] = None

    def __post_init__(self):
        if self.variant not in ACTION_VARIANTS:
            raise ValidationError(f"unknown action variant {self.variant!r}")
        if self.variant in ("Click", "Type"):
            if not self.widget_id:
                raise ValidationError(f"{self.variant} needs a widget_id")
            if self.variant == "Type" and self.text is None:
                raise ValidationError("Type needs text")
        elif self.widget_id is not None or self.text is not None:
            raise ValidationError(f"{self.variant} carries no widget payload")
        if self.variant == "Scroll":
            if self.direction not in ("up", "down"):
                raise ValidationError(f"bad scroll direction {self.direction!r}")
        elif self.direction is not None:
            raise ValidationError(f"{self.variant} carries no direction")

    @classmethod
    def click(cls, widget_id: str) -> "Action":
        return cls("Click", widget_id=widget_id)

    @classmethod
    def type(cls, widget_id: str, text: str) -> "Action":
        return cls("Type", widget_id=widget_id, text=text)

    @classmethod
    def scroll(cls, direction: str) -> "Action":
        return cls("Scroll", direction=direction)

    @classmethod
    def back(cls) -> "Action":
        return cls("Back")

    @classmethod
    def home(cls) -> "Action":
        return cls("Home")

    @classmethod
    def finish(cls) -> "Action":
        return cls("Finish")

    @property
    def is_navigation(self) -> bool:
        return self.variant in ("Scroll", "Back", "Home", "Finish")

    def to_dict(self) -> dict:
        d: dict = {"variant": self.variant}
        if self.widget_id is not None:
            d["widget_id"] = self.widget_id
        if self.text is not None:
            d["text"] = self.text
        if self.direction is not None:
            d["direction"] = self.direction
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Action":
        return cls(d["variant"], d.get("widget_id"), d.get("text"), d.get("direction"))

    def __str__(self) -> str:
        if self.variant == "Click":
            return f"Click({self.widget_id})"
        if self.variant == "Type":
            return f"Type({self.widget_id}, {self.text!r})"
        if self.variant == "Scroll":
            return f"Scroll({self.direction})"
        return f"{self.variant}()"


@dataclass(frozen=True)
class Widget:
    widget_id: str
    kind: str
    label: str
    enabled: bool = True

    def __post_init__(self):
        if self.kind not in WIDGET_KINDS:
            raise ValidationError(f"unknown widget kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"widget_id": self.widget_id, "kind": self.kind,
                "label": self.label, "enabled": self.enabled}

    @classmethod
    def from_dict(cls, d: dict) -> "Widget":
        return cls(d["widget_id"], d["kind"], d["label"], d["enabled"])


@dataclass(frozen=True)
class Observation:
    app_id: str
    screen_id: str
    widgets: tuple[Widget, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "widgets", tuple(self.widgets))
        ids = [w.widget_id for w in self.widgets]
        if len(ids) != len(set(ids)):
            raise ValidationError(f"duplicate widget ids on {self.screen_id}")

    def widget(self, widget_id: str) -> Optional[Widget]:
        for w in self.widgets:
            if w.widget_id == widget_id:
                return w
        return None

    def enabled_widgets(self) -> list[Widget]:
        return [w for w in self.widgets if w.enabled]

    def to_dict(self) -> dict:
        return {"app_id": self.app_id, "screen_id": self.screen_id,
                "widgets": [w.to_dict() for w in self.widgets]}

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls(d["app_id"], d["screen_id"],
                   tuple(Widget.from_dict(w) for w in d["widgets"]))


@dataclass(frozen=True)
class CriticScore:
    value: int

    def __post_init__(self):
        if isinstance(self.value, bool) or not isinstance(self.value, int):
            raise ValidationError(f"critic score must be an int, got {self.value!r}")
        if not 1 <= self.value <= 5:
            raise ValidationError(f"critic score {self.value} outside [1, 5]")

    def to_dict(self) -> dict:
        return {"value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "CriticScore":
        return cls(d["value"])


@dataclass(frozen=True)
class RawStep:
    observation: Observation
    action: Action
    intent: str = EXPLORE_INTENT

    def __post_init__(self):
        if self.action.variant in ("Click", "Type"):
            if self.observation.widget(self.action.widget_id) is None:
                raise ValidationError(
                    f"{self.action} references a widget absent from {self.observation.screen_id}")

    def to_dict(self) -> dict:
        return {"observation": self.observation.to_dict(),
                "action": self.action.to_dict(), "intent": self.intent}

    @classmethod
    def from_dict(cls, d: dict) -> "RawStep":
        return cls(Observation.from_dict(d["observation"]),
                   Action.from_dict(d["action"]), d.get("intent", EXPLORE_INTENT))


@dataclass(frozen=True)
class Trajectory:
    id: str
    steps: tuple[RawStep, ...]
    final_intent: str = ""
    episode_seed: int = 0
    task_hint: Optional[str] = None
    critic_score: Optional[CriticScore] = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def actions(self) -> list[Action]:
        return [s.action for s in self.steps]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "task_hint": self.task_hint,
            "steps": [s.to_dict() for s in self.steps],
            "final_intent": self.final_intent,
            "episode_seed": self.episode_seed,
            "critic_score": self.critic_score.to_dict() if self.critic_score else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        cs = d.get("critic_score")
        return cls(d["id"], tuple(RawStep.from_dict(s) for s in d["steps"]),
                   d["final_intent"], d["episode_seed"], d.get("task_hint"),
                   CriticScore.from_dict(cs) if cs else None)


@dataclass(frozen=True)
class AbstractedStep:
    interface_description: str
    intent: str
    action: Action

    def __post_init__(self):
        if not self.interface_description or not self.intent:
            raise ValidationError("abstracted step needs a description and an intent")

    def to_dict(self) -> dict:
        return {"interface_description": self.interface_description,
                "intent": self.intent, "action": self.action.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "AbstractedStep":
        return cls(d["interface_description"], d["intent"], Action.from_dict(d["action"]))


@dataclass(frozen=True)
class AbstractedTrajectory:
    id: str
    final_intent: str
    steps: tuple[AbstractedStep, ...]
    score: CriticScore

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def actions(self) -> list[Action]:
        return [s.action for s in self.steps]

    def to_dict(self) -> dict:
        return {"id": self.id, "final_intent": self.final_intent,
                "steps": [s.to_dict() for s in self.steps],
                "score": self.score.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "AbstractedTrajectory":
        return cls(d["id"], d["final_intent"],
                   tuple(AbstractedStep.from_dict(s) for s in d["steps"]),
                   CriticScore.from_dict(d["score"]))


@dataclass(frozen=True)
class ActionHistory:
    entries: tuple[Action, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def append(self, action: Action) -> "ActionHistory":
        return ActionHistory(self.entries + (action,))

    def to_dict(self) -> dict:
        return {"entries": [a.to_dict() for a in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionHistory":
        return cls(tuple(Action.from_dict(a) for a in d["entries"]))


ObservationSummarizer = Callable[[Observation], str]


def trajectory_id(run_seed: int, episode_index: int) -> str:
    return f"{run_seed}-{episode_index}"


def abstract_trajectory(raw: Trajectory, summarizer: ObservationSummarizer) -> AbstractedTrajectory:
    """Rewrite a scored raw trajectory as (interface description, intent, action) steps."""
    if not raw.steps:
        raise ValidationError(f"trajectory {raw.id!r} has no steps")
    if raw.critic_score is None:
        raise ValidationError(f"trajectory {raw.id!r} has not been scored")
    steps = tuple(
        AbstractedStep(summarizer(s.observation), s.intent or EXPLORE_INTENT, s.action)
        for s in raw.steps
    )
    return AbstractedTrajectory(raw.id, raw.final_intent, steps, raw.critic_score)


def summarize_observation(obs: Observation) -> str:
    """Default interface description: ``App <app> screen <screen>: widgets [<kind>:<label>, ...]``."""
    items = ", ".join(f"{w.kind}:{w.label}" for w in obs.widgets)
    return f"App {obs.app_id} screen {obs.screen_id}: widgets [{items}]"


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary parts (unlike ``hash``, identical across processes)."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def validate_action(obs: Observation, a: Action) -> bool:
    if a.variant in ("Back", "Home", "Scroll", "Finish"):
        return True
    w = obs.widget(a.widget_id)
    return w is not None and w.enabled
