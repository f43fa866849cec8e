"""Deterministic simulated phone: apps as finite state machines over a small data store.

The suite (apps, screens, widgets, goal templates, tasks) is declarative JSON;
see ``docs/suite_schema.md``. Transitions are pure functions of
``(DeviceState, Action)``.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional

from .core import Action, Observation, TaskInstruction, ValidationError, Widget

DEFAULT_SUITE = "suite.json"
_QUOTED = re.compile(r'"([^"]+)"')


class UnknownTaskError(KeyError):
    pass


class InvalidActionError(ValueError):
    """Click/Type on a widget that is absent from, or disabled on, the current screen."""


def quoted_strings(text: str) -> list[str]:
    return _QUOTED.findall(text)


# -- conditions ---------------------------------------------------------------

def _cond_holds(cond: dict, app: str, screen: str, data: dict) -> bool:
    if "app" in cond:
        return app == cond["app"]
    if "screen" in cond:
        return screen == cond["screen"]
    v = data[cond["key"]]
    if "eq" in cond:
        return v == cond["eq"]
    if "ne" in cond:
        return v != cond["ne"]
    if "ge" in cond:
        return v >= cond["ge"]
    if "le" in cond:
        return v <= cond["le"]
    raise ValidationError(f"bad condition {cond!r}")


def _cond_keys(conds: Iterable[dict]) -> set[str]:
    return {c["key"] for c in conds if "key" in c}


# -- suite --------------------------------------------------------------------

@dataclass(frozen=True)
class WidgetSpec:
    id: str
    kind: str
    label: str
    page: int = 0
    enabled: bool = True
    enabled_if: tuple = ()
    goto: Optional[str] = None
    open: Optional[str] = None
    set: tuple = ()
    incr: tuple = ()
    clamp: Optional[tuple] = None
    toggle: Optional[str] = None
    copy: tuple = ()
    type_key: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "WidgetSpec":
        return cls(
            id=d["id"], kind=d["kind"], label=d["label"], page=d.get("page", 0),
            enabled=d.get("enabled", True), enabled_if=tuple(d.get("enabled_if", ())),
            goto=d.get("goto"), open=d.get("open"),
            set=tuple(d.get("set", {}).items()), incr=tuple(d.get("incr", {}).items()),
            clamp=tuple(d["clamp"]) if "clamp" in d else None,
            toggle=d.get("toggle"), copy=tuple(d.get("copy", {}).items()),
            type_key=d.get("type_key"),
        )

    def writes(self) -> set[str]:
        keys = {k for k, _ in self.set} | {k for k, _ in self.incr} | {k for k, _ in self.copy}
        if self.toggle:
            keys.add(self.toggle)
        if self.type_key:
            keys.add(self.type_key)
        return keys


@dataclass(frozen=True)
class ScreenSpec:
    id: str
    app: str
    widgets: tuple[WidgetSpec, ...]
    parent: Optional[str] = None
    scrollable: bool = False


@dataclass(frozen=True)
class GoalTemplate:
    id: str
    app: str
    text: str
    when: tuple


@dataclass(frozen=True)
class SubGoal:
    text: str
    when: tuple


@dataclass(frozen=True)
class TaskSpec:
    instruction: TaskInstruction
    sub_goals: tuple[SubGoal, ...]
    expert_steps: tuple[Action, ...]
    initial_data: tuple = ()

    def __post_init__(self):
        if not self.expert_steps:
            raise ValidationError(f"task {self.id!r} has no expert steps")

    @property
    def id(self) -> str:
        return self.instruction.id

    @property
    def app(self) -> Optional[str]:
        return self.instruction.app_hint

    @property
    def difficulty(self) -> str:
        return difficulty_of(len(self.expert_steps))


def difficulty_of(expert_len: int) -> str:
    if expert_len <= 3:
        return "easy"
    if expert_len <= 7:
        return "medium"
    return "hard"


@dataclass
class Suite:
    name: str
    home_app: str
    initial_data: dict
    apps: dict[str, dict]
    screens: dict[str, ScreenSpec]
    goals: list[GoalTemplate]
    tasks: dict[str, TaskSpec]
    source: str = ""

    @classmethod
    def from_dict(cls, d: dict, source: str = "") -> "Suite":
        apps, screens = {}, {}
        for app in d["apps"]:
            apps[app["id"]] = {"label": app["label"], "root": app["root"],
                               "screens": [s["id"] for s in app["screens"]]}
            for s in app["screens"]:
                if s["id"] in screens:
                    raise ValidationError(f"duplicate screen id {s['id']!r}")
                screens[s["id"]] = ScreenSpec(
                    s["id"], app["id"], tuple(WidgetSpec.from_dict(w) for w in s["widgets"]),
                    s.get("parent"), s.get("scrollable", False))
        goals = [GoalTemplate(g["id"], g["app"], g["text"], tuple(g["when"])) for g in d["goals"]]
        tasks = {}
        for t in d["tasks"]:
            if t["id"] in tasks:
                raise ValidationError(f"duplicate task id {t['id']!r}")
            tasks[t["id"]] = TaskSpec(
                TaskInstruction(t["id"], t["instruction"], t.get("app")),
                tuple(SubGoal(g["text"], tuple(g["when"])) for g in t["sub_goals"]),
                tuple(Action.from_dict(a) for a in t["expert_steps"]),
                tuple(t.get("initial_data", {}).items()),
            )
        suite = cls(d.get("name", ""), d["home_app"], dict(d["initial_data"]), apps,
                    screens, goals, tasks, source)
        suite._check()
        return suite

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Suite":
        if path is None:
            text = resources.files("echotrail.data").joinpath(DEFAULT_SUITE).read_text("utf-8")
            return cls.from_dict(json.loads(text), source=f"<package>/{DEFAULT_SUITE}")
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text("utf-8")), source=str(path))

    def _check(self):
        seen = set()
        for s in self.screens.values():
            for w in s.widgets:
                if w.id in seen:
                    raise ValidationError(f"widget id {w.id!r} is not unique in the suite")
                seen.add(w.id)
                if w.goto and w.goto not in self.screens:
                    raise ValidationError(f"{w.id}: unknown goto screen {w.goto!r}")
                if w.open and w.open not in self.apps:
                    raise ValidationError(f"{w.id}: unknown app {w.open!r}")
                for k in w.writes() | _cond_keys(w.enabled_if) | {src for _, src in w.copy}:
                    if k not in self.initial_data:
                        raise ValidationError(f"{w.id}: unknown data key {k!r}")
        for t in self.tasks.values():
            for k, _ in t.initial_data:
                if k not in self.initial_data:
                    raise ValidationError(f"task {t.id}: unknown data key {k!r}")

    @cached_property
    def widget_index(self) -> dict[str, tuple[str, WidgetSpec]]:
        return {w.id: (s.id, w) for s in self.screens.values() for w in s.widgets}

    @cached_property
    def app_order(self) -> list[str]:
        return [a for a in self.apps if a != self.home_app]

    def goals_for(self, app: str) -> list[GoalTemplate]:
        return [g for g in self.goals if g.app == app]

    def goal(self, goal_id: str) -> GoalTemplate:
        for g in self.goals:
            if g.id == goal_id:
                return g
        raise KeyError(goal_id)


# -- state --------------------------------------------------------------------

@dataclass(frozen=True)
class DeviceState:
    """Current app, per-app (screen, scroll page) pointers, the data store, and the episode seed."""

    current_app: str
    pointers: tuple[tuple[str, str, int], ...]
    data: tuple[tuple[str, Any], ...]
    rng_seed: int = 0

    def data_dict(self) -> dict:
        return dict(self.data)

    def pointer(self, app: str) -> tuple[str, int]:
        for a, s, p in self.pointers:
            if a == app:
                return s, p
        raise KeyError(app)

    @property
    def screen_id(self) -> str:
        return self.pointer(self.current_app)[0]

    def to_dict(self) -> dict:
        return {"current_app": self.current_app,
                "pointers": [list(p) for p in self.pointers],
                "data": dict(self.data), "rng_seed": self.rng_seed}


@dataclass(frozen=True)
class StepEffect:
    changed_state: bool
    new_observation: Observation
    state: DeviceState


# -- environment --------------------------------------------------------------

class SimEnv:
    """Pure transition system over a suite. Holds no episode state."""

    def __init__(self, suite: Optional[Suite] = None):
        self.suite = suite or Suite.load()
        self._expert_len_cache: dict[str, int] = {}
        self._goal_len_cache: dict[str, Optional[int]] = {}
        self._plan_cache: dict = {}
        self._goal_keys_cache: dict = {}

    # tasks ----------------------------------------------------------------
    @property
    def tasks(self) -> list[TaskSpec]:
        return list(self.suite.tasks.values())

    def task(self, task: str | TaskSpec) -> TaskSpec:
        task_id = task.id if isinstance(task, TaskSpec) else task
        try:
            return self.suite.tasks[task_id]
        except KeyError:
            raise UnknownTaskError(task_id) from None

    def expert_length(self, task: str | TaskSpec) -> int:
        return len(self.task(task).expert_steps)

    # states ---------------------------------------------------------------
    def initial_state(self, task: str | TaskSpec | None = None, seed: int = 0) -> DeviceState:
        data = dict(self.suite.initial_data)
        if task is not None:
            data.update(self.task(task).initial_data)
        pointers = tuple((a, self.suite.apps[a]["root"], 0) for a in self.suite.apps)
        return DeviceState(self.suite.home_app, pointers, tuple(data.items()), seed)

    def reset(self, task: str | TaskSpec, seed: int = 0) -> Observation:
        return self.observe(self.initial_state(task, seed))

    def observe(self, state: DeviceState) -> Observation:
        screen_id, page = state.pointer(state.current_app)
        return self._render(screen_id, page, state.data_dict())

    def _render(self, screen_id: str, page: int, data: dict) -> Observation:
        screen = self.suite.screens[screen_id]
        widgets = tuple(
            Widget(w.id, w.kind, w.label, self._enabled(w, data))
            for w in screen.widgets if w.page == page
        )
        return Observation(screen.app, screen_id, widgets)

    def _enabled(self, w: WidgetSpec, data: dict) -> bool:
        if not w.enabled:
            return False
        return all(_cond_holds(c, "", "", data) for c in w.enabled_if if c["key"] in data)

    def holds(self, state: DeviceState, conds: Iterable[dict]) -> bool:
        data = state.data_dict()
        return all(_cond_holds(c, state.current_app, state.screen_id, data) for c in conds)

    def goal_status(self, state: DeviceState, task: str | TaskSpec) -> list[bool]:
        return [self.holds(state, g.when) for g in self.task(task).sub_goals]

    def is_complete(self, state: DeviceState, task: str | TaskSpec) -> bool:
        return all(self.goal_status(state, task))

    # transitions ----------------------------------------------------------
    def apply(self, state: DeviceState, a: Action) -> StepEffect:
        pointers = {app: (s, p) for app, s, p in state.pointers}
        data = state.data_dict()
        app = self._step(state.current_app, pointers, data, a, strict=True)
        new = DeviceState(app, tuple((k, s, p) for k, (s, p) in pointers.items()),
                          tuple(data.items()), state.rng_seed)
        return StepEffect(new != state, self.observe(new), new)

    def _step(self, app: str, pointers: dict, data: dict, a: Action, strict: bool) -> str:
        """Mutate ``pointers``/``data`` in place; return the new current app.

        With ``strict=False`` (planning on a projected store) writes to keys
        absent from ``data`` are dropped.
        """
        suite = self.suite
        screen_id, page = pointers[app]
        screen = suite.screens[screen_id]
        if a.variant == "Finish":
            return app
        if a.variant == "Home":
            return suite.home_app
        if a.variant == "Back":
            if app == suite.home_app:
                return app
            if screen.parent is not None:
                pointers[app] = (screen.parent, 0)
                return app
            pointers[app] = (suite.apps[app]["root"], 0)
            return suite.home_app
        if a.variant == "Scroll":
            if screen.scrollable:
                pointers[app] = (screen_id, 1 if a.direction == "down" else 0)
            return app

        entry = suite.widget_index.get(a.widget_id)
        if entry is None or entry[0] != screen_id or entry[1].page != page:
            if strict:
                raise InvalidActionError(f"{a} references a widget not on screen {screen_id}")
            return app
        w = entry[1]
        if not self._enabled(w, data):
            if strict:
                raise InvalidActionError(f"{a} targets disabled widget {w.id}")
            return app
        if a.variant == "Type":
            if w.type_key and w.type_key in data:
                data[w.type_key] = a.text
            return app
        if w.kind == "field":
            return app
        for k, v in w.set:
            if k in data:
                data[k] = v
        for k, dv in w.incr:
            if k in data:
                v = data[k] + dv
                if w.clamp:
                    v = max(w.clamp[0], min(w.clamp[1], v))
                data[k] = v
        if w.toggle and w.toggle in data:
            data[w.toggle] = not data[w.toggle]
        if w.copy:
            srcs = {dst: data[src] for dst, src in w.copy if dst in data and src in data}
            data.update(srcs)
        if w.goto:
            pointers[app] = (w.goto, 0)
        if w.open:
            return w.open
        return app

    # planning -------------------------------------------------------------
    def candidate_actions(self, obs: Observation, texts: Iterable[str] = ()) -> list[Action]:
        """Every well-formed action on ``obs``: clicks, typed ``texts``, scrolls, Back, Home."""
        texts = list(texts)
        out = []
        for w in obs.widgets:
            if not w.enabled:
                continue
            if w.kind == "field":
                out.extend(Action.type(w.widget_id, t) for t in texts)
            else:
                out.append(Action.click(w.widget_id))
        if self.suite.screens[obs.screen_id].scrollable:
            out += [Action.scroll("down"), Action.scroll("up")]
        out += [Action.back(), Action.home()]
        return out

    def relevant_keys(self, conds: Iterable[dict]) -> frozenset[str]:
        """Data keys that can influence ``conds`` or widget enablement."""
        keys = _cond_keys(conds)
        widgets = [w for s in self.suite.screens.values() for w in s.widgets]
        for w in widgets:
            keys |= _cond_keys(w.enabled_if)
        changed = True
        while changed:
            changed = False
            for w in widgets:
                for dst, src in w.copy:
                    if dst in keys and src not in keys:
                        keys.add(src)
                        changed = True
        return frozenset(keys)

    def shortest_path(self, state: DeviceState, conds: Iterable[dict],
                      texts: Iterable[str] = (), max_depth: int = 40,
                      project: bool = True, scope: Optional[str] = None) -> Optional[list[Action]]:
        """Breadth-first search for a shortest action sequence making ``conds`` hold.

        ``project`` restricts the searched data store to ``relevant_keys``,
        which leaves shortest-path lengths unchanged. ``scope`` confines the
        search to one app (no Home, no leaving through Back, no other apps);
        for goals over a single app's data this is also length-preserving.
        Returns None when no plan exists within ``max_depth``.
        """
        conds = tuple(conds)
        texts = tuple(texts)
        full = state.data_dict()
        keys = self.relevant_keys(conds) if project else frozenset(full)
        if scope is not None:
            keys = frozenset(k for k in keys if k.startswith(scope + "."))
        order = [k for k in full if k in keys]
        start = (state.current_app,
                 tuple(sorted((a, s, p) for a, s, p in state.pointers)),
                 tuple(full[k] for k in order))

        def check(node) -> bool:
            app, ptrs, vals = node
            screen = dict((a, s) for a, s, _ in ptrs)[app]
            data = dict(zip(order, vals))
            return all(_cond_holds(c, app, screen, data) for c in conds)

        if check(start):
            return []
        parents: dict = {start: None}
        frontier = deque([(start, 0)])
        while frontier:
            node, depth = frontier.popleft()
            if depth >= max_depth:
                continue
            app, ptrs, vals = node
            ptr_map = {a: (s, p) for a, s, p in ptrs}
            data = dict(zip(order, vals))
            obs = self._render(ptr_map[app][0], ptr_map[app][1], data)
            for a in self.candidate_actions(obs, texts):
                if scope is not None and not self._in_scope(app, ptr_map, a, scope):
                    continue
                p2, d2 = dict(ptr_map), dict(data)
                app2 = self._step(app, p2, d2, a, strict=False)
                nxt = (app2, tuple(sorted((k, s, p) for k, (s, p) in p2.items())),
                       tuple(d2[k] for k in order))
                if nxt in parents:
                    continue
                parents[nxt] = (node, a)
                if check(nxt):
                    path = []
                    cur = nxt
                    while parents[cur] is not None:
                        cur, act = parents[cur]
                        path.append(act)
                    return path[::-1]
                frontier.append((nxt, depth + 1))
        return None

    def _in_scope(self, app: str, ptr_map: dict, a: Action, scope: str) -> bool:
        if a.variant == "Home":
            return False
        if app == self.suite.home_app:
            if a.variant != "Click":
                return False
            return self.suite.widget_index[a.widget_id][1].open == scope
        if app != scope:
            return False
        if a.variant == "Back":
            return self.suite.screens[ptr_map[app][0]].parent is not None
        if a.variant == "Click":
            return self.suite.widget_index[a.widget_id][1].open is None
        return True

    def plan(self, state: DeviceState, goal: "GoalTemplate") -> Optional[list[Action]]:
        """Shortest plan for a single-app goal template, memoised on the relevant state."""
        keys = self._goal_keys(goal)
        ptr = state.pointer(goal.app)
        data = state.data_dict()
        key = (goal.id, state.current_app == goal.app, state.current_app == self.suite.home_app,
               ptr, tuple(data[k] for k in keys))
        if key not in self._plan_cache:
            if state.current_app not in (goal.app, self.suite.home_app):
                pre = [Action.home()]
                state = self.apply(state, pre[0]).state
            else:
                pre = []
            path = self.shortest_path(state, goal.when, quoted_strings(goal.text), scope=goal.app)
            self._plan_cache[key] = None if path is None else tuple(pre + path)
        path = self._plan_cache[key]
        return None if path is None else list(path)

    def _goal_keys(self, goal: "GoalTemplate") -> tuple[str, ...]:
        if goal.id not in self._goal_keys_cache:
            keys = self.relevant_keys(goal.when)
            self._goal_keys_cache[goal.id] = tuple(
                sorted(k for k in keys if k.startswith(goal.app + ".")))
        return self._goal_keys_cache[goal.id]

    def goal_texts(self, text: str) -> list[str]:
        return quoted_strings(text)

    def goal_expert_length(self, goal: GoalTemplate) -> Optional[int]:
        """Shortest solution length of a goal template from the default start state."""
        if goal.id not in self._goal_len_cache:
            path = self.plan(self.initial_state(), goal)
            self._goal_len_cache[goal.id] = None if path is None else len(path)
        return self._goal_len_cache[goal.id]
