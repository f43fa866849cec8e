"""Dual memory: the run-scoped processing DB and the persistent curated memory DB.

The memory DB is stored as a ``.etmem`` file: a header line followed by one
JSON ``MemoryRecord`` per line (see ``docs/etmem_format.md``).
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import AbstractedTrajectory, RawStep, Trajectory, ValidationError, dumps
from .text import Embedder, embed, tokenize

THETA_GOOD = 4
DEDUP_COSINE = 0.95
PROC_CAPACITY = 64
ETMEM_FORMAT = "etmem"
ETMEM_VERSION = 1


class GateViolation(ValueError):
    """A record below the critic threshold was offered to the memory DB."""


class CorruptMemoryFile(ValueError):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}: line {line_no}: {reason}")
        self.line_no = line_no


def record_document(abstracted: AbstractedTrajectory) -> str:
    """Text indexed by the sparse retriever: final intent, step intents, interface descriptions."""
    parts = [abstracted.final_intent]
    for s in abstracted.steps:
        parts.append(s.intent)
        parts.append(s.interface_description)
    return "\n".join(parts)


@dataclass(frozen=True)
class MemoryRecord:
    abstracted: AbstractedTrajectory
    intent_embedding: tuple[float, ...]
    token_count: int

    @property
    def id(self) -> str:
        return self.abstracted.id

    @property
    def final_intent(self) -> str:
        return self.abstracted.final_intent

    @property
    def score(self) -> int:
        return self.abstracted.score.value

    def vector(self) -> np.ndarray:
        return np.asarray(self.intent_embedding, dtype=np.float64)

    @classmethod
    def build(cls, abstracted: AbstractedTrajectory, embedder: Embedder = embed) -> "MemoryRecord":
        vec = embedder(abstracted.final_intent)
        return cls(abstracted, tuple(float(x) for x in vec),
                   len(tokenize(record_document(abstracted))))

    def to_json(self) -> str:
        # 17 significant digits round-trips every float64 exactly
        emb = "[" + ",".join(format(x, ".17g") for x in self.intent_embedding) + "]"
        head = dumps({"abstracted": self.abstracted.to_dict()})[:-1]
        return f'{head},"intent_embedding":{emb},"token_count":{self.token_count}}}'

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryRecord":
        return cls(AbstractedTrajectory.from_dict(d["abstracted"]),
                   tuple(float(x) for x in d["intent_embedding"]), int(d["token_count"]))


class MemoryDB:
    """Curated memory of abstracted trajectories that passed the critic gate.

    Single writer (inserts are serialised by a lock), many readers; readers
    take ``snapshot()`` which is an immutable tuple plus a version stamp.
    """

    def __init__(self, path: str | Path | None = None, theta_good: int = THETA_GOOD,
                 embedder: Embedder = embed, enforce_gate: bool = True):
        self.path = Path(path) if path is not None else None
        self.theta_good = theta_good
        self.embedder = embedder
        self.enforce_gate = enforce_gate
        self._records: list[MemoryRecord] = []
        self._ids: set[str] = set()
        self._lock = threading.Lock()
        self.version = 0

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[MemoryRecord]:
        return iter(tuple(self._records))

    def __eq__(self, other) -> bool:
        if not isinstance(other, MemoryDB):
            return NotImplemented
        return self._records == other._records

    @property
    def records(self) -> tuple[MemoryRecord, ...]:
        return tuple(self._records)

    def snapshot(self) -> tuple[tuple[MemoryRecord, ...], int]:
        with self._lock:
            return tuple(self._records), self.version

    def _is_duplicate(self, rec: MemoryRecord) -> bool:
        v = rec.vector()
        actions = rec.abstracted.actions
        for old in self._records:
            if old.abstracted.actions != actions:
                continue
            if float(np.dot(v, old.vector())) >= DEDUP_COSINE:
                return True
        return False

    def insert(self, rec: MemoryRecord) -> str:
        """Append ``rec``; returns ``"inserted"`` or ``"deduplicated"``."""
        if self.enforce_gate and rec.score < self.theta_good:
            raise GateViolation(f"record {rec.id} scored {rec.score} < {self.theta_good}")
        with self._lock:
            if rec.id in self._ids:
                raise ValidationError(f"duplicate record id {rec.id!r}")
            if self._is_duplicate(rec):
                return "deduplicated"
            self._records.append(rec)
            self._ids.add(rec.id)
            self.version += 1
            return "inserted"

    def add(self, abstracted: AbstractedTrajectory) -> str:
        return self.insert(MemoryRecord.build(abstracted, self.embedder))

    # persistence ----------------------------------------------------------
    def header(self) -> dict:
        return {"format": ETMEM_FORMAT, "schema_version": ETMEM_VERSION,
                "embed_dim": getattr(self.embedder, "dim", None) or len(self.embedder("x")),
                "theta_good": self.theta_good, "gated": self.enforce_gate,
                "count": len(self._records)}

    def persist(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path is not None else self.path
        if path is None:
            raise ValueError("no path given for persist()")
        records, _ = self.snapshot()
        lines = [dumps(self.header())] + [r.to_json() for r in records]
        tmp = path.with_name(path.name + ".tmp")
        tmp.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        tmp.replace(path)
        self.path = path
        return path

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder = embed) -> "MemoryDB":
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise CorruptMemoryFile(path, 1, "missing header")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise CorruptMemoryFile(path, 1, f"bad header: {e}") from None
        if header.get("format") != ETMEM_FORMAT or header.get("schema_version") != ETMEM_VERSION:
            raise CorruptMemoryFile(path, 1, f"unsupported header {header!r}")
        db = cls(path, header.get("theta_good", THETA_GOOD), embedder, header.get("gated", True))
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                rec = MemoryRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorruptMemoryFile(path, n, str(e)) from None
            fresh = tuple(float(x) for x in embedder(rec.final_intent))
            if fresh != rec.intent_embedding:
                raise CorruptMemoryFile(path, n, "stored embedding differs from recomputed embedding")
            try:
                db.insert(rec)
            except (GateViolation, ValidationError) as e:
                raise CorruptMemoryFile(path, n, str(e)) from None
        return db


# -- processing DB ------------------------------------------------------------

@dataclass(frozen=True)
class ProcEntry:
    trajectory_id: str
    steps: tuple[RawStep, ...]
    outcomes: tuple[bool, ...]


class ProcessingDB:
    """Volatile ring of in-progress trajectories and their per-step outcomes.

    An outcome is True ("succeeded") when the step changed device state.
    Never persisted; cleared at the start of each exploration run.
    """

    def __init__(self, capacity: int = PROC_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._entries: OrderedDict[str, ProcEntry] = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def clear(self) -> None:
        self._entries.clear()

    def update(self, partial: Trajectory, outcomes: Iterable[bool]) -> None:
        outcomes = tuple(outcomes)
        if len(outcomes) != len(partial.steps):
            raise ValidationError("one outcome per step required")
        self._entries.pop(partial.id, None)
        self._entries[partial.id] = ProcEntry(partial.id, partial.steps, outcomes)
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)

    def entries(self) -> list[ProcEntry]:
        """Oldest first."""
        return list(self._entries.values())

    def get(self, trajectory_id: str) -> Optional[ProcEntry]:
        return self._entries.get(trajectory_id)


def proc_update(d_proc: ProcessingDB, partial: Trajectory, outcomes: Iterable[bool]) -> None:
    d_proc.update(partial, outcomes)
