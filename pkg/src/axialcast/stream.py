"""Event-triggered live inference.

A :class:`Session` follows one match. Every event updates the game state;
key events also write a feature row to the :class:`FeatureStore`, rebuild
the input grid from the stored history and run a forward pass. The
resulting :class:`ForecastMessage` goes to a sink as one JSON line.
"""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data.features import MatchInputs, MatchState, StrengthStore, game_context_features
from .data.records import EventRecord, MatchRecord
from .data.schema import DEFAULT_SCHEMA, Schema
from .model import ForecastModel, ForecastOutput, collate_inputs

MESSAGE_SCHEMA = "axialcast.forecast"
MESSAGE_VERSION = 1
OUTCOME_LABELS = ("home", "draw", "away")
DEFAULT_STEP_CAPACITY = 256


class StreamError(RuntimeError):
    pass


class UnknownSession(StreamError, KeyError):
    pass


class StoreGap(StreamError):
    def __init__(self, match_id: str, kind: str, step: int):
        super().__init__(f"feature store has no {kind!r} entry for match {match_id} at step {step}")
        self.match_id, self.kind, self.step = match_id, kind, step


class MessageError(ValueError):
    pass


# -- feature store ------------------------------------------------------------


class FeatureStore:
    """Append-only map ``(match_id, kind, step) -> {name: array}``.

    Kinds are ``"game_context"`` and ``"strength"`` at step 0 and
    ``"event"`` at steps 1..T. Event steps must arrive in order. With a
    ``path`` every write is also appended to a JSON-lines log, and
    :meth:`load` replays that log.
    """

    KINDS = ("game_context", "strength", "event")

    def __init__(self, path=None):
        self._data: dict[tuple[str, str, int], dict[str, np.ndarray]] = {}
        self._next: dict[str, int] = {}
        self.path = Path(path) if path is not None else None

    def put(self, match_id: str, kind: str, step: int, value: dict[str, np.ndarray]) -> None:
        if kind not in self.KINDS:
            raise ValueError(f"unknown feature kind {kind!r}")
        key = (match_id, kind, step)
        if key in self._data:
            raise StreamError(f"feature store entry {key} already written")
        if kind == "event":
            expected = self._next.get(match_id, 1)
            if step != expected:
                raise StoreGap(match_id, kind, expected)
            self._next[match_id] = step + 1
        elif step != 0:
            raise ValueError(f"{kind} features live at step 0")
        frozen = {k: np.array(v, dtype=float) for k, v in value.items()}
        for v in frozen.values():
            v.flags.writeable = False
        self._data[key] = frozen
        if self.path is not None:
            with open(self.path, "a") as fh:
                rec = {"match_id": match_id, "kind": kind, "step": step,
                       "value": {k: v.tolist() for k, v in frozen.items()}}
                fh.write(json.dumps(rec) + "\n")

    def get(self, match_id: str, kind: str, step: int) -> dict[str, np.ndarray]:
        try:
            return self._data[(match_id, kind, step)]
        except KeyError:
            raise StoreGap(match_id, kind, step) from None

    def steps(self, match_id: str) -> int:
        """Number of event steps written for a match."""
        return self._next.get(match_id, 1) - 1

    def __contains__(self, key) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    @classmethod
    def load(cls, path) -> "FeatureStore":
        store = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    store.put(rec["match_id"], rec["kind"], rec["step"], rec["value"])
        store.path = Path(path)
        return store


# -- messages -----------------------------------------------------------------


@dataclass
class ForecastMessage:
    match_id: str
    event_index: int  # grid column; 0 is the pre-game forecast
    event_type: str
    clock: float
    players: list[dict]  # {"id", "actions": {a: {"params", "expected_total", "running"}}}
    teams: list[dict]
    outcome: dict[str, float]
    model_version: str
    latency: float  # seconds
    version: int = MESSAGE_VERSION

    @property
    def predictions(self) -> int:
        """Forecasts carried: one per (agent, action) plus the outcome."""
        return sum(len(p["actions"]) for p in self.players + self.teams) + 1

    def to_dict(self) -> dict:
        return {
            "schema": MESSAGE_SCHEMA,
            "version": self.version,
            "match_id": self.match_id,
            "event_index": self.event_index,
            "event_type": self.event_type,
            "clock": self.clock,
            "model_version": self.model_version,
            "latency": self.latency,
            "outcome": self.outcome,
            "players": self.players,
            "teams": self.teams,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastMessage":
        validate_message(d)
        return cls(
            match_id=d["match_id"], event_index=d["event_index"], event_type=d["event_type"], clock=d["clock"],
            players=d["players"], teams=d["teams"], outcome=d["outcome"], model_version=d["model_version"],
            latency=d["latency"], version=d["version"],
        )


def validate_message(d: dict, tol: float = 1e-6) -> None:
    """Check structure, the outcome simplex and totals ≥ running counts."""
    required = ("schema", "version", "match_id", "event_index", "event_type", "clock", "model_version",
                "latency", "outcome", "players", "teams")
    missing = [k for k in required if k not in d]
    if missing:
        raise MessageError(f"message lacks {missing}")
    if d["schema"] != MESSAGE_SCHEMA or d["version"] != MESSAGE_VERSION:
        raise MessageError(f"unsupported message {d['schema']} v{d['version']}")
    probs = [d["outcome"].get(k) for k in OUTCOME_LABELS]
    if any(p is None or not 0 <= p <= 1 for p in probs):
        raise MessageError(f"outcome probabilities out of range: {d['outcome']}")
    if abs(sum(probs) - 1) > tol:
        raise MessageError(f"outcome probabilities sum to {sum(probs)!r}")
    for agent in d["players"] + d["teams"]:
        for action, entry in agent["actions"].items():
            if not entry["expected_total"] >= entry["running"]:
                raise MessageError(f"{agent['id']} {action}: expected total below running count")
            if any(not math.isfinite(x) for x in entry["params"]):
                raise MessageError(f"{agent['id']} {action}: non-finite parameters")


class MemorySink:
    def __init__(self):
        self.messages: list[ForecastMessage] = []

    def write(self, message: ForecastMessage) -> None:
        self.messages.append(message)

    def close(self) -> None:
        pass


class FileSink:
    def __init__(self, path):
        self._fh = open(path, "w")

    def write(self, message: ForecastMessage) -> None:
        self._fh.write(message.to_json() + "\n")

    def close(self) -> None:
        self._fh.close()


class StdoutSink:
    def write(self, message: ForecastMessage) -> None:
        sys.stdout.write(message.to_json() + "\n")

    def close(self) -> None:
        sys.stdout.flush()


def read_messages(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- sessions -----------------------------------------------------------------


class Session:
    """Live forecasting for one match; events must arrive in order.

    Inputs are padded to ``step_capacity`` columns so every forward pass has
    the same shape; the capacity doubles if a match outruns it.
    """

    def __init__(self, model: ForecastModel, match: MatchRecord, strength: StrengthStore,
                 store: FeatureStore | None = None, schema: Schema = DEFAULT_SCHEMA,
                 step_capacity: int = DEFAULT_STEP_CAPACITY, model_version: str = "unversioned", sink=None):
        self.model = model
        self.match = match
        self.schema = schema
        self.store = store if store is not None else FeatureStore()
        self.step_capacity = step_capacity
        self.model_version = model_version
        self.sink = sink
        self.state = MatchState(match, schema)
        self.step = -1  # -1 until the pre-game trigger
        self.ids = [p.id for p in match.squad]
        strength_p = strength.player_matrix(self.ids, schema)
        strength_t = strength.team_matrix(list(match.teams), schema)
        self._pregame = {"player_strength": strength_p, "team_strength": strength_t}

    @property
    def match_id(self) -> str:
        return self.match.match_id

    def start(self) -> ForecastMessage:
        """Write pre-game features and emit the step-0 forecast."""
        if self.step >= 0:
            raise StreamError(f"session {self.match_id} already started")
        t0 = time.perf_counter()
        mid = self.match_id
        self.store.put(mid, "game_context", 0, {"game_context": game_context_features(self.match, self.schema)})
        self.store.put(mid, "strength", 0, self._pregame)
        self.step = 0
        return self._emit("pre_game", 0.0, t0)

    def on_event(self, event: EventRecord) -> ForecastMessage | None:
        """Apply ``event``; for key events return the forecast after it."""
        if self.step < 0:
            raise StreamError(f"session {self.match_id} has not emitted its pre-game forecast")
        t0 = time.perf_counter()
        self.state.apply(event)
        if not self.schema.is_key(event.type):
            return None
        player, team, game = self.state.snapshot(event)
        self.store.put(self.match_id, "event", self.step + 1, {"player": player, "team": team, "game": game})
        self.step += 1
        return self._emit(event.type, event.clock, t0)

    def inputs(self) -> MatchInputs:
        """Grid inputs rebuilt from the store for steps 1..current."""
        mid, store = self.match_id, self.store
        ctx = store.get(mid, "game_context", 0)
        strength = store.get(mid, "strength", 0)
        rows = [store.get(mid, "event", s) for s in range(1, self.step + 1)]
        dims = self.schema.dims()
        n = len(self.ids)
        if rows:
            player = np.stack([r["player"] for r in rows], axis=1)
            team = np.stack([r["team"] for r in rows], axis=1)
            game = np.stack([r["game"] for r in rows])
        else:
            player = np.zeros((n, 0, dims["player"]))
            team = np.zeros((2, 0, dims["team"]))
            game = np.zeros((0, dims["game"]))
        return MatchInputs(player=player, player_strength=strength["player_strength"], team=team,
                           team_strength=strength["team_strength"], game=game,
                           game_context=ctx["game_context"])

    def forward(self) -> ForecastOutput:
        while self.step > self.step_capacity:
            self.step_capacity *= 2
        batch = collate_inputs([self.inputs()], self.model.dtype, step_capacity=self.step_capacity)
        with torch.no_grad():
            return self.model(batch)

    def _emit(self, event_type: str, clock: float, t0: float) -> ForecastMessage:
        out = self.forward()
        col = self.step
        players = []
        for i, pid in enumerate(self.ids):
            players.append({"id": pid, "actions": self._entries(out, "player", i, col, self.state.player_counts[i])})
        teams = []
        for j, tid in enumerate(self.match.teams):
            teams.append({"id": tid, "actions": self._entries(out, "team", j, col, self.state.team_counts[j])})
        outcome = {k: float(p) for k, p in zip(OUTCOME_LABELS, out.outcome[0, col].double())}
        msg = ForecastMessage(self.match_id, col, event_type, float(clock), players, teams, outcome,
                              self.model_version, time.perf_counter() - t0)
        if self.sink is not None:
            self.sink.write(msg)
        return msg

    @staticmethod
    def _entries(out: ForecastOutput, modality: str, row: int, col: int, running) -> dict:
        entries = {}
        for k, a in enumerate(out.actions):
            params = out.modality(modality)[a][0, row, col]
            mean = float(out.families[a].mean(params.double()))
            entries[a] = {"params": params.double().tolist(), "expected_total": int(running[k]) + mean,
                          "running": int(running[k])}
        return entries


class Engine:
    """Independent sessions keyed by match id."""

    def __init__(self, model: ForecastModel, store: FeatureStore | None = None, sink=None,
                 schema: Schema = DEFAULT_SCHEMA, step_capacity: int = DEFAULT_STEP_CAPACITY,
                 model_version: str = "unversioned"):
        self.model, self.sink, self.schema = model, sink, schema
        self.store = store if store is not None else FeatureStore()
        self.step_capacity, self.model_version = step_capacity, model_version
        self.sessions: dict[str, Session] = {}

    def open(self, match: MatchRecord, strength: StrengthStore) -> ForecastMessage:
        if match.match_id in self.sessions:
            raise StreamError(f"session {match.match_id} already open")
        s = Session(self.model, match, strength, self.store, self.schema, self.step_capacity,
                    self.model_version, self.sink)
        self.sessions[match.match_id] = s
        return s.start()

    def on_event(self, match_id: str, event: EventRecord) -> ForecastMessage | None:
        try:
            session = self.sessions[match_id]
        except KeyError:
            raise UnknownSession(match_id) from None
        return session.on_event(event)

    def close(self, match_id: str) -> None:
        if self.sessions.pop(match_id, None) is None:
            raise UnknownSession(match_id)


# -- replay -------------------------------------------------------------------


@dataclass
class ReplayResult:
    messages: list[ForecastMessage]
    latencies: list[float] = field(default_factory=list)

    @property
    def stats(self) -> dict[str, float]:
        lat = np.asarray(self.latencies)
        if lat.size == 0:
            return {"events": 0, "p50": math.nan, "p95": math.nan, "max": math.nan}
        return {"events": int(lat.size), "p50": float(np.percentile(lat, 50)),
                "p95": float(np.percentile(lat, 95)), "max": float(lat.max())}


def replay(model: ForecastModel, match: MatchRecord, strength: StrengthStore, sink=None,
           schema: Schema = DEFAULT_SCHEMA, step_capacity: int | None = None,
           model_version: str = "unversioned", store: FeatureStore | None = None) -> ReplayResult:
    """Feed a recorded match through a session, one event at a time.

    By default the step capacity is the match's key-event count, so every
    pass has the shape of a single whole-match forward.
    """
    if step_capacity is None:
        step_capacity = max(1, len(match.key_events(schema)))
    session = Session(model, match, strength, store, schema, step_capacity, model_version, sink)
    messages = [session.start()]
    latencies = []
    for event in match.events:
        msg = session.on_event(event)
        if msg is not None:
            messages.append(msg)
            latencies.append(msg.latency)
    return ReplayResult(messages, latencies)
