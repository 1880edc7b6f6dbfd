"""Input tensors, remaining-count targets and pre-game strength features.

Live features are produced by :class:`MatchState`, an incremental state
machine fed one event at a time. Batch assembly and the streaming session use
the same class, so both see identical feature rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .records import EventRecord, MatchRecord
from .schema import DEFAULT_SCHEMA, Schema, UnknownEventType

HOME, DRAW, AWAY = 0, 1, 2
CLOCK_SCALE = 90 * 60.0
SCORE_SCALE = 3.0


class MissingStrengthError(KeyError):
    pass


@dataclass
class MatchInputs:
    """The six input tensors of one match (numpy, float64)."""

    player: np.ndarray  # (P, T, D_player)
    player_strength: np.ndarray  # (P, D_player_strength)
    team: np.ndarray  # (2, T, D_team)
    team_strength: np.ndarray  # (2, D_team_strength)
    game: np.ndarray  # (T, D_game)
    game_context: np.ndarray  # (D_game_context,)

    @property
    def players(self) -> int:
        return self.player.shape[0]

    @property
    def steps(self) -> int:
        return self.game.shape[0]

    def truncate(self, steps: int) -> "MatchInputs":
        return MatchInputs(
            self.player[:, :steps], self.player_strength, self.team[:, :steps],
            self.team_strength, self.game[:steps], self.game_context,
        )

    def permute_players(self, order) -> "MatchInputs":
        order = np.asarray(order)
        return MatchInputs(
            self.player[order], self.player_strength[order], self.team,
            self.team_strength, self.game, self.game_context,
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "player": self.player, "player_strength": self.player_strength, "team": self.team,
            "team_strength": self.team_strength, "game": self.game, "game_context": self.game_context,
        }


@dataclass
class ActionLedger:
    """Running action counts after each step; column 0 is kick-off (all zero).

    Arrays are indexed (action, agent, step).
    """

    player: np.ndarray
    team: np.ndarray
    final_player: np.ndarray  # (action, P)
    final_team: np.ndarray  # (action, 2)


@dataclass
class TargetBundle:
    """Remaining counts over (t, T] for every action, agent and grid column."""

    remaining_player: np.ndarray  # (A, P, T+1)
    remaining_team: np.ndarray  # (A, 2, T+1)
    running_player: np.ndarray
    running_team: np.ndarray
    outcome: int  # HOME, DRAW or AWAY
    final_score: tuple[int, int] = (0, 0)
    actions: tuple[str, ...] = field(default=DEFAULT_SCHEMA.actions)

    def player(self, action: str) -> np.ndarray:
        return self.remaining_player[self.actions.index(action)]

    def team(self, action: str) -> np.ndarray:
        return self.remaining_team[self.actions.index(action)]


class MatchState:
    """Game state after the events seen so far."""

    def __init__(self, match: MatchRecord, schema: Schema = DEFAULT_SCHEMA):
        self.match = match
        self.schema = schema
        self.player_ids = [p.id for p in match.squad]
        self.index = {pid: i for i, pid in enumerate(self.player_ids)}
        self.team_of = np.array([0 if p.team == match.home_team else 1 for p in match.squad], dtype=np.int64)
        n, a = len(match.squad), len(schema.actions)
        self.player_counts = np.zeros((n, a), dtype=np.int64)
        self.team_counts = np.zeros((2, a), dtype=np.int64)
        self.score = [0, 0]
        self.on_pitch = np.array([p.starter for p in match.squad], dtype=bool)
        self.sent_off = np.zeros(n, dtype=bool)
        self.subbed_off = np.zeros(n, dtype=bool)
        self.on_since = np.where(self.on_pitch, 0.0, np.nan)
        self.minutes_before = np.zeros(n)
        self._static = self._static_player_block()

    def _team_index(self, event: EventRecord) -> int | None:
        if event.player is not None:
            return int(self.team_of[self.index[event.player]])
        if event.team is not None:
            return 0 if event.team == self.match.home_team else 1
        return None

    def _leave(self, i: int, clock: float) -> None:
        if self.on_pitch[i]:
            self.minutes_before[i] += (clock - self.on_since[i]) / 60.0
        self.on_pitch[i] = False
        self.on_since[i] = np.nan

    def apply(self, event: EventRecord) -> None:
        try:
            etype = self.schema.event_types[event.type]
        except KeyError:
            raise UnknownEventType(event.type) from None
        i = self.index[event.player] if event.player is not None else None
        team = self._team_index(event)
        for action in etype.credits:
            k = self.schema.action_index[action]
            if i is not None:
                self.player_counts[i, k] += 1
            if team is not None:
                self.team_counts[team, k] += 1
        if etype.score is not None and team is not None:
            self.score[team if etype.score == "own" else 1 - team] += 1
        if etype.status is not None and i is not None:
            if etype.status == "on":
                if not self.on_pitch[i]:
                    self.on_pitch[i] = True
                    self.on_since[i] = event.clock
            else:
                self._leave(i, event.clock)
                if etype.status == "sent_off":
                    self.sent_off[i] = True
                else:
                    self.subbed_off[i] = True

    def _static_player_block(self) -> np.ndarray:
        pos = np.array([[p.position == q for q in self.schema.positions] for p in self.match.squad], dtype=float)
        side = np.stack([self.team_of == 0, self.team_of == 1], axis=1).astype(float)
        return np.concatenate([pos.reshape(len(self.match.squad), -1), side], axis=1)

    def minutes_on_pitch(self, clock: float) -> np.ndarray:
        live = np.where(self.on_pitch, (clock - np.nan_to_num(self.on_since)) / 60.0, 0.0)
        return self.minutes_before + live

    def snapshot(self, event: EventRecord) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Feature rows (player (P, Dp), team (2, Dt), game (Dg)) after ``event``."""
        schema = self.schema
        n = len(self.player_ids)
        actor = np.zeros((n, 1))
        if event.player is not None:
            actor[self.index[event.player]] = 1.0
        status = np.stack([self.on_pitch, self.sent_off, self.subbed_off], axis=1).astype(float)
        minutes = (self.minutes_on_pitch(event.clock) / 90.0)[:, None]
        player = np.concatenate(
            [self._static, status, np.log1p(self.player_counts), minutes, actor], axis=1
        )

        on_count = np.array([self.on_pitch[self.team_of == t].sum() for t in (0, 1)], dtype=float)
        event_team = np.zeros((2, 1))
        t = self._team_index(event)
        if t is not None:
            event_team[t] = 1.0
        team = np.concatenate(
            [np.eye(2), np.log1p(self.team_counts), (on_count / 11.0)[:, None], event_team], axis=1
        )

        etype = np.zeros(len(schema.key_types))
        etype[schema.key_index[event.type]] = 1.0
        period = [float(event.period == 1), float(event.period == 2)]
        loc = event.location
        loc_feats = [loc[0], loc[1], 1.0] if loc is not None else [0.0, 0.0, 0.0]
        game = np.concatenate(
            [etype, [event.clock / CLOCK_SCALE], period, loc_feats,
             [self.score[0] / SCORE_SCALE, self.score[1] / SCORE_SCALE]]
        )
        return player, team, game


def game_context_features(match: MatchRecord, schema: Schema = DEFAULT_SCHEMA) -> np.ndarray:
    comp = [float(match.competition == c) for c in schema.competitions]
    ko = match.kickoff_time
    return np.array(comp + [ko.hour / 24.0, float(ko.weekday() >= 5)])


def build_ledger(match: MatchRecord, schema: Schema = DEFAULT_SCHEMA, key_only: bool = True) -> ActionLedger:
    """Running counts after every key event (or every event with ``key_only=False``)."""
    state = MatchState(match, schema)
    players, teams = [state.player_counts.T.copy()], [state.team_counts.T.copy()]
    for e in match.events:
        state.apply(e)
        if not key_only or schema.is_key(e.type):
            players.append(state.player_counts.T.copy())
            teams.append(state.team_counts.T.copy())
    return ActionLedger(
        player=np.stack(players, axis=-1), team=np.stack(teams, axis=-1),
        final_player=state.player_counts.T.copy(), final_team=state.team_counts.T.copy(),
    )


def match_outcome(score) -> int:
    home, away = score
    return HOME if home > away else AWAY if away > home else DRAW


def final_score(match: MatchRecord, schema: Schema = DEFAULT_SCHEMA) -> tuple[int, int]:
    state = MatchState(match, schema)
    for e in match.events:
        state.apply(e)
    return tuple(state.score)


def assemble_inputs(
    match: MatchRecord, strength: "StrengthStore", schema: Schema = DEFAULT_SCHEMA
) -> tuple[MatchInputs, TargetBundle]:
    """Input tensors with one time-step per key event, and remaining-count targets."""
    state = MatchState(match, schema)
    dims = schema.dims()
    rows_p, rows_t, rows_g = [], [], []
    run_p, run_t = [state.player_counts.T.copy()], [state.team_counts.T.copy()]
    for e in match.events:
        state.apply(e)
        if schema.is_key(e.type):
            p, t, g = state.snapshot(e)
            rows_p.append(p)
            rows_t.append(t)
            rows_g.append(g)
            run_p.append(state.player_counts.T.copy())
            run_t.append(state.team_counts.T.copy())
    n = len(match.squad)
    player = np.stack(rows_p, axis=1) if rows_p else np.zeros((n, 0, dims["player"]))
    team = np.stack(rows_t, axis=1) if rows_t else np.zeros((2, 0, dims["team"]))
    game = np.stack(rows_g) if rows_g else np.zeros((0, dims["game"]))
    inputs = MatchInputs(
        player=player,
        player_strength=strength.player_matrix([p.id for p in match.squad], schema),
        team=team,
        team_strength=strength.team_matrix(list(match.teams), schema),
        game=game,
        game_context=game_context_features(match, schema),
    )
    running_p = np.stack(run_p, axis=-1)
    running_t = np.stack(run_t, axis=-1)
    final_p = state.player_counts.T[:, :, None]
    final_t = state.team_counts.T[:, :, None]
    targets = TargetBundle(
        remaining_player=final_p - running_p,
        remaining_team=final_t - running_t,
        running_player=running_p,
        running_team=running_t,
        outcome=match_outcome(state.score),
        final_score=tuple(state.score),
        actions=schema.actions,
    )
    return inputs, targets


# -- pre-game strength ---------------------------------------------------


@dataclass
class StrengthStore:
    """Raw strength vectors keyed by player / team id.

    Layout per entity: windowed means, windowed maxima (action-major within
    each window), days since the previous match (capped), prior match count
    (capped at the longest window) and a debut flag.
    """

    players: dict[str, np.ndarray] = field(default_factory=dict)
    teams: dict[str, np.ndarray] = field(default_factory=dict)

    def player(self, pid: str) -> np.ndarray:
        try:
            return self.players[pid]
        except KeyError:
            raise MissingStrengthError(f"no strength row for player {pid}") from None

    def team(self, tid: str) -> np.ndarray:
        try:
            return self.teams[tid]
        except KeyError:
            raise MissingStrengthError(f"no strength row for team {tid}") from None

    def player_matrix(self, ids, schema: Schema = DEFAULT_SCHEMA) -> np.ndarray:
        return np.stack([scale_strength(self.player(i), schema) for i in ids]) if ids else np.zeros((0, schema.dims()["player_strength"]))

    def team_matrix(self, ids, schema: Schema = DEFAULT_SCHEMA) -> np.ndarray:
        return np.stack([scale_strength(self.team(i), schema) for i in ids])

    def save(self, path) -> None:
        data = {
            "players": {k: v.tolist() for k, v in self.players.items()},
            "teams": {k: v.tolist() for k, v in self.teams.items()},
        }
        Path(path).write_text(json.dumps(data))

    @classmethod
    def load(cls, path) -> "StrengthStore":
        data = json.loads(Path(path).read_text())
        return cls(
            {k: np.asarray(v, dtype=float) for k, v in data["players"].items()},
            {k: np.asarray(v, dtype=float) for k, v in data["teams"].items()},
        )


def _count_slots(schema: Schema) -> int:
    return len(schema.actions) * (len(schema.mean_windows) + len(schema.max_windows))


def scale_strength(raw: np.ndarray, schema: Schema = DEFAULT_SCHEMA) -> np.ndarray:
    """Network-facing transform of a raw strength row."""
    k = _count_slots(schema)
    out = np.empty_like(raw, dtype=float)
    out[:k] = np.log1p(raw[:k])
    out[k] = raw[k] / schema.days_since_cap
    out[k + 1] = raw[k + 1] / max(schema.mean_windows + schema.max_windows)
    out[k + 2] = raw[k + 2]
    return out


def strength_row(history: list[tuple[datetime, np.ndarray]], as_of: datetime | None, schema: Schema) -> np.ndarray:
    """Raw strength vector from an entity's (date, action counts) history, oldest first."""
    longest = max(schema.mean_windows + schema.max_windows)
    counts = np.array([c for _, c in history], dtype=float).reshape(len(history), len(schema.actions))
    parts = []
    for w in schema.mean_windows:
        parts.append(counts[-w:].mean(axis=0))
    for w in schema.max_windows:
        parts.append(counts[-w:].max(axis=0))
    if as_of is None:
        days = 0.0
    else:
        days = (as_of - history[-1][0]).total_seconds() / 86400.0
    days = float(min(max(days, 0.0), schema.days_since_cap))
    return np.concatenate(parts + [[days, float(min(len(history), longest)), 0.0]])


def default_row(rows: list[np.ndarray], schema: Schema) -> np.ndarray:
    """League-average strength for entities without history."""
    k = _count_slots(schema)
    base = np.zeros(k + 3)
    if rows:
        base[:k] = np.mean([r[:k] for r in rows], axis=0)
    base[k] = schema.days_since_cap
    base[k + 2] = 1.0
    return base


class StrengthTracker:
    """Accumulates per-entity action histories in kick-off order."""

    def __init__(self, schema: Schema = DEFAULT_SCHEMA):
        self.schema = schema
        self.longest = max(schema.mean_windows + schema.max_windows)
        self.players: dict[str, list] = {}
        self.teams: dict[str, list] = {}

    def update(self, match: MatchRecord) -> None:
        ledger = build_ledger(match, self.schema)
        when = match.kickoff_time
        appeared = _appeared(match, self.schema)
        for i, p in enumerate(match.squad):
            if p.id in appeared:
                hist = self.players.setdefault(p.id, [])
                hist.append((when, ledger.final_player[:, i].copy()))
                del hist[: -self.longest]
        for t, tid in enumerate(match.teams):
            hist = self.teams.setdefault(tid, [])
            hist.append((when, ledger.final_team[:, t].copy()))
            del hist[: -self.longest]

    def store(self, as_of: datetime | None = None, players=None, teams=None) -> StrengthStore:
        schema = self.schema
        prows = {k: strength_row(h, as_of, schema) for k, h in self.players.items()}
        trows = {k: strength_row(h, as_of, schema) for k, h in self.teams.items()}
        pdef = default_row(list(prows.values()), schema)
        tdef = default_row(list(trows.values()), schema)
        if players is not None:
            prows = {k: prows.get(k, pdef) for k in players}
        if teams is not None:
            trows = {k: trows.get(k, tdef) for k in teams}
        return StrengthStore(prows, trows)

    def store_for(self, match: MatchRecord) -> StrengthStore:
        return self.store(match.kickoff_time, [p.id for p in match.squad], list(match.teams))


def _appeared(match: MatchRecord, schema: Schema) -> set[str]:
    seen = {p.id for p in match.squad if p.starter}
    for e in match.events:
        if e.player is not None and schema.event_types[e.type].status == "on":
            seen.add(e.player)
    return seen


def compute_strength_features(
    history: list[MatchRecord],
    windows: dict | None = None,
    schema: Schema = DEFAULT_SCHEMA,
    as_of: datetime | None = None,
    players=None,
    teams=None,
) -> StrengthStore:
    """Strength store from prior matches (oldest first).

    ``windows`` may override the schema, e.g. ``{"mean": [5], "max": [10]}``.
    Entities listed in ``players`` / ``teams`` without history get the
    league-average default row.
    """
    if windows is not None:
        schema = Schema(
            schema.version, schema.actions, schema.positions, schema.competitions, schema.event_types,
            tuple(windows.get("mean", schema.mean_windows)), tuple(windows.get("max", schema.max_windows)),
            schema.days_since_cap,
        )
    tracker = StrengthTracker(schema)
    for m in history:
        tracker.update(m)
    return tracker.store(as_of, players, teams)


def strength_snapshots(matches: list[MatchRecord], schema: Schema = DEFAULT_SCHEMA) -> list[tuple[MatchRecord, StrengthStore]]:
    """Pairs every match with strength computed from the matches before it."""
    tracker = StrengthTracker(schema)
    out = []
    for m in sorted(matches, key=lambda m: (m.kickoff, m.match_id)):
        out.append((m, tracker.store_for(m)))
        tracker.update(m)
    return out


def prepare_examples(matches: list[MatchRecord], schema: Schema = DEFAULT_SCHEMA):
    """``[(match, inputs, targets)]`` in kick-off order."""
    out = []
    for m, store in strength_snapshots(matches, schema):
        inputs, targets = assemble_inputs(m, store, schema)
        out.append((m, inputs, targets))
    return out


def audit_features(schema: Schema = DEFAULT_SCHEMA) -> dict[str, str]:
    """Source attribute -> the single input tensor that carries it.

    Raises if any source attribute feeds two tensors or a tensor repeats a
    feature name.
    """
    home: dict[str, str] = {}
    for tensor, feats in schema.features.items():
        names = [n for n, _ in feats]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate feature names in {tensor}")
        for _, source in feats:
            if home.setdefault(source, tensor) != tensor:
                raise ValueError(f"{source} feeds both {home[source]} and {tensor}")
    return home


__all__ = [
    "ActionLedger", "MatchInputs", "MatchState", "MissingStrengthError", "StrengthStore",
    "StrengthTracker", "TargetBundle", "assemble_inputs", "audit_features", "build_ledger",
    "compute_strength_features", "final_score", "game_context_features", "match_outcome",
    "prepare_examples", "scale_strength", "strength_snapshots", "HOME", "DRAW", "AWAY",
]

