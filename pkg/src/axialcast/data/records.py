from __future__ import annotations

from dataclasses import asdict, dataclass, field
from datetime import datetime

from .schema import DEFAULT_SCHEMA, Schema, UnknownEventType


class RecordError(ValueError):
    pass


@dataclass(frozen=True)
class EventRecord:
    type: str
    clock: float  # seconds since kick-off, second half continuing from 45:00
    period: int
    x: float | None = None
    y: float | None = None
    player: str | None = None
    team: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "EventRecord":
        return cls(
            type=d["type"],
            clock=float(d["clock"]),
            period=int(d["period"]),
            x=None if d.get("x") is None else float(d["x"]),
            y=None if d.get("y") is None else float(d["y"]),
            player=d.get("player"),
            team=d.get("team"),
        )

    @property
    def location(self) -> tuple[float, float] | None:
        if self.x is None or self.y is None:
            return None
        return self.x, self.y


@dataclass(frozen=True)
class SquadPlayer:
    id: str
    team: str
    position: str
    starter: bool = True


@dataclass(frozen=True)
class MatchRecord:
    match_id: str
    competition: str
    kickoff: str  # ISO-8601 local kick-off time
    home_team: str
    away_team: str
    squad: tuple[SquadPlayer, ...]
    events: tuple[EventRecord, ...] = field(default=())

    @property
    def kickoff_time(self) -> datetime:
        return datetime.fromisoformat(self.kickoff)

    @property
    def teams(self) -> tuple[str, str]:
        return self.home_team, self.away_team

    def players_of(self, team: str) -> list[SquadPlayer]:
        return [p for p in self.squad if p.team == team]

    def key_events(self, schema: Schema = DEFAULT_SCHEMA) -> list[EventRecord]:
        return [e for e in self.events if schema.is_key(e.type)]

    def validate(self, schema: Schema = DEFAULT_SCHEMA, require_events: bool = True) -> None:
        if require_events and not self.events:
            raise RecordError(f"match {self.match_id} has no events")
        ids = {p.id for p in self.squad}
        if len(ids) != len(self.squad):
            raise RecordError(f"match {self.match_id} has duplicate squad ids")
        for p in self.squad:
            if p.team not in self.teams:
                raise RecordError(f"player {p.id} belongs to unknown team {p.team}")
            if p.position not in schema.positions:
                raise RecordError(f"player {p.id} has unknown position {p.position}")
        last = (0, float("-inf"))
        for k, e in enumerate(self.events):
            if e.type not in schema.event_types:
                raise UnknownEventType(f"event {k} of match {self.match_id} has unknown type {e.type!r}")
            if (e.period, e.clock) < last:
                raise RecordError(f"event {k} of match {self.match_id} is out of order")
            last = (e.period, e.clock)
            if e.player is not None and e.player not in ids:
                raise RecordError(f"event {k} names player {e.player} outside the squad")
            if e.team is not None and e.team not in self.teams:
                raise RecordError(f"event {k} names unknown team {e.team}")
            loc = e.location
            if loc is not None and not (0 <= loc[0] <= 1 and 0 <= loc[1] <= 1):
                raise RecordError(f"event {k} location {loc} outside the unit pitch")

    def to_dict(self) -> dict:
        return {
            "match_id": self.match_id,
            "competition": self.competition,
            "kickoff": self.kickoff,
            "home_team": self.home_team,
            "away_team": self.away_team,
            "squad": [asdict(p) for p in self.squad],
            "events": [e.to_dict() for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchRecord":
        return cls(
            match_id=str(d["match_id"]),
            competition=d["competition"],
            kickoff=d["kickoff"],
            home_team=d["home_team"],
            away_team=d["away_team"],
            squad=tuple(SquadPlayer(**p) for p in d["squad"]),
            events=tuple(EventRecord.from_dict(e) for e in d["events"]),
        )
