"""Feature layouts and the event vocabulary.

Everything here is driven by ``schema.json`` so a different vocabulary or
competition list can be swapped in without code changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path


@dataclass(frozen=True)
class EventType:
    name: str
    key: bool
    credits: tuple[str, ...] = ()
    score: str | None = None  # "own" | "opponent"
    status: str | None = None  # "sent_off" | "subbed_off" | "on"


@dataclass(frozen=True)
class Schema:
    version: int
    actions: tuple[str, ...]
    positions: tuple[str, ...]
    competitions: tuple[str, ...]
    event_types: dict[str, EventType] = field(hash=False)
    mean_windows: tuple[int, ...] = (5, 10)
    max_windows: tuple[int, ...] = (10,)
    days_since_cap: int = 30

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Schema":
        if path is None:
            text = resources.files(__package__).joinpath("schema.json").read_text()
        else:
            text = Path(path).read_text()
        raw = json.loads(text)
        types = {
            name: EventType(name, bool(spec["key"]), tuple(spec.get("credits", ())), spec.get("score"), spec.get("status"))
            for name, spec in raw["event_types"].items()
        }
        actions = tuple(raw["actions"])
        for t in types.values():
            unknown = set(t.credits) - set(actions)
            if unknown:
                raise ValueError(f"event type {t.name} credits unknown actions {sorted(unknown)}")
        windows = raw.get("strength_windows", {})
        return cls(
            version=int(raw["schema_version"]),
            actions=actions,
            positions=tuple(raw["positions"]),
            competitions=tuple(raw["competitions"]),
            event_types=types,
            mean_windows=tuple(windows.get("mean", (5, 10))),
            max_windows=tuple(windows.get("max", (10,))),
            days_since_cap=int(raw.get("days_since_cap", 30)),
        )

    @cached_property
    def key_types(self) -> tuple[str, ...]:
        return tuple(n for n, t in self.event_types.items() if t.key)

    @cached_property
    def action_index(self) -> dict[str, int]:
        return {a: i for i, a in enumerate(self.actions)}

    @cached_property
    def key_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.key_types)}

    def is_key(self, event_type: str) -> bool:
        try:
            return self.event_types[event_type].key
        except KeyError:
            raise UnknownEventType(event_type) from None

    # -- feature layouts -------------------------------------------------

    @cached_property
    def features(self) -> dict[str, list[tuple[str, str]]]:
        """tensor name -> ordered list of (feature name, source attribute)."""
        acts = self.actions
        player = [(f"pos_{p}", "squad.position") for p in self.positions]
        player += [("team_home", "squad.team"), ("team_away", "squad.team")]
        player += [(s, "player.status") for s in ("on_pitch", "sent_off", "subbed_off")]
        player += [(f"running_{a}", f"ledger.player.{a}") for a in acts]
        player += [("minutes_on_pitch", "player.minutes"), ("is_actor", "event.player")]

        team = [("is_home", "team.side"), ("is_away", "team.side")]
        team += [(f"running_{a}", f"ledger.team.{a}") for a in acts]
        team += [("players_on_pitch", "team.on_pitch"), ("is_event_team", "event.team")]

        game = [(f"event_{k}", "event.type") for k in self.key_types]
        game += [("clock", "event.clock"), ("period_1", "event.period"), ("period_2", "event.period")]
        game += [("loc_x", "event.location"), ("loc_y", "event.location"), ("has_location", "event.location")]
        game += [("home_score", "game.score"), ("away_score", "game.score")]

        context = [(f"competition_{c}", "match.competition") for c in self.competitions]
        context += [("kickoff_hour", "match.kickoff"), ("weekend", "match.kickoff")]

        def strength(who):
            rows = []
            for w in self.mean_windows:
                rows += [(f"mean{w}_{a}", f"history.{who}.{a}") for a in acts]
            for w in self.max_windows:
                rows += [(f"max{w}_{a}", f"history.{who}.{a}") for a in acts]
            rows += [("days_since_last", f"history.{who}.date"), ("prior_matches", f"history.{who}.count"),
                     ("debut", f"history.{who}.count")]
            return rows

        return {
            "player": player,
            "player_strength": strength("player"),
            "team": team,
            "team_strength": strength("team"),
            "game": game,
            "game_context": context,
        }

    def dims(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.features.items()}

    def feature_names(self, tensor: str) -> list[str]:
        return [n for n, _ in self.features[tensor]]


class UnknownEventType(KeyError):
    pass


DEFAULT_SCHEMA = Schema.load()
ACTIONS = DEFAULT_SCHEMA.actions
