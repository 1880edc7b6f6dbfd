"""Synthetic match generator with known per-player rates.

Each minute, every player on the pitch draws Poisson counts for a handful of
primitive actions (passes, shots, tackles, ...). Rates are per 90 minutes and
are modulated by team strength, the score and the man-count difference.
Shots, fouls and goals expand into the consistent event sequences the ledger
expects (a goal may carry an assist, a foul may carry a card).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .records import EventRecord, MatchRecord, SquadPlayer

PRIMITIVES = ("pass", "shot", "tackle", "foul", "corner", "offside", "own_goal", "red")
ATTACKING = ("pass", "shot", "corner", "offside")

POSITION_RATES = {
    # per-90 rates: pass, shot, tackle, foul, corner, offside, own_goal, red
    "GK": (22.0, 0.0, 0.1, 0.05, 0.0, 0.0, 0.003, 0.004),
    "DEF": (32.0, 0.45, 2.0, 1.0, 0.0, 0.05, 0.012, 0.006),
    "MID": (36.0, 1.2, 1.8, 1.2, 0.0, 0.2, 0.004, 0.005),
    "FWD": (18.0, 2.6, 0.6, 1.1, 0.0, 1.0, 0.002, 0.004),
}
POSITION_SKILL = {
    # pass accuracy, P(goal | shot), P(saved | shot)
    "GK": (0.62, 0.0, 0.0),
    "DEF": (0.86, 0.07, 0.25),
    "MID": (0.84, 0.09, 0.28),
    "FWD": (0.76, 0.14, 0.33),
}


@dataclass
class PlayerSpec:
    id: str
    team: str
    position: str
    starter: bool = True
    rates: dict[str, float] = field(default_factory=dict)  # per 90 minutes
    pass_accuracy: float = 0.8
    finishing: float = 0.1  # P(goal | shot)
    on_target: float = 0.3  # P(saved | shot)

    def rate_vector(self) -> np.ndarray:
        return np.array([self.rates.get(k, 0.0) for k in PRIMITIVES])


@dataclass
class GeneratorParams:
    match_id: str
    home_team: str
    away_team: str
    players: list[PlayerSpec]
    kickoff: str = "2024-08-17T15:00:00"
    competition: str = "league"
    team_strength: tuple[float, float] = (1.0, 1.0)
    yellow_per_foul: float = 0.12
    assist_prob: float = 0.75
    blocked_prob: float = 0.2
    substitutions: list[tuple[int, str, str]] = field(default_factory=list)  # (minute, off, on)
    trailing_boost: float = 0.15
    leading_damp: float = 0.1
    man_advantage: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        for p in self.players:
            if any(v < 0 for v in p.rates.values()):
                raise ValueError(f"negative rate for player {p.id}")
            for name in ("pass_accuracy", "finishing", "on_target"):
                if not 0 <= getattr(p, name) <= 1:
                    raise ValueError(f"{name} of player {p.id} outside [0, 1]")
            if p.finishing + p.on_target > 1:
                raise ValueError(f"shot outcome probabilities of {p.id} exceed 1")
        for name in ("yellow_per_foul", "assist_prob", "blocked_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} outside [0, 1]")
        if min(self.team_strength) < 0:
            raise ValueError("team strength must be non-negative")


def _loc(rng, lo=0.0, hi=1.0):
    return float(rng.uniform(lo, hi)), float(rng.uniform(0.0, 1.0))


def generate_match(params: GeneratorParams) -> MatchRecord:
    params.validate()
    rng = np.random.default_rng(params.seed)
    players = params.players
    n = len(players)
    team_of = np.array([0 if p.team == params.home_team else 1 for p in players])
    base = np.stack([p.rate_vector() for p in players]) / 90.0 if n else np.zeros((0, len(PRIMITIVES)))
    attack_cols = [PRIMITIVES.index(k) for k in ATTACKING]
    on_pitch = np.array([p.starter for p in players], dtype=bool)
    booked = np.zeros(n, dtype=bool)
    used_subs: set[str] = set()
    index = {p.id: i for i, p in enumerate(players)}
    score = [0, 0]
    teams = (params.home_team, params.away_team)
    events: list[EventRecord] = [EventRecord("kickoff", 0.0, 1)]
    subs = sorted(params.substitutions)

    def others_on(team, exclude):
        return [k for k in range(n) if on_pitch[k] and team_of[k] == team and k != exclude]

    for minute in range(90):
        period = 1 if minute < 45 else 2
        if minute == 45:
            events.append(EventRecord("half_time", 45 * 60.0, 1))
            events.append(EventRecord("kickoff", 45 * 60.0, 2))
        start = minute * 60.0
        for m, off, on in subs:
            if m != minute:
                continue
            i, j = index[off], index[on]
            if on_pitch[i] and not on_pitch[j] and on not in used_subs and team_of[i] == team_of[j]:
                events.append(EventRecord("substitute_on", start, period, player=on, team=teams[team_of[j]]))
                events.append(EventRecord("substitution", start, period, player=off, team=teams[team_of[i]]))
                on_pitch[i], on_pitch[j] = False, True
                used_subs.add(on)

        men = np.array([on_pitch[team_of == t].sum() for t in (0, 1)], dtype=float)
        mult = np.ones((n, len(PRIMITIVES)))
        for t in (0, 1):
            diff = score[t] - score[1 - t]
            f = params.team_strength[t]
            if diff < 0:
                f *= 1 + params.trailing_boost
            elif diff > 0:
                f *= 1 - params.leading_damp
            f *= np.exp(params.man_advantage * (men[t] - men[1 - t]))
            mult[np.ix_(team_of == t, attack_cols)] = f
        rates = base * mult * on_pitch[:, None]
        counts = rng.poisson(rates)

        draws = []
        for i, k in zip(*np.nonzero(counts)):
            for _ in range(counts[i, k]):
                draws.append((float(rng.uniform(0.0, 60.0)), int(i), PRIMITIVES[k]))
        draws.sort()
        for offset, i, kind in draws:
            if not on_pitch[i]:
                continue
            p = players[i]
            clock = start + offset
            tid = teams[team_of[i]]
            if kind == "pass":
                etype = "pass_complete" if rng.random() < p.pass_accuracy else "pass_incomplete"
                events.append(EventRecord(etype, clock, period, *_loc(rng), player=p.id, team=tid))
            elif kind == "shot":
                u = rng.random()
                x, y = _loc(rng, 0.7, 1.0)
                if u < p.finishing:
                    mates = others_on(team_of[i], i)
                    if mates and rng.random() < params.assist_prob:
                        a = players[mates[rng.integers(len(mates))]]
                        events.append(EventRecord("assist", clock, period, x, y, player=a.id, team=tid))
                    events.append(EventRecord("goal", clock, period, x, y, player=p.id, team=tid))
                    score[team_of[i]] += 1
                elif u < p.finishing + p.on_target:
                    events.append(EventRecord("shot_saved", clock, period, x, y, player=p.id, team=tid))
                elif u < p.finishing + p.on_target + params.blocked_prob:
                    events.append(EventRecord("shot_blocked", clock, period, x, y, player=p.id, team=tid))
                else:
                    events.append(EventRecord("shot_off_target", clock, period, x, y, player=p.id, team=tid))
            elif kind == "tackle":
                events.append(EventRecord("tackle", clock, period, *_loc(rng), player=p.id, team=tid))
            elif kind == "foul":
                loc = _loc(rng)
                events.append(EventRecord("foul", clock, period, *loc, player=p.id, team=tid))
                if rng.random() < params.yellow_per_foul:
                    if booked[i]:
                        events.append(EventRecord("second_yellow", clock, period, *loc, player=p.id, team=tid))
                        on_pitch[i] = False
                    else:
                        events.append(EventRecord("yellow_card", clock, period, *loc, player=p.id, team=tid))
                        booked[i] = True
            elif kind == "corner":
                events.append(EventRecord("corner", clock, period, 1.0, float(rng.integers(2)), player=p.id, team=tid))
            elif kind == "offside":
                events.append(EventRecord("offside", clock, period, *_loc(rng, 0.5, 1.0), player=p.id, team=tid))
            elif kind == "own_goal":
                events.append(EventRecord("own_goal", clock, period, *_loc(rng, 0.0, 0.2), player=p.id, team=tid))
                score[1 - team_of[i]] += 1
            elif kind == "red":
                events.append(EventRecord("red_card", clock, period, *_loc(rng), player=p.id, team=tid))
                on_pitch[i] = False
    events.append(EventRecord("full_time", 90 * 60.0, 2))

    squad = tuple(SquadPlayer(p.id, p.team, p.position, p.starter) for p in players)
    return MatchRecord(
        match_id=params.match_id,
        competition=params.competition,
        kickoff=params.kickoff,
        home_team=params.home_team,
        away_team=params.away_team,
        squad=squad,
        events=tuple(events),
    )


# -- league of teams with fixed rosters ----------------------------------

STARTING_SHAPE = ("GK", "DEF", "DEF", "DEF", "DEF", "MID", "MID", "MID", "MID", "FWD", "FWD")
BENCH_SHAPE = ("GK", "DEF", "MID", "MID", "FWD")


@dataclass
class LeagueParams:
    """Knobs for a synthetic league; loaded from the ``generate --params`` file."""

    teams: int = 20
    rate_spread: float = 0.3  # log-normal sd of per-player rate multipliers
    strength_spread: float = 0.15  # log-normal sd of team strength
    home_advantage: float = 1.08
    substitutions: int = 3
    cup_share: float = 0.15
    start_date: str = "2019-08-10"
    roster_seed: int = 7
    trailing_boost: float = 0.15
    leading_damp: float = 0.1
    man_advantage: float = 0.2

    @classmethod
    def from_file(cls, path) -> "LeagueParams":
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


class League:
    def __init__(self, params: LeagueParams | None = None):
        self.params = params or LeagueParams()
        rng = np.random.default_rng(self.params.roster_seed)
        self.team_ids = [f"T{t:02d}" for t in range(self.params.teams)]
        self.strength = {t: float(np.exp(rng.normal(0, self.params.strength_spread))) for t in self.team_ids}
        self.rosters: dict[str, list[PlayerSpec]] = {}
        for t in self.team_ids:
            roster = []
            for k, pos in enumerate(STARTING_SHAPE + BENCH_SHAPE):
                rates = np.array(POSITION_RATES[pos]) * np.exp(rng.normal(0, self.params.rate_spread, len(PRIMITIVES)))
                acc, fin, sav = POSITION_SKILL[pos]
                spec = PlayerSpec(
                    id=f"{t}P{k:02d}",
                    team=t,
                    position=pos,
                    starter=k < len(STARTING_SHAPE),
                    rates=dict(zip(PRIMITIVES, rates.tolist())),
                    pass_accuracy=float(np.clip(acc + rng.normal(0, 0.04), 0.3, 0.97)),
                    finishing=float(np.clip(fin * np.exp(rng.normal(0, 0.25)), 0.0, 0.4)),
                    on_target=sav,
                )
                roster.append(spec)
            # two designated corner takers per team
            for k in rng.choice(np.arange(5, 11), size=2, replace=False):
                roster[k].rates["corner"] = float(rng.uniform(1.8, 3.2))
            self.rosters[t] = roster

    def fixture_params(self, home: str, away: str, match_id: str, kickoff: datetime, seed: int,
                       competition: str = "league") -> GeneratorParams:
        rng = np.random.default_rng(seed + 1_000_003)
        lp = self.params
        players, subs = [], []
        for t in (home, away):
            roster = [replace(p, rates=dict(p.rates)) for p in self.rosters[t]]
            players.extend(roster)
            outfield_starters = [p.id for p in roster if p.starter and p.position != "GK"]
            bench = [p.id for p in roster if not p.starter and p.position != "GK"]
            count = min(lp.substitutions, len(bench))
            offs = rng.choice(outfield_starters, size=count, replace=False)
            ons = rng.choice(bench, size=count, replace=False)
            minutes = rng.integers(55, 88, size=count)
            subs.extend((int(m), str(a), str(b)) for m, a, b in zip(minutes, offs, ons))
        return GeneratorParams(
            match_id=match_id,
            home_team=home,
            away_team=away,
            players=players,
            kickoff=kickoff.isoformat(),
            competition=competition,
            team_strength=(self.strength[home] * lp.home_advantage, self.strength[away]),
            substitutions=subs,
            trailing_boost=lp.trailing_boost,
            leading_damp=lp.leading_damp,
            man_advantage=lp.man_advantage,
            seed=seed,
        )

    def fixtures(self, count: int, seed: int):
        """Yield GeneratorParams for ``count`` matches in kick-off order."""
        rng = np.random.default_rng(seed)
        teams = list(self.team_ids)
        day = datetime.fromisoformat(self.params.start_date)
        made = 0
        while made < count:
            order = list(rng.permutation(teams))
            for k in range(0, len(order) - 1, 2):
                if made >= count:
                    break
                hour = int(rng.choice([12, 15, 17, 20]))
                kickoff = day + timedelta(days=int(rng.integers(0, 3)), hours=hour)
                comp = "cup" if rng.random() < self.params.cup_share else "league"
                mseed = int(rng.integers(0, 2**31 - 1))
                yield self.fixture_params(order[k], order[k + 1], f"M{seed}-{made:06d}", kickoff, mseed, comp)
                made += 1
            day += timedelta(days=7)


def generate_dataset(count: int, seed: int = 0, league: League | None = None) -> list[MatchRecord]:
    league = league or League()
    return [generate_match(p) for p in league.fixtures(count, seed)]
