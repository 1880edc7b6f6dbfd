import io
import json
import math
from contextlib import redirect_stdout

import numpy as np
import pytest
import torch

from axialcast.data import MatchRecord, SquadPlayer, StrengthStore, assemble_inputs
from axialcast.data import DEFAULT_SCHEMA
from axialcast.model import ForecastModel, ModelConfig, collate_inputs
from axialcast.stream import (
    OUTCOME_LABELS,
    Engine,
    FeatureStore,
    FileSink,
    ForecastMessage,
    MemorySink,
    MessageError,
    Session,
    StdoutSink,
    StoreGap,
    StreamError,
    UnknownSession,
    read_messages,
    replay,
    validate_message,
)

TINY = ModelConfig(dim=8, layers=2, hidden=16, seed=2)


@pytest.fixture(scope="module")
def model64():
    return ForecastModel(TINY).double().eval()


@pytest.fixture
def one(small_examples):
    m, _, _ = small_examples[0]
    return m


def strength_for(match):
    dp = DEFAULT_SCHEMA.dims()["player_strength"]
    dt = DEFAULT_SCHEMA.dims()["team_strength"]
    return StrengthStore({p.id: np.zeros(dp) for p in match.squad}, {t: np.zeros(dt) for t in match.teams})


def rows(n=3):
    return {"player": np.ones((2, n)), "team": np.zeros((2, n)), "game": np.arange(n, dtype=float)}


# -- feature store ------------------------------------------------------------------


def test_store_is_append_only():
    store = FeatureStore()
    store.put("m", "event", 1, rows())
    with pytest.raises(StreamError):
        store.put("m", "event", 1, rows())
    with pytest.raises(ValueError):
        store.get("m", "event", 1)["game"][0] = 5.0
    assert store.steps("m") == 1


def test_store_rejects_gaps_and_bad_kinds():
    store = FeatureStore()
    store.put("m", "event", 1, rows())
    with pytest.raises(StoreGap) as err:
        store.put("m", "event", 3, rows())
    assert err.value.step == 2
    with pytest.raises(StoreGap, match="step 7"):
        store.get("m", "event", 7)
    with pytest.raises(ValueError):
        store.put("m", "weather", 0, rows())
    with pytest.raises(ValueError):
        store.put("m", "strength", 2, rows())


def test_store_persists_and_reloads(tmp_path):
    path = tmp_path / "store.jsonl"
    store = FeatureStore(path)
    store.put("m", "game_context", 0, {"game_context": np.array([0.5, 1.0])})
    store.put("m", "event", 1, rows())
    back = FeatureStore.load(path)
    assert len(back) == 2 and back.steps("m") == 1
    assert np.array_equal(back.get("m", "event", 1)["game"], rows()["game"])


# -- sessions -----------------------------------------------------------------------


def test_pre_game_message_covers_every_agent(model64, one):
    session = Session(model64, one, strength_for(one))
    msg = session.start()
    assert msg.event_index == 0 and msg.event_type == "pre_game"
    assert len(msg.players) == len(one.squad) and len(msg.teams) == 2
    assert msg.predictions == 12 * (len(one.squad) + 2) + 1
    validate_message(msg.to_dict())
    with pytest.raises(StreamError):
        session.start()


def test_event_before_start_rejected(model64, one):
    with pytest.raises(StreamError):
        Session(model64, one, strength_for(one)).on_event(one.events[0])


def test_non_key_events_emit_nothing(model64, one):
    session = Session(model64, one, strength_for(one))
    session.start()
    passes = [e for e in one.events if e.type == "pass_complete"]
    assert session.on_event(passes[0]) is None
    assert session.step == 0


def test_empty_match_gives_only_pre_game(model64):
    squad = (SquadPlayer("h", "H", "MID"), SquadPlayer("a", "A", "MID"))
    empty = MatchRecord("e", "league", "2024-08-17T15:00:00", "H", "A", squad, ())
    result = replay(model64, empty, strength_for(empty))
    assert [m.event_type for m in result.messages] == ["pre_game"]
    assert result.stats["events"] == 0


def test_stream_matches_whole_match_forward_bitwise(model64, small_examples):
    for match, _, _ in small_examples[:2]:
        strength = strength_for(match)
        result = replay(model64, match, strength)
        assert len(result.messages) == len(match.key_events()) + 1
        inputs, targets = assemble_inputs(match, strength)
        with torch.no_grad():
            out = model64(collate_inputs([inputs], torch.float64))
        for msg in result.messages:
            t = msg.event_index
            for i, p in enumerate(msg.players):
                for a, entry in p["actions"].items():
                    assert entry["params"] == out.player[a][0, i, t].tolist()
                    assert entry["running"] == targets.running_player[TINY.actions.index(a), i, t]
            for j, tm in enumerate(msg.teams):
                for a, entry in tm["actions"].items():
                    assert entry["params"] == out.team[a][0, j, t].tolist()
            assert [msg.outcome[k] for k in OUTCOME_LABELS] == out.outcome[0, t].tolist()


def test_stream_inputs_equal_batch_assembly(model64, one):
    strength = strength_for(one)
    session = Session(model64, one, strength)
    session.start()
    for e in one.events[:200]:
        session.on_event(e)
    inputs, _ = assemble_inputs(one, strength)
    streamed = session.inputs()
    ref = inputs.truncate(streamed.steps)
    for name, arr in streamed.tensors().items():
        assert np.array_equal(arr, ref.tensors()[name]), name


def test_capacity_grows_when_exceeded(model64, one):
    session = Session(model64, one, strength_for(one), step_capacity=2)
    session.start()
    for e in one.events:
        session.on_event(e)
        if session.step == 5:
            break
    assert session.step_capacity == 8


def test_store_gap_names_missing_step(model64, one):
    session = Session(model64, one, strength_for(one))
    session.start()
    for e in one.events:
        session.on_event(e)
        if session.step == 3:
            break
    del session.store._data[(one.match_id, "event", 2)]
    with pytest.raises(StoreGap, match="step 2"):
        session.inputs()


def test_engine_sessions_are_independent(model64, small_examples):
    a, b = small_examples[0][0], small_examples[1][0]
    sink = MemorySink()
    engine = Engine(model64, sink=sink)
    engine.open(a, strength_for(a))
    engine.open(b, strength_for(b))
    with pytest.raises(StreamError):
        engine.open(a, strength_for(a))
    engine.on_event(a.match_id, a.events[0])
    engine.on_event(b.match_id, b.events[0])
    assert [m.match_id for m in sink.messages] == [a.match_id, b.match_id, a.match_id, b.match_id]
    with pytest.raises(UnknownSession):
        engine.on_event("nope", a.events[1])
    engine.close(a.match_id)
    with pytest.raises(UnknownSession):
        engine.on_event(a.match_id, a.events[1])
    with pytest.raises(UnknownSession):
        engine.close(a.match_id)


# -- messages and sinks ---------------------------------------------------------------


def test_replay_messages_are_valid(model64, one, tmp_path):
    path = tmp_path / "msgs.jsonl"
    sink = FileSink(path)
    result = replay(model64, one, strength_for(one), sink=sink)
    sink.close()
    loaded = read_messages(path)
    assert len(loaded) == len(result.messages)
    for d in loaded:
        validate_message(d)
    assert ForecastMessage.from_dict(loaded[3]).to_dict() == loaded[3]
    stats = result.stats
    assert stats["p50"] <= stats["p95"] <= stats["max"]


def test_validate_message_catches_violations(model64, one):
    good = Session(model64, one, strength_for(one)).start().to_dict()

    def broken(edit):
        d = json.loads(json.dumps(good))
        edit(d)
        return d

    cases = [
        lambda d: d.pop("outcome"),
        lambda d: d.update(version=99),
        lambda d: d["outcome"].update(home=d["outcome"]["home"] + 0.01),
        lambda d: d["outcome"].update(draw=-0.1),
        lambda d: d["players"][0]["actions"]["goals"].update(running=5, expected_total=4.0),
        lambda d: d["teams"][0]["actions"]["goals"].update(params=[math.nan]),
    ]
    validate_message(good)
    for edit in cases:
        with pytest.raises(MessageError):
            validate_message(broken(edit))


def test_stdout_sink_writes_json_lines(model64, one):
    buf = io.StringIO()
    with redirect_stdout(buf):
        Session(model64, one, strength_for(one), sink=StdoutSink()).start()
    validate_message(json.loads(buf.getvalue().strip()))
