from .features import (
    AWAY,
    DRAW,
    HOME,
    ActionLedger,
    MatchInputs,
    MatchState,
    MissingStrengthError,
    StrengthStore,
    StrengthTracker,
    TargetBundle,
    assemble_inputs,
    audit_features,
    build_ledger,
    compute_strength_features,
    prepare_examples,
    strength_snapshots,
)
from .generator import GeneratorParams, League, LeagueParams, PlayerSpec, generate_dataset, generate_match
from .io import CorruptRecord, DatasetError, VersionMismatch, iter_matches, read_matches, write_matches
from .records import EventRecord, MatchRecord, RecordError, SquadPlayer
from .schema import ACTIONS, DEFAULT_SCHEMA, Schema, UnknownEventType
