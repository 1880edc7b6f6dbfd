"""Embedding layers, axial transformer stack and distribution heads.

Grid layout (rows x columns):

    row 0        game       | game-context  | game features at steps 1..T
    rows 1-2     teams      | team strength | live team features
    rows 3..P+2  players    | player strength | live player features

Column 0 is the pre-game column; column t holds the state after key event t.
"""

from __future__ import annotations

import dataclasses
import json
import pickle
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .axial import AxialMaskSet, AxialTransformerLayer
from .data.features import MatchInputs, TargetBundle
from .data.schema import DEFAULT_SCHEMA
from .distributions import Family, family

INPUT_TENSORS = ("player", "player_strength", "team", "team_strength", "game", "game_context")
PREGAME_TENSORS = ("player_strength", "team_strength", "game_context")
GAME_ROW, FIRST_TEAM_ROW, FIRST_PLAYER_ROW = 0, 1, 3
CHECKPOINT_FORMAT = "axialcast.checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    dim: int = 32
    layers: int = 2
    heads: int = 1
    hidden: int = 64
    actions: tuple[str, ...] = DEFAULT_SCHEMA.actions
    families: dict[str, str] = field(default_factory=dict)  # action -> family spec, default poisson
    outcome_family: str = "discrete:3"
    feature_dims: dict[str, int] = field(default_factory=DEFAULT_SCHEMA.dims)
    attention: str = "additive"  # or "stacked"
    temporal: bool = True
    agent: bool = True
    pregame: bool = True
    norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        self.actions = tuple(self.actions)
        if self.layers < 1 or self.dim < 1:
            raise ValueError("need at least one layer and a positive dimension")
        if not (self.temporal or self.agent):
            raise ValueError("at least one attention axis must stay enabled")
        missing = set(INPUT_TENSORS) - set(self.feature_dims)
        if missing:
            raise ValueError(f"feature_dims lacks {sorted(missing)}")
        unknown = set(self.families) - set(self.actions)
        if unknown:
            raise ValueError(f"families given for unknown actions {sorted(unknown)}")

    def family_of(self, action: str) -> str:
        return self.families.get(action, "poisson")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["actions"] = list(self.actions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown model config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Batch:
    """Padded inputs for B matches; padding is zero and flagged invalid."""

    player: torch.Tensor  # (B, P, T, Dp)
    player_strength: torch.Tensor
    team: torch.Tensor
    team_strength: torch.Tensor
    game: torch.Tensor
    game_context: torch.Tensor
    agent_valid: torch.Tensor  # (B, P) bool
    step_valid: torch.Tensor  # (B, T + 1) bool, column 0 included

    @property
    def size(self) -> int:
        return self.player.shape[0]


def collate_inputs(inputs: list[MatchInputs], dtype=torch.float32, step_capacity: int | None = None,
                   player_capacity: int | None = None) -> Batch:
    b = len(inputs)
    p_max = max(x.players for x in inputs)
    t_max = max(x.steps for x in inputs)
    if player_capacity is not None:
        if player_capacity < p_max:
            raise ValueError(f"player capacity {player_capacity} below {p_max}")
        p_max = player_capacity
    if step_capacity is not None:
        if step_capacity < t_max:
            raise ValueError(f"step capacity {step_capacity} below {t_max}")
        t_max = step_capacity
    x0 = inputs[0]
    out = {
        "player": np.zeros((b, p_max, t_max, x0.player.shape[-1])),
        "player_strength": np.zeros((b, p_max, x0.player_strength.shape[-1])),
        "team": np.zeros((b, 2, t_max, x0.team.shape[-1])),
        "team_strength": np.zeros((b, 2, x0.team_strength.shape[-1])),
        "game": np.zeros((b, t_max, x0.game.shape[-1])),
        "game_context": np.zeros((b, x0.game_context.shape[-1])),
    }
    agent_valid = np.zeros((b, p_max), dtype=bool)
    step_valid = np.zeros((b, t_max + 1), dtype=bool)
    for k, x in enumerate(inputs):
        p, t = x.players, x.steps
        out["player"][k, :p, :t] = x.player
        out["player_strength"][k, :p] = x.player_strength
        out["team"][k, :, :t] = x.team
        out["team_strength"][k] = x.team_strength
        out["game"][k, :t] = x.game
        out["game_context"][k] = x.game_context
        agent_valid[k, :p] = True
        step_valid[k, : t + 1] = True
    tensors = {k: torch.as_tensor(v, dtype=dtype) for k, v in out.items()}
    return Batch(**tensors, agent_valid=torch.as_tensor(agent_valid), step_valid=torch.as_tensor(step_valid))


@dataclass
class ForecastOutput:
    """Distribution parameters per action for players (B, P, W, k) and teams (B, 2, W, k),
    plus outcome probabilities (B, W, 3) from the game row."""

    player: dict[str, torch.Tensor]
    team: dict[str, torch.Tensor]
    outcome: torch.Tensor
    families: dict[str, Family]
    outcome_family: Family
    agent_valid: torch.Tensor
    step_valid: torch.Tensor

    @property
    def actions(self) -> tuple[str, ...]:
        return tuple(self.player)

    def modality(self, name: str) -> dict[str, torch.Tensor]:
        return {"player": self.player, "team": self.team}[name]

    def predictions_per_step(self, match: int = 0) -> int:
        """Number of forecasts issued for one grid column of one match."""
        players = int(self.agent_valid[match].sum())
        return len(self.player) * (players + 2) + 1

    def predictions_per_match(self, match: int = 0, include_pregame: bool = False) -> int:
        steps = int(self.step_valid[match].sum()) - (0 if include_pregame else 1)
        return self.predictions_per_step(match) * steps

    def select(self, match: int, steps: int | None = None) -> "ForecastOutput":
        """Single-match view trimmed to its real players and grid columns."""
        p = int(self.agent_valid[match].sum())
        w = int(self.step_valid[match].sum()) if steps is None else steps
        return ForecastOutput(
            player={a: v[match : match + 1, :p, :w] for a, v in self.player.items()},
            team={a: v[match : match + 1, :, :w] for a, v in self.team.items()},
            outcome=self.outcome[match : match + 1, :w],
            families=self.families,
            outcome_family=self.outcome_family,
            agent_valid=self.agent_valid[match : match + 1, :p],
            step_valid=self.step_valid[match : match + 1, :w],
        )


class ForecastModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.dim
        dims = config.feature_dims
        torch.manual_seed(config.seed)
        embed_names = INPUT_TENSORS if config.pregame else tuple(n for n in INPUT_TENSORS if n not in PREGAME_TENSORS)
        self.embed = nn.ModuleDict({n: nn.Linear(dims[n], d) for n in embed_names})
        self.layers = nn.ModuleList(
            AxialTransformerLayer(d, config.hidden, config.heads, config.attention, config.norm_eps)
            for _ in range(config.layers)
        )
        self.families = {a: family(config.family_of(a)) for a in config.actions}
        self.outcome_family = family(config.outcome_family)
        self.player_heads = nn.ModuleDict({a: nn.Linear(d, f.n_params) for a, f in self.families.items()})
        self.team_heads = nn.ModuleDict({a: nn.Linear(d, f.n_params) for a, f in self.families.items()})
        self.outcome_head = nn.Linear(d, self.outcome_family.n_params)

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    # -- grid assembly ---------------------------------------------------

    def embed_inputs(self, batch: Batch) -> torch.Tensor:
        """E_0 of shape (B, P + 3, T + 1, D)."""
        self._check_dims(batch)
        cfg, e = self.config, self.embed
        b, p, t = batch.player.shape[:3]
        live_game = e["game"](batch.game).unsqueeze(1)  # (B, 1, T, D)
        live_team = e["team"](batch.team)
        live_player = e["player"](batch.player)
        live = torch.cat([live_game, live_team, live_player], dim=1)
        if cfg.pregame:
            pre = torch.cat(
                [
                    e["game_context"](batch.game_context).unsqueeze(1),
                    e["team_strength"](batch.team_strength),
                    e["player_strength"](batch.player_strength),
                ],
                dim=1,
            ).unsqueeze(2)  # (B, H, 1, D)
        else:
            pre = live.new_zeros(b, p + 3, 1, cfg.dim)
        if not cfg.temporal:
            # no temporal attention: carry the pre-game embedding into every step
            live = live + pre
        return torch.cat([pre, live], dim=2)

    def _check_dims(self, batch: Batch):
        for name in INPUT_TENSORS:
            want = self.config.feature_dims[name]
            got = getattr(batch, name).shape[-1]
            if got != want:
                raise ValueError(f"input tensor {name!r} has feature dim {got}, model expects {want}")

    def masks(self, batch: Batch) -> AxialMaskSet:
        cfg = self.config
        b, p, t = batch.player.shape[:3]
        w = t + 1
        idx = torch.arange(w)
        strict = idx[None, :] < idx[:, None]
        inclusive = idx[None, :] <= idx[:, None]
        if not cfg.temporal:
            row = torch.zeros(w, w, dtype=torch.bool)
        elif cfg.attention == "stacked" or not cfg.agent:
            row = inclusive
        else:
            row = strict
        agents = torch.cat([torch.ones(b, 3, dtype=torch.bool), batch.agent_valid], dim=1)  # (B, H)
        if cfg.agent:
            col = agents[:, None, None, :].expand(b, 1, p + 3, p + 3)
        else:
            col = torch.zeros(b, 1, p + 3, p + 3, dtype=torch.bool)
        return AxialMaskSet.from_allowed(row[None, None].expand(b, 1, w, w), col, dtype=self.dtype)

    # -- forward -----------------------------------------------------------

    def forward(self, batch: Batch) -> ForecastOutput:
        g = self.embed_inputs(batch)
        masks = self.masks(batch)
        for layer in self.layers:
            g = layer(g, masks)
        game_row = g[:, GAME_ROW]
        teams = g[:, FIRST_TEAM_ROW:FIRST_PLAYER_ROW]
        players = g[:, FIRST_PLAYER_ROW:]
        return ForecastOutput(
            player={a: self.families[a].transform(h(players)) for a, h in self.player_heads.items()},
            team={a: self.families[a].transform(h(teams)) for a, h in self.team_heads.items()},
            outcome=self.outcome_family.transform(self.outcome_head(game_row)),
            families=self.families,
            outcome_family=self.outcome_family,
            agent_valid=batch.agent_valid,
            step_valid=batch.step_valid,
        )

    def predict(self, inputs: MatchInputs, step_capacity: int | None = None) -> ForecastOutput:
        batch = collate_inputs([inputs], dtype=self.dtype, step_capacity=step_capacity)
        return self(batch).select(0)


def predict_totals(output: ForecastOutput, running_player, running_team) -> dict[str, dict[str, torch.Tensor]]:
    """Expected end-of-match totals: running count + mean remaining count.

    ``running_*`` are (A, agents, W) arrays as in :class:`TargetBundle`, for a
    single-match output.
    """
    rp = torch.as_tensor(np.asarray(running_player))
    rt = torch.as_tensor(np.asarray(running_team))
    if bool((rp < 0).any()) or bool((rt < 0).any()):
        raise ValueError("running counts must be non-negative")
    totals = {"player": {}, "team": {}}
    for k, a in enumerate(output.actions):
        fam = output.families[a]
        for name, params, running in (("player", output.player[a], rp[k]), ("team", output.team[a], rt[k])):
            mean = fam.mean(params[0])
            w = mean.shape[-1]
            totals[name][a] = running[..., :w].to(mean.dtype) + mean
    return totals


def totals_from_targets(output: ForecastOutput, targets: TargetBundle):
    return predict_totals(output, targets.running_player, targets.running_team)


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(model: ForecastModel, path, extra: dict | None = None) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": model.config.to_dict(),
            "dtype": str(model.dtype).removeprefix("torch."),
            "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path) -> tuple[ForecastModel, dict]:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except (pickle.UnpicklingError, RuntimeError, EOFError) as e:
        raise ValueError(f"{path} is not a readable checkpoint ({type(e).__name__})") from None
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {blob.get('version')} unsupported")
    model = ForecastModel(ModelConfig.from_dict(blob["config"]))
    model.to(getattr(torch, blob["dtype"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob["extra"]
