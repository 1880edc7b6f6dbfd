"""Output distribution families for the target heads.

Each family turns raw head outputs into constrained parameters and provides
log-probabilities, means and modal values for integer targets.
"""

from __future__ import annotations

import math

import torch
from torch.nn import functional as F

TINY = 1e-30
LOG_GAUSSIAN_SUPPORT = 512


def _log(x):
    return torch.log(x.clamp_min(TINY))


class Family:
    name: str
    n_params: int

    def transform(self, raw: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def log_prob(self, params: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def nll(self, params, y):
        return -self.log_prob(params, y)

    def mean(self, params: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def mode(self, params: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Modal value and its probability."""
        raise NotImplementedError

    def check_target(self, y: torch.Tensor) -> None:
        if bool((y < 0).any()):
            raise ValueError(f"{self.name} targets must be non-negative")

    def __repr__(self):
        return self.spec

    @property
    def spec(self) -> str:
        return self.name


class Poisson(Family):
    name = "poisson"
    n_params = 1

    def transform(self, raw):
        return F.softplus(raw)

    def log_prob(self, params, y):
        lam = params[..., 0]
        y = y.to(lam.dtype)
        return y * _log(lam) - lam - torch.lgamma(y + 1)

    def mean(self, params):
        return params[..., 0]

    def mode(self, params):
        lam = params[..., 0]
        k = torch.floor(lam)
        return k, torch.exp(self.log_prob(params, k))


class Bernoulli(Family):
    name = "bernoulli"
    n_params = 1

    def transform(self, raw):
        return torch.sigmoid(raw)

    def check_target(self, y):
        if bool(((y != 0) & (y != 1)).any()):
            raise ValueError("bernoulli targets must be 0 or 1")

    def log_prob(self, params, y):
        p = params[..., 0]
        y = y.to(p.dtype)
        return y * _log(p) + (1 - y) * _log(1 - p)

    def mean(self, params):
        return params[..., 0]

    def mode(self, params):
        p = params[..., 0]
        k = (p > 0.5).to(p.dtype)
        return k, torch.where(k > 0, p, 1 - p)


def _log_diff_ndtr(a, b):
    """log(Phi(b) - Phi(a)) for a < b, stable in both tails."""
    upper = a > 0
    lo = torch.where(upper, -b, a)
    hi = torch.where(upper, -a, b)
    lhi = torch.special.log_ndtr(hi)
    llo = torch.special.log_ndtr(lo)
    return lhi + torch.log1p(-torch.exp((llo - lhi).clamp_max(-1e-300)))


class LogGaussian(Family):
    """Discretised log-normal: log(Y + 1) ~ N(mu, sigma), Y = round(Y + 1) - 1."""

    name = "log_gaussian"
    n_params = 2

    def transform(self, raw):
        return torch.stack([raw[..., 0], F.softplus(raw[..., 1])], dim=-1)

    def log_prob(self, params, y):
        mu, sigma = params[..., 0], params[..., 1].clamp_min(TINY)
        y = y.to(mu.dtype)
        b = (torch.log(y + 1.5) - mu) / sigma
        a = (torch.log((y + 0.5).clamp_min(0.5)) - mu) / sigma
        first = torch.special.log_ndtr(b)
        return torch.where(y <= 0, first, _log_diff_ndtr(a, b))

    def _pmf_table(self, params):
        support = torch.arange(LOG_GAUSSIAN_SUPPORT, dtype=params.dtype)
        expanded = params.unsqueeze(-2).expand(*params.shape[:-1], LOG_GAUSSIAN_SUPPORT, 2)
        return support, torch.exp(self.log_prob(expanded, support))

    def mean(self, params):
        support, pmf = self._pmf_table(params)
        return (pmf * support).sum(-1)

    def mode(self, params):
        support, pmf = self._pmf_table(params)
        prob, idx = pmf.max(-1)
        return support[idx], prob


class Discrete(Family):
    """Categorical over 0..K-1; for counts the top class means "K-1 or more"."""

    name = "discrete"

    def __init__(self, classes: int):
        if classes < 2:
            raise ValueError("a discrete head needs at least 2 classes")
        self.n_params = classes

    @property
    def spec(self):
        return f"discrete:{self.n_params}"

    def transform(self, raw):
        return torch.softmax(raw, dim=-1)

    def log_prob(self, params, y):
        idx = y.long().clamp(0, self.n_params - 1)
        return _log(params.gather(-1, idx.unsqueeze(-1)).squeeze(-1))

    def mean(self, params):
        support = torch.arange(self.n_params, dtype=params.dtype)
        return (params * support).sum(-1)

    def mode(self, params):
        prob, idx = params.max(-1)
        return idx.to(params.dtype), prob


def family(spec: str) -> Family:
    """``"poisson"``, ``"bernoulli"``, ``"log_gaussian"`` or ``"discrete:K"``."""
    name, _, arg = spec.partition(":")
    if name == "poisson":
        return Poisson()
    if name == "bernoulli":
        return Bernoulli()
    if name == "log_gaussian":
        return LogGaussian()
    if name == "discrete":
        return Discrete(int(arg or 3))
    raise ValueError(f"unknown distribution family {spec!r}")


def poisson_nll(lam: float, y: int) -> float:
    """Scalar Poisson negative log-likelihood, handy for baselines."""
    if lam <= 0:
        return 0.0 if y == 0 else math.inf
    return lam - y * math.log(lam) + math.lgamma(y + 1)
