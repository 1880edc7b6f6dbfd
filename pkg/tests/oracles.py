"""Independent reference computations used by the tests.

Everything here is written with plain Python loops, ``math`` and ``decimal``
so that it shares no code path with the package under test.
"""

from __future__ import annotations

import math
from decimal import Decimal, getcontext


def matvec(w, x):
    """y = W x for a nested-list weight ``w`` (out x in)."""
    return [sum(w[o][i] * x[i] for i in range(len(x))) for o in range(len(w))]


def brute_attention(seq, wq, wk, wv, allowed, scale_dim):
    """Masked attention by explicit double loop.

    ``seq`` is a list of S vectors, ``w*`` nested lists (out x in) and
    ``allowed[i][j]`` says whether query i may attend to key j. Returns
    (result rows, normalizers n_i = sum_j exp(logit_ij)).
    """
    q = [matvec(wq, s) for s in seq]
    k = [matvec(wk, s) for s in seq]
    v = [matvec(wv, s) for s in seq]
    out, norms = [], []
    for i in range(len(seq)):
        weights = []
        for j in range(len(seq)):
            if allowed[i][j]:
                logit = sum(a * b for a, b in zip(q[i], k[j])) / math.sqrt(scale_dim)
                weights.append((j, math.exp(logit)))
        n = math.fsum(w for _, w in weights)
        norms.append(n)
        row = []
        for d in range(len(v[0])):
            row.append(math.fsum(w * v[j][d] for j, w in weights) / n if n > 0 else 0.0)
        out.append(row)
    return out, norms


def hp_log_normalizer(row, digits: int = 50) -> float:
    """log(sum exp(row)) in ``digits``-digit decimal arithmetic."""
    getcontext().prec = digits
    total = sum(Decimal(x).exp() for x in row)
    return float(total.ln())


def hp_softmax(row, digits: int = 50):
    getcontext().prec = digits
    e = [Decimal(x).exp() for x in row]
    total = sum(e)
    return [float(x / total) for x in e]


def expected_sequential_allowed(row_allowed, col_allowed, agents, steps):
    """Attend-pattern over the row-major unravelled grid, from the definitions.

    Cell (i, j) sits at position i * W + j. It may attend to (i, j') when the
    row mask of agent i allows j -> j', and to (i', j) when the column mask of
    step j allows i -> i'. Nothing else is reachable.
    """
    n = agents * steps
    out = [[False] * n for _ in range(n)]
    for i in range(agents):
        for j in range(steps):
            a = i * steps + j
            for j2 in range(steps):
                if row_allowed[i][j][j2]:
                    out[a][i * steps + j2] = True
            for i2 in range(agents):
                if col_allowed[j][i][i2]:
                    out[a][i2 * steps + j] = True
    return out


def poisson_nll(lam: float, y: int) -> float:
    return lam - y * math.log(lam) + math.lgamma(y + 1)


def adam_reference(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam trajectory: list of parameter values after each gradient."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out


def recount_running(events, squad_ids, key_types, credits, actions):
    """Running per-player action counts after each key event, by recounting.

    Returns ``counts[t][player][action]`` for t = 0 (before any event) and
    each key event. Every event (key or not) is counted once it has happened.
    """
    snapshots = [{p: {a: 0 for a in actions} for p in squad_ids}]
    for t, e in enumerate(events):
        if e.type in key_types:
            current = {p: {a: 0 for a in actions} for p in squad_ids}
            for prior in events[: t + 1]:
                if prior.player is None:
                    continue
                for a in credits.get(prior.type, ()):
                    current[prior.player][a] += 1
            snapshots.append(current)
    return snapshots
