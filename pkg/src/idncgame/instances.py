"""Random stage histories for checks on small games."""
from __future__ import annotations

import numpy as np

from .coding import Metric, player_combinations
from .core_model import average_erasure, initial_phase
from .games import GameHistory, GameKind


def random_erasures(rng: np.random.Generator, M: int, low: float = 0.0, high: float = 0.5) -> np.ndarray:
    P = rng.uniform(low, high, size=(M, M))
    # Some exactly lossless links so that ties between players show up.
    P[rng.random((M, M)) < 0.15] = 0.0
    np.fill_diagonal(P, 0.0)
    return P


def random_history(rng: np.random.Generator, M: int, N: int, kind: GameKind, exhaustive_limit: int = 0) -> GameHistory:
    """A plausible mid-episode state: coverage holds, delays are small integers."""
    q = rng.uniform(0.1, 0.7, size=M)
    S = initial_phase(q, N, rng)
    P = random_erasures(rng, M)
    D = rng.integers(0, 4, size=M).astype(float)
    combos, _ = player_combinations(S, P, kind.metric, D, average_erasure(P), exhaustive_limit)
    backoff = None
    if kind.regularized:
        backoff = (rng.random(M) < 0.25).astype(np.int64) * rng.integers(1, 3, size=M)
    return GameHistory(S, D, P, combos, backoff)


def history_corpus(seed: int, count: int, kind: GameKind, M_range=(2, 5), N_range=(3, 5)) -> list[GameHistory]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        M = int(rng.integers(M_range[0], M_range[1] + 1))
        N = int(rng.integers(N_range[0], N_range[1] + 1))
        out.append(random_history(rng, M, N, kind, exhaustive_limit=N))
    return out
