"""System model for cooperative recovery of broadcast packets.

A base station broadcasts N packets to M players over erasure links. After
that initial phase each player either holds or wants every packet, stored in
the state matrix ``S`` (``S[i, j] == 1`` means player i wants packet j). During
recovery the players exchange XOR combinations over lossy player-to-player
links described by the erasure matrix ``P`` (``P[i, j]`` is the loss
probability on the link from player j to player i, with a zero diagonal).

Players are indexed from 0 throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Named sub-streams so that every consumer of randomness draws from its own
# independent generator. Two schemes that share a seed then see identical
# channels and action draws even if one of them also simulates feedback.
STREAMS = {
    "initial": 0,
    "channel": 1,
    "action": 2,
    "feedback": 3,
    "erasure": 4,
}


def stage_rng(seed: int, stream: str, *key: int) -> np.random.Generator:
    """Generator for one named stream, further keyed by stage/link indices."""
    ss = np.random.SeedSequence(seed, spawn_key=(STREAMS[stream],) + tuple(int(k) for k in key))
    return np.random.default_rng(ss)


@dataclass
class GameConfig:
    """Scalar and matrix parameters of one recovery episode."""

    M: int
    N: int
    P: np.ndarray
    Q: np.ndarray
    V: int = 2
    epsilon: float = 0.5
    max_stages: int | None = None
    seed: int = 0
    # Constant loss probability for every feedback (ACK) link. None means the
    # ACK from i to k travels the i -> k link and is lost with P[k, i], and the
    # ACK to the base station is lost with Q[i].
    feedback_loss: float | None = None
    exhaustive_limit: int = 8
    p_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("need at least one player and one packet")
        P = np.array(self.P, dtype=float)
        if P.ndim == 0:
            P = np.full((self.M, self.M), float(P))
        Q = np.array(self.Q, dtype=float)
        if Q.ndim == 0:
            Q = np.full(self.M, float(Q))
        if P.shape != (self.M, self.M):
            raise ValueError(f"P must be {self.M}x{self.M}, got {P.shape}")
        if Q.shape != (self.M,):
            raise ValueError(f"Q must have length {self.M}, got {Q.shape}")
        np.fill_diagonal(P, 0.0)
        if np.any(P < 0) or np.any(P >= 1):
            raise ValueError("player-to-player erasures must lie in [0, 1)")
        if np.any(Q < 0) or np.any(Q >= 1):
            raise ValueError("base-station erasures must lie in [0, 1)")
        if self.V < 0:
            raise ValueError("back-off window must be non-negative")
        if self.feedback_loss is not None and not 0 <= self.feedback_loss < 1:
            raise ValueError("feedback loss must lie in [0, 1)")
        self.P = P
        self.Q = Q
        if self.max_stages is None:
            self.max_stages = 50 * self.N
        self.p_bar = average_erasure(P)
        if np.any(self.p_bar >= 1):
            raise ValueError("average erasure must be below 1")

    def feedback_matrix(self) -> np.ndarray:
        """Loss probability of the ACK sent by player i and heard by k, at [k, i]."""
        if self.feedback_loss is None:
            F = self.P.copy()
        else:
            F = np.full((self.M, self.M), self.feedback_loss)
        np.fill_diagonal(F, 0.0)
        return F

    def feedback_to_bs(self) -> np.ndarray:
        if self.feedback_loss is None:
            return self.Q.copy()
        return np.full(self.M, self.feedback_loss)


def average_erasure(P: np.ndarray) -> np.ndarray:
    """Row-average erasure probability seen by each player."""
    P = np.asarray(P, dtype=float)
    return P.sum(axis=1) / P.shape[0]


def initial_phase(Q, N: int, rng: np.random.Generator, with_count: bool = False):
    """Broadcast N packets from the base station and return the state matrix.

    A packet that nobody received is re-broadcast until at least one player
    holds it, so every wanted packet can later be recovered cooperatively.
    """
    Q = np.asarray(Q, dtype=float)
    if np.any(Q >= 1):
        raise ValueError("a player that never receives cannot be served")
    M = Q.shape[0]
    S = (rng.random((M, N)) < Q[:, None]).astype(np.uint8)
    sent = N
    for j in range(N):
        while S[:, j].all():
            S[:, j] = (rng.random(M) < Q).astype(np.uint8)
            sent += 1
    if with_count:
        return S, sent
    return S


def sample_channel_state(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One realization of the links: 1 where the transmission gets through."""
    P = np.asarray(P, dtype=float)
    return (rng.random(P.shape) >= P).astype(np.uint8)


def wants_indicator(S: np.ndarray) -> np.ndarray:
    """1 for every player that still wants at least one packet."""
    return np.asarray(S).any(axis=1).astype(np.uint8)


def targeted_set(kappa: np.ndarray, S: np.ndarray) -> np.ndarray:
    """1 for players that can decode one new packet from combination kappa."""
    counts = np.asarray(S, dtype=np.int64) @ np.asarray(kappa, dtype=np.int64)
    return (counts == 1).astype(np.uint8)


def delay_increment(delivered: np.ndarray, kappa: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Delay added to each player when a single sender transmits kappa.

    ``delivered`` is the sender's column of the channel realization, or the
    delivery probabilities ``1 - P[:, sender]`` for the expected increment. A
    player is delayed when it wants something, receives the packet and cannot
    decode anything new from it.
    """
    tau = targeted_set(kappa, S)
    return np.asarray(delivered) * (1 - tau) * wants_indicator(S)


def increment(a: np.ndarray, delivery: np.ndarray, S: np.ndarray, combinations: np.ndarray) -> np.ndarray:
    """Delay increment of a full action profile.

    ``delivery`` is an M x M matrix indexed like ``P``: realized link states or
    delivery probabilities. Silence or a collision delays every wanting player.
    """
    a = np.asarray(a)
    senders = np.flatnonzero(a)
    if senders.size != 1:
        return wants_indicator(S).astype(float)
    j = senders[0]
    return delay_increment(np.asarray(delivery, dtype=float)[:, j], combinations[j], S).astype(float)


def update_cumulative_delay(D_prev, a, omega, S, combinations) -> np.ndarray:
    """Accumulate the realized delay of one stage."""
    D_prev = np.asarray(D_prev, dtype=float)
    a = np.asarray(a)
    if a.shape != D_prev.shape:
        raise ValueError("profile and delay vector lengths differ")
    return D_prev + increment(a, omega, S, combinations)


def completion_time_estimate(W, D, p_bar) -> np.ndarray:
    """Approximate number of further stages each player needs."""
    p_bar = np.asarray(p_bar, dtype=float)
    if np.any(p_bar >= 1):
        raise ValueError("average erasure must be below 1")
    return (np.asarray(W, dtype=float) + np.asarray(D, dtype=float) - p_bar) / (1.0 - p_bar)


def decode(S: np.ndarray, kappa: np.ndarray, received: np.ndarray) -> np.ndarray:
    """State after a transmission: targeted players that received it decode."""
    S = np.array(S, dtype=np.uint8, copy=True)
    kappa = np.asarray(kappa, dtype=np.uint8)
    gain = targeted_set(kappa, S) * np.asarray(received, dtype=np.uint8)
    rows = np.flatnonzero(gain)
    if rows.size:
        S[rows] = S[rows] * (1 - kappa)
    return S
