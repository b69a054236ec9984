"""Stage games played by the cooperating players.

Every game is a common-payoff game: all players receive the same utility,
the negative of a network-wide cost. Three base costs are supported

* CT  - largest completion-time estimate among players still wanting packets,
* MDD - largest cumulative decoding delay,
* SDD - sum of the cumulative decoding delays,

and each has a regularized variant that also charges one unit per
transmitting player (so collisions are penalized) and, for CT and MDD, the
average delay increment of the stage. Regularized games restrict backed-off
players to silence.

Utilities are evaluated either on a realized channel ``omega`` or in the
expected mode, where link states are replaced by delivery probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coding import Metric
from .core_model import average_erasure, completion_time_estimate, increment, wants_indicator

TRANSMIT = 1
SILENT = 0


@dataclass(frozen=True)
class GameKind:
    metric: Metric
    regularized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))

    @property
    def number(self) -> int:
        base = {Metric.CT: 1, Metric.MDD: 2, Metric.SDD: 3}[self.metric]
        return base + 3 * self.regularized

    @classmethod
    def from_number(cls, n: int) -> "GameKind":
        if n not in range(1, 7):
            raise ValueError(f"no game numbered {n}")
        metric = [Metric.CT, Metric.MDD, Metric.SDD][(n - 1) % 3]
        return cls(metric, n > 3)

    @property
    def increment_weight(self) -> float:
        """Weight of the summed delay increment in the regularized cost, per player."""
        if not self.regularized or self.metric is Metric.SDD:
            return 0.0
        return 1.0

    def __str__(self):
        return f"Game {self.number} ({self.metric.value}{', regularized' if self.regularized else ''})"


ALL_GAMES = tuple(GameKind.from_number(n) for n in range(1, 7))


@dataclass
class GameHistory:
    """Everything a stage game depends on at one stage.

    ``combinations[j]`` is the combination player j would send, ``D_prev`` the
    cumulative delays before the stage and ``backoff`` the number of recent
    collisions per player (only the regularized games look at it).
    """

    S: np.ndarray
    D_prev: np.ndarray
    P: np.ndarray
    combinations: np.ndarray
    backoff: np.ndarray | None = None
    p_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.uint8)
        M, N = self.S.shape
        self.D_prev = np.asarray(self.D_prev, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.combinations = np.asarray(self.combinations, dtype=np.uint8)
        if self.D_prev.shape != (M,):
            raise ValueError("delay history length does not match the number of players")
        if self.P.shape != (M, M):
            raise ValueError("erasure matrix shape does not match the number of players")
        if self.combinations.shape != (M, N):
            raise ValueError("need one combination per player")
        if self.backoff is None:
            self.backoff = np.zeros(M, dtype=np.int64)
        self.backoff = np.asarray(self.backoff, dtype=np.int64)
        if self.backoff.shape != (M,):
            raise ValueError("back-off vector length does not match the number of players")
        self.p_bar = average_erasure(self.P)

    @property
    def M(self) -> int:
        return self.S.shape[0]

    @property
    def wants(self) -> np.ndarray:
        return wants_indicator(self.S)

    @property
    def W(self) -> np.ndarray:
        return self.S.sum(axis=1)

    def expected_delivery(self) -> np.ndarray:
        return 1.0 - self.P


def allowed_actions(player: int, backoff) -> tuple[int, ...]:
    """Actions open to a player in the regularized games."""
    if np.asarray(backoff)[player] > 0:
        return (SILENT,)
    return (SILENT, TRANSMIT)


def allowed_mask(kind: GameKind, history: GameHistory) -> np.ndarray:
    """Players free to transmit under the game's action space."""
    if kind.regularized:
        return history.backoff == 0
    return np.ones(history.M, dtype=bool)


def base_cost(metric, S, D, p_bar) -> float:
    """Network cost of a state with cumulative delays D."""
    metric = Metric(metric)
    D = np.asarray(D, dtype=float)
    if metric is Metric.SDD:
        return float(D.sum())
    if metric is Metric.MDD:
        return float(D.max())
    wanting = wants_indicator(S).astype(bool)
    if not wanting.any():
        return 0.0
    C = completion_time_estimate(np.asarray(S).sum(axis=1), D, p_bar)
    return float(C[wanting].max())


def utility(kind: GameKind, a, history: GameHistory, omega=None, player: int | None = None) -> float:
    """Common utility of profile ``a``; every player (``player``) gets the same value.

    Without ``omega`` the expected mode is used.
    """
    a = np.asarray(a)
    if a.shape != (history.M,):
        raise ValueError(f"profile must have {history.M} entries")
    if player is not None and not 0 <= player < history.M:
        raise ValueError("no such player")
    delivery = history.expected_delivery() if omega is None else np.asarray(omega)
    delta = increment(a, delivery, history.S, history.combinations)
    cost = base_cost(kind.metric, history.S, history.D_prev + delta, history.p_bar)
    if kind.regularized:
        cost += float(a.sum())
        if kind.increment_weight:
            cost += float(delta.sum()) / history.M
    return -cost


def collision_indicator(a) -> np.ndarray:
    """Transmitting players flagged when more than one of them transmitted."""
    a = np.asarray(a, dtype=np.uint8)
    if a.sum() > 1:
        return a.copy()
    return np.zeros_like(a)


@dataclass
class CollisionHistory:
    """Sliding window over the last V collision indicators of every player."""

    M: int
    V: int
    window: np.ndarray = field(init=False)

    def __post_init__(self):
        self.window = np.zeros((self.M, self.V), dtype=np.uint8)

    def record(self, a) -> np.ndarray:
        c = collision_indicator(a)
        if self.V:
            self.window = np.concatenate([self.window[:, 1:], c[:, None]], axis=1)
        return c

    @property
    def backoff(self) -> np.ndarray:
        return self.window.sum(axis=1).astype(np.int64)
