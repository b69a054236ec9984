"""Local views of the state matrix when acknowledgements can be lost.

Every observer k keeps its own copy of the state matrix. An entry is HAS only
after k heard the ACK for it; a player that k believed targeted but whose ACK
k did not hear is marked UNCERTAIN together with the posterior probability
that it did receive the packet. Observers always know their own row.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .coding import Metric
from .core_model import completion_time_estimate
from .equilibrium import stage_values
from .games import GameHistory, GameKind, utility

HAS, WANTS, UNCERTAIN = 0, 1, 2


def uncertainty_posterior(p_forward: float, p_feedback: float, prior: float = 0.0) -> float:
    """Probability the packet was received given that no ACK was heard.

    ``prior`` is the probability it had already been received before this
    transmission. With no prior and no loss at all, the event is impossible
    and the posterior is defined as 0.
    """
    got = (1.0 - p_forward) * p_feedback
    num = prior + (1.0 - prior) * got
    den = prior + (1.0 - prior) * (p_forward + got)
    if den <= 0:
        return 0.0
    return num / den


@dataclass
class LocalFeedbackMatrix:
    """Observer's view: entries in {HAS, WANTS, UNCERTAIN} plus posteriors."""

    state: np.ndarray
    owner: int | None = None
    posterior: np.ndarray = field(default=None)

    def __post_init__(self):
        self.state = np.array(self.state, dtype=np.uint8)
        if self.posterior is None:
            self.posterior = np.zeros(self.state.shape)

    @classmethod
    def from_truth(cls, S, owner=None) -> "LocalFeedbackMatrix":
        return cls(np.array(S, dtype=np.uint8), owner)

    def apparent_wants(self) -> np.ndarray:
        """Binary matrix with uncertain entries counted as wanted."""
        return (self.state != HAS).astype(np.uint8)

    def want_prob(self) -> np.ndarray:
        p = (self.state == WANTS).astype(float)
        unc = self.state == UNCERTAIN
        p[unc] = 1.0 - self.posterior[unc]
        return p

    @property
    def uncertain_count(self) -> int:
        return int((self.state == UNCERTAIN).sum())

    def set_own_row(self, row) -> None:
        if self.owner is not None:
            self.state[self.owner] = row
            self.posterior[self.owner] = 0.0


def update_local_feedback(F: LocalFeedbackMatrix, kappa, heard_acks: dict, p_forward, p_feedback) -> LocalFeedbackMatrix:
    """Fold one transmission and the ACKs heard by the observer into its view.

    ``heard_acks`` maps player -> decoded packet for every ACK that reached the
    observer. ``p_forward[i]`` is the loss probability of the transmission to
    player i and ``p_feedback[i]`` that of the ACK from i to the observer.
    """
    kappa = np.asarray(kappa, dtype=np.uint8)
    apparent = F.apparent_wants()
    expected = (apparent.astype(np.int64) @ kappa.astype(np.int64)) == 1
    for i, j in heard_acks.items():
        F.state[i, j] = HAS
        F.posterior[i, j] = 0.0
    for i in np.flatnonzero(expected):
        if i == F.owner or i in heard_acks:
            continue
        j = int(np.flatnonzero(apparent[i] & kappa)[0])
        prior = F.posterior[i, j] if F.state[i, j] == UNCERTAIN else 0.0
        post = uncertainty_posterior(float(p_forward[i]), float(p_feedback[i]), prior)
        if post > 0:
            F.state[i, j] = UNCERTAIN
            F.posterior[i, j] = post
    return F


def lossy_rl_update(x: float, lam: float, s_tilde: float, indicator: int) -> float:
    """Reinforce transmit probability ``x`` with an estimated stimulus.

    A non-negative stimulus pulls x toward the indicator of transmitting. A
    negative one pushes it toward the complementary action, written so that
    x cannot leave [0, 1].
    """
    if not -1.0 <= s_tilde <= 1.0:
        raise ValueError(f"stimulus {s_tilde} outside [-1, 1]")
    if s_tilde >= 0:
        return x + lam * s_tilde * (indicator - x)
    return x + lam * (-s_tilde) * ((1 - indicator) - x)


def _row_distribution(probs: np.ndarray, in_kappa: np.ndarray) -> np.ndarray:
    """Joint law of (wanted count, min(wanted packets in kappa, 2)) for one row."""
    N = probs.shape[0]
    dist = np.zeros((N + 1, 3))
    dist[0, 0] = 1.0
    for p, k in zip(probs, in_kappa):
        if p == 0:
            continue
        moved = np.zeros_like(dist)
        if k:
            moved[1:, 1] += dist[:-1, 0]
            moved[1:, 2] += dist[:-1, 1] + dist[:-1, 2]
        else:
            moved[1:] = dist[:-1]
        dist = dist * (1.0 - p) + moved * p
    return dist


def _row_outcomes(probs, kappa, delivery_i, single):
    """Support points (wanted count, delay increment, probability) of one row."""
    kappa = np.zeros(probs.shape[0], dtype=np.uint8) if kappa is None else kappa
    dist = _row_distribution(probs, kappa)
    out = []
    for w, c in zip(*np.nonzero(dist)):
        if w == 0:
            delta = 0.0
        elif single:
            delta = 0.0 if c == 1 else float(delivery_i)
        else:
            delta = 1.0
        out.append((int(w), delta, float(dist[w, c])))
    return out


def _expected_max(rows) -> float:
    """E[max] of independent discrete variables; None values mean "absent".

    The maximum over an empty set counts as 0.
    """
    support = sorted({v for r in rows for v, _ in r if v is not None})
    if not support:
        return 0.0
    cdf = []
    for v in support:
        prod = 1.0
        for r in rows:
            prod *= sum(p for x, p in r if x is None or x <= v)
        cdf.append(prod)
    none_all = 1.0
    for r in rows:
        none_all *= sum(p for x, p in r if x is None)
    total, prev = 0.0, none_all
    for v, c in zip(support, cdf):
        total += v * (c - prev)
        prev = c
    return total


def _has_uncertainty(F: LocalFeedbackMatrix) -> bool:
    return F.uncertain_count > 0


def _binary_history(F, D_prev, P, combinations, backoff=None) -> GameHistory:
    return GameHistory(F.apparent_wants(), D_prev, P, combinations, backoff)


def estimated_payoff(kind: GameKind, player: int, a, F: LocalFeedbackMatrix, combinations, P, D_prev, backoff=None) -> float:
    """Expected-mode utility of profile ``a`` as estimated from view F.

    Uncertain entries are wanted with probability one minus their posterior,
    independently. Without uncertain entries this is exactly games.utility.
    """
    if F.owner is not None and player != F.owner:
        raise ValueError("a view only estimates payoffs for its owner")
    if not _has_uncertainty(F):
        return utility(kind, a, _binary_history(F, D_prev, P, combinations, backoff), player=player)
    a = np.asarray(a)
    M = F.state.shape[0]
    P = np.asarray(P, dtype=float)
    D_prev = np.asarray(D_prev, dtype=float)
    senders = np.flatnonzero(a)
    single = senders.size == 1
    kappa = np.asarray(combinations)[senders[0]] if single else None
    delivery = 1.0 - P[:, senders[0]] if single else np.ones(M)
    probs = F.want_prob()
    p_bar = P.sum(axis=1) / M
    rows = [_row_outcomes(probs[i], kappa, delivery[i], single) for i in range(M)]
    mean_delta = sum(p * d for r in rows for _, d, p in r)
    metric = kind.metric
    if metric is Metric.SDD:
        cost = float(D_prev.sum()) + mean_delta
    elif metric is Metric.MDD:
        values = [[(D_prev[i] + d, p) for _, d, p in r] for i, r in enumerate(rows)]
        cost = _expected_max(values)
    else:
        values = []
        for i, r in enumerate(rows):
            vals = []
            for w, d, p in r:
                if w == 0:
                    vals.append((None, p))
                else:
                    vals.append((float(completion_time_estimate(w, D_prev[i] + d, p_bar[i])), p))
            values.append(vals)
        cost = _expected_max(values)
    if kind.regularized:
        cost += float(a.sum())
        if kind.increment_weight:
            cost += mean_delta / M
    return -cost


def _exactly_one(q: np.ndarray) -> np.ndarray:
    """Per row, probability that exactly one of the independent events in q occurs."""
    miss = 1.0 - q
    before = np.cumprod(np.hstack([np.ones((q.shape[0], 1)), miss[:, :-1]]), axis=1)
    after = np.cumprod(np.hstack([np.ones((q.shape[0], 1)), miss[:, :0:-1]]), axis=1)[:, ::-1]
    return (q * before * after).sum(axis=1)


class ViewEstimate:
    """Expected sum-delay increments of silence and lone senders under one view.

    Lone-sender values are computed on demand and cached, so one instance
    serves all payoff estimates of an observer within a stage.
    """

    def __init__(self, F: LocalFeedbackMatrix, combinations, P, D_prev):
        self.combinations = np.asarray(combinations)
        self.P = np.asarray(P, dtype=float)
        self.exact = not _has_uncertainty(F)
        if self.exact:
            v = stage_values(GameKind(Metric.SDD), _binary_history(F, D_prev, P, combinations))
            self.silent = v.y0
            self._lone = {j: float(x) for j, x in enumerate(v.y)}
        else:
            self.probs = F.want_prob()
            self.wanting = 1.0 - np.prod(1.0 - self.probs, axis=1)
            self.silent = float(self.wanting.sum())
            self._lone = {}

    def lone(self, j: int) -> float:
        if j not in self._lone:
            kappa = self.combinations[j].astype(bool)
            one = _exactly_one(self.probs[:, kappa]) if kappa.any() else np.zeros(self.probs.shape[0])
            delivery = 1.0 - self.P[:, j]
            self._lone[j] = float((delivery * (self.wanting - one)).sum())
        return self._lone[j]

    def increment(self, a) -> float:
        senders = np.flatnonzero(np.asarray(a))
        return self.lone(int(senders[0])) if senders.size == 1 else self.silent


def estimated_sum_increment(F: LocalFeedbackMatrix, a, combinations, P, D_prev) -> float:
    """Expected sum-delay increment of profile ``a`` as estimated from view F."""
    return ViewEstimate(F, combinations, P, D_prev).increment(a)


def exhaustive_expected_payoff(kind: GameKind, a, F: LocalFeedbackMatrix, combinations, P, D_prev, backoff=None) -> float:
    """Reference: average games.utility over every assignment of the uncertain entries."""
    unc = list(zip(*np.nonzero(F.state == UNCERTAIN)))
    if len(unc) > 16:
        raise ValueError("too many uncertain entries to enumerate")
    base = (F.state == WANTS).astype(np.uint8)
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(unc)):
        S = base.copy()
        weight = 1.0
        for (i, j), b in zip(unc, bits):
            S[i, j] = b
            w = 1.0 - F.posterior[i, j]
            weight *= w if b else 1.0 - w
        if weight == 0:
            continue
        total += weight * utility(kind, a, GameHistory(S, D_prev, P, combinations, backoff))
    return total
