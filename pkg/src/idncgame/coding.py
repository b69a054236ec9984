"""Selection of instantly decodable XOR combinations.

A combination is a 0/1 vector over the N packets. A sender may only mix
packets it holds; a receiver decodes a new packet when exactly one packet of
the combination is in its Wants set.

Two selectors are provided: a greedy maximum-weight clique search on the
IDNC graph of the sender, and an exhaustive search over every subset of the
sender's Has set used as a reference on small instances.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .core_model import completion_time_estimate, wants_indicator

# Largest Has set the exhaustive selector accepts (2**20 subsets).
EXHAUSTIVE_MAX = 20
# Added to a vertex weight when the vertex serves a critical player. It only
# has to exceed any delivery probability.
CRITICAL_BONUS = 2.0
ROUND_DIGITS = 12


class Metric(str, Enum):
    CT = "CT"
    MDD = "MDD"
    SDD = "SDD"


def critical_players(metric, S, D_prev, p_ref) -> np.ndarray:
    """Boolean mask of players the metric cares about most right now.

    MDD: wanting players at the largest cumulative delay (over all players).
    CT: wanting players with the largest completion-time estimate.
    SDD has no critical set.
    """
    metric = Metric(metric)
    S = np.asarray(S)
    wanting = wants_indicator(S).astype(bool)
    if metric is Metric.SDD or not wanting.any():
        return np.zeros(S.shape[0], dtype=bool)
    D_prev = np.asarray(D_prev, dtype=float)
    if metric is Metric.MDD:
        return wanting & (D_prev == D_prev.max())
    C = completion_time_estimate(S.sum(axis=1), D_prev, p_ref)
    top = C[wanting].max()
    return wanting & (C == top)


def has_set(S, sender) -> np.ndarray:
    """Packets available to a sender; the base station (None) holds all."""
    S = np.asarray(S)
    if sender is None:
        return np.ones(S.shape[1], dtype=bool)
    return S[sender] == 0


def graph_vertices(S, sender) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (i, j) of the sender's IDNC graph, sorted by (i, j)."""
    S = np.asarray(S)
    mask = (S == 1) & has_set(S, sender)[None, :]
    if sender is not None:
        mask[sender] = False
    rows, cols = np.nonzero(mask)
    return rows, cols


def adjacent(S, i1, j1, i2, j2, H=None):
    """Vectorized adjacency test between vertex (i1, j1) and vertices (i2, j2).

    ``H`` is the boolean Has matrix ``S == 0`` when the caller already has it.
    """
    H = (np.asarray(S) == 0) if H is None else H
    return (i2 != i1) & ((j2 == j1) | (H[i2, j1] & H[i1, j2]))


def greedy_combination(S, sender, metric, delivery, D_prev=None, p_ref=None, want_prob=None) -> np.ndarray:
    """Greedy maximum-weight clique of the sender's IDNC graph.

    Vertex weight is the delivery probability to the receiver, scaled by the
    probability that it really wants the packet when ``want_prob`` is given,
    plus a bonus for receivers in the critical set of the metric. Ties go to
    the smallest (player, packet) pair.
    """
    S = np.asarray(S, dtype=np.uint8)
    M, N = S.shape
    kappa = np.zeros(N, dtype=np.uint8)
    rows, cols = graph_vertices(S, sender)
    if rows.size == 0:
        return kappa
    weight = np.asarray(delivery, dtype=float)[rows]
    if want_prob is not None:
        weight = weight * np.asarray(want_prob, dtype=float)[rows, cols]
    if Metric(metric) is not Metric.SDD:
        if D_prev is None:
            D_prev = np.zeros(M)
        crit = critical_players(metric, S, D_prev, p_ref if p_ref is not None else np.zeros(M))
        weight = weight + CRITICAL_BONUS * crit[rows]
    H = S == 0
    while rows.size:
        k = int(np.argmax(weight))
        i, j = rows[k], cols[k]
        kappa[j] = 1
        keep = adjacent(S, i, j, rows, cols, H)
        rows, cols, weight = rows[keep], cols[keep], weight[keep]
    return kappa


def _subset_matrix(h: int) -> np.ndarray:
    # Row r has bit (h - 1 - c) of r in column c, so increasing r is
    # increasing lexicographic order of the subset vectors.
    r = np.arange(2**h, dtype=np.int64)[:, None]
    shifts = np.arange(h - 1, -1, -1, dtype=np.int64)[None, :]
    return ((r >> shifts) & 1).astype(np.uint8)


def combination_scores(kappas, S, metric, delivery, D_prev=None, p_ref=None):
    """Primary and secondary stage objectives (both minimized) per candidate.

    The primary objective is the expected growth of the metric; the secondary
    one is the expected sum-delay growth. Both come back rounded to 12 digits.
    """
    metric = Metric(metric)
    S = np.asarray(S, dtype=np.int64)
    M = S.shape[0]
    kappas = np.asarray(kappas, dtype=np.int64)
    tau = (kappas @ S.T) == 1
    wanting = wants_indicator(S).astype(float)
    d = np.asarray(delivery, dtype=float)[None, :] * (~tau) * wanting[None, :]
    sdd = d.sum(axis=1)
    if metric is Metric.SDD:
        primary = sdd
    else:
        D_prev = np.zeros(M) if D_prev is None else np.asarray(D_prev, dtype=float)
        if metric is Metric.MDD:
            primary = (D_prev[None, :] + d).max(axis=1) - D_prev.max()
        else:
            p_ref = np.asarray(p_ref, dtype=float)
            W = S.sum(axis=1)
            C = completion_time_estimate(W, D_prev, p_ref)
            w = wanting.astype(bool)
            if not w.any():
                primary = np.zeros(len(kappas))
            else:
                grown = C[None, w] + d[:, w] / (1.0 - p_ref[None, w])
                primary = grown.max(axis=1) - C[w].max()
    return np.round(primary, ROUND_DIGITS), np.round(sdd, ROUND_DIGITS)


def exhaustive_best_combination(S, sender, metric, delivery, D_prev=None, p_ref=None, limit=EXHAUSTIVE_MAX) -> np.ndarray:
    """Best combination over every subset of the sender's Has set.

    Minimizes the metric objective, then the expected sum delay, then picks
    the lexicographically smallest combination.
    """
    S = np.asarray(S, dtype=np.uint8)
    H = np.flatnonzero(has_set(S, sender))
    if H.size > min(limit, EXHAUSTIVE_MAX):
        raise ValueError(f"Has set of size {H.size} exceeds the exhaustive limit {limit}")
    subsets = _subset_matrix(H.size)
    kappas = np.zeros((subsets.shape[0], S.shape[1]), dtype=np.uint8)
    kappas[:, H] = subsets
    primary, secondary = combination_scores(kappas, S, metric, delivery, D_prev, p_ref)
    best = primary == primary.min()
    best &= secondary == secondary[best].min()
    return kappas[int(np.argmax(best))].copy()


def select_combination(S, sender, metric, delivery, D_prev=None, p_ref=None, exhaustive_limit=0, want_prob=None):
    """Exhaustive search when the Has set is small enough, greedy otherwise.

    Returns the combination and whether the exhaustive search was used.
    """
    h = int(has_set(S, sender).sum())
    if want_prob is None and h <= min(exhaustive_limit, EXHAUSTIVE_MAX):
        return exhaustive_best_combination(S, sender, metric, delivery, D_prev, p_ref, limit=exhaustive_limit), True
    return greedy_combination(S, sender, metric, delivery, D_prev, p_ref, want_prob), False


def player_combinations(S, P, metric, D_prev=None, p_ref=None, exhaustive_limit=0) -> tuple[np.ndarray, int]:
    """Combination of every player for the current state.

    Returns the M x N matrix and the number of players served exhaustively.
    """
    S = np.asarray(S, dtype=np.uint8)
    P = np.asarray(P, dtype=float)
    M, N = S.shape
    out = np.zeros((M, N), dtype=np.uint8)
    n_exhaustive = 0
    for s in range(M):
        out[s], used = select_combination(S, s, metric, 1.0 - P[:, s], D_prev, p_ref, exhaustive_limit)
        n_exhaustive += used
    return out, n_exhaustive
