"""Nash equilibria, the potential-optimal equilibrium and the price of anarchy.

In every stage game the cost of a profile only depends on how many players
transmit and, when exactly one does, on who it is. The structural results
below are written in terms of the cost increments over the previous stage

* ``y0``   - increment when nobody or more than one player transmits,
* ``y[j]`` - increment when player j transmits alone,

together with the wanting-player count ``m`` and the expected sum-delay
increments ``s[j]`` used by the regularized games. All quantities use the
expected mode.

``enumerate_ne`` is a brute-force reference built on ``games.utility`` only.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .coding import Metric, critical_players
from .core_model import completion_time_estimate
from .games import GameHistory, GameKind, allowed_mask, utility

TOL = 1e-9
ENUMERATION_MAX = 16


@dataclass
class StageValues:
    kind: GameKind
    allowed: np.ndarray
    base: float
    y0: float
    y: np.ndarray
    m: float
    s: np.ndarray

    @property
    def M(self) -> int:
        return self.y.shape[0]

    def increment(self, count: int, sender: int | None = None) -> float:
        """Cost increment of any profile with ``count`` transmitters."""
        if not self.kind.regularized:
            return float(self.y[sender]) if count == 1 else self.y0
        w = self.kind.increment_weight / self.M
        if count == 1:
            return float(self.y[sender]) + 1.0 + w * float(self.s[sender])
        return self.y0 + count + w * self.m

    def profile_increment(self, a) -> float:
        a = np.asarray(a)
        senders = np.flatnonzero(a)
        return self.increment(senders.size, senders[0] if senders.size == 1 else None)

    def cost(self, a) -> float:
        return self.base + self.profile_increment(a)

    def secondary(self, a) -> float:
        """Expected sum-delay increment, used to refine ties."""
        senders = np.flatnonzero(np.asarray(a))
        return float(self.s[senders[0]]) if senders.size == 1 else self.m


def expected_increments(history: GameHistory) -> np.ndarray:
    """Row j: expected delay increment of every player when j transmits alone."""
    S = history.S.astype(np.int64)
    tau = (history.combinations.astype(np.int64) @ S.T) == 1
    wanting = history.wants.astype(float)
    return history.expected_delivery().T * (~tau) * wanting[None, :]


def stage_values(kind: GameKind, history: GameHistory) -> StageValues:
    d = expected_increments(history)
    wanting = history.wants.astype(float)
    D = history.D_prev
    m = float(wanting.sum())
    s = d.sum(axis=1)
    metric = kind.metric
    if metric is Metric.SDD:
        base = float(D.sum())
        y0, y = m, s.copy()
    elif metric is Metric.MDD:
        base = float(D.max())
        y0 = float((D + wanting).max()) - base
        y = (D[None, :] + d).max(axis=1) - base
    else:
        w = wanting.astype(bool)
        if not w.any():
            base, y0, y = 0.0, 0.0, np.zeros(history.M)
        else:
            pb = history.p_bar[w]
            C = completion_time_estimate(history.W[w], D[w], pb)
            base = float(C.max())
            y0 = float((C + 1.0 / (1.0 - pb)).max()) - base
            y = (C[None, :] + d[:, w] / (1.0 - pb)[None, :]).max(axis=1) - base
    return StageValues(kind, allowed_mask(kind, history), base, y0, y, m, s)


def q_set(kind: GameKind, history: GameHistory) -> frozenset:
    """Wanting players that could raise the cost this stage.

    MDD: players at the current largest delay. CT: players whose completion
    estimate would exceed the current largest one after one more delay.
    """
    if kind.metric is Metric.SDD:
        raise ValueError("the sum-delay games have no critical set")
    wanting = history.wants.astype(bool)
    if not wanting.any():
        return frozenset()
    if kind.metric is Metric.MDD:
        mask = critical_players(kind.metric, history.S, history.D_prev, history.p_bar)
    else:
        C = completion_time_estimate(history.W, history.D_prev, history.p_bar)
        mask = wanting & (C + 1.0 / (1.0 - history.p_bar) > C[wanting].max())
    return frozenset(int(i) for i in np.flatnonzero(mask))


def z_set(kind: GameKind, history: GameHistory, values: StageValues | None = None) -> frozenset:
    """Players whose lone transmission lowers the expected cost increment below that of silence."""
    v = values or stage_values(kind, history)
    return frozenset(int(j) for j in np.flatnonzero(v.y < v.y0 - TOL))


def is_equilibrium(kind: GameKind, history: GameHistory, a, values: StageValues | None = None) -> bool:
    """No player has an allowed unilateral deviation that lowers the cost by more than TOL."""
    v = values or stage_values(kind, history)
    a = np.asarray(a, dtype=np.uint8)
    if np.any(a[~v.allowed]):
        return False
    cost = v.profile_increment(a)
    senders = np.flatnonzero(a)
    count = senders.size
    for i in range(v.M):
        if not v.allowed[i]:
            continue
        if a[i]:
            rest = senders[senders != i]
            alt = v.increment(count - 1, rest[0] if rest.size == 1 else None)
        else:
            alt = v.increment(count + 1, i if count == 0 else None)
        if alt < cost - TOL:
            return False
    return True


def _profiles(M: int, allowed: np.ndarray):
    free = np.flatnonzero(allowed)
    for bits in itertools.product((0, 1), repeat=free.size):
        a = np.zeros(M, dtype=np.uint8)
        a[free] = bits
        yield a


def _unit(M: int, j: int) -> tuple:
    a = [0] * M
    a[j] = 1
    return tuple(a)


def closed_form_ne(kind: GameKind, history: GameHistory, values: StageValues | None = None) -> frozenset:
    """The equilibrium set from its structural characterization.

    Base games: when no player lowers the increment (Z empty) every profile is
    an equilibrium; otherwise the equilibria are all single transmissions,
    all profiles with three or more transmitters and the pairs made of two
    players outside Z.

    Regularized games: a single transmission by an allowed player j is an
    equilibrium when it costs no more than silence; silence is one when no
    allowed single transmission is cheaper; two or more transmitters never are.
    """
    v = values or stage_values(kind, history)
    M = v.M
    if M > ENUMERATION_MAX:
        raise ValueError(f"equilibrium sets are only materialized for M <= {ENUMERATION_MAX}")
    if not kind.regularized:
        Z = z_set(kind, history, v)
        if not Z:
            return frozenset(tuple(int(x) for x in a) for a in _profiles(M, v.allowed))
        out = set()
        for a in _profiles(M, v.allowed):
            count = int(a.sum())
            if count == 1 or count > 2:
                out.add(tuple(int(x) for x in a))
            elif count == 2 and not (set(np.flatnonzero(a).tolist()) & Z):
                out.add(tuple(int(x) for x in a))
        return frozenset(out)
    silent_cost = v.increment(0)
    singles = {int(j): v.increment(1, int(j)) for j in np.flatnonzero(v.allowed)}
    out = {_unit(M, j) for j, c in singles.items() if c <= silent_cost + TOL}
    if all(c >= silent_cost - TOL for c in singles.values()):
        out.add(tuple([0] * M))
    return frozenset(out)


def _equilibrium_costs(kind: GameKind, v: StageValues) -> list[float]:
    # Distinct cost levels reached by equilibria, without materializing them.
    if not kind.regularized:
        Z = np.flatnonzero(v.y < v.y0 - TOL)
        if Z.size == 0:
            return [v.base + v.y0] + [v.base + float(x) for x in v.y]
        costs = [v.base + float(x) for x in v.y]
        if v.M >= 3 or Z.size < v.M:
            costs.append(v.base + v.y0)
        return costs
    silent_cost = v.increment(0)
    singles = [v.increment(1, int(j)) for j in np.flatnonzero(v.allowed)]
    costs = [v.base + c for c in singles if c <= silent_cost + TOL]
    if all(c >= silent_cost - TOL for c in singles):
        costs.append(v.base + silent_cost)
    return costs


def cost_ratio(lo: float, hi: float) -> float:
    if hi <= 0:
        return 1.0
    return lo / hi


def poa(kind: GameKind, history: GameHistory, values: StageValues | None = None) -> float:
    """Best equilibrium cost over worst equilibrium cost (1 when both vanish)."""
    v = values or stage_values(kind, history)
    if not kind.regularized and not np.any(v.y < v.y0 - TOL):
        return 1.0
    costs = _equilibrium_costs(kind, v)
    return cost_ratio(min(costs), max(costs))


def pone(kind: GameKind, history: GameHistory, refine: bool = False, values: StageValues | None = None) -> np.ndarray:
    """Equilibrium with the highest common utility.

    Ties within TOL go to the smaller expected sum-delay increment when
    ``refine`` is set, then to the lexicographically smallest profile.
    Only silence and single transmissions can be optimal, because any
    collision costs at least as much as silence.
    """
    v = values or stage_values(kind, history)
    M = v.M
    # Candidates in increasing lexicographic order: silence, e_{M-1}, ..., e_0.
    cands = [None] + [j for j in range(M - 1, -1, -1) if v.allowed[j]]
    cost = np.array([v.increment(0) if j is None else v.increment(1, j) for j in cands])
    keep = cost <= cost.min() + TOL
    if refine:
        sec = np.array([v.m if j is None else float(v.s[j]) for j in cands])
        keep &= sec <= sec[keep].min() + TOL
    choice = cands[int(np.argmax(keep))]
    a = np.zeros(M, dtype=np.uint8)
    if choice is not None:
        a[choice] = 1
    return a


def enumerate_ne(kind: GameKind, history: GameHistory) -> frozenset:
    """Brute-force equilibrium set computed from the utility function alone."""
    M = history.M
    if M > ENUMERATION_MAX:
        raise ValueError(f"enumeration is limited to M <= {ENUMERATION_MAX}")
    allowed = allowed_mask(kind, history)
    table = {tuple(int(x) for x in a): utility(kind, a, history) for a in _profiles(M, allowed)}
    out = set()
    for prof, u in table.items():
        stable = True
        for i in range(M):
            if not allowed[i]:
                continue
            dev = list(prof)
            dev[i] = 1 - dev[i]
            if table[tuple(dev)] > u + TOL:
                stable = False
                break
        if stable:
            out.add(prof)
    return frozenset(out)


def enumerated_poa(kind: GameKind, history: GameHistory, ne: frozenset | None = None) -> float:
    ne = enumerate_ne(kind, history) if ne is None else ne
    costs = [-utility(kind, np.array(a), history) for a in ne]
    return cost_ratio(min(costs), max(costs))


@dataclass
class EquilibriumReport:
    game: int
    ne_set: list = field(default_factory=list)
    pone: tuple = ()
    poa: float = 1.0
    enumerated_poa: float | None = None
    q_set: list = field(default_factory=list)
    z_set: list = field(default_factory=list)
    y0: float = 0.0
    y: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = ["".join(str(x) for x in a) for a in self.ne_set]
        lines.append("")
        lines.append(f"game: {self.game}")
        lines.append(f"pone: {''.join(str(x) for x in self.pone)}")
        lines.append(f"poa: {self.poa!r}")
        lines.append(f"enumerated_poa: {self.enumerated_poa!r}")
        lines.append(f"q_set: {' '.join(map(str, self.q_set))}")
        lines.append(f"z_set: {' '.join(map(str, self.z_set))}")
        lines.append(f"y0: {self.y0!r}")
        lines.append(f"y: {' '.join(repr(x) for x in self.y)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EquilibriumReport":
        profiles, _, scalars = text.partition("\n\n")
        ne = [tuple(int(c) for c in line) for line in profiles.splitlines() if line]
        kv = {}
        for line in scalars.splitlines():
            key, _, val = line.partition(":")
            kv[key] = val.strip()

        def floats(s):
            return [float(x) for x in s.split()]

        return cls(
            game=int(kv["game"]),
            ne_set=ne,
            pone=tuple(int(c) for c in kv["pone"]),
            poa=float(kv["poa"]),
            enumerated_poa=None if kv["enumerated_poa"] == "None" else float(kv["enumerated_poa"]),
            q_set=[int(x) for x in kv["q_set"].split()],
            z_set=[int(x) for x in kv["z_set"].split()],
            y0=float(kv["y0"]),
            y=floats(kv["y"]),
        )


def analyze(kind: GameKind, history: GameHistory, enumerate: bool = False) -> EquilibriumReport:
    v = stage_values(kind, history)
    ne = sorted(closed_form_ne(kind, history, v)) if history.M <= ENUMERATION_MAX else []
    return EquilibriumReport(
        game=kind.number,
        ne_set=ne,
        pone=tuple(int(x) for x in pone(kind, history, values=v)),
        poa=poa(kind, history, v),
        enumerated_poa=enumerated_poa(kind, history) if enumerate else None,
        q_set=[] if kind.metric is Metric.SDD else sorted(q_set(kind, history)),
        z_set=sorted(z_set(kind, history, v)),
        y0=v.y0,
        y=[float(x) for x in v.y],
    )
