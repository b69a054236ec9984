"""Stage dynamics and full recovery episodes.

Five recovery schemes are simulated:

* OPT-PMP - the base station retransmits, picking the best combination,
* OPT-CDE - players cooperate with complete information (best response),
* LC-CDE  - players learn when to transmit with Bush-Mosteller reinforcement,
* LS-PMP / LS-CDE - the same as OPT-PMP / LC-CDE with lossy acknowledgements.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coding import Metric, player_combinations, select_combination
from .core_model import GameConfig, decode, delay_increment, initial_phase, stage_rng, wants_indicator
from .equilibrium import TOL, StageValues, stage_values
from .games import CollisionHistory, GameHistory, GameKind, base_cost
from .lossy_feedback import LocalFeedbackMatrix, ViewEstimate, lossy_rl_update, update_local_feedback

SCHEMES = ("OPT-PMP", "OPT-CDE", "LC-CDE", "LS-PMP", "LS-CDE")
LEARNING_RATE_BOUNDS = (0.05, 0.95)


# ---------------------------------------------------------------- best response

def _better(k1, k2, refine: bool) -> bool:
    if k1[0] < k2[0] - TOL:
        return True
    return refine and abs(k1[0] - k2[0]) <= TOL and k1[1] < k2[1] - TOL


def _outcome_key(v: StageValues, count: int, sender):
    return (v.increment(count, sender), float(v.s[sender]) if count == 1 else v.m)


def _best_completion(v: StageValues, count: int, sender, remaining: list, refine: bool):
    # Best outcome reachable when the remaining players are free to choose.
    best = _outcome_key(v, count, sender)
    options = []
    if remaining:
        if count == 0:
            options += [(1, j) for j in remaining]
        else:
            options.append((count + 1, None))
    if len(remaining) >= 2:
        options.append((count + 2, None))
    for c, s in options:
        key = _outcome_key(v, c, s)
        if _better(key, best, refine):
            best = key
    return best


def best_response_stage(history: GameHistory, kind: GameKind = GameKind(Metric.SDD), order=None,
                        refine: bool = False, previous=None) -> np.ndarray:
    """Sequential best responses in one stage.

    Players move in ``order`` (ascending index by default). Each one knows the
    choices already made this stage. By default it anticipates that the
    players after it also best-respond, which with complete information lands
    on the best equilibrium. With ``previous`` given, later players are
    instead assumed to repeat their previous-stage actions. Ties go to
    silence; ``refine`` breaks utility ties by the expected sum-delay increment.
    """
    v = stage_values(kind, history)
    M = history.M
    order = list(range(M)) if order is None else list(order)
    a = np.zeros(M, dtype=np.uint8)
    count, sender = 0, None
    for idx, i in enumerate(order):
        if not v.allowed[i]:
            continue
        later = [j for j in order[idx + 1:] if v.allowed[j]]
        if previous is None:
            stay = _best_completion(v, count, sender, later, refine)
            go = _best_completion(v, count + 1, i if count == 0 else None, later, refine)
        else:
            prev = np.asarray(previous)
            tail = [j for j in later if prev[j]]
            stay = _outcome_with(v, count, sender, tail)
            go = _outcome_with(v, count + 1, i if count == 0 else None, tail)
        if _better(go, stay, refine):
            a[i] = 1
            sender = i if count == 0 else None
            count += 1
    return a


def _outcome_with(v: StageValues, count, sender, extra: list):
    total = count + len(extra)
    if total == 1:
        sender = sender if count == 1 else extra[0]
    return _outcome_key(v, total, sender if total == 1 else None)


# ------------------------------------------------------------ reinforcement

def bm_update(x: float, lam: float, stimulus: float, acted: bool) -> float:
    """Bush-Mosteller update of the transmit probability ``x``.

    The rule reinforces the probability of the action actually taken: up by
    ``lam * s * (1 - p)`` for a non-negative stimulus s, down by ``lam * |s| * p``
    otherwise, where p is that action's probability.
    """
    if not -1.0 <= stimulus <= 1.0:
        raise ValueError(f"stimulus {stimulus} outside [-1, 1]")
    if acted:
        if stimulus >= 0:
            return x + lam * stimulus * (1 - x)
        return x + lam * stimulus * x
    if stimulus >= 0:
        return x - lam * stimulus * x
    return x + lam * (-stimulus) * (1 - x)


def stimulus(payoff: float, satisfaction: float, payoff_bound: float) -> float:
    """Payoff relative to the satisfaction level, scaled into [-1, 1].

    A non-positive bound means every payoff equals the satisfaction level, so
    there is nothing to learn and the stimulus is 0.
    """
    if payoff_bound <= 0:
        return 0.0
    return (payoff - satisfaction) / payoff_bound


def stimulus_bound(payoffs, satisfaction: float) -> float:
    return max(abs(p - satisfaction) for p in payoffs)


def learning_rates(S) -> np.ndarray:
    S = np.asarray(S)
    return np.clip((S == 0).sum(axis=1) / S.shape[1], *LEARNING_RATE_BOUNDS)


def initial_probabilities(S) -> np.ndarray:
    S = np.asarray(S)
    return (S == 0).sum(axis=1) / S.shape[1]


@dataclass
class MixedAction:
    """Transmit probabilities, learning rates and the satisfaction offset."""

    x: np.ndarray
    lam: np.ndarray
    epsilon: float = 0.5

    def satisfaction(self, silent_increment: float) -> float:
        return -silent_increment + self.epsilon


def rl_stage(x, backoff, rng: np.random.Generator) -> np.ndarray:
    """Independent transmit draws; backed-off players stay silent."""
    x = np.asarray(x, dtype=float)
    u = rng.random(x.shape[0])
    return ((u < x) & (np.asarray(backoff) == 0)).astype(np.uint8)


def _flip(a, k):
    b = a.copy()
    b[k] = 1 - b[k]
    return b


def _stage_increment(v: StageValues, a) -> float:
    senders = np.flatnonzero(a)
    return float(v.y[senders[0]]) if senders.size == 1 else v.y0


# ------------------------------------------------------------------ episodes

@dataclass
class StageRecord:
    t: int
    profile: str
    sender: int
    kappa: str
    delivered: str
    delays: tuple
    cost: float
    collisions: str
    uncertain: int

    def to_line(self) -> str:
        d = " ".join(f"{x:g}" for x in self.delays)
        return "\t".join([str(self.t), self.profile, str(self.sender), self.kappa, self.delivered, d,
                          repr(self.cost), self.collisions, str(self.uncertain)])


@dataclass
class EpisodeTrace:
    scheme: str
    records: list = field(default_factory=list)
    T: int = 0
    cutoff: bool = False
    delays: np.ndarray | None = None
    completion: np.ndarray | None = None
    exhaustive_calls: int = 0
    greedy_calls: int = 0

    @property
    def sum_delay(self) -> float:
        return float(self.delays.sum())

    @property
    def max_delay(self) -> float:
        return float(self.delays.max())

    @property
    def collision_count(self) -> int:
        return sum(1 for r in self.records if "1" in r.collisions)

    def to_text(self) -> str:
        head = f"# {self.scheme} T={self.T} cutoff={int(self.cutoff)}"
        return "\n".join([head] + [r.to_line() for r in self.records]) + "\n"


def _bits(v) -> str:
    return "".join(str(int(x)) for x in v)


class _Episode:
    """Shared bookkeeping of one episode."""

    def __init__(self, scheme, config: GameConfig, metric, S0):
        self.scheme = scheme
        self.cfg = config
        self.metric = Metric(metric)
        self.S = np.array(S0, dtype=np.uint8)
        self.D = np.zeros(config.M)
        self.t = 0
        self.coll = CollisionHistory(config.M, config.V)
        self.trace = EpisodeTrace(scheme)
        self.completion = np.where(self.S.any(axis=1), -1, 0)

    def channel(self) -> np.random.Generator:
        return stage_rng(self.cfg.seed, "channel", self.t)

    def finish_stage(self, profile, sender, kappa, delivered, delta, S_new, p_ref, collisions, uncertain=0):
        cost = -base_cost(self.metric, self.S, self.D + delta, p_ref)
        self.D = self.D + delta
        self.S = S_new
        done = (self.completion < 0) & ~self.S.any(axis=1)
        self.completion[done] = self.t
        self.trace.records.append(StageRecord(
            self.t, profile, sender, _bits(kappa) if kappa is not None else "-",
            _bits(delivered) if delivered is not None else "-", tuple(self.D), cost,
            _bits(collisions), uncertain))

    def close(self) -> EpisodeTrace:
        tr = self.trace
        tr.T = self.t
        tr.cutoff = bool(self.S.any())
        tr.delays = self.D
        tr.completion = self.completion
        return tr


def _cde_transmission(S, a, combinations, omega):
    """Apply a cooperative profile to the true state."""
    senders = np.flatnonzero(a)
    if senders.size != 1:
        return S.copy(), wants_indicator(S).astype(float), -1, None, None
    j = int(senders[0])
    delivered = omega[:, j]
    delta = delay_increment(delivered, combinations[j], S).astype(float)
    return decode(S, combinations[j], delivered), delta, j, combinations[j], delivered


def _acks(S_before, S_after) -> dict:
    """Packet decoded this stage by every player that decoded one."""
    gained = (S_before == 1) & (S_after == 0)
    return {int(i): int(np.flatnonzero(gained[i])[0]) for i in np.flatnonzero(gained.any(axis=1))}


def _run_pmp(ep: _Episode, lossy: bool):
    cfg = ep.cfg
    view = LocalFeedbackMatrix.from_truth(ep.S) if lossy else None
    fb = cfg.feedback_to_bs()
    while ep.S.any() and ep.t < cfg.max_stages:
        ep.t += 1
        known = view.apparent_wants() if lossy else ep.S
        want_prob = view.want_prob() if lossy and view.uncertain_count else None
        kappa, used = select_combination(known, None, ep.metric, 1.0 - cfg.Q, ep.D, cfg.Q,
                                         cfg.exhaustive_limit, want_prob)
        ep.trace.exhaustive_calls += used
        ep.trace.greedy_calls += not used
        received = (ep.channel().random(cfg.M) >= cfg.Q).astype(np.uint8)
        delta = delay_increment(received, kappa, ep.S).astype(float)
        S_new = decode(ep.S, kappa, received)
        uncertain = 0
        if lossy:
            heard = stage_rng(cfg.seed, "feedback", ep.t).random(cfg.M) >= fb
            acks = {i: j for i, j in _acks(ep.S, S_new).items() if heard[i]}
            update_local_feedback(view, kappa, acks, cfg.Q, fb)
            uncertain = view.uncertain_count
        ep.finish_stage("BS", -1, kappa, received, delta, S_new, cfg.Q, np.zeros(cfg.M, dtype=np.uint8), uncertain)


def _run_opt_cde(ep: _Episode):
    cfg = ep.cfg
    kind = GameKind(ep.metric)
    while ep.S.any() and ep.t < cfg.max_stages:
        ep.t += 1
        combos, n_ex = player_combinations(ep.S, cfg.P, ep.metric, ep.D, cfg.p_bar, cfg.exhaustive_limit)
        ep.trace.exhaustive_calls += n_ex
        ep.trace.greedy_calls += cfg.M - n_ex
        history = GameHistory(ep.S, ep.D, cfg.P, combos, ep.coll.backoff)
        a = best_response_stage(history, kind, refine=True)
        omega = (ep.channel().random((cfg.M, cfg.M)) >= cfg.P).astype(np.uint8)
        S_new, delta, j, kappa, delivered = _cde_transmission(ep.S, a, combos, omega)
        c = ep.coll.record(a)
        ep.finish_stage(_bits(a), j, kappa, delivered, delta, S_new, cfg.p_bar, c)


def _memo_key(ep: _Episode, state: bytes, owner=-1):
    # Greedy combinations only depend on the delays for the CT and MDD weights.
    if ep.metric is Metric.SDD:
        return owner, state
    return owner, state, ep.D.tobytes()


def _view_combination(view: LocalFeedbackMatrix, k: int, ep: _Episode, memo: dict) -> np.ndarray:
    key = _memo_key(ep, view.state.tobytes() + view.posterior.tobytes(), k)
    if key not in memo:
        wp = view.want_prob() if view.uncertain_count else None
        memo[key] = select_combination(view.apparent_wants(), k, ep.metric, 1.0 - ep.cfg.P[:, k],
                                       ep.D, ep.cfg.p_bar, 0, wp)[0]
    return memo[key]


def _run_rl_cde(ep: _Episode, lossy: bool):
    cfg = ep.cfg
    M = cfg.M
    mixed = MixedAction(initial_probabilities(ep.S), learning_rates(ep.S), cfg.epsilon)
    views = [LocalFeedbackMatrix.from_truth(ep.S, owner=k) for k in range(M)] if lossy else None
    fb = cfg.feedback_matrix()
    sdd = GameKind(Metric.SDD)
    memo, estimates = {}, {}
    while ep.S.any() and ep.t < cfg.max_stages:
        ep.t += 1
        backoff = ep.coll.backoff
        mixed.lam = learning_rates(ep.S)
        combos = np.zeros_like(ep.S)
        if lossy:
            for k in range(M):
                combos[k] = _view_combination(views[k], k, ep, memo)
        else:
            key = _memo_key(ep, ep.S.tobytes())
            if key not in memo:
                memo[key] = player_combinations(ep.S, cfg.P, ep.metric, ep.D, cfg.p_bar, 0)[0]
            combos = memo[key]
        ep.trace.greedy_calls += M
        a = rl_stage(mixed.x, backoff, stage_rng(cfg.seed, "action", ep.t))
        combos_key = combos.tobytes()

        if not lossy:
            v = stage_values(sdd, GameHistory(ep.S, ep.D, cfg.P, combos))
        for k in range(M):
            if backoff[k]:
                continue
            alt = _flip(a, k)
            if lossy:
                # The sum-delay estimate does not depend on the delays.
                vkey = (views[k].state.tobytes(), views[k].posterior.tobytes(), combos_key)
                if vkey not in estimates:
                    if len(estimates) > 20000:
                        estimates.clear()
                    estimates[vkey] = ViewEstimate(views[k], combos, cfg.P, ep.D)
                est = estimates[vkey]
                silent = est.silent
                phi = -est.increment(a)
                phi_alt = -est.increment(alt)
            else:
                silent = v.y0
                phi = -_stage_increment(v, a)
                phi_alt = -_stage_increment(v, alt)
            sat = mixed.satisfaction(silent)
            s = stimulus(phi, sat, stimulus_bound((phi, phi_alt), sat))
            if lossy:
                mixed.x[k] = lossy_rl_update(mixed.x[k], mixed.lam[k], s, int(a[k]))
            else:
                mixed.x[k] = bm_update(mixed.x[k], mixed.lam[k], s, bool(a[k]))

        omega = (ep.channel().random((M, M)) >= cfg.P).astype(np.uint8)
        S_new, delta, j, kappa, delivered = _cde_transmission(ep.S, a, combos, omega)
        uncertain = 0
        if lossy:
            if j >= 0:
                acks = _acks(ep.S, S_new)
                heard = stage_rng(cfg.seed, "feedback", ep.t).random((M, M)) >= fb
                for k in range(M):
                    got = {i: p for i, p in acks.items() if heard[k, i] or i == k}
                    update_local_feedback(views[k], kappa, got, cfg.P[:, j], fb[k])
            for k in range(M):
                views[k].set_own_row(S_new[k])
            uncertain = sum(vw.uncertain_count for vw in views)
        c = ep.coll.record(a)
        ep.finish_stage(_bits(a), j, kappa, delivered, delta, S_new, cfg.p_bar, c, uncertain)


def run_episode(scheme: str, config: GameConfig, metric=Metric.SDD, S0=None) -> EpisodeTrace:
    """Simulate one recovery episode until every player holds every packet.

    ``S0`` is the state after the initial broadcast; it is drawn from the
    configuration's seed when omitted. The episode stops early, flagged as a
    cutoff, after ``config.max_stages`` stages.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if S0 is None:
        S0 = initial_phase(config.Q, config.N, stage_rng(config.seed, "initial"))
    S0 = np.asarray(S0, dtype=np.uint8)
    if S0.shape != (config.M, config.N):
        raise ValueError("initial state does not match the configuration")
    ep = _Episode(scheme, config, metric, S0)
    if scheme in ("OPT-PMP", "LS-PMP"):
        _run_pmp(ep, lossy=scheme == "LS-PMP")
    elif scheme == "OPT-CDE":
        _run_opt_cde(ep)
    else:
        _run_rl_cde(ep, lossy=scheme == "LS-CDE")
    return ep.close()
