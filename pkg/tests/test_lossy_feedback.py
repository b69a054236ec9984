import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idncgame.core_model import GameConfig, decode
from idncgame.equilibrium import stage_values
from idncgame.games import ALL_GAMES, GameHistory, GameKind, utility
from idncgame.learning import run_episode
from idncgame.lossy_feedback import (
    HAS, UNCERTAIN, LocalFeedbackMatrix, ViewEstimate, estimated_payoff, estimated_sum_increment,
    exhaustive_expected_payoff, lossy_rl_update, uncertainty_posterior, update_local_feedback,
)


def test_posterior_examples():
    assert uncertainty_posterior(0.0, 0.0) == 0.0
    assert uncertainty_posterior(0.5, 0.5) == pytest.approx(1 / 3)
    assert uncertainty_posterior(0.3, 0.3) == pytest.approx(0.7 / 1.7)


def test_posterior_monte_carlo():
    rng = np.random.default_rng(0)
    p, n = 0.3, 100_000
    received = rng.random(n) >= p
    ack_heard = received & (rng.random(n) >= p)
    empirical = received[~ack_heard].mean()
    assert abs(empirical - 0.7 / 1.7) < 0.01


def test_posterior_bounds_and_monotonicity():
    grid = np.linspace(0.01, 0.99, 99)
    post = np.array([uncertainty_posterior(p, p) for p in grid])
    assert np.all((post >= 0) & (post < 1))
    assert np.all(np.diff(post) < 0)
    assert np.allclose(post, (1 - grid) / (2 - grid))


def test_posterior_with_prior_stays_below_one():
    post = 0.0
    for _ in range(20):
        post = uncertainty_posterior(0.3, 0.3, post)
        assert 0 <= post < 1


def test_lossy_update_examples():
    assert lossy_rl_update(0.5, 0.5, 1.0, 1) == 0.75
    assert lossy_rl_update(0.5, 0.5, 1.0, 0) == 0.25
    assert lossy_rl_update(0.4, 0.5, 0.0, 1) == 0.4
    with pytest.raises(ValueError):
        lossy_rl_update(0.5, 0.5, -1.2, 1)


def test_lost_ack_marks_entry_uncertain():
    S = np.array([[0, 0], [1, 0], [0, 1]])
    F = LocalFeedbackMatrix.from_truth(S, owner=0)
    kappa = np.array([1, 1])
    update_local_feedback(F, kappa, {2: 1}, np.full(3, 0.2), np.full(3, 0.2))
    assert F.state[1, 0] == UNCERTAIN
    assert F.posterior[1, 0] == pytest.approx(uncertainty_posterior(0.2, 0.2))
    assert F.state[2, 1] == HAS


def test_perfect_feedback_keeps_truth():
    rng = np.random.default_rng(1)
    S = (rng.random((4, 5)) < 0.5).astype(np.uint8)
    F = LocalFeedbackMatrix.from_truth(S, owner=0)
    for _ in range(20):
        kappa = (rng.random(5) < 0.5).astype(np.uint8)
        received = (rng.random(4) < 0.7).astype(np.uint8)
        S_new = decode(S, kappa, received)
        gained = {i: int(np.flatnonzero(S[i] & ~S_new[i])[0]) for i in range(4) if (S[i] != S_new[i]).any()}
        update_local_feedback(F, kappa, gained, np.full(4, 0.3), np.zeros(4))
        S = S_new
        assert np.array_equal(F.state, S)


def test_every_has_entry_backed_by_heard_ack():
    rng = np.random.default_rng(2)
    S = (rng.random((3, 4)) < 0.6).astype(np.uint8)
    F = LocalFeedbackMatrix.from_truth(S, owner=0)
    start = S.copy()
    log = set()
    for _ in range(30):
        kappa = (rng.random(4) < 0.5).astype(np.uint8)
        received = (rng.random(3) < 0.6).astype(np.uint8)
        S_new = decode(S, kappa, received)
        heard = {}
        for i in range(3):
            if (S[i] != S_new[i]).any() and rng.random() < 0.5:
                heard[i] = int(np.flatnonzero(S[i] & ~S_new[i])[0])
                log.add((i, heard[i]))
        update_local_feedback(F, kappa, heard, np.full(3, 0.4), np.full(3, 0.5))
        S = S_new
        for i, j in zip(*np.nonzero((F.state == HAS) & (start == 1))):
            assert (i, j) in log


def test_estimate_without_uncertainty_is_the_utility():
    rng = np.random.default_rng(3)
    S = (rng.random((3, 4)) < 0.5).astype(np.uint8)
    combos = (rng.random((3, 4)) < 0.5).astype(np.uint8)
    P = np.full((3, 3), 0.2)
    D = np.array([1.0, 0.0, 2.0])
    F = LocalFeedbackMatrix.from_truth(S, owner=1)
    h = GameHistory(S, D, P, combos)
    for kind in ALL_GAMES:
        for a in ([0, 0, 0], [1, 0, 0], [0, 1, 1]):
            assert estimated_payoff(kind, 1, a, F, combos, P, D) == utility(kind, np.array(a), h)


def test_fully_resolved_player_counts_as_finished():
    S = np.array([[0, 1], [1, 1], [1, 0]])
    F = LocalFeedbackMatrix.from_truth(S, owner=0)
    F.state[1] = UNCERTAIN
    F.posterior[1] = 1.0
    combos = np.array([[1, 0], [0, 0], [0, 1]])
    P = np.full((3, 3), 0.1)
    D = np.zeros(3)
    resolved = S.copy()
    resolved[1] = 0
    h = GameHistory(resolved, D, P, combos)
    for kind in ALL_GAMES:
        for a in ([0, 0, 0], [1, 0, 0], [0, 0, 1], [1, 0, 1]):
            assert estimated_payoff(kind, 0, a, F, combos, P, D) == pytest.approx(utility(kind, np.array(a), h))


def random_view(rng, M, N):
    S = (rng.random((M, N)) < 0.5).astype(np.uint8)
    F = LocalFeedbackMatrix.from_truth(S, owner=0)
    unc = (rng.random((M, N)) < 0.3) & (S == 1)
    unc[0] = False
    F.state[unc] = UNCERTAIN
    F.posterior[unc] = rng.uniform(0, 1, unc.sum())
    return F


def test_estimate_matches_exhaustive_expectation():
    rng = np.random.default_rng(4)
    for _ in range(40):
        F = random_view(rng, 3, 4)
        combos = (rng.random((3, 4)) < 0.5).astype(np.uint8)
        P = rng.uniform(0, 0.4, (3, 3))
        np.fill_diagonal(P, 0)
        D = rng.integers(0, 3, 3).astype(float)
        backoff = np.zeros(3, dtype=np.int64)
        for kind in ALL_GAMES:
            for a in ([0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 1, 1]):
                est = estimated_payoff(kind, 0, a, F, combos, P, D, backoff)
                ref = exhaustive_expected_payoff(kind, a, F, combos, P, D, backoff)
                assert est == pytest.approx(ref, abs=1e-9)


def test_sum_increment_estimate_matches_exhaustive():
    rng = np.random.default_rng(5)
    sdd = GameKind("SDD")
    for _ in range(40):
        F = random_view(rng, 4, 4)
        combos = (rng.random((4, 4)) < 0.5).astype(np.uint8)
        P = rng.uniform(0, 0.4, (4, 4))
        np.fill_diagonal(P, 0)
        D = rng.integers(0, 3, 4).astype(float)
        for a in ([0, 0, 0, 0], [0, 0, 1, 0], [1, 1, 0, 0]):
            ref = -exhaustive_expected_payoff(sdd, a, F, combos, P, D) - D.sum()
            assert estimated_sum_increment(F, a, combos, P, D) == pytest.approx(ref, abs=1e-9)


def test_view_estimate_exact_path():
    S = np.eye(3, dtype=np.uint8)
    combos = 1 - S
    P = np.full((3, 3), 0.1)
    v = stage_values(GameKind("SDD"), GameHistory(S, np.zeros(3), P, combos))
    est = ViewEstimate(LocalFeedbackMatrix.from_truth(S, 0), combos, P, np.zeros(3))
    assert est.silent == v.y0 and est.lone(2) == v.y[2]


def test_zero_feedback_loss_reproduces_perfect_feedback():
    for seed in range(4):
        cfg = GameConfig(4, 4, 0.15, 0.3, seed=seed)
        perfect = GameConfig(4, 4, 0.15, 0.3, seed=seed, feedback_loss=0.0)
        for lossy, plain in (("LS-CDE", "LC-CDE"), ("LS-PMP", "OPT-PMP")):
            a = run_episode(plain, cfg).to_text().split("\n", 1)[1]
            b = run_episode(lossy, perfect).to_text().split("\n", 1)[1]
            assert a == b


def test_lossy_feedback_creates_uncertainty():
    tr = run_episode("LS-CDE", GameConfig(5, 5, 0.3, 0.3, seed=3))
    assert any(r.uncertain for r in tr.records)
    assert all(0 <= r.uncertain for r in tr.records)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(0.01, 0.99), st.floats(-1, 1), st.integers(0, 1))
def test_lossy_update_stays_a_probability(x, lam, s, ind):
    assert 0.0 <= lossy_rl_update(x, lam, s, ind) <= 1.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 0.99), st.floats(0, 0.99), st.floats(0, 0.99))
def test_posterior_is_a_probability(pf, pb, prior):
    assert 0 <= uncertainty_posterior(pf, pb, prior) <= 1
