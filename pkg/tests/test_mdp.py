import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bihrl.exceptions import ConvergenceWarning, ModelError
from bihrl.mdp import (
    FunctionReward,
    Rationality,
    TabularMdp,
    TabularReward,
    boltzmann_distribution,
    hard_value_iteration,
    random_mdp,
    soft_value_iteration,
    soft_value_iteration_actions,
)
from bihrl.options import OptionModelBuilder, atomic_options


def oracle_soft_values(mdp, table, beta, sweeps):
    """Plain-Python self-consistent Boltzmann fixed point, no numpy."""
    s_arr, a_arr, s2_arr, p_arr = mdp.transition_arrays
    succ = {}
    for s, a, s2, p in zip(s_arr, a_arr, s2_arr, p_arr):
        succ.setdefault((int(s), int(a)), []).append((int(s2), float(p)))
    v = [0.0] * mdp.n_states
    for _ in range(sweeps):
        new = []
        for s in range(mdp.n_states):
            if mdp.terminal[s]:
                new.append(0.0)
                continue
            qs = [sum(p * (table[s][a][s2] + mdp.gamma * v[s2]) for s2, p in succ[(s, a)])
                  for a in range(mdp.n_actions) if (s, a) in succ]
            m = max(qs)
            w = [math.exp(beta * (q - m)) for q in qs]
            new.append(sum(wi * q for wi, q in zip(w, qs)) / sum(w))
        v = new
    return np.array(v)


def chain_mdp():
    # 0 -> 1 -> 2 (terminal); action 0 tends right, action 1 tends to stay
    triples = [
        (0, 0, 1, 0.8), (0, 0, 0, 0.2), (0, 1, 0, 0.7), (0, 1, 1, 0.3),
        (1, 0, 2, 0.8), (1, 0, 1, 0.2), (1, 1, 0, 0.5), (1, 1, 1, 0.5),
        (2, 0, 2, 1.0), (2, 1, 2, 1.0),
    ]
    mdp = TabularMdp.from_triples(3, 2, triples, terminal=[2], gamma=0.9)
    table = np.full((3, 2, 3), -1.0)
    table[:, :, 2] = 10.0
    table[:, 1, :] += 0.5
    return mdp, TabularReward("chain", table)


class TestBoltzmann:
    def test_beta_zero_is_uniform(self):
        np.testing.assert_allclose(boltzmann_distribution([5.0, -3.0, 0.7], 0.0), [1 / 3] * 3, atol=1e-15)

    def test_single_element(self):
        assert boltzmann_distribution([2.2], 7.0).tolist() == [1.0]

    def test_closed_form(self):
        np.testing.assert_allclose(boltzmann_distribution([math.log(2), 0.0], 1.0), [2 / 3, 1 / 3], atol=1e-15)

    def test_no_overflow(self):
        p = boltzmann_distribution([1e300, -1e300, 0.0], 1e5)
        assert np.isfinite(p).all() and p[0] == 1.0

    @pytest.mark.parametrize("bad", [[], [np.inf, 0.0], [np.nan]])
    def test_invalid_input(self, bad):
        with pytest.raises(ValueError):
            boltzmann_distribution(bad, 1.0)

    @given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=8),
           st.integers(-10**6, 10**6), st.floats(0, 5))
    def test_shift_invariance_exact_on_integers(self, q, c, beta):
        q = np.array(q, dtype=float)
        assert np.array_equal(boltzmann_distribution(q + c, beta), boltzmann_distribution(q, beta))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-50, 50), st.floats(0, 5))
    def test_shift_invariance_floats(self, q, c, beta):
        q = np.array(q)
        np.testing.assert_allclose(boltzmann_distribution(q + c, beta), boltzmann_distribution(q, beta),
                                   atol=1e-10)

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=6), st.floats(0, 10), st.floats(0, 10))
    def test_monotone_sharpening(self, q, b1, b2):
        q = np.array(q)
        i = int(np.argmax(q))
        if np.sum(q == q[i]) > 1:
            return
        lo, hi = sorted([b1, b2])
        assert boltzmann_distribution(q, hi)[i] >= boltzmann_distribution(q, lo)[i] - 1e-15

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=10), st.floats(0, 100))
    def test_sums_to_one(self, q, beta):
        assert abs(boltzmann_distribution(q, beta).sum() - 1.0) < 1e-12


class TestTabularMdp:
    def test_rows_must_sum_to_one(self):
        with pytest.raises(ModelError):
            TabularMdp.from_triples(2, 1, [(0, 0, 1, 0.5), (1, 0, 1, 1.0)], terminal=[1])

    def test_terminal_rows_become_self_loops(self):
        mdp = TabularMdp.from_triples(2, 1, [(0, 0, 1, 1.0), (1, 0, 0, 1.0)], terminal=[1])
        assert mdp.transition_probability(1, 0, 1) == 1.0

    def test_terminal_reward_zero(self):
        mdp = TabularMdp.from_triples(2, 1, [(0, 0, 1, 1.0), (1, 0, 1, 1.0)], terminal=[1])
        r = FunctionReward("const", lambda s, a, s2: np.full(np.shape(s), 5.0))
        assert r.expected_rewards(mdp)[1, 0] == 0.0
        assert r.expected_rewards(mdp)[0, 0] == 5.0

    def test_json_round_trip(self):
        mdp = random_mdp(7, 3, np.random.default_rng(0))
        back = TabularMdp.from_json(mdp.to_json())
        assert back.fingerprint() == mdp.fingerprint()
        assert back.dumps() == mdp.dumps()

    def test_state_without_actions_rejected(self):
        with pytest.raises(ModelError):
            TabularMdp.from_triples(2, 1, [(1, 0, 1, 1.0)], terminal=[])


class TestSoftValueIteration:
    def test_single_step_to_terminal(self):
        mdp = TabularMdp.from_triples(2, 1, [(0, 0, 1, 1.0), (1, 0, 1, 1.0)], terminal=[1], gamma=0.9)
        reward = FunctionReward("goal", lambda s, a, s2: np.where(s2 == 1, 20.0, 0.0))
        opts = atomic_options(mdp)
        sol = soft_value_iteration(mdp, OptionModelBuilder(opts, mdp).stack(reward), reward, 1.0)
        assert sol.q[0, 0] == 20.0 and sol.v[0] == 20.0 and sol.policy[0].tolist() == [1.0]

    def test_zero_reward(self):
        mdp = random_mdp(10, 3, np.random.default_rng(1))
        zero = FunctionReward("zero", lambda s, a, s2: np.zeros(np.shape(s)))
        sol = soft_value_iteration_actions(mdp, zero, 2.0)
        assert np.all(sol.v == 0.0)

    def test_chain_matches_oracle(self):
        mdp, reward = chain_mdp()
        expected = oracle_soft_values(mdp, reward.table.tolist(), 1.0, 10_000)
        sol = soft_value_iteration_actions(mdp, reward, Rationality(1.0))
        np.testing.assert_allclose(sol.v, expected, atol=1e-6)
        opts = atomic_options(mdp)
        sol_o = soft_value_iteration(mdp, OptionModelBuilder(opts, mdp).stack(reward), reward, 1.0)
        np.testing.assert_allclose(sol_o.v, expected, atol=1e-6)

    def test_solution_invariants(self):
        mdp = random_mdp(12, 3, np.random.default_rng(2), n_terminal=2)
        reward = TabularReward("r", np.random.default_rng(3).normal(size=(12, 3)))
        sol = soft_value_iteration_actions(mdp, reward, 1.5)
        live = ~mdp.terminal
        np.testing.assert_allclose(sol.policy[live].sum(axis=1), 1.0, atol=1e-9)
        q = np.where(sol.initiable, sol.q, 0.0)
        np.testing.assert_allclose((sol.policy * q).sum(axis=1), sol.v, atol=1e-8)
        assert np.all(sol.v[mdp.terminal] == 0.0)

    def test_fixed_point(self):
        mdp = random_mdp(10, 3, np.random.default_rng(4))
        reward = TabularReward("r", np.random.default_rng(5).normal(size=(10, 3)))
        sol = soft_value_iteration_actions(mdp, reward, 1.0)
        again = soft_value_iteration_actions(mdp, reward, 1.0, max_iters=1, warm_start=sol.v)
        assert np.max(np.abs(again.v - sol.v)) < 1e-8

    def test_determinism(self):
        mdp = random_mdp(10, 3, np.random.default_rng(6))
        reward = TabularReward("r", np.random.default_rng(7).normal(size=(10, 3)))
        warm = np.random.default_rng(8).normal(size=10)
        a = soft_value_iteration_actions(mdp, reward, 1.0, warm_start=warm)
        b = soft_value_iteration_actions(mdp, reward, 1.0, warm_start=warm)
        assert a.v.tobytes() == b.v.tobytes() and a.policy.tobytes() == b.policy.tobytes()

    def test_non_convergence_is_flagged(self):
        mdp, reward = chain_mdp()
        with pytest.warns(ConvergenceWarning):
            sol = soft_value_iteration_actions(mdp, reward, 1.0, max_iters=2)
        assert not sol.converged

    def test_state_without_initiable_option(self):
        mdp, reward = chain_mdp()
        opts = atomic_options(mdp)[:1]
        models = OptionModelBuilder(opts, mdp).stack(reward)
        bad = models.with_reward(models.reward)
        object.__setattr__(bad, "initiable", np.zeros_like(models.initiable))
        with pytest.raises(ModelError):
            soft_value_iteration(mdp, bad, reward, 1.0)


class TestHardValueIteration:
    def test_terminal_only(self):
        mdp = TabularMdp.from_triples(2, 1, [(0, 0, 0, 1.0), (1, 0, 1, 1.0)], terminal=[0, 1])
        r = FunctionReward("c", lambda s, a, s2: np.ones(np.shape(s)))
        assert np.all(hard_value_iteration(mdp, r).v == 0.0)

    def test_corridor_hand_recursion(self):
        # s0 -> s1 -> s2 -> goal, action 1 stays put
        triples = [(0, 0, 1, 1.0), (1, 0, 2, 1.0), (2, 0, 3, 1.0),
                   (0, 1, 0, 1.0), (1, 1, 1, 1.0), (2, 1, 2, 1.0), (3, 0, 3, 1.0), (3, 1, 3, 1.0)]
        mdp = TabularMdp.from_triples(4, 2, triples, terminal=[3], gamma=0.9)
        r = FunctionReward("corridor", lambda s, a, s2: np.where(s2 == 3, 20.0, -1.0))
        v = hard_value_iteration(mdp, r).v
        v2 = 20.0
        v1 = -1 + 0.9 * v2
        v0 = -1 + 0.9 * v1
        np.testing.assert_allclose(v[:3], [v0, v1, v2], atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_soft_limit(self, seed):
        rng = np.random.default_rng(100 + seed)
        mdp = random_mdp(10, 3, rng)
        reward = TabularReward("r", rng.normal(size=(10, 3)))
        hard = hard_value_iteration(mdp, reward).v
        soft = soft_value_iteration_actions(mdp, reward, 1e3).v
        assert np.max(np.abs(soft - hard)) < 0.01
