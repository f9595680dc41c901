"""Random small instances for oracle checks."""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp

from .inference import ActionTrajectory
from .mdp import TabularMdp, TabularReward, random_mdp
from .options import OptionSpec, atomic_options

__all__ = ["random_mdp", "random_reward", "random_stochastic_option", "random_trajectory", "random_instance",
           "monte_carlo_option_model", "monte_carlo_agrees", "check_reduction",
           "check_dp_enumeration", "check_option_models", "oracle_checks"]


def random_reward(mdp: TabularMdp, rng: np.random.Generator, id: str = "random") -> TabularReward:
    return TabularReward(id, rng.normal(size=(mdp.n_states, mdp.n_actions, mdp.n_states)))


def random_stochastic_option(
    mdp: TabularMdp,
    rng: np.random.Generator,
    id: str = "opt",
    density: float = 0.7,
    min_termination: float = 0.2,
) -> OptionSpec:
    """Option with a random stochastic policy, initiation set and termination function.

    Every state has termination probability at least ``min_termination`` so
    the option ends with probability 1 even when ``gamma == 1``.
    """
    n_s, n_a = mdp.n_states, mdp.n_actions
    probs = rng.random((n_s, n_a)) * (rng.random((n_s, n_a)) < density)
    probs = np.where(mdp.available, probs, 0.0)
    for s in range(n_s):
        if probs[s].sum() == 0:
            avail = np.flatnonzero(mdp.available[s])
            probs[s, rng.choice(avail)] = 1.0
    probs /= probs.sum(axis=1, keepdims=True)
    initiation = (rng.random(n_s) < 0.7) & ~mdp.terminal
    if not initiation.any():
        initiation[np.flatnonzero(~mdp.terminal)[0]] = True
    termination = rng.uniform(min_termination, 1.0, size=n_s)
    termination[rng.random(n_s) < 0.2] = 1.0
    return OptionSpec(id=id, initiation=initiation, policy=sp.csr_matrix(probs),
                      termination=termination, kind="stochastic")


def random_trajectory(mdp: TabularMdp, rng: np.random.Generator, length: int,
                      policy=None, id: str | None = None) -> ActionTrajectory:
    """Random walk of at most ``length`` steps that stops early at terminal states."""
    s = int(rng.choice(np.flatnonzero(~mdp.terminal)))
    states, actions = [s], []
    while len(actions) < length and not mdp.terminal[s]:
        avail = np.flatnonzero(mdp.available[s])
        if policy is not None:
            p = policy[s, avail] / policy[s, avail].sum()
            a = int(rng.choice(avail, p=p))
        else:
            a = int(rng.choice(avail))
        nxt, p = mdp.successors(s, a)
        s = int(rng.choice(nxt, p=p))
        states.append(s)
        actions.append(a)
    return ActionTrajectory(states, actions, id)


def random_instance(rng: np.random.Generator, max_length: int = 8, max_compound: int = 3,
                    n_states: int = 6, n_actions: int = 3):
    """``(mdp, reward, options, trajectory)`` for a random small inference problem.

    The trajectory follows a mixture of the compound options' policies so that
    compound segments are usually consistent with it.
    """
    mdp = random_mdp(n_states, n_actions, rng, gamma=0.9, n_terminal=1, branching=2)
    options = atomic_options(mdp)
    k = int(rng.integers(1, max_compound + 1))
    compound = [random_stochastic_option(mdp, rng, id=f"c{i}") for i in range(k)]
    options += compound
    mix = sum(o.policy.toarray() for o in compound) + 0.1 * mdp.available
    length = int(rng.integers(1, max_length + 1))
    traj = random_trajectory(mdp, rng, length, policy=mix, id="rand")
    return mdp, random_reward(mdp, rng), options, traj


def monte_carlo_option_model(option, mdp, reward_table, start, n_rollouts, rng):
    """Vectorized rollouts of ``option`` from ``start``.

    Returns per-rollout discounted return, discount at termination and
    termination state.
    """
    n_s, n_a = mdp.n_states, mdp.n_actions
    cum_pol = np.cumsum(option.policy.toarray(), axis=1)
    dense_t = np.zeros((n_s, n_a, n_s))
    s_arr, a_arr, s2_arr, p_arr = mdp.transition_arrays
    dense_t[s_arr, a_arr, s2_arr] = p_arr
    cum_t = np.cumsum(dense_t, axis=2)
    alpha = np.where(mdp.terminal, 1.0, option.termination)
    state = np.full(n_rollouts, start)
    disc = np.ones(n_rollouts)
    ret = np.zeros(n_rollouts)
    end = np.full(n_rollouts, -1)
    end_disc = np.zeros(n_rollouts)
    alive = np.arange(n_rollouts)
    while alive.size:
        s = state[alive]
        a = (rng.random(alive.size)[:, None] >= cum_pol[s]).sum(axis=1)
        a = np.minimum(a, n_a - 1)
        s2 = (rng.random(alive.size)[:, None] >= cum_t[s, a]).sum(axis=1)
        s2 = np.minimum(s2, n_s - 1)
        ret[alive] += disc[alive] * reward_table[s, a, s2]
        disc[alive] *= mdp.gamma
        state[alive] = s2
        stop = rng.random(alive.size) < alpha[s2]
        done = alive[stop]
        end[done] = s2[stop]
        end_disc[done] = disc[done]
        alive = alive[~stop]
    return ret, end_disc, end


def monte_carlo_agrees(model, mc, start, n_states, n_se=3.0):
    """Check every model entry against the Monte-Carlo mean within ``n_se`` standard errors.

    Returns a list of failing entries (empty on success).
    """
    ret, end_disc, end = mc
    n = len(ret)
    failures = []
    checks = [("reward", model.reward[start], ret)]
    row = model.transition.toarray()[start]
    for x in range(n_states):
        checks.append((f"P[{x}]", row[x], np.where(end == x, end_disc, 0.0)))
    for name, exact, samples in checks:
        mean = samples.mean()
        se = samples.std(ddof=1) / np.sqrt(n)
        # an unseen rare event has zero sample spread; floor at one-sample resolution
        if abs(mean - exact) > n_se * max(se, 1.0 / n):
            failures.append((name, exact, mean, se))
    return failures


def check_reduction(seed: int = 0, n_mdps: int = 50, tolerance: float = 1e-10, max_iters: int = 500) -> dict:
    """Value iteration over atomic options against raw actions on random 10-state MDPs (absolute error)."""
    from .inference import solve_for_theta
    from .mdp import soft_value_iteration_actions

    from .exceptions import ConvergenceWarning

    rng = np.random.default_rng([seed, 1])
    worst, n_cycling = 0.0, 0
    for _ in range(n_mdps):
        mdp = random_mdp(10, 3, rng, gamma=0.9)
        reward = random_reward(mdp, rng)
        beta = float(rng.uniform(0.1, 5.0))
        # the self-consistent fixed point can cycle for large beta; both sides then
        # stop at the same iterate, which still has to agree
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            via_options = solve_for_theta(mdp, atomic_options(mdp), reward, beta, tolerance=1e-13,
                                          max_iters=max_iters)
            direct = soft_value_iteration_actions(mdp, reward, beta, tolerance=1e-13, max_iters=max_iters)
        n_cycling += not direct.converged
        worst = max(worst, float(np.max(np.abs(via_options.v - direct.v))),
                    float(np.max(np.abs(via_options.policy - direct.policy))))
    return {"passed": bool(worst <= tolerance), "worst_error": worst, "tolerance": tolerance,
            "not_converged": n_cycling}


def check_dp_enumeration(seed: int = 0, n_instances: int = 200, tolerance: float = 1e-9) -> dict:
    """Forward recursion against explicit enumeration of option trajectories (relative error)."""
    from .exceptions import ConvergenceWarning
    from .inference import log_marginal_likelihood, solve_for_theta

    rng = np.random.default_rng([seed, 2])
    worst = 0.0
    for _ in range(n_instances):
        mdp, reward, options, traj = random_instance(rng)
        # random rewards need not give a contraction; the identity holds for any solution
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            sol = solve_for_theta(mdp, options, reward, float(rng.uniform(0.2, 3.0)))
        dp = log_marginal_likelihood(traj, reward, options, sol.beta, mdp, "dp", solution=sol)
        en = log_marginal_likelihood(traj, reward, options, sol.beta, mdp, "enumerate", solution=sol)
        if np.isfinite(dp) or np.isfinite(en):
            worst = max(worst, abs(float(np.expm1(dp - en))))
    return {"passed": bool(worst <= tolerance), "worst_error": worst, "tolerance": tolerance}


def check_option_models(seed: int = 0, n_options: int = 10, n_rollouts: int = 1_000_000,
                        n_se: float = 3.0) -> dict:
    """Option rewards and discounted exit distributions against Monte-Carlo rollouts."""
    from .options import build_option_model

    rng = np.random.default_rng([seed, 3])
    failures = []
    for i in range(n_options):
        mdp = random_mdp(8, 3, rng, gamma=0.9)
        reward = random_reward(mdp, rng)
        opt = random_stochastic_option(mdp, rng, id=f"o{i}")
        model = build_option_model(opt, mdp, reward)
        start = int(rng.choice(np.flatnonzero(opt.initiation)))
        mc = monte_carlo_option_model(opt, mdp, reward.table, start, n_rollouts, rng)
        failures += [(i, *f) for f in monte_carlo_agrees(model, mc, start, mdp.n_states, n_se)]
    return {"passed": not failures, "worst_error": len(failures), "tolerance": 0,
            "failures": [[int(f[0]), f[1], float(f[2]), float(f[3]), float(f[4])] for f in failures]}


def oracle_checks(seed: int = 0, n_mdps: int = 50, n_instances: int = 200, n_options: int = 10,
                  n_rollouts: int = 1_000_000) -> dict:
    """Run the three small-instance oracle comparisons and report worst errors.

    * ``reduction``: value iteration over atomic options against raw actions
      on random 10-state MDPs (absolute error, tolerance 1e-10).
    * ``dp_vs_enumeration``: forward recursion against explicit enumeration of
      option trajectories (relative error, tolerance 1e-9).
    * ``option_model``: option rewards and discounted exit distributions
      against Monte-Carlo rollouts (failures beyond 3 standard errors).
    """
    return {"reduction": check_reduction(seed, n_mdps),
            "dp_vs_enumeration": check_dp_enumeration(seed, n_instances),
            "option_model": check_option_models(seed, n_options, n_rollouts)}
