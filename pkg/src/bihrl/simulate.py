"""Roll out Boltzmann planners over options to produce action-level trajectories."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .inference import ActionTrajectory
from .mdp import SoftSolution, TabularMdp
from .options import OptionSpec

__all__ = ["rollout_option", "simulate_agent"]


def rollout_option(option: OptionSpec, mdp: TabularMdp, state: int, rng: np.random.Generator,
                   budget: int):
    """Run ``option`` from ``state`` until it terminates; returns ``(states, actions)``."""
    states, actions = [state], []
    while len(actions) < budget:
        lo, hi = option.policy.indptr[state], option.policy.indptr[state + 1]
        acts, probs = option.policy.indices[lo:hi], option.policy.data[lo:hi]
        a = int(acts[0]) if len(acts) == 1 else int(rng.choice(acts, p=probs))
        nxt, p = mdp.successors(state, a)
        state = int(nxt[0]) if len(nxt) == 1 else int(rng.choice(nxt, p=p))
        actions.append(a)
        states.append(state)
        if mdp.terminal[state] or rng.random() < option.termination[state]:
            break
    return states, actions


def simulate_agent(
    mdp: TabularMdp,
    options: Sequence[OptionSpec],
    solution: SoftSolution,
    start_sampler,
    rng: np.random.Generator,
    n_trajectories: int,
    max_steps: int,
    id_prefix: str = "traj",
) -> list[ActionTrajectory]:
    """Roll out a Boltzmann planner over ``options``, returning action-level trajectories."""
    by_id = {o.id: o for o in options}
    out = []
    for i in range(n_trajectories):
        s = start_sampler(rng)
        states, actions = [s], []
        while not mdp.terminal[s] and len(actions) < max_steps:
            row = solution.policy[s]
            k = int(rng.choice(len(row), p=row / row.sum()))
            seg_states, seg_actions = rollout_option(by_id[solution.option_ids[k]], mdp, s, rng,
                                                     max_steps - len(actions))
            states.extend(seg_states[1:])
            actions.extend(seg_actions)
            s = states[-1]
        out.append(ActionTrajectory(states, actions, f"{id_prefix}-{i}", truncated=not mdp.terminal[s]))
    return out
