"""Independent oracles shared by several test modules."""

import itertools
import math

import networkx as nx
import numpy as np

from bihrl.envs import taxi
from bihrl.mdp import TabularMdp
from bihrl.toys import monte_carlo_agrees, monte_carlo_option_model  # noqa: F401


def direct_exit_probability(option, states, actions, terminal=None, open_end=False):
    """Consistent-exit probability straight from its product definition."""
    if not option.initiation[states[0]] or (terminal is not None and terminal[states[0]]):
        return 0.0
    dense = option.policy.toarray()
    alpha = option.termination.copy()
    if terminal is not None:
        alpha = np.where(terminal, 1.0, alpha)
    prob = 1.0
    for s, a in zip(states[:-1], actions):
        prob *= dense[s, a]
    for s in states[1:-1]:
        prob *= 1.0 - alpha[s]
    if not open_end:
        prob *= alpha[states[-1]]
    return prob


def brute_force_segmentations(trajectory, options, terminal=None):
    """Every (boundaries, option ids) tiling with positive probability, by exhaustive search."""
    n = len(trajectory)
    found = []
    for mask in itertools.product([0, 1], repeat=n - 1):
        cuts = [0] + [i + 1 for i, m in enumerate(mask) if m] + [n]
        spans = list(zip(cuts[:-1], cuts[1:]))
        for combo in itertools.product(options, repeat=len(spans)):
            p = 1.0
            for (i, j), o in zip(spans, combo):
                p *= direct_exit_probability(o, trajectory.states[i:j + 1], trajectory.actions[i:j],
                                             terminal)
                if p == 0:
                    break
            if p > 0:
                found.append((tuple((i, j, o.id) for (i, j), o in zip(spans, combo)), p))
    return found


def count_segmentations_recursive(trajectory, options, terminal=None):
    """Number of tilings, by naive recursion from each position."""
    n = len(trajectory)

    def count(i):
        if i == n:
            return 1
        total = 0
        for j in range(i + 1, n + 1):
            for o in options:
                if direct_exit_probability(o, trajectory.states[i:j + 1], trajectory.actions[i:j],
                                           terminal) > 0:
                    total += count(j)
        return total

    return count(0)


def taxi_grid_graph():
    """Undirected grid graph of the taxi layout with walls removed."""
    g = nx.grid_2d_graph(taxi.GRID, taxi.GRID)
    for wall in taxi.LAYOUT.walls:
        a, b = tuple(wall)
        g.remove_edge(a, b)
    return g


def graph_mdp(edges, n_nodes, terminal=(), gamma=0.9):
    """Navigation MDP where action ``v`` follows the edge to node ``v``."""
    triples = [(u, v, v, 1.0) for u, v in edges]
    return TabularMdp.from_triples(n_nodes, n_nodes, triples, terminal, gamma)


def softmax(values, beta):
    m = max(values)
    w = [math.exp(beta * (v - m)) for v in values]
    return [x / sum(w) for x in w]
