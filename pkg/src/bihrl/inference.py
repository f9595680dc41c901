"""Option-trajectory enumeration, trajectory likelihoods and reward posteriors.

An observed action trajectory can be produced by many latent option
trajectories. :func:`enumerate_option_trajectories` lists them all;
:class:`SegmentLattice` sums over them with a forward recursion over
trajectory positions, which is what the likelihood code uses by default.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import CapacityError, ContractError, DegenerateEvidenceError
from .mdp import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOLERANCE,
    RewardParams,
    SoftSolution,
    TabularMdp,
    soft_value_iteration,
)
from .options import OptionModelBuilder, OptionSpec, as_option_index, exit_probabilities

logger = logging.getLogger(__name__)

DEFAULT_PATH_CAP = 10**6


@dataclass(frozen=True)
class ActionTrajectory:
    """Observed states ``s_0..s_n`` and actions ``a_0..a_{n-1}``."""

    states: tuple
    actions: tuple
    id: str | None = None
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if len(self.actions) < 1:
            raise ValueError("a trajectory needs at least one action")
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a trajectory needs exactly one more state than actions")

    def __len__(self):
        return len(self.actions)

    @property
    def final_state(self) -> int:
        return self.states[-1]

    def check(self, mdp: TabularMdp) -> None:
        """Raise ``ContractError`` unless every step has nonzero probability in ``mdp``."""
        for t, (s, a) in enumerate(zip(self.states[:-1], self.actions)):
            if mdp.transition_probability(s, a, self.states[t + 1]) <= 0.0:
                raise ContractError(
                    f"trajectory {self.id!r}: step {t} ({s} -{a}-> {self.states[t + 1]}) "
                    "is impossible"
                )

    def prefix(self, n_actions: int) -> "ActionTrajectory":
        return ActionTrajectory(self.states[: n_actions + 1], self.actions[:n_actions], self.id)

    def to_json(self) -> dict:
        out = {"states": list(self.states), "actions": list(self.actions)}
        if self.id is not None:
            out["id"] = self.id
        if self.truncated:
            out["truncated"] = True
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ActionTrajectory":
        return cls(data["states"], data["actions"], data.get("id"), bool(data.get("truncated", False)))


def write_trajectories(path, trajectories: Iterable[ActionTrajectory]) -> None:
    with open(path, "w") as fh:
        for t in trajectories:
            fh.write(json.dumps(t.to_json()) + "\n")


def read_trajectories(path) -> list[ActionTrajectory]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ActionTrajectory.from_json(json.loads(line)))
    return out


class Segment(NamedTuple):
    start: int
    end: int
    option_id: str
    state: int


@dataclass(frozen=True)
class OptionTrajectory:
    """A tiling of an action trajectory into option invocations.

    ``consistency_probability`` is the product of per-segment consistent-exit
    probabilities, i.e. the probability of the observed actions given this
    option sequence.
    """

    segments: tuple
    consistency_probability: float

    @property
    def option_ids(self) -> tuple:
        return tuple(seg.option_id for seg in self.segments)


@dataclass(frozen=True)
class SegmentationSet:
    trajectories: list
    source: ActionTrajectory

    def __len__(self):
        return len(self.trajectories)

    def to_csv(self, path) -> None:
        """One row per segment: path index, segment boundaries, option, probability."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "segment", "start", "end", "option_id", "consistency_probability"])
            for i, tr in enumerate(self.trajectories):
                for j, seg in enumerate(tr.segments):
                    w.writerow([i, j, seg.start, seg.end, seg.option_id, repr(tr.consistency_probability)])


def _exit_table(trajectory, options, terminal, open_end):
    """``table[i]`` lists ``(end, option_index, probability)`` for segments starting at ``i``."""
    return as_option_index(options).exit_table(trajectory.states, trajectory.actions, terminal, open_end)


def enumerate_option_trajectories(
    trajectory: ActionTrajectory,
    option_set: Sequence[OptionSpec],
    prune_below: float = 0.0,
    max_paths: int = DEFAULT_PATH_CAP,
    terminal: np.ndarray | None = None,
    open_end: bool = False,
) -> SegmentationSet:
    """All option trajectories consistent with ``trajectory``.

    Walks forward through positions; every partial option path that accounts
    for the first ``i`` actions is extended by each option whose consistent
    exit over ``i..i+k`` is nonzero. Position 0 starts with the empty path of
    probability 1. Partial paths whose probability is not above
    ``prune_below`` are dropped (nothing is dropped at the default 0).

    ``terminal`` marks MDP-terminal states: options cannot start there and are
    forced to stop on entering one.
    """
    option_set = as_option_index(option_set)
    n = len(trajectory)
    table = _exit_table(trajectory, option_set, terminal, open_end)
    live: list[list[tuple[tuple, float]]] = [[] for _ in range(n + 1)]
    live[0].append(((), 1.0))
    n_live = 1
    for i in range(n):
        if not live[i]:
            continue
        entries = sorted(table[i], key=lambda e: (e[0], e[1]))  # by lookahead k, then option
        s_i = trajectory.states[i]
        for end, k, p in entries:
            seg = Segment(i, end, option_set[k].id, s_i)
            for path, q in live[i]:
                prob = q * p
                if prob > prune_below:
                    live[end].append((path + (seg,), prob))
                    n_live += 1
            if n_live > max_paths:
                raise CapacityError(
                    f"trajectory {trajectory.id!r}: more than {max_paths} partial option paths",
                    trajectory.id,
                )
        if i > 0:
            n_live -= len(live[i])
            live[i] = []
    result = [OptionTrajectory(path, prob) for path, prob in live[n]]
    return SegmentationSet(result, trajectory)


def replay_consistency(option_trajectory: OptionTrajectory, source: ActionTrajectory,
                       option_set: Sequence[OptionSpec], terminal=None, open_end=False) -> float:
    """Recompute the consistency probability of an option trajectory segment by segment."""
    by_id = {o.id: o for o in option_set}
    n = len(source)
    prob = 1.0
    for seg in option_trajectory.segments:
        exits = dict(exit_probabilities(by_id[seg.option_id], source.states, source.actions,
                                        seg.start, terminal, open_end and seg.end == n))
        prob *= exits.get(seg.end, 0.0)
    return prob


def log_option_trajectory_likelihood(option_trajectory: OptionTrajectory, solution: SoftSolution) -> float:
    """Log probability of choosing each segment's option under the Boltzmann policy."""
    total = 0.0
    for seg in option_trajectory.segments:
        k = solution.option_index.get(seg.option_id)
        if k is None or not solution.initiable[seg.state, k]:
            raise ContractError(f"option {seg.option_id!r} is not initiable in state {seg.state}")
        total += solution.log_policy[seg.state, k]
    return float(total)


def option_trajectory_likelihood(option_trajectory: OptionTrajectory, solution: SoftSolution,
                                 beta: float | None = None) -> float:
    """Product over segments of the Boltzmann probability of the chosen option.

    The normalizer at each decision point runs over the options initiable in
    that state only.
    """
    if beta is not None and beta != solution.beta:
        raise ContractError(f"solution was computed for beta={solution.beta}, not {beta}")
    return float(np.exp(log_option_trajectory_likelihood(option_trajectory, solution)))


class SegmentLattice:
    """Reward-independent segment structure of one trajectory under one option set.

    Holds every ``(start, end, option, consistent-exit probability)`` with
    nonzero probability. :meth:`log_marginal` then sums over all tilings with
    the forward recursion ``F[j] = logsumexp_i F[i] + log P_exit + log pi(s_i, o)``.
    """

    def __init__(self, trajectory: ActionTrajectory, option_set: Sequence[OptionSpec],
                 terminal: np.ndarray | None = None, open_end: bool = False):
        option_set = as_option_index(option_set)
        self.trajectory = trajectory
        self.option_ids = tuple(o.id for o in option_set)
        n = len(trajectory)
        starts, ends, opts, logp = [], [], [], []
        for i, row in enumerate(_exit_table(trajectory, option_set, terminal, open_end)):
            for end, k, p in row:
                starts.append(i)
                ends.append(end)
                opts.append(k)
                logp.append(np.log(p))
        order = np.lexsort((np.array(starts, dtype=int), np.array(ends, dtype=int)))
        self.starts = np.array(starts, dtype=int)[order]
        self.ends = np.array(ends, dtype=int)[order]
        self.opts = np.array(opts, dtype=int)[order]
        self.log_exit = np.array(logp, dtype=float)[order]
        self.seg_states = np.array(trajectory.states, dtype=int)[self.starts] if n else self.starts
        self._bounds = np.searchsorted(self.ends, np.arange(n + 2))

    def option_columns(self, solution: SoftSolution) -> np.ndarray:
        """Map this lattice's option indices to columns of ``solution``; -1 if absent."""
        return np.array([solution.option_index.get(o, -1) for o in self.option_ids], dtype=int)

    def log_marginal(self, solution: SoftSolution, columns: np.ndarray | None = None) -> float:
        if columns is None:
            columns = self.option_columns(solution)
        cols = columns[self.opts] if len(self.opts) else self.opts
        with np.errstate(divide="ignore"):
            lp = np.where(cols >= 0, solution.log_policy[self.seg_states, np.maximum(cols, 0)], -np.inf)
        weights = self.log_exit + lp
        n = len(self.trajectory)
        f = np.full(n + 1, -np.inf)
        f[0] = 0.0
        for j in range(1, n + 1):
            lo, hi = self._bounds[j], self._bounds[j + 1]
            if hi > lo:
                f[j] = logsumexp(f[self.starts[lo:hi]] + weights[lo:hi])
        return float(f[n])


def log_marginal_from_enumeration(segmentations: SegmentationSet, solution: SoftSolution) -> float:
    """``log sum_i P(T_a | T_o,i) P(T_o,i)`` over an explicit segmentation set."""
    terms = []
    for tr in segmentations.trajectories:
        ks = [solution.option_index.get(seg.option_id) for seg in tr.segments]
        if any(k is None or not solution.initiable[seg.state, k] for k, seg in zip(ks, tr.segments)):
            continue  # not initiable under this MDP; contributes zero
        terms.append(np.log(tr.consistency_probability)
                     + log_option_trajectory_likelihood(tr, solution))
    return float(logsumexp(terms)) if terms else -np.inf


def solve_for_theta(mdp: TabularMdp, option_set: Sequence[OptionSpec], theta: RewardParams,
                    beta: float, tolerance: float = DEFAULT_TOLERANCE,
                    max_iters: int = DEFAULT_MAX_ITERS, warm_start=None,
                    builder: OptionModelBuilder | None = None) -> SoftSolution:
    builder = builder or OptionModelBuilder(option_set, mdp)
    return soft_value_iteration(mdp, builder.stack(theta), theta, beta, tolerance, max_iters, warm_start)


def log_marginal_likelihood(
    trajectory: ActionTrajectory,
    theta: RewardParams,
    option_set: Sequence[OptionSpec],
    beta: float,
    mdp: TabularMdp,
    method: str | None = None,
    prune_below: float = 0.0,
    solution: SoftSolution | None = None,
    open_end: bool = False,
    max_paths: int = DEFAULT_PATH_CAP,
) -> float:
    """``log P(T_a | beta, omega, theta)`` summed over latent option trajectories.

    ``method="dp"`` (the default when not pruning) uses the forward recursion;
    ``method="enumerate"`` materializes every option trajectory first, and is
    the only path that honours ``prune_below``.
    """
    if method is None:
        method = "enumerate" if prune_below > 0 else "dp"
    if method == "dp" and prune_below > 0:
        raise ValueError("pruning is only available with method='enumerate'")
    if solution is None:
        solution = solve_for_theta(mdp, option_set, theta, beta)
    if method == "dp":
        value = SegmentLattice(trajectory, option_set, mdp.terminal, open_end).log_marginal(solution)
    elif method == "enumerate":
        segs = enumerate_option_trajectories(trajectory, option_set, prune_below, max_paths,
                                             mdp.terminal, open_end)
        value = log_marginal_from_enumeration(segs, solution)
    else:
        raise ValueError(f"unknown method {method!r}")
    if value == -np.inf:
        logger.info("trajectory %r has zero probability under theta %r", trajectory.id, theta.id)
    return value


def marginal_likelihood(trajectory, theta, option_set, beta, mdp, method=None, prune_below=0.0,
                        solution=None, open_end=False) -> float:
    """Linear-domain :func:`log_marginal_likelihood`; 0 when the trajectory is inexplicable."""
    return float(np.exp(log_marginal_likelihood(trajectory, theta, option_set, beta, mdp, method,
                                                prune_below, solution, open_end)))


@dataclass(frozen=True)
class PosteriorTable:
    """Normalized probability mass over a finite support of reward ids."""

    support: tuple
    mass: np.ndarray
    log_evidence: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        object.__setattr__(self, "support", tuple(self.support))
        if mass.shape != (len(self.support),):
            raise ValueError("mass must have one entry per support point")
        if (mass < 0).any() or abs(mass.sum() - 1.0) > 1e-9:
            raise ValueError("mass must be a probability vector")
        object.__setattr__(self, "mass", mass)

    @classmethod
    def uniform(cls, support: Sequence) -> "PosteriorTable":
        support = tuple(support)
        if not support:
            raise ValueError("empty support")
        return cls(support, np.full(len(support), 1.0 / len(support)))

    @classmethod
    def from_log_weights(cls, support: Sequence, log_weights, log_evidence=None) -> "PosteriorTable":
        lw = np.asarray(log_weights, dtype=float)
        if not np.isfinite(lw).any():
            raise DegenerateEvidenceError("every support point has zero weight")
        mass = np.exp(lw - logsumexp(lw))
        return cls(tuple(support), mass / mass.sum(), log_evidence)

    def __getitem__(self, theta_id) -> float:
        try:
            return float(self.mass[self.support.index(theta_id)])
        except ValueError:
            return 0.0

    def map(self):
        return self.support[int(np.argmax(self.mass))]

    def total_variation(self, other: "PosteriorTable") -> float:
        keys = set(self.support) | set(other.support)
        return 0.5 * sum(abs(self[k] - other[k]) for k in keys)

    def to_rows(self) -> list[tuple]:
        return [(str(t), repr(float(m))) for t, m in zip(self.support, self.mass)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "mass"])
            w.writerows(self.to_rows())


def posterior_over_rewards(
    trajectories: Sequence[ActionTrajectory],
    support: Sequence[RewardParams],
    option_set: Sequence[OptionSpec],
    beta: float,
    mdp: TabularMdp | Callable[[RewardParams], TabularMdp],
    prior: PosteriorTable | None = None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> PosteriorTable:
    """Exact posterior ``P(theta | trajectories, beta, omega)`` over a finite support.

    ``mdp`` is either one MDP shared by all rewards or a callable giving the MDP
    for each ``theta`` (when the terminal set depends on it). Accumulation is
    in the log domain.
    """
    support = list(support)
    if not support:
        raise ValueError("empty support")
    ids = [t.id for t in support]
    if prior is None:
        prior = PosteriorTable.uniform(ids)
    elif prior.support != tuple(ids):
        raise ValueError("prior must be defined on the same support, in the same order")
    log_lik = log_likelihood_table(trajectories, support, option_set, beta, mdp, tolerance, max_iters)
    total = log_lik.sum(axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(prior.mass) + total
    if not np.isfinite(log_w).any():
        raise DegenerateEvidenceError("all candidate rewards give the trajectories zero probability")
    return PosteriorTable.from_log_weights(ids, log_w, log_evidence=total)


def log_likelihood_table(trajectories, support, option_set, beta, mdp, tolerance=DEFAULT_TOLERANCE,
                         max_iters=DEFAULT_MAX_ITERS) -> np.ndarray:
    """``(n_support, n_trajectories)`` array of log marginal likelihoods."""
    shared = isinstance(mdp, TabularMdp)
    out = np.empty((len(support), len(trajectories)))
    if shared:
        builder = OptionModelBuilder(option_set, mdp)
        lattices = [SegmentLattice(t, option_set, mdp.terminal) for t in trajectories]
    for i, theta in enumerate(support):
        if shared:
            m = mdp
        else:
            m = mdp(theta)
            builder = OptionModelBuilder(option_set, m)
            lattices = [SegmentLattice(t, option_set, m.terminal) for t in trajectories]
        sol = soft_value_iteration(m, builder.stack(theta), theta, beta, tolerance, max_iters)
        cols = lattices[0].option_columns(sol) if lattices else None
        for j, lat in enumerate(lattices):
            out[i, j] = lat.log_marginal(sol, cols)
    return out
