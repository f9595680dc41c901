"""Metropolis-Hastings over joint (reward, option set) latent spaces.

A chain state is a :class:`LatentPoint` of two hashable keys. What the keys
mean is up to the target: :class:`HierarchicalPosteriorTarget` maps the
omega key to a subset of an option universe and the theta key, through a
user callable, to a reward.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Hashable, NamedTuple, Sequence

import numpy as np

from .exceptions import DegenerateEvidenceError
from .inference import ActionTrajectory, PosteriorTable, SegmentLattice
from .mdp import DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE, RewardParams, TabularMdp, soft_value_iteration
from .options import OptionModelBuilder, OptionSpec

logger = logging.getLogger(__name__)

__all__ = [
    "LatentPoint",
    "FiniteSpace",
    "SubsetSpace",
    "UniformMove",
    "SubsetMove",
    "NeighborhoodSpec",
    "Evaluation",
    "HierarchicalPosteriorTarget",
    "Chain",
    "policy_walk",
    "policy_walk_sample",
    "marginal_theta_estimate",
]


class LatentPoint(NamedTuple):
    theta: Hashable
    omega: Hashable


class FiniteSpace:
    """An explicit list of distinct members."""

    def __init__(self, members: Sequence[Hashable]):
        self.members = list(members)
        if not self.members:
            raise ValueError("empty space")
        self._index = {m: i for i, m in enumerate(self.members)}
        if len(self._index) != len(self.members):
            raise ValueError("space members must be distinct")

    def __len__(self):
        return len(self.members)

    def __contains__(self, item):
        return item in self._index

    def draw(self, rng: np.random.Generator):
        return self.members[int(rng.integers(len(self.members)))]


class SubsetSpace:
    """All subsets of ``range(n_items)`` with size in ``[min_size, max_size]``, as frozensets."""

    def __init__(self, n_items: int, max_size: int, min_size: int = 0):
        if not 0 <= min_size <= max_size <= n_items:
            raise ValueError("need 0 <= min_size <= max_size <= n_items")
        self.n_items, self.max_size, self.min_size = n_items, max_size, min_size
        sizes = np.arange(min_size, max_size + 1)
        counts = np.array([math.comb(n_items, int(k)) for k in sizes], dtype=float)
        self._sizes, self._size_p = sizes, counts / counts.sum()
        self._len = int(sum(math.comb(n_items, int(k)) for k in sizes))

    def __len__(self):
        return self._len

    def __contains__(self, item):
        return (isinstance(item, frozenset) and self.min_size <= len(item) <= self.max_size
                and all(isinstance(i, (int, np.integer)) and 0 <= i < self.n_items for i in item))

    def draw(self, rng: np.random.Generator) -> frozenset:
        """Uniform over the whole space."""
        k = int(rng.choice(self._sizes, p=self._size_p))
        return frozenset(int(i) for i in rng.choice(self.n_items, size=k, replace=False))


class UniformMove:
    """Propose a uniformly random other member of a :class:`FiniteSpace`."""

    def propose(self, current, space: FiniteSpace, rng: np.random.Generator):
        n = len(space)
        if n == 1:
            return current
        j = int(rng.integers(n - 1))
        i = space._index[current]
        return space.members[j + (j >= i)]


@dataclass(frozen=True)
class SubsetMove:
    """Toggle one item or swap a member for a non-member; symmetric by construction.

    With probability ``toggle_probability`` an item is drawn uniformly from the
    ground set and added or removed (staying put if that would break the size
    bounds); otherwise a uniform member is replaced by a uniform non-member
    (staying put if either is missing).
    """

    toggle_probability: float = 0.5

    def propose(self, current: frozenset, space: SubsetSpace, rng: np.random.Generator) -> frozenset:
        n = space.n_items
        if rng.random() < self.toggle_probability:
            item = int(rng.integers(n))
            if item in current:
                return current - {item} if len(current) > space.min_size else current
            return current | {item} if len(current) < space.max_size else current
        if not current or len(current) == n:
            return current
        members = sorted(current)
        outside = sorted(set(range(n)) - current)
        old = members[int(rng.integers(len(members)))]
        new = outside[int(rng.integers(len(outside)))]
        return (current - {old}) | {new}


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Which coordinate to perturb and how.

    Each step perturbs theta with probability ``theta_probability`` and omega
    otherwise; a coordinate whose space has a single member is never chosen.
    """

    theta_moves: object = field(default_factory=UniformMove)
    omega_moves: object = field(default_factory=UniformMove)
    theta_probability: float = 0.5

    def propose(self, point: LatentPoint, theta_space, omega_space, rng) -> LatentPoint:
        if len(theta_space) == 1 and len(omega_space) == 1:
            return point
        if len(omega_space) == 1:
            move_theta = True
        elif len(theta_space) == 1:
            move_theta = False
        else:
            move_theta = rng.random() < self.theta_probability
        if move_theta:
            return LatentPoint(self.theta_moves.propose(point.theta, theta_space, rng), point.omega)
        return LatentPoint(point.theta, self.omega_moves.propose(point.omega, omega_space, rng))


def _default_move(space):
    return SubsetMove() if isinstance(space, SubsetSpace) else UniformMove()


class Evaluation(NamedTuple):
    log_p: float
    log_likelihood: float
    v: np.ndarray | None


class HierarchicalPosteriorTarget:
    """Unnormalized ``log P(T_a | beta, omega, theta) + log P(omega) + log P(theta)``.

    Parameters
    ----------
    trajectories : sequence of ActionTrajectory
    mdp : TabularMdp
    base_options : sequence of OptionSpec
        Always available (typically the atomic actions).
    option_universe : sequence of OptionSpec
        An omega key is an iterable of indices into this list.
    beta : float
    theta_of : callable, optional
        Maps a theta key to a :class:`RewardParams`; identity by default.
    theta_log_prior, omega_log_prior : callable, optional
        Log prior of a key. Omitted means uniform (a constant, dropped).
    """

    def __init__(self, trajectories: Sequence[ActionTrajectory], mdp: TabularMdp,
                 base_options: Sequence[OptionSpec], option_universe: Sequence[OptionSpec],
                 beta: float, theta_of: Callable[[Hashable], RewardParams] | None = None,
                 theta_log_prior: Callable | None = None, omega_log_prior: Callable | None = None,
                 tolerance: float = DEFAULT_TOLERANCE, max_iters: int = DEFAULT_MAX_ITERS,
                 cache_size: int = 4096):
        self.mdp = mdp
        self.beta = beta
        self.n_base = len(base_options)
        options = list(base_options) + list(option_universe)
        self.builder = OptionModelBuilder(options, mdp)
        self.lattices = [SegmentLattice(t, options, mdp.terminal) for t in trajectories]
        self.theta_of = theta_of or (lambda key: key)
        self.theta_log_prior = theta_log_prior
        self.omega_log_prior = omega_log_prior
        self.tolerance, self.max_iters = tolerance, max_iters
        self._stacks: OrderedDict = OrderedDict()
        self._cache: OrderedDict = OrderedDict()
        self.cache_size = cache_size
        self.n_solves = 0

    def _full_stack(self, theta_key):
        stack = self._stacks.get(theta_key)
        if stack is None:
            stack = self.builder.stack(self.theta_of(theta_key))
            self._stacks[theta_key] = stack
            if len(self._stacks) > 64:
                self._stacks.popitem(last=False)
        else:
            self._stacks.move_to_end(theta_key)
        return stack

    def option_indices(self, omega_key) -> list[int]:
        return list(range(self.n_base)) + [self.n_base + int(i) for i in sorted(omega_key)]

    def log_likelihood(self, theta_key, omega_key, warm_start=None):
        """``(sum of log marginal likelihoods, value function)`` without the priors."""
        stack = self._full_stack(theta_key).select(self.option_indices(omega_key))
        sol = soft_value_iteration(self.mdp, stack, self.theta_of(theta_key), self.beta,
                                   self.tolerance, self.max_iters, warm_start)
        self.n_solves += 1
        total = 0.0
        for lat in self.lattices:
            total += lat.log_marginal(sol)
            if total == -np.inf:
                break
        return total, sol.v

    def __call__(self, theta_key, omega_key, warm_start=None) -> Evaluation:
        key = (theta_key, omega_key)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        ll, v = self.log_likelihood(theta_key, omega_key, warm_start)
        log_p = ll
        if self.theta_log_prior is not None:
            log_p += self.theta_log_prior(theta_key)
        if self.omega_log_prior is not None:
            log_p += self.omega_log_prior(omega_key)
        result = Evaluation(float(log_p), float(ll), v)
        self._cache[key] = result
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return result


@dataclass
class Chain:
    """Post-burn-in samples of a policy walk."""

    samples: list
    log_p: np.ndarray
    accepted: np.ndarray
    seed: int
    burn_in: int
    n_evaluations: int = 0

    def __len__(self):
        return len(self.samples)

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if len(self.accepted) else float("nan")

    def to_csv(self, path, theta_label: Callable = str, omega_label: Callable = str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "theta", "omega", "log_p", "accepted"])
            for i, (pt, lp, acc) in enumerate(zip(self.samples, self.log_p, self.accepted)):
                w.writerow([i, theta_label(pt.theta), omega_label(pt.omega), repr(float(lp)), int(acc)])


def _as_space(space):
    if isinstance(space, (FiniteSpace, SubsetSpace)):
        return space
    return FiniteSpace(space)


def policy_walk(
    target: Callable[..., Evaluation],
    theta_space,
    omega_space,
    neighborhood: NeighborhoodSpec | None = None,
    n_samples: int = 1000,
    burn_in: int | None = None,
    seed: int = 0,
    initial_p: float | None = None,
    max_start_retries: int = 100,
) -> Chain:
    """Metropolis-Hastings random walk over ``theta_space x omega_space``.

    The start point is drawn uniformly from each space. ``initial_p`` is the
    probability the first proposal is compared against; by default it is the
    target value at the start point, which makes the walk a standard
    Metropolis-Hastings chain. Passing ``initial_p=0.5`` reproduces a fixed
    reference value that stays in force until the first acceptance.

    ``burn_in`` steps (default 20% of ``n_samples``) are run first and
    discarded; then ``n_samples`` states are recorded, one per step.
    """
    theta_space, omega_space = _as_space(theta_space), _as_space(omega_space)
    if neighborhood is None:
        neighborhood = NeighborhoodSpec(_default_move(theta_space), _default_move(omega_space))
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    burn_in = n_samples // 5 if burn_in is None else burn_in
    rng = np.random.default_rng(seed)
    n_eval = 0
    for attempt in range(max_start_retries):
        point = LatentPoint(theta_space.draw(rng), omega_space.draw(rng))
        ev = target(point.theta, point.omega, None)
        n_eval += 1
        if ev.log_p > -np.inf:
            break
        logger.info("start point %r has zero probability, redrawing", point)
    else:
        raise DegenerateEvidenceError(f"no start point with nonzero probability in {max_start_retries} draws")
    if initial_p is None:
        log_p, v = ev.log_p, ev.v
    else:
        log_p, v = math.log(initial_p), None
    samples, trace, accepted = [], np.empty(n_samples), np.zeros(n_samples, dtype=bool)
    for step in range(burn_in + n_samples):
        proposal = neighborhood.propose(point, theta_space, omega_space, rng)
        if proposal == point and initial_p is None:
            ok = True
        else:
            ev1 = target(proposal.theta, proposal.omega, v)
            n_eval += 1
            diff = ev1.log_p - log_p
            ok = ev1.log_p > -np.inf and (diff >= 0 or rng.random() < math.exp(diff))
            if ok:
                point, log_p, v = proposal, ev1.log_p, ev1.v
                initial_p = None
        if step >= burn_in:
            i = step - burn_in
            samples.append(point)
            trace[i] = log_p
            accepted[i] = ok
    return Chain(samples, trace, accepted, seed, burn_in, n_eval)


def policy_walk_sample(
    trajectories: Sequence[ActionTrajectory],
    theta_space,
    omega_space,
    neighborhood: NeighborhoodSpec | None,
    beta: float,
    n_samples: int,
    burn_in: int | None = None,
    seed: int = 0,
    *,
    mdp: TabularMdp,
    base_options: Sequence[OptionSpec],
    option_universe: Sequence[OptionSpec] = (),
    theta_of: Callable | None = None,
    theta_log_prior: Callable | None = None,
    omega_log_prior: Callable | None = None,
    initial_p: float | None = None,
) -> Chain:
    """Sample ``P(theta, omega | trajectories, beta)`` with warm-started value iteration."""
    target = HierarchicalPosteriorTarget(trajectories, mdp, base_options, option_universe, beta,
                                         theta_of, theta_log_prior, omega_log_prior)
    return policy_walk(target, theta_space, omega_space, neighborhood, n_samples, burn_in, seed,
                       initial_p)


def marginal_theta_estimate(chain: Chain, label: Callable = lambda key: key) -> PosteriorTable:
    """Empirical theta frequencies across the chain, omega marginalized out."""
    if not len(chain):
        raise ValueError("empty chain")
    counts: dict = {}
    for pt in chain.samples:
        k = label(pt.theta)
        counts[k] = counts.get(k, 0) + 1
    keys = sorted(counts, key=str)
    mass = np.array([counts[k] for k in keys], dtype=float)
    return PosteriorTable(tuple(keys), mass / mass.sum())
