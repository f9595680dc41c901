"""Estimator front ends with the scikit-learn ``fit``/``score``/``get_params`` protocol.

Each estimator takes its configuration in ``__init__`` and stores learned
state in trailing-underscore attributes after :meth:`fit`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .envs import graphnav as nav
from .inference import (
    PosteriorTable,
    SegmentLattice,
    log_likelihood_table,
    solve_for_theta,
)
from .mcmc import Chain, NeighborhoodSpec, marginal_theta_estimate, policy_walk_sample
from .mdp import TabularMdp
from .options import OptionSpec, atomic_options
from .validation import check_beta, check_option_ids, check_positive_int, check_seed, check_support, \
    check_trajectories


class HierarchicalIRL(BaseEstimator):
    """Exact reward posterior over a finite support for a fixed option set.

    Parameters
    ----------
    mdp : TabularMdp
    support : sequence of RewardParams
        Candidate rewards; the prior is uniform unless ``prior`` is given.
    option_set : sequence of OptionSpec, optional
        Defaults to the atomic options of ``mdp``, which gives flat Bayesian IRL.
    beta : float
        Agent rationality.
    prior : PosteriorTable, optional

    Attributes
    ----------
    posterior_ : PosteriorTable
    log_likelihood_ : ndarray of shape (n_support, n_trajectories)
    map_ : RewardParams
    """

    def __init__(self, mdp: TabularMdp | None = None, support: Sequence = (), option_set=None,
                 beta: float = 1.0, prior: PosteriorTable | None = None, tolerance: float = 1e-10,
                 max_iters: int = 100_000):
        self.mdp = mdp
        self.support = support
        self.option_set = option_set
        self.beta = beta
        self.prior = prior
        self.tolerance = tolerance
        self.max_iters = max_iters

    def _options(self):
        options = list(self.option_set) if self.option_set is not None else atomic_options(self.mdp)
        check_option_ids(options)
        return options

    def fit(self, X, y=None):
        if not isinstance(self.mdp, TabularMdp):
            raise ValueError("mdp must be a TabularMdp")
        beta = check_beta(self.beta)
        support = check_support(self.support)
        trajectories = check_trajectories(X, self.mdp)
        ids = [t.id for t in support]
        prior = self.prior if self.prior is not None else PosteriorTable.uniform(ids)
        if prior.support != tuple(ids):
            raise ValueError("prior must be defined on the support, in the same order")
        self.log_likelihood_ = log_likelihood_table(trajectories, support, self._options(), beta, self.mdp,
                                                    self.tolerance, self.max_iters)
        with np.errstate(divide="ignore"):
            log_w = np.log(prior.mass) + self.log_likelihood_.sum(axis=1)
        self.posterior_ = PosteriorTable.from_log_weights(ids, log_w, self.log_likelihood_.sum(axis=1))
        self.map_ = support[int(np.argmax(self.posterior_.mass))]
        self.n_trajectories_ = len(trajectories)
        return self

    def predict(self, X=None):
        """The MAP reward (the same for every input)."""
        check_is_fitted(self, "posterior_")
        return self.map_

    def score(self, X, y=None) -> float:
        """Mean log marginal likelihood of ``X`` under the MAP reward."""
        check_is_fitted(self, "posterior_")
        trajectories = check_trajectories(X, self.mdp)
        options = self._options()
        sol = solve_for_theta(self.mdp, options, self.map_, check_beta(self.beta), self.tolerance, self.max_iters)
        return float(np.mean([SegmentLattice(t, options, self.mdp.terminal).log_marginal(sol)
                              for t in trajectories]))


class PolicyWalk(BaseEstimator):
    """Joint MCMC over rewards and option sets.

    ``theta_space`` and ``omega_space`` are finite spaces of keys;
    ``theta_of`` maps a key to its RewardParams, and an omega key is a set of
    indices into ``option_universe``.

    Attributes
    ----------
    chain_ : Chain
    theta_posterior_ : PosteriorTable
        Chain frequencies of theta with omega marginalized out.
    acceptance_rate_ : float
    """

    def __init__(self, mdp: TabularMdp | None = None, theta_space=(), omega_space=(frozenset(),),
                 base_options=None, option_universe: Sequence[OptionSpec] = (), beta: float = 1.0,
                 n_samples: int = 1000, burn_in: int | None = None, seed: int = 0,
                 theta_of: Callable | None = None, theta_log_prior: Callable | None = None,
                 omega_log_prior: Callable | None = None, neighborhood: NeighborhoodSpec | None = None,
                 initial_p: float | None = None):
        self.mdp = mdp
        self.theta_space = theta_space
        self.omega_space = omega_space
        self.base_options = base_options
        self.option_universe = option_universe
        self.beta = beta
        self.n_samples = n_samples
        self.burn_in = burn_in
        self.seed = seed
        self.theta_of = theta_of
        self.theta_log_prior = theta_log_prior
        self.omega_log_prior = omega_log_prior
        self.neighborhood = neighborhood
        self.initial_p = initial_p

    def fit(self, X, y=None):
        if not isinstance(self.mdp, TabularMdp):
            raise ValueError("mdp must be a TabularMdp")
        trajectories = check_trajectories(X, self.mdp)
        base = list(self.base_options) if self.base_options is not None else atomic_options(self.mdp)
        check_option_ids(base + list(self.option_universe))
        self.chain_: Chain = policy_walk_sample(
            trajectories, self.theta_space, self.omega_space, self.neighborhood, check_beta(self.beta),
            check_positive_int(self.n_samples, "n_samples"), self.burn_in, check_seed(self.seed),
            mdp=self.mdp, base_options=base, option_universe=list(self.option_universe),
            theta_of=self.theta_of, theta_log_prior=self.theta_log_prior,
            omega_log_prior=self.omega_log_prior, initial_p=self.initial_p)
        self.theta_posterior_ = marginal_theta_estimate(self.chain_)
        self.acceptance_rate_ = self.chain_.acceptance_rate
        return self

    def predict(self, X=None):
        """The most frequent theta key in the chain."""
        check_is_fitted(self, "chain_")
        return self.theta_posterior_.map()


class GoalPredictor(BaseEstimator):
    """Goal inference for graph navigation with a top-m goto-option library.

    ``fit`` takes training :class:`~bihrl.envs.graphnav.PathRecord` objects,
    picks the ``m`` most visited pages as goto destinations and records the
    training NLML. ``score`` is paired goal-prediction accuracy.

    Attributes
    ----------
    destinations_ : list of int
    options_ : list of OptionSpec
    solver_ : GoalSolver
    nlml_ : NlmlResult
    """

    def __init__(self, graph: nav.ArticleGraph | None = None, beta: float = 0.4, m: int = 0,
                 beta_o: float = nav.DEFAULT_BETA_O, gamma: float = nav.DEFAULT_GAMMA, seed: int = 0,
                 cache_dir=None):
        self.graph = graph
        self.beta = beta
        self.m = m
        self.beta_o = beta_o
        self.gamma = gamma
        self.seed = seed
        self.cache_dir = cache_dir

    def fit(self, X, y=None):
        if not isinstance(self.graph, nav.ArticleGraph):
            raise ValueError("graph must be an ArticleGraph")
        paths = list(X)
        if not paths:
            raise ValueError("no training paths")
        hyper = nav.Hyperparams(check_beta(self.beta), check_positive_int(self.m, "m", 0),
                                check_beta(self.beta_o, "beta_o"), self.gamma)
        self.destinations_ = nav.top_m_destinations(self.graph, paths, hyper.m)
        self.options_ = nav.nav_option_library(self.graph, self.destinations_, hyper.beta_o, hyper.gamma)
        self.solver_ = nav.GoalSolver(self.graph, self.options_, hyper, self.cache_dir)
        self.nlml_ = nav.nlml(self.solver_, paths)
        return self

    def nlml(self, X) -> nav.NlmlResult:
        check_is_fitted(self, "solver_")
        return nav.nlml(self.solver_, list(X))

    def predict_log_proba(self, prefix: Sequence[int], candidates: Sequence[int]) -> np.ndarray:
        """Log posterior over ``candidates`` given an observed node prefix, uniform goal prior."""
        check_is_fitted(self, "solver_")
        log_w = [nav.path_log_likelihood(self.solver_, prefix, g, open_end=True) for g in candidates]
        post = PosteriorTable.from_log_weights(tuple(candidates), log_w)
        with np.errstate(divide="ignore"):
            return np.log(post.mass)

    def predict(self, prefix: Sequence[int], candidates: Sequence[int]) -> int:
        return int(candidates[int(np.argmax(self.predict_log_proba(prefix, candidates)))])

    def accuracy_table(self, X) -> nav.AccuracyTable:
        check_is_fitted(self, "solver_")
        return nav.evaluate_paired_accuracy(self.solver_, list(X), check_seed(self.seed))

    def score(self, X, y=None) -> float:
        return self.accuracy_table(X).accuracy


__all__ = ["HierarchicalIRL", "PolicyWalk", "GoalPredictor"]
