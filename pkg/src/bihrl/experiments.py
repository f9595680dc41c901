"""Taxi and graph-navigation experiment drivers shared by the command line and the acceptance suite."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .envs import graphnav as nav
from .envs import taxi
from .inference import PosteriorTable, log_likelihood_table
from .mcmc import Chain, FiniteSpace, SubsetSpace, marginal_theta_estimate, policy_walk_sample
from .seeding import MCMC, SIMULATION, SPLIT, substream_seed


# -- taxi: posterior at the truth as trajectories accumulate -----------------

@dataclass
class TrendResult:
    """Posterior mass at the true reward after the first ``n`` trajectories, per seed."""

    theta0: taxi.TaxiTheta
    beta: float
    bihrl: np.ndarray  # (n_seeds, n_max)
    birl: np.ndarray

    @property
    def n_values(self) -> np.ndarray:
        return np.arange(1, self.bihrl.shape[1] + 1)

    @property
    def wins(self) -> int:
        """Seeds where BIHRL puts more mass on the truth than BIRL after all trajectories."""
        return int(np.sum(self.bihrl[:, -1] > self.birl[:, -1]))

    @property
    def bihrl_mean(self) -> np.ndarray:
        return self.bihrl.mean(axis=0)

    @property
    def birl_mean(self) -> np.ndarray:
        return self.birl.mean(axis=0)

    def to_csv(self, path) -> None:
        n_seeds = self.bihrl.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "bihrl_mean", "bihrl_se", "birl_mean", "birl_se"])
            for j, n in enumerate(self.n_values):
                se = [a[:, j].std(ddof=1) / np.sqrt(n_seeds) if n_seeds > 1 else 0.0
                      for a in (self.bihrl, self.birl)]
                w.writerow([n, repr(float(self.bihrl_mean[j])), repr(float(se[0])),
                            repr(float(self.birl_mean[j])), repr(float(se[1]))])


def taxi_support(theta0: taxi.TaxiTheta, size: int, seed: int) -> tuple[list, np.ndarray]:
    """Reduced reward support (truth, its one-edit neighbours, then prior draws) and its log prior."""
    support = taxi.reduced_theta_support(theta0, size, substream_seed(seed, "support"), neighbours=True)
    return support, np.array([taxi.taxi_theta_log_prior(t) for t in support])


def taxi_trend(theta0: taxi.TaxiTheta, beta: float, n_seeds: int = 20, n_trajectories: int = 5,
               support_size: int = 500, seed: int = 0, max_steps: int = 200) -> TrendResult:
    """Exact posteriors at ``theta0`` for BIHRL (true options) and BIRL (atomic only).

    The agent plans with the default goto-R1/goto-B1 library. Both models use
    the free-cell prior restricted to the reduced support.
    """
    mdp = taxi.taxi_mdp()
    hier, flat = taxi.default_taxi_options(mdp), taxi.taxi_atomic_options(mdp)
    support, log_prior = taxi_support(theta0, support_size, seed)
    trajs = []
    for i in range(n_seeds):
        trajs += taxi.simulate_hierarchical_agent(theta0, hier, beta, substream_seed(seed, SIMULATION, i),
                                                  n_trajectories, max_steps)
    out = []
    for options in (hier, flat):
        ll = log_likelihood_table(trajs, support, options, beta, mdp).reshape(len(support), n_seeds, n_trajectories)
        cum = np.cumsum(ll, axis=2)
        mass = np.empty((n_seeds, n_trajectories))
        for i in range(n_seeds):
            for j in range(n_trajectories):
                mass[i, j] = PosteriorTable.from_log_weights(range(len(support)), log_prior + cum[:, i, j]).mass[0]
        out.append(mass)
    return TrendResult(theta0, beta, *out)


# -- taxi: joint reward and option-set inference -----------------------------

@dataclass
class JointResult:
    theta0: taxi.TaxiTheta
    chain: Chain
    posterior: PosteriorTable
    n_solves: int = 0
    trajectories: list = field(default_factory=list)

    @property
    def mass_at_truth(self) -> float:
        return self.posterior[self.theta0.id]


def taxi_joint_mcmc(theta0: taxi.TaxiTheta, beta: float = 0.8, hierarchical: bool = True, n_trajectories: int = 5,
                    support_size: int = 500, n_samples: int = 5000, burn_in: int | None = None, seed: int = 0,
                    max_options: int = 3, max_steps: int = 200, trajectories=None) -> JointResult:
    """Policy walk over (reward, option set) on trajectories from a goto-R1/goto-B1 planner.

    With ``hierarchical=False`` the option set is pinned to the empty set,
    which is flat Bayesian IRL sampled the same way.
    """
    mdp = taxi.taxi_mdp()
    if trajectories is None:
        trajectories = taxi.simulate_hierarchical_agent(theta0, taxi.default_taxi_options(mdp), beta,
                                                        substream_seed(seed, SIMULATION), n_trajectories, max_steps)
    support, log_prior = taxi_support(theta0, support_size, seed)
    prior = dict(zip((t.id for t in support), log_prior))
    universe = taxi.destination_universe_options(mdp) if hierarchical else []
    omega_space = SubsetSpace(len(universe), max_options) if hierarchical else FiniteSpace([frozenset()])
    chain = policy_walk_sample(
        trajectories, FiniteSpace([t.id for t in support]), omega_space, None, beta, n_samples, burn_in,
        substream_seed(seed, MCMC, int(hierarchical)), mdp=mdp, base_options=taxi.taxi_atomic_options(mdp),
        option_universe=universe, theta_of=taxi.TaxiTheta.from_id, theta_log_prior=prior.__getitem__)
    return JointResult(theta0, chain, marginal_theta_estimate(chain), chain.n_evaluations, list(trajectories))


# -- graph navigation: desk-scale synthetic study -----------------------------

@dataclass
class NavComparison:
    nlml_flat: float
    nlml_hier: float
    beta_flat: float
    beta_hier: float
    accuracy_flat: float
    accuracy_hier: float
    sweep_rows: list

    @property
    def nlml_factor(self) -> float:
        return self.nlml_flat / self.nlml_hier


# sparse pages (two random links plus a ring link) and a few far-reaching portal hubs
# without inbound shortcuts, so goto segments are long
DESK_GRAPH = {"out_degree": 2, "hub_links": 60, "hub_inlinks": False}


def nav_desk_study(n_nodes: int = 200, n_hubs: int = 3, n_paths: int = 600, beta: float = 0.4,
                   beta_o: float = nav.DEFAULT_BETA_O, beta_grid=(0.1, 0.2, 0.4, 0.8, 1.6), seed: int = 0,
                   graph_kwargs: dict | None = None) -> NavComparison:
    """NLML and paired accuracy of ``m = 0`` against the generating option set.

    Each model gets the ``beta`` from ``beta_grid`` that minimizes its
    training NLML; accuracy is measured on the held-out half. ``graph_kwargs``
    defaults to :data:`DESK_GRAPH`.
    """
    kwargs = DESK_GRAPH if graph_kwargs is None else graph_kwargs
    graph, hubs = nav.synthetic_hub_graph(n_nodes, n_hubs, seed=seed, **kwargs)
    gen_lib = nav.nav_option_library(graph, hubs, beta_o)
    paths = nav.simulate_navigation_corpus(graph, gen_lib, nav.Hyperparams(beta, n_hubs, beta_o), n_paths,
                                           substream_seed(seed, SIMULATION))
    records = nav.split_paths(paths, substream_seed(seed, SPLIT))
    train = [r for r in records if r.split == "train"]
    test = [r for r in records if r.split == "test"]
    rows, best = [], {}
    for m, lib in ((0, nav.nav_option_library(graph, [], beta_o)), (n_hubs, gen_lib)):
        for b in beta_grid:
            solver = nav.GoalSolver(graph, lib, nav.Hyperparams(b, m, beta_o))
            res = nav.nlml(solver, train)
            rows.append({"beta": b, "m": m, "nlml_total": res.total, "nlml_mean": res.mean})
            if m not in best or res.mean < best[m][0]:
                best[m] = (res.mean, b, solver)
    acc = {m: nav.evaluate_paired_accuracy(best[m][2], test, seed).accuracy for m in best}
    return NavComparison(best[0][0], best[n_hubs][0], best[0][1], best[n_hubs][1], acc[0], acc[n_hubs], rows)
