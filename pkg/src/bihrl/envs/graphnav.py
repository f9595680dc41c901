"""Goal-directed navigation on a hyperlink graph.

Nodes are states; the actions at a node are its out-links, numbered by the
sorted order of their targets (action ``k`` at ``u`` follows the ``k``-th
smallest out-neighbour id). A navigation task has one goal node, which is
terminal; every click costs -1 except the one entering the goal, worth +20.

Dataset files follow the public Wikispeedia TSV layout: ``#`` comment lines,
percent-encoded article names, and finished paths as ``;``-separated article
names with ``<`` marking a back-click.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import zlib
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import unquote

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from ..exceptions import CacheMismatchError, ContractError, DataError
from ..inference import ActionTrajectory, PosteriorTable, SegmentLattice
from ..mdp import RewardParams, SoftSolution, TabularMdp, soft_value_iteration
from ..options import OptionModelBuilder, OptionSetIndex, OptionSpec, atomic_options, goto_option
from ..simulate import simulate_agent

logger = logging.getLogger(__name__)

GOAL_REWARD = 20.0
STEP_REWARD = -1.0
DEFAULT_GAMMA = 0.9
DEFAULT_BETA_O = 3.0
MAX_PATH_STEPS = 20
CACHE_VERSION = 1


@dataclass(frozen=True, eq=False)
class ArticleGraph:
    """Directed graph with named nodes and sorted adjacency lists."""

    names: tuple
    adjacency: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(set(names)) != len(names):
            raise DataError("node names must be unique")
        n = len(names)
        adj = []
        for out in self.adjacency:
            arr = np.unique(np.asarray(out, dtype=np.int64))
            if arr.size and (arr[0] < 0 or arr[-1] >= n):
                raise DataError("edge endpoint out of range")
            arr.setflags(write=False)
            adj.append(arr)
        if len(adj) != n:
            raise DataError("one adjacency list per node is required")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "adjacency", tuple(adj))
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(names)})
        object.__setattr__(self, "_dist_from", {})
        object.__setattr__(self, "_mdps", {})

    @classmethod
    def from_edges(cls, names: Sequence[str], edges: Iterable[tuple[int, int]]) -> "ArticleGraph":
        adj: list[list[int]] = [[] for _ in names]
        for u, v in edges:
            adj[u].append(v)
        return cls(tuple(names), tuple(adj))

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def n_edges(self) -> int:
        return int(sum(len(a) for a in self.adjacency))

    @property
    def max_out_degree(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    def node(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown article {name!r}") from None

    def edges(self):
        for u, out in enumerate(self.adjacency):
            for v in out:
                yield u, int(v)

    def has_edge(self, u: int, v: int) -> bool:
        out = self.adjacency[u]
        i = int(np.searchsorted(out, v))
        return i < len(out) and out[i] == v

    def action_of(self, u: int, v: int) -> int:
        if not self.has_edge(u, v):
            raise ContractError(f"no link from {self.names[u]!r} to {self.names[v]!r}")
        return int(np.searchsorted(self.adjacency[u], v))

    def csgraph(self) -> sp.csr_matrix:
        rows = np.repeat(np.arange(self.n_nodes), [len(a) for a in self.adjacency])
        cols = np.concatenate(self.adjacency) if self.n_edges else np.zeros(0, dtype=int)
        return sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(self.n_nodes, self.n_nodes))

    def distances_from(self, u: int) -> np.ndarray:
        """Hop counts from ``u`` (``inf`` where unreachable), computed once per source."""
        d = self._dist_from.get(u)
        if d is None:
            d = shortest_path(self.csgraph(), unweighted=True, indices=u)
            d.setflags(write=False)
            self._dist_from[u] = d
        return d

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.names).encode())
        for out in self.adjacency:
            h.update(np.int64(len(out)).tobytes())
            h.update(out.astype(np.int64).tobytes())
        return h.hexdigest()

    def base_mdp(self, gamma: float = DEFAULT_GAMMA) -> TabularMdp:
        """Goal-free navigation MDP; every node needs at least one out-link."""
        mdp = self._mdps.get(("base", gamma))
        if mdp is None:
            triples = [(u, k, int(v), 1.0) for u, out in enumerate(self.adjacency) for k, v in enumerate(out)]
            mdp = TabularMdp.from_triples(self.n_nodes, max(self.max_out_degree, 1), triples, (), gamma)
            self._mdps[("base", gamma)] = mdp
        return mdp

    def goal_mdp(self, goal: int, gamma: float = DEFAULT_GAMMA) -> TabularMdp:
        key = (goal, gamma)
        mdp = self._mdps.get(key)
        if mdp is None:
            mdp = self.base_mdp(gamma).with_terminal([goal])
            if len(self._mdps) > 256:
                self._mdps.clear()
            self._mdps[key] = mdp
        return mdp

    def trajectory(self, nodes: Sequence[int], id: str | None = None) -> ActionTrajectory:
        nodes = [int(u) for u in nodes]
        return ActionTrajectory(nodes, [self.action_of(u, v) for u, v in zip(nodes, nodes[1:])], id)

    def subgraph(self, keep: Iterable[int]) -> tuple["ArticleGraph", dict]:
        """Induced subgraph on ``keep`` (original order) and the old-to-new id map."""
        keep = sorted(set(int(u) for u in keep))
        remap = {u: i for i, u in enumerate(keep)}
        adj = [[remap[int(v)] for v in self.adjacency[u] if int(v) in remap] for u in keep]
        return ArticleGraph(tuple(self.names[u] for u in keep), tuple(adj)), remap

    def to_json(self) -> dict:
        return {"names": list(self.names), "adjacency": [a.tolist() for a in self.adjacency]}

    @classmethod
    def from_json(cls, data: Mapping) -> "ArticleGraph":
        return cls(tuple(data["names"]), tuple(data["adjacency"]))


@dataclass(frozen=True)
class PathRecord:
    articles: tuple
    split: str = "train"
    id: str = ""

    @property
    def goal(self) -> int:
        return self.articles[-1]

    @property
    def n_steps(self) -> int:
        return len(self.articles) - 1


class GoalReward(RewardParams):
    """-1 per click, +20 for the click that enters the goal."""

    def __init__(self, goal: int, name: str | None = None):
        self.goal = int(goal)
        self.id = f"goal:{name if name is not None else goal}"

    def reward(self, state, action, next_state):
        next_state = np.asarray(next_state)
        return np.where(next_state == self.goal, GOAL_REWARD, STEP_REWARD)


@dataclass(frozen=True)
class Hyperparams:
    beta: float
    m: int = 0
    beta_o: float = DEFAULT_BETA_O
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.beta < 0 or self.beta_o < 0:
            raise ValueError("rationality parameters must be non-negative")
        if self.m < 0:
            raise ValueError("m must be non-negative")


def build_nav_mdp(graph: ArticleGraph, goal: int, gamma: float = DEFAULT_GAMMA):
    """``(mdp, reward)`` for navigating to ``goal``."""
    return graph.goal_mdp(goal, gamma), GoalReward(goal, graph.names[goal])


# -- ingestion ---------------------------------------------------------------

@dataclass
class IngestReport:
    malformed_rows: int = 0
    unknown_links: int = 0
    back_clicks: int = 0
    unresolved_names: int = 0
    dead_end_nodes: int = 0
    dead_end_paths: int = 0
    too_long: int = 0
    too_short: int = 0
    kept: int = 0

    def log(self) -> None:
        for key, value in asdict(self).items():
            if value and key != "kept":
                logger.warning("ingest: %s = %d", key, value)


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.strip() and not line.startswith("#"):
                yield line


def prune_dead_ends(graph: ArticleGraph, paths: Sequence[Sequence[int]]):
    """Iteratively remove nodes without out-links, then drop paths that used them.

    Returns ``(graph, paths, n_removed_nodes, n_dropped_paths)``; surviving
    paths are re-indexed into the new graph.
    """
    graph, kept, _, n_dead = _prune(graph, paths)
    return graph, kept, n_dead, len(paths) - len(kept)


def _prune(graph, paths):
    alive = np.ones(graph.n_nodes, dtype=bool)
    while True:
        deg = np.array([alive[a].sum() for a in graph.adjacency])
        dead = alive & (deg == 0)
        if not dead.any():
            break
        alive &= ~dead
    new_graph, remap = graph.subgraph(np.flatnonzero(alive))
    idx = [i for i, p in enumerate(paths) if all(alive[u] for u in p)]
    return new_graph, [[remap[u] for u in paths[i]] for i in idx], idx, int((~alive).sum())


def _filter(graph, paths, max_steps, report):
    graph, pruned, idx, n_dead = _prune(graph, paths)
    report.dead_end_nodes += n_dead
    report.dead_end_paths += len(paths) - len(pruned)
    out, kept_idx = [], []
    for i, p in zip(idx, pruned):
        if len(p) < 2:
            report.too_short += 1
        elif len(p) - 1 > max_steps:
            report.too_long += 1
        elif not all(graph.has_edge(u, v) for u, v in zip(p, p[1:])):
            report.unknown_links += 1
        else:
            out.append(p)
            kept_idx.append(i)
    return graph, out, kept_idx


def filter_paths(graph: ArticleGraph, paths: Sequence[Sequence[int]], max_steps: int = MAX_PATH_STEPS,
                 report: IngestReport | None = None):
    """Apply the dead-end, edge and length filters; idempotent."""
    report = report if report is not None else IngestReport()
    graph, out, _ = _filter(graph, paths, max_steps, report)
    return graph, out, report


def split_paths(paths: Sequence[Sequence[int]], seed: int) -> list[PathRecord]:
    """Seeded even split: a random half (rounded down) goes to test."""
    rng = np.random.default_rng([seed, zlib.crc32(b"split")])
    order = rng.permutation(len(paths))
    test = set(order[: len(paths) // 2].tolist())
    return [PathRecord(tuple(p), "test" if i in test else "train", f"path-{i}") for i, p in enumerate(paths)]


def ingest_dataset(articles_file, links_file, paths_file, seed: int = 0,
                   max_steps: int = MAX_PATH_STEPS) -> tuple[ArticleGraph, list[PathRecord], IngestReport]:
    """Read and filter a Wikispeedia-format dataset."""
    report = IngestReport()
    try:
        names = [unquote(line.strip()) for line in _data_lines(articles_file)]
    except OSError as err:
        raise DataError(f"cannot read articles file: {err}") from err
    if not names:
        raise DataError("no articles found")
    index = {n: i for i, n in enumerate(names)}
    if len(index) != len(names):
        raise DataError("duplicate article names")
    edges = []
    for line in _data_lines(links_file):
        parts = line.split("\t")
        if len(parts) != 2:
            report.malformed_rows += 1
            continue
        u, v = index.get(unquote(parts[0])), index.get(unquote(parts[1]))
        if u is None or v is None:
            report.unknown_links += 1
            continue
        edges.append((u, v))
    graph = ArticleGraph.from_edges(names, edges)
    raw_paths = []
    for line in _data_lines(paths_file):
        parts = line.split("\t")
        if len(parts) < 4:
            report.malformed_rows += 1
            continue
        steps = parts[3].split(";")
        if "<" in steps:
            report.back_clicks += 1
            continue
        try:
            raw_paths.append([index[unquote(s)] for s in steps])
        except KeyError:
            report.unresolved_names += 1
    graph, kept, report = filter_paths(graph, raw_paths, max_steps, report)
    report.kept = len(kept)
    report.log()
    return graph, split_paths(kept, seed), report


def write_paths(path, records: Sequence[PathRecord], graph: ArticleGraph) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "split": r.split, "articles": [graph.names[u] for u in r.articles]}) + "\n")


def read_paths(path, graph: ArticleGraph) -> list[PathRecord]:
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(PathRecord(tuple(graph.node(a) for a in d["articles"]), d["split"], d.get("id", "")))
            except (KeyError, ValueError) as err:
                raise DataError(f"{path}:{i + 1}: {err}") from err
    return out


# -- options and solutions ----------------------------------------------------

def nav_option_library(graph: ArticleGraph, destinations: Iterable[int], beta_o: float = DEFAULT_BETA_O,
                       gamma: float = DEFAULT_GAMMA) -> list[OptionSpec]:
    """Atomic link options plus Boltzmann goto options, built on the goal-free graph.

    Goto options do not depend on the navigation goal, so one library serves
    every candidate goal.
    """
    base = graph.base_mdp(gamma)
    lib = atomic_options(base, [f"link{k}" for k in range(base.n_actions)])
    for d in destinations:
        lib.append(goto_option(base, [int(d)], "boltzmann", beta_o, id=f"goto:{graph.names[d]}",
                               label=graph.names[d]))
    return lib


def node_frequencies(paths: Iterable[PathRecord]) -> Counter:
    """Visits of every node across paths, start and goal included."""
    counts: Counter = Counter()
    for p in paths:
        counts.update(p.articles)
    return counts


def top_m_destinations(graph: ArticleGraph, train_paths: Iterable[PathRecord], m: int) -> list[int]:
    counts = node_frequencies(train_paths)
    ranked = sorted(counts, key=lambda u: (-counts[u], graph.names[u]))
    return ranked[:m]


def top_m_option_library(graph: ArticleGraph, train_paths: Iterable[PathRecord], m: int,
                         beta_o: float = DEFAULT_BETA_O, gamma: float = DEFAULT_GAMMA) -> list[OptionSpec]:
    return nav_option_library(graph, top_m_destinations(graph, train_paths, m), beta_o, gamma)


def _library_digest(options: Sequence[OptionSpec]) -> str:
    h = hashlib.sha256()
    for o in options:
        h.update(o.id.encode())
        h.update(b"\0")
        h.update(repr(o.beta_o).encode())
    return h.hexdigest()


class GoalSolver:
    """Per-goal soft solutions for one graph, option library and hyperparameters.

    Solutions live in memory and, when ``cache_dir`` is set, in versioned
    ``.npz`` files whose metadata ties them to the graph, library and
    hyperparameters; a file built for anything else is refused.
    """

    def __init__(self, graph: ArticleGraph, options: Sequence[OptionSpec], hyper: Hyperparams,
                 cache_dir=None, tolerance: float = 1e-8, max_iters: int = 10_000):
        self.graph = graph
        self.options = OptionSetIndex(options)
        self.hyper = hyper
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.tolerance, self.max_iters = tolerance, max_iters
        self.graph_hash = graph.fingerprint()
        self.library_hash = _library_digest(self.options)
        self._solutions: dict[int, SoftSolution] = {}
        self.n_solved = 0

    def meta(self, goal: int) -> dict:
        return {"version": CACHE_VERSION, "graph": self.graph_hash, "library": self.library_hash,
                "goal": int(goal), "beta": self.hyper.beta, "beta_o": self.hyper.beta_o,
                "gamma": self.hyper.gamma, "m": self.hyper.m}

    def cache_path(self, goal: int) -> Path:
        key = hashlib.sha256(json.dumps({k: v for k, v in self.meta(goal).items() if k != "graph"},
                                        sort_keys=True).encode()).hexdigest()[:20]
        return self.cache_dir / f"goal-{goal}-{key}.npz"

    def solve(self, goal: int) -> SoftSolution:
        mdp, reward = build_nav_mdp(self.graph, goal, self.hyper.gamma)
        stack = OptionModelBuilder(self.options, mdp).stack(reward)
        self.n_solved += 1
        return soft_value_iteration(mdp, stack, reward, self.hyper.beta, self.tolerance, self.max_iters)

    def save(self, goal: int, sol: SoftSolution) -> None:
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = self.cache_path(goal).with_suffix(".tmp.npz")
        np.savez(tmp, v=sol.v, q=sol.q, policy=sol.policy, initiable=sol.initiable,
                 option_ids=np.array(sol.option_ids), converged=sol.converged, n_iter=sol.n_iter,
                 residual=sol.residual, meta=json.dumps(self.meta(goal), sort_keys=True))
        tmp.replace(self.cache_path(goal))

    def load(self, goal: int) -> SoftSolution | None:
        path = self.cache_path(goal)
        if not path.exists():
            return None
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            if meta != self.meta(goal):
                raise CacheMismatchError(f"{path} was built for a different graph or configuration")
            return SoftSolution(v=data["v"], q=data["q"], policy=data["policy"], initiable=data["initiable"],
                                option_ids=tuple(str(x) for x in data["option_ids"]), beta=self.hyper.beta,
                                converged=bool(data["converged"]), n_iter=int(data["n_iter"]),
                                residual=float(data["residual"]))

    def __call__(self, goal: int) -> SoftSolution:
        goal = int(goal)
        sol = self._solutions.get(goal)
        if sol is None:
            sol = self.load(goal) if self.cache_dir is not None else None
            if sol is None:
                sol = self.solve(goal)
                if self.cache_dir is not None:
                    self.save(goal, sol)
            self._solutions[goal] = sol
        return sol

    def precompute(self, goals: Iterable[int]) -> dict[int, SoftSolution]:
        return {int(g): self(g) for g in sorted(set(int(g) for g in goals))}


def precompute_goal_solutions(graph: ArticleGraph, candidate_goals: Iterable[int], options: Sequence[OptionSpec],
                              hyper: Hyperparams, cache_dir=None) -> GoalSolver:
    solver = GoalSolver(graph, options, hyper, cache_dir)
    solver.precompute(candidate_goals)
    return solver


# -- likelihoods and evaluation -----------------------------------------------

def path_log_likelihood(solver: GoalSolver, nodes: Sequence[int], goal: int, open_end: bool = False) -> float:
    """``log P(u_1..u_k | goal)``; a single node has probability 1."""
    if len(nodes) < 2:
        return 0.0
    mdp = solver.graph.goal_mdp(goal, solver.hyper.gamma)
    traj = solver.graph.trajectory(nodes)
    return SegmentLattice(traj, solver.options, mdp.terminal, open_end).log_marginal(solver(goal))


@dataclass(frozen=True)
class NlmlResult:
    total: float
    mean: float
    n_paths: int


def nlml(solver: GoalSolver, train_paths: Sequence[PathRecord]) -> NlmlResult:
    """Negative log marginal likelihood of complete paths, each under its own goal."""
    if not train_paths:
        raise ValueError("no paths")
    total = -sum(path_log_likelihood(solver, p.articles, p.goal) for p in train_paths)
    return NlmlResult(float(total), float(total / len(train_paths)), len(train_paths))


def distractor_candidates(graph: ArticleGraph, prefix: Sequence[int], goal: int) -> np.ndarray:
    """Unvisited nodes other than ``goal`` at the goal's hop distance from the last observed node."""
    d = graph.distances_from(prefix[-1])
    if not np.isfinite(d[goal]):
        return np.zeros(0, dtype=int)
    mask = d == d[goal]
    mask[goal] = False
    mask[list(prefix)] = False
    return np.flatnonzero(mask)


def distractor_rng(seed: int, path_id: str, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(b"distractor"), zlib.crc32(path_id.encode()), k])


@dataclass(frozen=True)
class PairedOutcome:
    score: float | None  # 1 win, 0.5 tie, 0 loss, None skipped
    log_ratio: float
    distractor: int | None


def paired_goal_prediction(solver: GoalSolver, path: PathRecord, k: int, seed: int) -> PairedOutcome:
    """Compare the true goal with a random equidistant distractor after ``k`` observed nodes."""
    n = len(path.articles)
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    prefix = path.articles[:k]
    cands = distractor_candidates(solver.graph, prefix, path.goal)
    if cands.size == 0:
        return PairedOutcome(None, float("nan"), None)
    other = int(cands[distractor_rng(seed, path.id, k).integers(cands.size)])
    lt = path_log_likelihood(solver, prefix, path.goal, open_end=True)
    lo = path_log_likelihood(solver, prefix, other, open_end=True)
    if lt == lo:
        return PairedOutcome(0.5, 0.0, other)
    ratio = lt - lo if np.isfinite(lt) or np.isfinite(lo) else float("nan")
    return PairedOutcome(1.0 if lt > lo else 0.0, ratio, other)


def posterior_ratio(solver: GoalSolver, prefix: Sequence[int], goal: int, other: int) -> float:
    """``P(goal | prefix) / P(other | prefix)`` under a uniform prior on the two."""
    log_w = [path_log_likelihood(solver, prefix, g, open_end=True) for g in (goal, other)]
    post = PosteriorTable.from_log_weights((goal, other), log_w)
    return float(post.mass[0] / post.mass[1])


@dataclass
class AccuracyTable:
    """Paired-prediction outcomes keyed by ``(n, k)``."""

    cells: dict = field(default_factory=dict)

    def add(self, n: int, k: int, outcome: PairedOutcome) -> None:
        c = self.cells.setdefault((n, k), {"wins": 0, "ties": 0, "losses": 0, "skipped": 0})
        key = {None: "skipped", 1.0: "wins", 0.5: "ties", 0.0: "losses"}[outcome.score]
        c[key] += 1

    def rows(self) -> list[dict]:
        out = []
        for (n, k) in sorted(self.cells):
            c = self.cells[(n, k)]
            m = c["wins"] + c["ties"] + c["losses"]
            acc = (c["wins"] + 0.5 * c["ties"]) / m if m else float("nan")
            out.append({"n": n, "k": k, **c, "accuracy": acc})
        return out

    @property
    def accuracy(self) -> float:
        """Mean score over every evaluated (path, k) pair."""
        wins = sum(c["wins"] + 0.5 * c["ties"] for c in self.cells.values())
        m = sum(c["wins"] + c["ties"] + c["losses"] for c in self.cells.values())
        return wins / m if m else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["n", "k", "wins", "ties", "losses", "skipped", "accuracy"])
            w.writeheader()
            for r in self.rows():
                w.writerow({**r, "accuracy": repr(r["accuracy"])})


def evaluate_paired_accuracy(solver: GoalSolver, test_paths: Sequence[PathRecord], seed: int,
                             ks: Iterable[int] | None = None) -> AccuracyTable:
    """Paired prediction for every test path and every ``1 <= k < n`` (or the given ``ks``)."""
    table = AccuracyTable()
    for p in test_paths:
        n = len(p.articles)
        for k in (range(1, n) if ks is None else [k for k in ks if 1 <= k < n]):
            table.add(n, k, paired_goal_prediction(solver, p, k, seed))
    return table


def sweep(graph: ArticleGraph, train_paths: Sequence[PathRecord], beta_grid: Iterable[float],
          m_grid: Iterable[int], beta_o: float = DEFAULT_BETA_O, gamma: float = DEFAULT_GAMMA,
          cache_dir=None) -> list[dict]:
    """NLML over a ``(beta, m)`` grid; the top-m library is rebuilt per ``m``."""
    goals = sorted({p.goal for p in train_paths})
    rows = []
    for m in m_grid:
        lib = top_m_option_library(graph, train_paths, m, beta_o, gamma)
        for beta in beta_grid:
            solver = GoalSolver(graph, lib, Hyperparams(beta, m, beta_o, gamma), cache_dir)
            solver.precompute(goals)
            res = nlml(solver, train_paths)
            rows.append({"beta": beta, "m": m, "nlml_total": res.total, "nlml_mean": res.mean})
    return rows


def sweep_argmin(rows: Sequence[dict]) -> dict:
    return min(rows, key=lambda r: (r["nlml_total"], r["m"], r["beta"]))


def write_sweep_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["beta", "m", "nlml_total", "nlml_mean"])
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# -- synthetic corpora -------------------------------------------------------

def synthetic_hub_graph(n_nodes: int = 200, n_hubs: int = 10, out_degree: int = 4, hub_links: int = 25,
                        hub_inlinks: bool = True, seed: int = 0) -> tuple[ArticleGraph, list[int]]:
    """Random directed graph where a few hub nodes act as crossroads.

    Ordinary nodes link to ``out_degree`` random nodes and, with
    ``hub_inlinks``, to one random hub; hubs link to ``hub_links`` random
    nodes and to each other. A directed cycle through all nodes keeps the
    graph strongly connected.
    """
    rng = np.random.default_rng([seed, zlib.crc32(b"hub-graph")])
    hubs = sorted(rng.choice(n_nodes, size=n_hubs, replace=False).tolist())
    order = rng.permutation(n_nodes)
    adj: list[set] = [set() for _ in range(n_nodes)]
    for a, b in zip(order, np.roll(order, -1)):
        adj[a].add(int(b))
    for u in range(n_nodes):
        if u in hubs:
            adj[u].update(int(v) for v in rng.choice(n_nodes, size=hub_links, replace=False))
            adj[u].update(hubs)
        else:
            adj[u].update(int(v) for v in rng.choice(n_nodes, size=out_degree, replace=False))
            if hub_inlinks:
                adj[u].add(int(hubs[rng.integers(n_hubs)]))
        adj[u].discard(u)
    names = [f"hub{u:03d}" if u in hubs else f"page{u:03d}" for u in range(n_nodes)]
    return ArticleGraph(tuple(names), tuple(sorted(a) for a in adj)), hubs


def simulate_navigation_corpus(graph: ArticleGraph, options: Sequence[OptionSpec], hyper: Hyperparams,
                               n_paths: int, seed: int, min_distance: int = 3,
                               max_steps: int = MAX_PATH_STEPS) -> list[list[int]]:
    """Finished paths of a hierarchical Boltzmann navigator with random start and goal pairs.

    Runs that exceed ``max_steps`` are discarded, as in the real data.
    """
    rng = np.random.default_rng([seed, zlib.crc32(b"nav-corpus")])
    solver = GoalSolver(graph, options, hyper)
    out = []
    attempts = 0
    while len(out) < n_paths:
        attempts += 1
        if attempts > 50 * n_paths:
            raise RuntimeError("could not generate enough finished paths")
        goal = int(rng.integers(graph.n_nodes))
        start = int(rng.integers(graph.n_nodes))
        if graph.distances_from(start)[goal] < min_distance:
            continue
        mdp = graph.goal_mdp(goal, hyper.gamma)
        (traj,) = simulate_agent(mdp, options, solver(goal), lambda _: start, rng, 1, max_steps)
        if not traj.truncated:
            out.append(list(traj.states))
    return out


def synthetic_corpus(n_nodes: int = 200, n_hubs: int = 10, n_paths: int = 400, beta: float = 0.5,
                     beta_o: float = DEFAULT_BETA_O, seed: int = 0):
    """``(graph, hubs, records)`` for a hub graph and its hierarchical navigation corpus."""
    graph, hubs = synthetic_hub_graph(n_nodes, n_hubs, seed=seed)
    lib = nav_option_library(graph, hubs, beta_o)
    paths = simulate_navigation_corpus(graph, lib, Hyperparams(beta, len(hubs), beta_o), n_paths, seed)
    return graph, hubs, split_paths(paths, seed)


def extract_subgraph(graph: ArticleGraph, paths: Sequence[PathRecord], n_nodes: int,
                     max_steps: int = MAX_PATH_STEPS) -> tuple[ArticleGraph, list[PathRecord]]:
    """Desk-scale reduction: keep the ``n_nodes`` highest-degree nodes and the paths inside them.

    Degree is in plus out; ties go to the smaller node id. Dead ends created by
    the cut are pruned as during ingestion; surviving paths keep their split
    and id.
    """
    indeg = np.bincount(np.concatenate(graph.adjacency).astype(int), minlength=graph.n_nodes) \
        if graph.n_edges else np.zeros(graph.n_nodes, dtype=int)
    deg = indeg + np.array([len(a) for a in graph.adjacency])
    keep = sorted(np.argsort(-deg, kind="stable")[:n_nodes].tolist())
    sub, remap = graph.subgraph(keep)
    inside = [p for p in paths if all(u in remap for u in p.articles)]
    mapped = [[remap[u] for u in p.articles] for p in inside]
    sub, kept, idx = _filter(sub, mapped, max_steps, IngestReport())
    return sub, [PathRecord(tuple(p), inside[i].split, inside[i].id) for p, i in zip(kept, idx)]
