"""Command line front end.

Every subcommand reads an optional JSON config (``--config``) whose keys are
the long flag names with dashes replaced by underscores; flags given on the
command line win over config values. Outputs go to ``--out`` together with a
``manifest.json`` recording the resolved config, its hash, the package
version and the wall time. The manifest is the only output that varies
between identical runs.

Exit codes: 0 success, 2 configuration error, 3 capacity error, 4 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .exceptions import CapacityError, ContractError, DataError, DegenerateEvidenceError

logger = logging.getLogger("bihrl")

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_DATA = 0, 2, 3, 4


class ConfigError(ValueError):
    """A missing, unknown or invalid configuration field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _package_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


# -- option declarations -----------------------------------------------------

def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


# name -> (type, default, help); a None default makes the field mandatory
COMMON = {
    "seed": (int, None, "root seed for every random substream"),
    "out": (str, None, "output directory"),
}

COMMANDS = {
    "taxi-simulate": {
        "theta": (str, "2,2", "true free cells as 'x,y;x,y' (empty for the classic reward)"),
        "beta": (float, 0.8, "agent rationality"),
        "options": (str, "default", "'default' (atomic plus goto R1 and B1) or 'atomic'"),
        "n_trajectories": (int, 5, "number of trajectories"),
        "max_steps": (int, 200, "truncation length"),
    },
    "taxi-infer": {
        "trajectories": (str, None, "trajectory JSONL file"),
        "theta": (str, "2,2", "reward the reduced support is built around"),
        "beta": (float, 0.8, "agent rationality assumed by the model"),
        "options": (str, "default", "'default' or 'atomic'"),
        "support_size": (int, 500, "reduced support size"),
        "method": (str, "dp", "'dp' or 'enumerate'"),
        "prune_below": (float, 0.0, "enumeration pruning threshold"),
        "max_paths": (int, 1_000_000, "enumeration cap on partial option paths"),
    },
    "taxi-trend": {
        "theta": (str, "", "true free cells (empty for the classic reward)"),
        "beta": (float, 0.8, "agent rationality"),
        "n_seeds": (int, 20, "independent trajectory sets"),
        "n_trajectories": (int, 5, "trajectories per set"),
        "support_size": (int, 500, "reduced support size"),
    },
    "taxi-mcmc": {
        "trajectories": (str, "", "trajectory JSONL file; simulated from --theta when empty"),
        "theta": (str, "", "true free cells (empty for the classic reward)"),
        "beta": (float, 0.8, "agent rationality"),
        "n_trajectories": (int, 5, "trajectories to simulate when no file is given"),
        "support_size": (int, 500, "reduced support size"),
        "n_samples": (int, 5000, "recorded chain length"),
        "burn_in": (int, -1, "discarded steps (-1: a fifth of n_samples)"),
        "max_options": (int, 3, "largest option set in the prior"),
        "flat": (bool, False, "pin the option set to empty (flat IRL)"),
    },
    "wiki-ingest": {
        "articles": (str, "", "articles TSV"),
        "links": (str, "", "links TSV"),
        "paths": (str, "", "finished-paths TSV"),
        "synthetic_nodes": (int, 0, "generate a synthetic hub corpus of this many nodes instead"),
        "synthetic_paths": (int, 300, "synthetic corpus size"),
        "synthetic_beta": (float, 0.5, "synthetic agent rationality"),
        "synthetic_hubs": (int, 10, "synthetic goto destinations"),
        "subgraph": (int, 0, "keep only this many highest-degree nodes (0: all)"),
        "max_steps": (int, 20, "longest path kept"),
    },
    "wiki-sweep": {
        "graph": (str, None, "graph JSON from wiki-ingest"),
        "paths": (str, None, "paths JSONL from wiki-ingest"),
        "beta_grid": (_floats, "0.2,0.4,0.6", "comma-separated beta values"),
        "m_grid": (_ints, "0,50,100,150,200", "comma-separated option counts"),
        "beta_o": (float, 3.0, "option rationality"),
        "cache_dir": (str, "", "solution cache directory"),
    },
    "wiki-eval": {
        "graph": (str, None, "graph JSON from wiki-ingest"),
        "paths": (str, None, "paths JSONL from wiki-ingest"),
        "beta": (float, 0.4, "agent rationality"),
        "m": (int, 150, "goto options (top-m pages)"),
        "beta_o": (float, 3.0, "option rationality"),
        "cache_dir": (str, "", "solution cache directory"),
    },
    "toy-oracle-check": {
        "n_mdps": (int, 50, "random MDPs for the reduction identity"),
        "n_instances": (int, 200, "random instances for DP against enumeration"),
        "n_options": (int, 3, "random options for the Monte-Carlo model check"),
        "n_rollouts": (int, 100_000, "rollouts per option"),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bihrl", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fields in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        for key, (kind, _, help_text) in {**COMMON, **fields}.items():
            flag = "--" + key.replace("_", "-")
            if kind is bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=help_text)
            else:
                p.add_argument(flag, dest=key, default=None, help=help_text)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and flags; convert types and check required fields."""
    fields = {**COMMON, **COMMANDS[args.command]}
    file_values = {}
    if args.config:
        try:
            file_values = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as err:
            raise ConfigError("config", str(err)) from err
        if not isinstance(file_values, dict):
            raise ConfigError("config", "must be a JSON object")
        unknown = sorted(set(file_values) - set(fields))
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
    cfg = {}
    for key, (kind, default, _) in fields.items():
        raw = getattr(args, key)
        if raw is None:
            raw = file_values.get(key, default)
        if raw is None:
            raise ConfigError(key, "is required")
        try:
            cfg[key] = bool(raw) if kind is bool else kind(raw)
        except (TypeError, ValueError) as err:
            raise ConfigError(key, f"invalid value {raw!r}") from err
    if cfg["seed"] < 0:
        raise ConfigError("seed", "must be non-negative")
    for key in ("trajectories", "articles", "links", "paths", "graph"):
        if cfg.get(key) and not Path(cfg[key]).exists():
            raise ConfigError(key, f"file not found: {cfg[key]}")
    cfg["command"] = args.command
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of the settings that determine the outputs (the output directory does not)."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


# -- subcommands -------------------------------------------------------------

def _theta(cfg):
    from .envs import taxi
    try:
        return taxi.TaxiTheta.from_id(cfg["theta"])
    except (ValueError, IndexError) as err:
        raise ConfigError("theta", str(err)) from err


def _taxi_options(cfg, mdp):
    from .envs import taxi
    if cfg["options"] == "default":
        return taxi.default_taxi_options(mdp)
    if cfg["options"] == "atomic":
        return taxi.taxi_atomic_options(mdp)
    raise ConfigError("options", "must be 'default' or 'atomic'")


def _positive(cfg, *keys):
    for key in keys:
        if cfg[key] < 1:
            raise ConfigError(key, "must be positive")


def cmd_taxi_simulate(cfg, out: Path) -> dict:
    from .envs import taxi
    from .inference import write_trajectories
    from .seeding import SIMULATION, substream_seed

    _positive(cfg, "n_trajectories", "max_steps")
    mdp = taxi.taxi_mdp()
    trajs = taxi.simulate_hierarchical_agent(_theta(cfg), _taxi_options(cfg, mdp), cfg["beta"],
                                             substream_seed(cfg["seed"], SIMULATION), cfg["n_trajectories"],
                                             cfg["max_steps"])
    write_trajectories(out / "trajectories.jsonl", trajs)
    return {"trajectories.jsonl": "one JSON object per trajectory: states, actions, id, truncated"}


def cmd_taxi_infer(cfg, out: Path) -> dict:
    from .envs import taxi
    from .experiments import taxi_support
    from .inference import PosteriorTable, log_marginal_likelihood, read_trajectories, solve_for_theta
    from .options import OptionModelBuilder

    _positive(cfg, "support_size")
    if cfg["method"] not in ("dp", "enumerate"):
        raise ConfigError("method", "must be 'dp' or 'enumerate'")
    if cfg["prune_below"] > 0 and cfg["method"] != "enumerate":
        raise ConfigError("prune_below", "pruning needs method 'enumerate'")
    mdp = taxi.taxi_mdp()
    options = _taxi_options(cfg, mdp)
    trajs = _read_taxi_trajectories(cfg, mdp, read_trajectories)
    support, log_prior = taxi_support(_theta(cfg), cfg["support_size"], cfg["seed"])
    builder = OptionModelBuilder(options, mdp)
    log_lik = np.empty((len(support), len(trajs)))
    for i, theta in enumerate(support):
        sol = solve_for_theta(mdp, options, theta, cfg["beta"], builder=builder)
        for j, t in enumerate(trajs):
            log_lik[i, j] = log_marginal_likelihood(t, theta, options, cfg["beta"], mdp, cfg["method"],
                                                    cfg["prune_below"], sol, max_paths=cfg["max_paths"])
    post = PosteriorTable.from_log_weights([t.id for t in support], log_prior + log_lik.sum(axis=1))
    post.to_csv(out / "posterior.csv")
    return {"posterior.csv": "theta (free-cell id), mass (posterior probability)"}


def _read_taxi_trajectories(cfg, mdp, reader):
    try:
        trajs = reader(cfg["trajectories"])
    except (KeyError, ValueError) as err:
        raise DataError(f"{cfg['trajectories']}: {err}") from err
    if not trajs:
        raise DataError(f"{cfg['trajectories']}: no trajectories")
    for t in trajs:
        t.check(mdp)
    return trajs


def cmd_taxi_trend(cfg, out: Path) -> dict:
    from .experiments import taxi_trend

    _positive(cfg, "n_seeds", "n_trajectories", "support_size")
    res = taxi_trend(_theta(cfg), cfg["beta"], cfg["n_seeds"], cfg["n_trajectories"], cfg["support_size"],
                     cfg["seed"])
    res.to_csv(out / "trend.csv")
    return {"trend.csv": "n, bihrl_mean, bihrl_se, birl_mean, birl_se (posterior mass at the true reward)"}


def cmd_taxi_mcmc(cfg, out: Path) -> dict:
    from .envs import taxi
    from .experiments import taxi_joint_mcmc
    from .inference import read_trajectories

    _positive(cfg, "n_samples", "support_size", "n_trajectories")
    mdp = taxi.taxi_mdp()
    trajs = _read_taxi_trajectories(cfg, mdp, read_trajectories) if cfg["trajectories"] else None
    res = taxi_joint_mcmc(_theta(cfg), cfg["beta"], not cfg["flat"], cfg["n_trajectories"], cfg["support_size"],
                          cfg["n_samples"], None if cfg["burn_in"] < 0 else cfg["burn_in"], cfg["seed"],
                          cfg["max_options"], trajectories=trajs)
    universe = taxi.LAYOUT.option_destination_universe
    res.chain.to_csv(out / "chain.csv",
                     omega_label=lambda w: ";".join(f"{universe[i][0]},{universe[i][1]}" for i in sorted(w)))
    res.posterior.to_csv(out / "theta_posterior.csv")
    (out / "summary.json").write_text(json.dumps({
        "acceptance_rate": res.chain.acceptance_rate, "mass_at_truth": res.mass_at_truth,
        "n_samples": len(res.chain)}, indent=2, sort_keys=True) + "\n")
    return {"chain.csv": "step, theta, omega (goto cells), log_p, accepted",
            "theta_posterior.csv": "theta, mass (chain frequency with the option set marginalized)",
            "summary.json": "acceptance_rate, mass_at_truth, n_samples"}


def cmd_wiki_ingest(cfg, out: Path) -> dict:
    from dataclasses import asdict

    from .envs import graphnav as nav
    from .seeding import SPLIT, substream_seed

    if cfg["synthetic_nodes"] > 0:
        graph, hubs, records = nav.synthetic_corpus(cfg["synthetic_nodes"], cfg["synthetic_hubs"],
                                                    cfg["synthetic_paths"], cfg["synthetic_beta"],
                                                    seed=cfg["seed"])
        report = {"kept": len(records), "hubs": [graph.names[h] for h in hubs]}
    else:
        for key in ("articles", "links", "paths"):
            if not cfg[key]:
                raise ConfigError(key, "is required unless --synthetic-nodes is set")
        graph, records, rep = nav.ingest_dataset(cfg["articles"], cfg["links"], cfg["paths"],
                                                 substream_seed(cfg["seed"], SPLIT), cfg["max_steps"])
        report = asdict(rep)
    if cfg["subgraph"] > 0:
        graph, records = nav.extract_subgraph(graph, records, cfg["subgraph"], cfg["max_steps"])
        report["subgraph_nodes"] = graph.n_nodes
        report["subgraph_paths"] = len(records)
    (out / "graph.json").write_text(json.dumps(graph.to_json()) + "\n")
    nav.write_paths(out / "paths.jsonl", records, graph)
    (out / "ingest_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return {"graph.json": "names, adjacency (sorted out-neighbour ids)",
            "paths.jsonl": "id, split, articles", "ingest_report.json": "filter counts"}


def _load_nav(cfg):
    from .envs import graphnav as nav
    try:
        graph = nav.ArticleGraph.from_json(json.loads(Path(cfg["graph"]).read_text()))
    except (KeyError, ValueError) as err:
        raise DataError(f"{cfg['graph']}: {err}") from err
    records = nav.read_paths(cfg["paths"], graph)
    for r in records:
        graph.trajectory(r.articles)
    return graph, records


def cmd_wiki_sweep(cfg, out: Path) -> dict:
    from .envs import graphnav as nav

    if not cfg["beta_grid"] or not cfg["m_grid"]:
        raise ConfigError("beta_grid" if not cfg["beta_grid"] else "m_grid", "must not be empty")
    graph, records = _load_nav(cfg)
    train = [r for r in records if r.split == "train"]
    if not train:
        raise DataError("no training paths")
    rows = nav.sweep(graph, train, cfg["beta_grid"], cfg["m_grid"], cfg["beta_o"], cache_dir=cfg["cache_dir"] or None)
    nav.write_sweep_csv(out / "sweep.csv", rows)
    best = nav.sweep_argmin(rows)
    (out / "argmin.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    return {"sweep.csv": "beta, m, nlml_total, nlml_mean", "argmin.json": "grid point with the lowest NLML"}


def cmd_wiki_eval(cfg, out: Path) -> dict:
    from .envs import graphnav as nav
    from .seeding import DISTRACTOR, substream_seed

    graph, records = _load_nav(cfg)
    train = [r for r in records if r.split == "train"]
    test = [r for r in records if r.split == "test"]
    if not test:
        raise DataError("no test paths")
    lib = nav.top_m_option_library(graph, train, cfg["m"], cfg["beta_o"])
    solver = nav.GoalSolver(graph, lib, nav.Hyperparams(cfg["beta"], cfg["m"], cfg["beta_o"]),
                            cfg["cache_dir"] or None)
    table = nav.evaluate_paired_accuracy(solver, test, substream_seed(cfg["seed"], DISTRACTOR))
    table.to_csv(out / "accuracy.csv")
    summary = {"accuracy": table.accuracy, "n_test_paths": len(test)}
    if train:
        summary["nlml_train_mean"] = nav.nlml(solver, train).mean
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"accuracy.csv": "n, k, wins, ties, losses, skipped, accuracy (per path length and prefix)",
            "summary.json": "accuracy, n_test_paths, nlml_train_mean"}


def cmd_toy_oracle_check(cfg, out: Path) -> dict:
    from .toys import oracle_checks

    _positive(cfg, "n_mdps", "n_instances", "n_options", "n_rollouts")
    report = oracle_checks(cfg["seed"], cfg["n_mdps"], cfg["n_instances"], cfg["n_options"], cfg["n_rollouts"])
    (out / "oracle_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if not all(r["passed"] for r in report.values()):
        raise DataError("oracle check failed: " + ", ".join(k for k, r in report.items() if not r["passed"]))
    return {"oracle_report.json": "per check: passed, worst error, tolerance"}


HANDLERS = {
    "taxi-simulate": cmd_taxi_simulate,
    "taxi-infer": cmd_taxi_infer,
    "taxi-trend": cmd_taxi_trend,
    "taxi-mcmc": cmd_taxi_mcmc,
    "wiki-ingest": cmd_wiki_ingest,
    "wiki-sweep": cmd_wiki_sweep,
    "wiki-eval": cmd_wiki_eval,
    "toy-oracle-check": cmd_toy_oracle_check,
}


def run(cfg: dict) -> dict:
    """Execute a resolved config and write its manifest; returns the manifest."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    outputs = HANDLERS[cfg["command"]](cfg, out)
    manifest = {"config": cfg, "config_hash": config_hash(cfg), "version": _package_version(),
                "wall_time_s": round(time.perf_counter() - start, 3), "outputs": outputs}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(resolve_config(args))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as err:
        print(f"capacity error: {err}", file=sys.stderr)
        return EXIT_CAPACITY
    except (DataError, ContractError, DegenerateEvidenceError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
