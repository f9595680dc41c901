import math
import time

import numpy as np
import pytest

from bihrl.envs import graphnav as gn
from bihrl.exceptions import CacheMismatchError, ContractError
from bihrl.inference import ActionTrajectory
from bihrl.mdp import hard_value_iteration, soft_value_iteration_actions


def small_graph():
    # 0 -> 1 -> 2 -> 3, shortcuts 0 -> 2, 1 -> 3, 3 -> 0; 4 hangs off 2 and returns to 0
    edges = [(0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (3, 0), (2, 4), (4, 0)]
    return gn.ArticleGraph.from_edges(["a", "b", "c", "d", "e"], edges)


@pytest.fixture(scope="module")
def hub():
    graph, hubs = gn.synthetic_hub_graph(60, 4, out_degree=3, hub_links=10, seed=1)
    rng = np.random.default_rng(0)
    paths = []
    for i in range(12):
        goal = int(rng.integers(60))
        start = int(rng.integers(60))
        d = graph.distances_from(start)
        if start == goal or not np.isfinite(d[goal]):
            continue
        # walk a shortest path
        nodes = [start]
        while nodes[-1] != goal:
            u = nodes[-1]
            dg = [graph.distances_from(int(v))[goal] for v in graph.adjacency[u]]
            nodes.append(int(graph.adjacency[u][int(np.argmin(dg))]))
        paths.append(gn.PathRecord(tuple(nodes), "train" if i % 2 else "test", f"p{i}"))
    return graph, hubs, paths


class TestGraph:
    def test_local_action_indices(self):
        g = small_graph()
        assert g.action_of(0, 1) == 0 and g.action_of(0, 2) == 1
        assert g.max_out_degree == 2
        with pytest.raises(ContractError):
            g.action_of(0, 3)
        t = g.trajectory([0, 2, 3])
        assert t.actions == (1, 0)

    def test_base_mdp(self):
        g = small_graph()
        mdp = g.base_mdp()
        assert mdp.n_actions == 2 and not mdp.terminal.any()
        assert mdp.available.sum() == g.n_edges
        goal = g.goal_mdp(3)
        assert goal.terminal[3] and goal.terminal.sum() == 1

    def test_distances(self):
        g = small_graph()
        assert list(g.distances_from(0)) == [0, 1, 1, 2, 2]

    def test_fingerprint_and_json(self):
        g = small_graph()
        g2 = gn.ArticleGraph.from_json(g.to_json())
        assert g.fingerprint() == g2.fingerprint()
        assert small_graph().subgraph([0, 1, 2, 3])[0].fingerprint() != g.fingerprint()

    def test_goal_reward(self):
        r = gn.GoalReward(3)
        assert list(r.reward(np.array([2, 1]), np.array([0, 1]), np.array([3, 2]))) == [20.0, -1.0]


class TestIngest:
    def write(self, tmp_path):
        (tmp_path / "articles.tsv").write_text(
            "# articles\n\nA\nB%C3%A9\nC\nD\nE\nDead\nDeader\n")
        (tmp_path / "links.tsv").write_text(
            "# links\nA\tB%C3%A9\nB%C3%A9\tC\nC\tA\nC\tD\nD\tA\nA\tDead\nDead\tDeader\n"
            "E\tA\nA\tGhost\nbroken-row\n")
        (tmp_path / "paths.tsv").write_text(
            "# hashedIpAddress\ttimestamp\tduration\tpath\trating\n"
            "h\t1\t10\tA;B%C3%A9;C;D\t1\n"
            "h\t2\t10\tA;B%C3%A9;<;C\tNULL\n"
            "h\t3\t10\tA;Dead\t1\n"
            "h\t4\t10\tC;Unknown\t1\n"
            "h\t5\t10\tA\t1\n"
            "h\t6\t10\tC;A;B%C3%A9\t2\n"
            "h\t7\t10\tA;C\t2\n"
            "h\t8\t10\t" + ";".join(["A", "B%C3%A9", "C"] * 7 + ["A"]) + "\t3\n")
        return [tmp_path / f for f in ("articles.tsv", "links.tsv", "paths.tsv")]

    def test_ingest(self, tmp_path):
        graph, records, report = gn.ingest_dataset(*self.write(tmp_path), seed=0)
        assert set(graph.names) == {"A", "Bé", "C", "D", "E"}
        assert report.back_clicks == 1 and report.unresolved_names == 1
        assert report.dead_end_nodes == 2 and report.dead_end_paths == 1
        assert report.too_short == 1 and report.too_long == 1
        assert report.malformed_rows == 1 and report.unknown_links == 2  # Ghost link, A;C path
        paths = sorted(tuple(graph.names[u] for u in r.articles) for r in records)
        assert paths == [("A", "Bé", "C", "D"), ("C", "A", "Bé")]
        assert sorted(r.split for r in records) == ["test", "train"]

    def test_split_is_seeded(self):
        paths = [[i, i + 1] for i in range(11)]
        a, b = gn.split_paths(paths, 3), gn.split_paths(paths, 3)
        assert a == b and sum(r.split == "test" for r in a) == 5
        assert [r.split for r in gn.split_paths(paths, 4)] != [r.split for r in a]

    def test_dead_ends_removed_iteratively(self):
        # 3 -> 4 and 4 has no links: both go, and then 2 (which only linked to 3)
        g = gn.ArticleGraph.from_edges(list("ABCDE"), [(0, 1), (1, 0), (0, 2), (2, 3), (3, 4)])
        g2, paths, n_dead, n_dropped = gn.prune_dead_ends(g, [[0, 1, 0], [0, 2, 3]])
        assert g2.names == ("A", "B") and n_dead == 3 and n_dropped == 1
        assert paths == [[0, 1, 0]]

    def test_filter_idempotent(self, hub):
        graph, _, paths = hub
        raw = [list(p.articles) for p in paths] + [[0], list(range(25))]
        g1, p1, _ = gn.filter_paths(graph, raw, max_steps=6)
        g2, p2, rep = gn.filter_paths(g1, p1, max_steps=6)
        assert g1.fingerprint() == g2.fingerprint() and p1 == p2
        assert rep.too_long == rep.too_short == rep.dead_end_nodes == rep.unknown_links == 0

    def test_paths_jsonl_round_trip(self, tmp_path, hub):
        graph, _, paths = hub
        gn.write_paths(tmp_path / "p.jsonl", paths, graph)
        assert gn.read_paths(tmp_path / "p.jsonl", graph) == paths


class TestOptions:
    def test_top_m_counts_every_visit(self):
        g = gn.ArticleGraph.from_edges(list("abcd"), [(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)])
        paths = [gn.PathRecord((0, 1, 2)), gn.PathRecord((1, 3)), gn.PathRecord((3, 0, 1))]
        # visits: b=3, a=2, d=2, c=1; a beats d on name
        assert gn.top_m_destinations(g, paths, 3) == [1, 0, 3]
        lib = gn.top_m_option_library(g, paths, 2)
        assert [o.id for o in lib] == ["link0", "link1", "goto:b", "goto:a"]

    def test_goto_options_ignore_goal(self):
        g = small_graph()
        lib = gn.nav_option_library(g, [3])
        goto = lib[-1]
        assert goto.termination[3] == 1 and not goto.initiation[3]
        assert goto.initiation[[0, 1, 2, 4]].all()


class TestLikelihood:
    def test_beta_zero_atomic_is_log_out_degree(self, hub):
        graph, _, paths = hub
        solver = gn.GoalSolver(graph, gn.nav_option_library(graph, []), gn.Hyperparams(0.0, 0))
        train = paths[:4]
        expected = sum(math.log(len(graph.adjacency[u])) for p in train for u in p.articles[:-1])
        assert gn.nlml(solver, train).total == pytest.approx(expected, rel=1e-12)

    def test_forced_step_costs_nothing(self):
        g = gn.ArticleGraph.from_edges(list("abc"), [(0, 1), (1, 2), (1, 0), (2, 0)])
        solver = gn.GoalSolver(g, gn.nav_option_library(g, []), gn.Hyperparams(2.0, 0))
        assert gn.nlml(solver, [gn.PathRecord((0, 1))]).total == pytest.approx(0.0, abs=1e-12)

    def test_atomic_library_matches_action_model(self, hub):
        graph, _, paths = hub
        solver = gn.GoalSolver(graph, gn.nav_option_library(graph, []), gn.Hyperparams(0.7, 0))
        p = paths[0]
        mdp, reward = gn.build_nav_mdp(graph, p.goal)
        sol = soft_value_iteration_actions(mdp, reward, 0.7)
        t = graph.trajectory(p.articles)
        direct = sum(math.log(sol.policy[s, a]) for s, a in zip(t.states, t.actions))
        assert gn.path_log_likelihood(solver, p.articles, p.goal) == pytest.approx(direct, rel=1e-9)

    def test_posterior_ratio_identity(self, hub):
        graph, hubs, paths = hub
        solver = gn.GoalSolver(graph, gn.nav_option_library(graph, hubs), gn.Hyperparams(0.5, len(hubs)))
        p = next(p for p in paths if len(p.articles) >= 4)
        prefix = p.articles[:2]
        other = next(int(u) for u in gn.distractor_candidates(graph, prefix, p.goal))
        lt = gn.path_log_likelihood(solver, prefix, p.goal, open_end=True)
        lo = gn.path_log_likelihood(solver, prefix, other, open_end=True)
        assert gn.posterior_ratio(solver, prefix, p.goal, other) == pytest.approx(math.exp(lt - lo), rel=1e-9)

    def test_beta_zero_ratio_is_one(self, hub):
        graph, hubs, paths = hub
        solver = gn.GoalSolver(graph, gn.nav_option_library(graph, hubs), gn.Hyperparams(0.0, len(hubs)))
        for p in paths:
            for k in range(1, len(p.articles)):
                prefix = p.articles[:k]
                for other in gn.distractor_candidates(graph, prefix, p.goal)[:3]:
                    assert gn.posterior_ratio(solver, prefix, p.goal, int(other)) == 1.0
        table = gn.evaluate_paired_accuracy(solver, paths, seed=0)
        assert table.accuracy == 0.5


class TestPairedPrediction:
    def test_distractor_rules(self):
        g = small_graph()
        # from c (2): d and e are both one hop away
        assert list(gn.distractor_candidates(g, [0, 2], 3)) == [4]
        assert list(gn.distractor_candidates(g, [0, 2, 4], 3)) == []
        assert list(gn.distractor_candidates(g, [2], 3)) == [4]

    def test_seeded_and_skips(self):
        g = small_graph()
        solver = gn.GoalSolver(g, gn.nav_option_library(g, []), gn.Hyperparams(1.0, 0))
        p = gn.PathRecord((0, 2, 4), id="x")
        out = gn.paired_goal_prediction(solver, p, 2, seed=0)
        assert out.distractor == 3
        assert gn.paired_goal_prediction(solver, p, 2, seed=0) == out
        assert gn.paired_goal_prediction(solver, gn.PathRecord((0, 2, 3, 0)), 3, 0).score is None
        with pytest.raises(ValueError):
            gn.paired_goal_prediction(solver, p, 3, 0)

    def test_accuracy_table_csv(self, tmp_path, hub):
        graph, hubs, paths = hub
        solver = gn.GoalSolver(graph, gn.nav_option_library(graph, []), gn.Hyperparams(1.0, 0))
        table = gn.evaluate_paired_accuracy(solver, paths, seed=1)
        table.to_csv(tmp_path / "acc.csv")
        lines = (tmp_path / "acc.csv").read_text().splitlines()
        assert lines[0] == "n,k,wins,ties,losses,skipped,accuracy"
        assert len(lines) == 1 + len(table.rows())
        assert 0.5 < table.accuracy <= 1.0


class TestCache:
    def test_round_trip_and_speed(self, tmp_path):
        graph, hubs = gn.synthetic_hub_graph(200, 10, seed=0)
        lib = gn.nav_option_library(graph, hubs)
        hyper = gn.Hyperparams(0.5, len(hubs))
        goals = [3, 50, 120]
        t0 = time.perf_counter()
        cold = gn.precompute_goal_solutions(graph, goals, lib, hyper, tmp_path)
        t_cold = time.perf_counter() - t0
        t0 = time.perf_counter()
        warm = gn.precompute_goal_solutions(graph, goals, lib, hyper, tmp_path)
        t_warm = time.perf_counter() - t0
        assert warm.n_solved == 0 and cold.n_solved == len(goals)
        for g in goals:
            assert np.array_equal(cold(g).policy, warm(g).policy)
        assert t_cold > 10 * t_warm

    def test_mismatch_refused(self, tmp_path, hub):
        graph, hubs, paths = hub
        lib = gn.nav_option_library(graph, hubs)
        solver = gn.GoalSolver(graph, lib, gn.Hyperparams(0.5, len(hubs)), tmp_path)
        solver(paths[0].goal)
        other, _ = graph.subgraph(range(graph.n_nodes))
        other = gn.ArticleGraph(other.names[:-1] + ("renamed",), other.adjacency)
        stale = gn.GoalSolver(other, lib, gn.Hyperparams(0.5, len(hubs)), tmp_path)
        with pytest.raises(CacheMismatchError):
            stale(paths[0].goal)


class TestSweepAndSynthetic:
    def test_sweep_argmin(self, tmp_path, hub):
        graph, _, paths = hub
        rows = gn.sweep(graph, paths[:3], [0.0, 1.0], [0, 2])
        assert len(rows) == 4
        best = gn.sweep_argmin(rows)
        assert best["nlml_total"] == min(r["nlml_total"] for r in rows)
        gn.write_sweep_csv(tmp_path / "s.csv", rows)
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "beta,m,nlml_total,nlml_mean"

    def test_hub_graph_strongly_connected(self):
        graph, hubs = gn.synthetic_hub_graph(50, 3, seed=2)
        assert np.isfinite(graph.distances_from(0)).all()
        assert all(graph.names[h].startswith("hub") for h in hubs)

    def test_simulated_paths_are_valid(self, hub):
        graph, hubs, _ = hub
        lib = gn.nav_option_library(graph, hubs)
        paths = gn.simulate_navigation_corpus(graph, lib, gn.Hyperparams(1.0, len(hubs)), 5, seed=0)
        for p in paths:
            assert isinstance(graph.trajectory(p), ActionTrajectory) and len(p) - 1 <= gn.MAX_PATH_STEPS
        assert paths == gn.simulate_navigation_corpus(graph, lib, gn.Hyperparams(1.0, len(hubs)), 5, seed=0)

    def test_extract_subgraph(self, hub):
        graph, _, paths = hub
        sub, kept = gn.extract_subgraph(graph, paths, 30)
        assert sub.n_nodes <= 30
        for p in kept:
            sub.trajectory(p.articles)
        ids = {p.id for p in kept}
        assert ids <= {p.id for p in paths}


class TestNavMdp:
    def test_goal_value_and_neighbour(self):
        g = small_graph()
        mdp, reward = gn.build_nav_mdp(g, 3)
        v = hard_value_iteration(mdp, reward).v
        assert v[3] == 0.0
        # b links straight to d
        assert v[1] == pytest.approx(20.0)

    def test_soft_values_match_fixed_point_oracle(self):
        rng = np.random.default_rng(5)
        n = 10
        edges = {(u, (u + 1) % n) for u in range(n)}
        edges |= {(int(u), int(v)) for u, v in rng.integers(n, size=(20, 2)) if u != v}
        g = gn.ArticleGraph.from_edges([f"n{i}" for i in range(n)], sorted(edges))
        beta, goal = 0.8, 6
        solver = gn.GoalSolver(g, gn.nav_option_library(g, []), gn.Hyperparams(beta, 0))
        sol = solver(goal)
        # independent oracle: iterate the softmax-weighted Bellman backup over explicit edge lists
        v = np.zeros(n)
        for _ in range(5000):
            new = np.zeros(n)
            for u in range(n):
                if u == goal:
                    continue
                q = np.array([(20.0 if w == goal else -1.0) + 0.9 * v[w] for w in g.adjacency[u]])
                p = np.exp(beta * (q - q.max()))
                new[u] = float(p @ q / p.sum())
            if np.max(np.abs(new - v)) < 1e-13:
                break
            v = new
        assert np.allclose(sol.v, v, atol=1e-7)

    def test_solutions_do_not_depend_on_goal_order(self, hub):
        graph, hubs, _ = hub
        lib = gn.nav_option_library(graph, hubs)
        a = gn.precompute_goal_solutions(graph, [5, 9, 30], lib, gn.Hyperparams(0.5, 4))
        b = gn.precompute_goal_solutions(graph, [30, 5, 9], lib, gn.Hyperparams(0.5, 4))
        for goal in (5, 9, 30):
            assert np.array_equal(a(goal).v, b(goal).v)

    def test_large_beta_prefers_goal_on_shortest_route(self):
        # a -> b is a detour towards c (a links to c directly) but on a shortest route to d
        g = small_graph()
        solver = gn.GoalSolver(g, gn.nav_option_library(g, []), gn.Hyperparams(5.0, 0))
        out = gn.paired_goal_prediction(solver, gn.PathRecord((0, 1, 3), id="p"), 2, seed=0)
        assert out.distractor == 2 and out.score == 1.0
