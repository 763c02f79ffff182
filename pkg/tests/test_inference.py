import json
import time

import numpy as np
import pytest

from cgcontrol.errors import ArgumentError, InconsistentEvidenceError
from cgcontrol.inference import (branch_repropagate, build_clique_tree, check_tree,
                                 clique_log_masses, discrete_marginal, node_marginal, propagate)
from cgcontrol.model import DiscreteNode, Evidence, Network
from cgcontrol.potential import marginalize, to_moments
from cgcontrol.random_nets import random_evidence, random_network

from conftest import d_to_x, gaussian_chain
from oracles import enumerate_posterior, oracle_discrete_marginal, oracle_moments


class TestBuild:
    def test_single_discrete_node(self):
        tree = build_clique_tree(Network([DiscreteNode("A", ["x", "y"], [0.5, 0.5])]))
        assert tree.cliques == (("A",),)

    def test_discrete_to_continuous(self):
        tree = build_clique_tree(d_to_x())
        assert tree.cliques == (("D", "X"),)

    def test_fixture_structure(self, fixture_net):
        tree = build_clique_tree(fixture_net)
        assert check_tree(tree) == []
        order = tree.elimination_order
        first_discrete = min(i for i, v in enumerate(order) if fixture_net.is_discrete(v))
        assert all(not fixture_net.is_discrete(v) for v in order[:first_discrete])
        assert all(fixture_net.is_discrete(v) for v in order[first_discrete:])
        assert sorted(tree.assignment) == sorted(fixture_net.labels)

    def test_deterministic(self, fixture_net):
        assert build_clique_tree(fixture_net).to_json() == build_clique_tree(fixture_net).to_json()

    def test_random_nets_structure(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            net = random_network(rng)
            tree = build_clique_tree(net)
            assert check_tree(tree) == []
            # every clique is maximal
            sets = [set(c) for c in tree.cliques]
            assert not any(a < b for a in sets for b in sets)

    def test_query_set_shares_clique(self, fixture_net):
        tree = build_clique_tree(fixture_net, [("SS", "SCD")])
        assert any({"SS", "SCD"} <= set(c) for c in tree.cliques)

    def test_checker_detects_broken_order(self, fixture_net):
        tree = build_clique_tree(fixture_net)
        bad = type(tree)(tree.net, tree.cliques, tree.parent, tree.separators, tree.root, tree.assignment,
                         tuple(reversed(tree.elimination_order)))
        assert any("eliminated after a discrete" in p for p in check_tree(bad))

    def test_json_export(self, fixture_net):
        doc = json.loads(build_clique_tree(fixture_net).to_json())
        assert {"root", "cliques", "separators", "assignment"} <= set(doc)
        assert all(c["table_size"] >= 1 for c in doc["cliques"])


class TestPropagateOracles:
    def test_discrete_chain_prior(self):
        net = Network([DiscreteNode("A", ["x", "y"], [0.3, 0.7]),
                       DiscreteNode("B", ["x", "y"], [[0.9, 0.1], [0.2, 0.8]], ["A"])])
        cal = propagate(build_clique_tree(net))
        np.testing.assert_allclose(discrete_marginal(cal, ["A", "B"]),
                                   [[0.27, 0.03], [0.14, 0.56]], atol=1e-15)
        np.testing.assert_allclose(cal.log_likelihood, 0.0, atol=1e-14)

    def test_discrete_nets_match_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            net = random_network(rng, min_discrete=1, max_continuous=0, min_continuous=0)
            ev = random_evidence(net, rng, p_observe=0.3)
            cal = propagate(build_clique_tree(net), ev)
            en = enumerate_posterior(net, ev)
            np.testing.assert_allclose(cal.log_likelihood, en.log_evidence, atol=1e-10)
            for d in net.discrete_labels:
                np.testing.assert_allclose(node_marginal(cal, d),
                                           oracle_discrete_marginal(en, d, net.cardinality(d)), atol=1e-10)

    def test_gaussian_nets_match_conditioning(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            net = random_network(rng, max_discrete=0, min_continuous=2)
            ev = random_evidence(net, rng, p_observe=0.4, keep=(net.continuous_labels[-1],))
            cal = propagate(build_clique_tree(net), ev)
            en = enumerate_posterior(net, ev)
            np.testing.assert_allclose(cal.log_likelihood, en.log_evidence, rtol=1e-8, atol=1e-8)
            for x in en.continuous:
                mu, cov = oracle_moments(en, [x])
                got = node_marginal(cal, x)
                np.testing.assert_allclose(got.mean, mu, rtol=1e-8, atol=1e-8)
                np.testing.assert_allclose(got.cov, cov, rtol=1e-8, atol=1e-8)

    def test_gaussian_chain_closed_form(self):
        cal = propagate(build_clique_tree(gaussian_chain()), Evidence({}, {"Z": 0.0}))
        # joint: X ~ N(1,2); Y = .5 + 2X + e1 (1); Z = -1 - Y + e2 (.5)
        mx, my = 1.0, 2.5
        vx, vy = 2.0, 4 * 2.0 + 1.0
        cxy, vz = 2 * 2.0, vy + 0.5
        mz = -1 - my
        post_y = my + (-vy) / vz * (0.0 - mz)
        post_vy = vy - vy ** 2 / vz
        got = node_marginal(cal, "Y")
        np.testing.assert_allclose(got.mean, [post_y], rtol=1e-12)
        np.testing.assert_allclose(got.cov, [[post_vy]], rtol=1e-12)
        post_x = mx + (-cxy) / vz * (0.0 - mz)
        np.testing.assert_allclose(node_marginal(cal, "X").mean, [post_x], rtol=1e-12)

    def test_mixed_weak_moments_match_enumeration(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            net = random_network(rng, min_discrete=1)
            ev = random_evidence(net, rng)
            cal = propagate(build_clique_tree(net), ev)
            en = enumerate_posterior(net, ev)
            for d in net.discrete_labels:
                np.testing.assert_allclose(node_marginal(cal, d),
                                           oracle_discrete_marginal(en, d, net.cardinality(d)), atol=1e-9)
            for x in en.continuous:
                mu, cov = oracle_moments(en, [x])
                got = node_marginal(cal, x)
                np.testing.assert_allclose(got.mean, mu, rtol=1e-8, atol=1e-8)
                np.testing.assert_allclose(got.cov, cov, rtol=1e-8, atol=1e-8)


class TestCalibration:
    def test_separators_agree(self, fixture_net, fixture_evidence):
        tree = build_clique_tree(fixture_net)
        cal = propagate(tree, fixture_evidence.merge(Evidence({"CT": 1}, {"SS": 7.0})))
        for i, p in tree.edges():
            sep = [v for v in tree.separators[i] if v not in cal.evidence]
            if not sep:
                continue
            a = to_moments(marginalize(cal.potentials[i], sep))
            b = to_moments(marginalize(cal.potentials[p], sep))
            np.testing.assert_allclose(a.log_weight, b.log_weight, atol=1e-9)
            np.testing.assert_allclose(a.mean, b.mean, atol=1e-9)
            np.testing.assert_allclose(a.cov, b.cov, atol=1e-9)

    def test_likelihood_from_every_clique(self, fixture_net, fixture_evidence):
        cal = propagate(build_clique_tree(fixture_net), fixture_evidence.merge(Evidence({}, {"SS": 4.0})))
        for lm in clique_log_masses(cal).values():
            np.testing.assert_allclose(lm, cal.log_likelihood, atol=1e-9)

    def test_observed_nodes_report_evidence(self, fixture_net):
        cal = propagate(build_clique_tree(fixture_net), Evidence({"WC": 2}, {"ACD": 0.1}))
        np.testing.assert_array_equal(node_marginal(cal, "WC"), [0, 0, 1, 0, 0])
        assert node_marginal(cal, "ACD").mean[0] == 0.1

    def test_root_prior_without_evidence(self, fixture_net):
        cal = propagate(build_clique_tree(fixture_net))
        np.testing.assert_allclose(node_marginal(cal, "WC"), fixture_net.node("WC").cpt, atol=1e-12)

    def test_inconsistent_evidence(self):
        net = Network([DiscreteNode("A", ["x", "y"], [1.0, 0.0]),
                       DiscreteNode("B", ["x", "y"], [[1.0, 0.0], [0.5, 0.5]], ["A"])])
        with pytest.raises(InconsistentEvidenceError):
            propagate(build_clique_tree(net), Evidence({"B": 1}))

    def test_unknown_node(self, fixture_net):
        cal = propagate(build_clique_tree(fixture_net))
        with pytest.raises(ArgumentError):
            node_marginal(cal, "nope")


class TestBranch:
    def _branch(self, tree):
        return set(tree.path_to_root(tree.smallest_clique(["SCD", "SS"])))

    def test_whole_tree_equals_propagate(self, fixture_net, fixture_evidence):
        tree = build_clique_tree(fixture_net)
        cal = propagate(tree, fixture_evidence)
        delta = Evidence({"WC": 1})
        a = branch_repropagate(cal, range(len(tree.cliques)), delta)
        b = propagate(tree, fixture_evidence.merge(delta))
        np.testing.assert_allclose(a.log_likelihood, b.log_likelihood, atol=1e-10)
        for v in fixture_net.labels:
            ma, mb = node_marginal(a, v), node_marginal(b, v)
            if fixture_net.is_discrete(v):
                np.testing.assert_allclose(ma, mb, atol=1e-10)
            else:
                np.testing.assert_allclose(ma.mean, mb.mean, atol=1e-10)
                np.testing.assert_allclose(ma.cov, mb.cov, atol=1e-10)

    def test_boundary_instantiation_matches_full(self, fixture_net, fixture_evidence):
        tree = build_clique_tree(fixture_net, [("SS", "SCD")])
        cal = propagate(tree, fixture_evidence)
        for cfg in [(0, 0, 0, 0), (3, 1, 0, 1), (4, 1, 1, 1)]:
            delta = Evidence(dict(zip(("WC", "L", "M", "F"), cfg)))
            a = branch_repropagate(cal, self._branch(tree), delta)
            b = propagate(tree, fixture_evidence.merge(delta))
            np.testing.assert_allclose(a.log_likelihood, b.log_likelihood, atol=1e-10)
            for i in a.potentials:
                ma, mb = to_moments(a.potentials[i]), to_moments(b.potentials[i])
                np.testing.assert_allclose(np.exp(ma.log_weight), np.exp(mb.log_weight), atol=1e-10)
                live = np.isfinite(ma.log_weight)
                np.testing.assert_allclose(ma.mean[live], mb.mean[live], atol=1e-10)
                np.testing.assert_allclose(ma.cov[live], mb.cov[live], atol=1e-10)

    def test_faster_than_full(self, fixture_net, fixture_evidence):
        tree = build_clique_tree(fixture_net, [("SS", "SCD")])
        cal = propagate(tree, fixture_evidence)
        branch = self._branch(tree)
        deltas = [Evidence({"WC": w, "L": l}) for w in range(5) for l in range(2)]
        branch_repropagate(cal, branch, deltas[0])

        def best(fn):
            out = []
            for _ in range(5):
                t = time.perf_counter()
                for d in deltas:
                    fn(d)
                out.append(time.perf_counter() - t)
            return min(out)

        t_branch = best(lambda d: branch_repropagate(cal, branch, d))
        t_full = best(lambda d: propagate(tree, fixture_evidence.merge(d)))
        assert t_full >= 2 * t_branch

    def test_branch_must_cover_evidence(self, fixture_net):
        tree = build_clique_tree(fixture_net)
        cal = propagate(tree)
        leaf = next(i for i in range(len(tree.cliques)) if not tree.children[i] and i != tree.root)
        outside = next(v for v in fixture_net.labels
                       if not any(v in tree.cliques[j] for j in tree.path_to_root(leaf)))
        state = Evidence({outside: 0}) if fixture_net.is_discrete(outside) else Evidence({}, {outside: 0.0})
        with pytest.raises(ArgumentError):
            branch_repropagate(cal, [leaf], state)
