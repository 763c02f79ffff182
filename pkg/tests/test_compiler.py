import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from cgcontrol.compiler import (CompiledModel, DivertRule, Policy, check_fresh, compile_model, compile_rule,
                                rule_decide, sensor_posterior, tail_curve)
from cgcontrol.decision import Action, decide, tail_prob
from cgcontrol.errors import ArgumentError, StaleModelError
from cgcontrol.fixture import REFERENCE_POLICY
from cgcontrol.mixture import exact_mixture
from cgcontrol.model import ContinuousNode, Evidence, Network
from cgcontrol.random_nets import random_evidence, random_network


def single_model(rho=0.8, mu=(1.0, -0.5), var=(2.0, 1.5)):
    c = rho * math.sqrt(var[0] * var[1])
    return CompiledModel("S", "T", [1.0], [mu], [[[var[0], c], [c, var[1]]]], {})


def compare_posteriors(a, b, rtol=1e-6):
    assert a.labels == b.labels
    np.testing.assert_allclose(a.weights, b.weights, rtol=rtol, atol=1e-300)
    np.testing.assert_allclose(a.means, b.means, rtol=rtol, atol=1e-9)
    np.testing.assert_allclose(a.variances, b.variances, rtol=rtol)


class TestCompile:
    def test_single_configuration_is_direct_conditioning(self):
        net = Network([ContinuousNode("A", 0.0, 1.0),
                       ContinuousNode("T", 1.0, 0.5, [], ["A"], [2.0]),
                       ContinuousNode("S", 0.0, 0.1, [], ["T"], [1.0])])
        cm = compile_model(net, Evidence({}, {"A": 0.5}), "S", "T")
        assert len(cm) == 1
        np.testing.assert_allclose(cm.means[0], [2.0, 2.0], rtol=1e-12)
        np.testing.assert_allclose(cm.covs[0], [[0.6, 0.5], [0.5, 0.5]], rtol=1e-12)

    def test_fixture_component_count(self, fixture_net, fixture_evidence, fixture_model):
        # every one of the 5 * 2^3 boundary configurations keeps positive weight given ACD
        assert len(fixture_model) == 40
        assert fixture_model.sources == ("WC", "L", "M", "F")
        assert fixture_model.baked_evidence == {"ACD": 0.5}

    def test_deterministic_bytes(self, fixture_net, fixture_evidence, fixture_model):
        again = compile_model(fixture_net, fixture_evidence, "SS", "SCD")
        assert again.to_json() == fixture_model.to_json()

    def test_json_round_trip(self, fixture_model):
        again = CompiledModel.from_json(fixture_model.to_json())
        np.testing.assert_array_equal(again.covs, fixture_model.covs)
        assert again.labels == fixture_model.labels
        assert again.to_json() == fixture_model.to_json()

    def test_invariants(self):
        with pytest.raises(ArgumentError):
            CompiledModel("S", "T", [0.5], [[0, 0]], [np.eye(2)], {})
        with pytest.raises(ArgumentError):
            CompiledModel("S", "T", [1.0], [[0, 0]], [[[0.0, 0.0], [0.0, 1.0]]], {})
        with pytest.raises(ArgumentError):
            CompiledModel("S", "T", [1.0], [[0, 0]], [[[1.0, 2.0], [2.0, 1.0]]], {})

    def test_stale_detection(self, fixture_net, fixture_evidence, fixture_model):
        check_fresh(fixture_model, fixture_net, fixture_evidence)
        with pytest.raises(StaleModelError):
            check_fresh(fixture_model, fixture_net, Evidence({}, {"ACD": 0.6}))


class TestSensorPosterior:
    def test_single_component_closed_form(self):
        cm = single_model()
        g = sensor_posterior(cm, 2.5)
        c = cm.covs[0, 0, 1]
        np.testing.assert_allclose(g.means, [-0.5 + c / 2.0 * (2.5 - 1.0)], rtol=1e-14)
        np.testing.assert_allclose(g.variances, [1.5 - c * c / 2.0], rtol=1e-14)

    def test_weights_unchanged_at_shared_mean(self):
        cm = CompiledModel("S", "T", [0.25, 0.75], [[1.0, 0.0], [1.0, 3.0]],
                           [np.eye(2), [[1.0, 0.3], [0.3, 2.0]]], {})
        np.testing.assert_allclose(sensor_posterior(cm, 1.0).weights, [0.25, 0.75], rtol=1e-14)

    def test_inversion_on_fixture(self, fixture_model):
        moderate = sensor_posterior(fixture_model, 5.0).mean()
        high = sensor_posterior(fixture_model, 9.0).mean()
        assert high < moderate

    def test_matches_full_network(self, fixture_net, fixture_evidence, fixture_model):
        for s in np.linspace(-2.0, 12.0, 15):
            full = exact_mixture(fixture_net, "SCD", fixture_evidence.merge(Evidence({}, {"SS": s})))
            compare_posteriors(sensor_posterior(fixture_model, s), full)

    def test_underflow_falls_back(self, caplog):
        cm = CompiledModel("S", "T", [0.4, 0.6], [[0.0, 0.0], [1.0, 1.0]], [np.eye(2), np.eye(2)], {})
        with caplog.at_level("WARNING"):
            g = sensor_posterior(cm, 1e200)
        assert len(g) == 1 and g.weights[0] == 1.0
        assert "underflow" in caplog.text

    def test_tail_curve_vectorized(self, fixture_model):
        s = np.linspace(0, 12, 50)
        expect = [tail_prob(sensor_posterior(fixture_model, x), 0.0) for x in s]
        np.testing.assert_allclose(tail_curve(fixture_model, s, 0.0), expect, rtol=1e-12, atol=1e-300)


class TestRule:
    def test_free_diversion_covers_everything(self, fixture_model):
        rule = compile_rule(fixture_model, Policy(0.0, 0.0, 1.0))
        assert rule.intervals == ((-math.inf, math.inf),)

    def test_ratio_at_least_one_is_empty(self, fixture_model):
        assert compile_rule(fixture_model, Policy(0.0, 2.0, 2.0)).intervals == ()
        assert compile_rule(fixture_model, Policy(0.0, 3.0, 2.0)).intervals == ()

    def test_single_positive_component_right_unbounded(self):
        cm = single_model(rho=0.8)
        p = Policy(0.5, 1.0, 4.0)
        rule = compile_rule(cm, p)
        assert len(rule) == 1 and rule.intervals[0][1] == math.inf
        s_star = rule.intervals[0][0]
        # dense-scan oracle for the crossing point
        grid = np.linspace(*cm.scan_range(), 2_000_001)
        above = tail_curve(cm, grid, p.c_hat) > p.threshold
        idx = np.argmax(above)
        assert grid[idx - 1] <= s_star <= grid[idx] + 1e-9
        # closed form: P(T > c_hat | s) = threshold  <=>  mean(s) = c_hat - z * sd
        c = cm.covs[0, 0, 1]
        sd = math.sqrt(1.5 - c * c / 2.0)
        closed = 1.0 + (p.c_hat - norm.isf(p.threshold) * sd + 0.5) * 2.0 / c
        np.testing.assert_allclose(s_star, closed, atol=2e-9)

    def test_fixture_rule_is_bounded(self, fixture_rule):
        assert len(fixture_rule) == 1
        lo, hi = fixture_rule.intervals[0]
        assert math.isfinite(lo) and math.isfinite(hi)

    def test_agrees_with_direct_decision(self, fixture_model, fixture_rule):
        rng = np.random.default_rng(3)
        lo, hi = fixture_model.scan_range()
        ends = fixture_rule.endpoints()
        for s in rng.uniform(lo - 5, hi + 5, 3000):
            if ends.size and np.min(np.abs(ends - s)) <= 2e-9:
                continue
            assert rule_decide(fixture_rule, s) is decide(sensor_posterior(fixture_model, s), REFERENCE_POLICY)

    def test_monotone_in_divert_cost(self, fixture_model):
        grid = np.linspace(*fixture_model.scan_range(), 2001)
        prev = None
        for l0 in (0.2, 0.5, 1.0, 2.0, 3.0, 4.5):
            rule = compile_rule(fixture_model, Policy(0.0, l0, 5.0))
            now = np.array([rule_decide(rule, s) is Action.DIVERT for s in grid])
            if prev is not None:
                assert not np.any(now & ~prev)
            prev = now

    def test_decide_membership(self):
        rule = DivertRule(((-1.0, 0.5), (2.0, 3.0)), REFERENCE_POLICY)
        assert rule_decide(rule, 0.0) is Action.DIVERT
        assert rule_decide(rule, 2.0) is Action.DIVERT
        assert rule_decide(rule, 1.0) is Action.ACCEPT
        assert rule_decide(rule, -5.0) is Action.ACCEPT
        assert rule_decide(rule, 9.0) is Action.ACCEPT

    def test_out_of_scan_extrapolates(self, fixture_model):
        rule = compile_rule(fixture_model, Policy(0.0, 0.0, 1.0))
        assert rule_decide(rule, -1e6) is Action.DIVERT and rule_decide(rule, 1e6) is Action.DIVERT

    def test_interval_invariants(self):
        with pytest.raises(ArgumentError):
            DivertRule(((1.0, 0.0),), REFERENCE_POLICY)
        with pytest.raises(ArgumentError):
            DivertRule(((0.0, 2.0), (1.0, 3.0)), REFERENCE_POLICY)

    def test_serialization(self, fixture_rule):
        again = DivertRule.from_json(fixture_rule.to_json())
        assert again.intervals == fixture_rule.intervals and again.policy == fixture_rule.policy
        lines = fixture_rule.to_csv().splitlines()
        assert lines[0] == "lower,upper"
        lo, hi = (float(v) for v in lines[1].split(","))
        assert (lo, hi) == fixture_rule.intervals[0]
        assert compile_rule(CompiledModel.from_json(json.dumps(json.loads(
            single_model().to_json()))), Policy(0.0, 5.0, 1.0)).to_csv() == "lower,upper\n"

    def test_infinite_endpoints_serialize(self):
        rule = DivertRule(((-math.inf, 1.0),), REFERENCE_POLICY)
        assert DivertRule.from_json(rule.to_json()).intervals == rule.intervals
        assert rule.to_csv().splitlines()[1] == "-inf,1"

    def test_random_nets_soundness(self):
        rng = np.random.default_rng(5)
        done = 0
        while done < 10:
            net = random_network(rng, min_continuous=3)
            s, t = net.continuous_labels[-1], net.continuous_labels[-2]
            z = random_evidence(net, rng, keep=(s, t))
            cm = compile_model(net, z, s, t)
            for x in np.linspace(*cm.scan_range(), 7):
                full = exact_mixture(net, t, z.merge(Evidence({}, {s: x})))
                got = sensor_posterior(cm, x)
                np.testing.assert_allclose(got.mean(), full.mean(), rtol=1e-6, atol=1e-9)
            done += 1
