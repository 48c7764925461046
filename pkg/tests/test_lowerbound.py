import math

import numpy as np
import pytest
from oracles import exact_no_collision

from pacverify.core import LabeledSample, child_rng
from pacverify.lowerbound import (
    MIXTURE,
    REDUCTION_TEST_SIZE,
    UNDECIDED,
    UNIFORM,
    ShatteredInstance,
    collision_distinguisher,
    crossing_experiment,
    distinguisher_success,
    draw_mixture,
    make_source,
    no_collision_probability,
    reduction_tester,
)


class TestDraws:
    def test_mixture_labels_are_a_function_of_x(self):
        inst = ShatteredInstance(16, MIXTURE)
        for i in range(50):
            s = draw_mixture(inst, 40, child_rng(1, i))
            seen = {}
            for x, y in zip(s.xs, s.ys):
                assert seen.setdefault(int(x), int(y)) == int(y)

    def test_uniform_mode_can_flip_labels(self):
        inst = ShatteredInstance(4, UNIFORM)
        flipped = False
        for i in range(200):
            s = draw_mixture(inst, 12, child_rng(2, i))
            seen = {}
            for x, y in zip(s.xs, s.ys):
                if seen.setdefault(int(x), int(y)) != int(y):
                    flipped = True
        assert flipped

    def test_single_point_marginals_match(self):
        # d=1: both laws are a fair label coin on the one point
        for mode in (UNIFORM, MIXTURE):
            ones = 0
            for i in range(400):
                s = draw_mixture(ShatteredInstance(1, mode), 1, child_rng(3, i))
                ones += int(s.ys[0])
            assert abs(ones / 400 - 0.5) < 0.1

    def test_x_marginals_agree_across_modes(self):
        d, t, trials = 8, 6, 300
        counts = {m: np.zeros(d) for m in (UNIFORM, MIXTURE)}
        for mode in counts:
            for i in range(trials):
                s = draw_mixture(ShatteredInstance(d, mode), t, child_rng(4, i))
                counts[mode] += np.bincount(s.xs, minlength=d)
        diff = np.abs(counts[UNIFORM] - counts[MIXTURE]) / (trials * t)
        assert diff.max() < 0.05


class TestCollisionDistinguisher:
    def test_disagreeing_collision_means_uniform(self):
        s = LabeledSample(np.array([3, 1, 3]), np.array([0, 1, 1]))
        assert collision_distinguisher(s) == UNIFORM

    def test_agreeing_collision_means_mixture(self):
        s = LabeledSample(np.array([3, 1, 3]), np.array([1, 0, 1]))
        assert collision_distinguisher(s) == MIXTURE

    def test_no_collision_undecided(self):
        s = LabeledSample(np.array([0, 1, 2]), np.array([1, 0, 1]))
        assert collision_distinguisher(s) == UNDECIDED

    def test_disagreement_dominates_agreement(self):
        s = LabeledSample(np.array([0, 0, 1, 1]), np.array([1, 1, 0, 1]))
        assert collision_distinguisher(s) == UNIFORM


class TestNoCollisionProbability:
    def test_closed_form_small_cases(self):
        assert no_collision_probability(4, 2) == pytest.approx(0.75)
        assert no_collision_probability(4, 5) == 0.0
        assert no_collision_probability(10, 1) == 1.0

    def test_matches_independent_product(self):
        for d, t in ((64, 4), (256, 8), (1024, 16)):
            assert no_collision_probability(d, t) == pytest.approx(exact_no_collision(d, t))

    def test_matches_empirics_3_sigma(self):
        for d, t in ((64, 4), (256, 8)):
            r = distinguisher_success(d, t, trials=4000, seed=11)
            p = no_collision_probability(d, t)
            sigma = math.sqrt(p * (1 - p) / 4000)
            assert abs(r["no_collision_rate_uniform"] - p) <= 3 * sigma
            assert abs(r["no_collision_rate_mixture"] - p) <= 3 * sigma


class TestSuccessCurves:
    def test_few_samples_give_little_advantage(self):
        d = 4096
        t = math.ceil(0.2 * math.sqrt(d))
        r = distinguisher_success(d, t, trials=2000, seed=21)
        assert abs(r["success_rate"] - 0.5) <= 0.06

    def test_many_samples_succeed(self):
        d = 4096
        t = math.ceil(3 * math.sqrt(d))
        r = distinguisher_success(d, t, trials=2000, seed=22)
        assert r["success_rate"] >= 0.75

    def test_advantage_bounded_by_coarsened_tv(self):
        for t in (8, 16, 32):
            r = distinguisher_success(256, t, trials=4000, seed=23)
            sigma = 0.5 / math.sqrt(4000)
            assert r["success_rate"] - 0.5 <= r["tv_estimate"] + 3 * sigma

    def test_crossing_slope_near_half(self):
        report = crossing_experiment(ds=(64, 256, 1024), trials=2500, seed=24)
        assert 0.4 <= report["crossing_slope"] <= 0.6
        assert not any(p["censored"] for p in report["points"])


class TestReduction:
    def test_sample_size_constant(self):
        assert REDUCTION_TEST_SIZE == 806
        assert REDUCTION_TEST_SIZE == math.ceil(324 * math.log(12))

    @staticmethod
    def memorizing_protocol(draw, rng):
        # a sample-hungry but correct learner: majority label per seen point
        s = draw(3 * 4096)
        table = {}
        for x, y in zip(s.xs, s.ys):
            table.setdefault(int(x), []).append(int(y))
        lookup = {x: int(np.mean(ys) >= 0.5) for x, ys in table.items()}
        return lambda xs: np.array([lookup.get(int(x), 0) for x in np.asarray(xs)])

    @staticmethod
    def rejecting_protocol(draw, rng):
        return None

    def test_reject_counts_as_mixture(self):
        verdict = reduction_tester(self.rejecting_protocol, ShatteredInstance(64, UNIFORM), seed=0)
        assert verdict == MIXTURE

    def test_learner_detects_function_law(self):
        hits = sum(
            reduction_tester(self.memorizing_protocol, ShatteredInstance(4096, MIXTURE), seed=i) == MIXTURE
            for i in range(10))
        assert hits >= 9

    def test_learner_fails_under_uniform_law(self):
        hits = sum(
            reduction_tester(self.memorizing_protocol, ShatteredInstance(4096, UNIFORM), seed=i) == UNIFORM
            for i in range(10))
        assert hits >= 9

    def test_source_is_persistent(self):
        draw = make_source(ShatteredInstance(8, MIXTURE), child_rng(9))
        a, b = draw(50), draw(50)
        table = {}
        for s in (a, b):
            for x, y in zip(s.xs, s.ys):
                assert table.setdefault(int(x), int(y)) == int(y)
