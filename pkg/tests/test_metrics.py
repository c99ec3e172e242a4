import math

import numpy as np
import pytest

from dronerelay.metrics import (DroneFitness, alpha_fair_utility, fitness_indicator, is_degenerate, jain_index,
                                least_fit_drone, relative_gain, score_gain)


def test_utility_cases():
    assert alpha_fair_utility([1.0, 2.5, 4.0], 0.0) == pytest.approx(7.5)
    assert alpha_fair_utility([1.0, 1.0, 1.0], 1.0) == 0.0
    assert alpha_fair_utility([1.0, 4.0, 9.0], 0.5) == pytest.approx(12.0, rel=1e-15)
    assert alpha_fair_utility([3.0, 1.0, 2.0], math.inf) == 1.0
    assert alpha_fair_utility([2.0, 2.0], 2.0) == pytest.approx(-1.0)


def test_zero_rate_flagged():
    assert alpha_fair_utility([0.0, 2.0], 1.0) == -math.inf
    assert is_degenerate([0.0, 2.0], 1.0)
    assert not is_degenerate([0.0, 2.0], 0.5)
    with pytest.raises(ValueError):
        alpha_fair_utility([-1.0], 1.0)


def test_jain():
    assert jain_index([1, 1, 1, 1]) == 1.0
    assert jain_index([1, 0, 0, 0]) == 0.25
    assert jain_index([2, 4, 4, 6]) == pytest.approx(256 / 288, rel=1e-15)
    with pytest.raises(ValueError):
        jain_index([0, 0])


def test_relative_and_score_gain():
    assert relative_gain(11.0, 10.0) == pytest.approx(0.1)
    assert relative_gain(-9.0, -10.0) == pytest.approx(0.1)
    assert relative_gain(1.0, -math.inf) == math.inf
    # max-min: totals only break ties of the minimum
    assert score_gain((5.0, 10.0), (5.0, 8.0), math.inf) == pytest.approx(0.25)
    assert score_gain((4.0, 100.0), (5.0, 8.0), math.inf) < 0
    assert score_gain((5.0, 0.0), (4.0, 0.0), 1.0) == pytest.approx(0.25)


def test_perfectly_fit_drone_never_chosen_over_unfit():
    fit = DroneFitness(2.0, 2.0, 2.0)
    assert fitness_indicator(fit) == 0.0
    assert least_fit_drone([fit, DroneFitness(1.0, 2.0, 1.0)]) == 1


def test_two_drone_hand_trace():
    # gaps (0.3, 0.1) versus (0.2, 0.25): the first drone has the single largest gap
    a = DroneFitness(7.0, 10.0, 7.0 / 0.9)
    b = DroneFitness(6.0, 7.5, 8.0)
    assert fitness_indicator(a) == pytest.approx(0.3)
    assert fitness_indicator(b) == pytest.approx(0.25)
    assert least_fit_drone([a, b]) == 0


def test_ties_and_exclusions():
    fit = [DroneFitness(1.0, 1.0, 1.0)] * 3
    assert least_fit_drone(fit) == 0
    assert least_fit_drone(fit, exclude={0}) == 1
    assert least_fit_drone(fit, exclude={0, 1, 2}) == -1


def test_zero_reference_skipped_and_empty_drone_first():
    assert fitness_indicator(DroneFitness(1.0, 0.0, 2.0)) == pytest.approx(0.5)
    idle = DroneFitness(0.0, 0.0, 0.0, n_users=0)
    assert fitness_indicator(idle) == math.inf
    assert least_fit_drone([DroneFitness(1.0, 5.0, 5.0), idle]) == 1
