import math

import numpy as np
import pytest

from lbs_privacy import accounting as acc
from lbs_privacy.errors import DegenerateBody, EmptyList, InvalidParams

HEX_SET = [(0, 0), (1, 0), (0, 1)]


def test_location_bound():
    assert acc.location_bound(0.1, 0.2, 0.8) == pytest.approx(0.15267534477, abs=1e-10)
    assert acc.location_bound(0.37, 0.0, 1.0) == 0.37
    assert acc.location_bound(0.0, 2.0, 0.5) == 0.0
    with pytest.raises(InvalidParams):
        acc.location_bound(1.2, 0.1, 0.8)
    with pytest.raises(InvalidParams):
        acc.location_bound(0.1, -0.1, 0.8)
    with pytest.raises(InvalidParams):
        acc.location_bound(0.1, 0.1, 0.0)


def test_theta():
    assert acc.theta([0.3, 0.9], 1.0) == 0.0
    assert acc.theta([0.2, 0.5], 0.8) == pytest.approx(-0.04)
    assert acc.theta([0.0, 0.0], 0.8) == 0.0
    assert acc.theta([], 0.5) == 0.0
    with pytest.raises(InvalidParams):
        acc.theta([0.1], 1.5)


def test_target_bound():
    p = acc.PrivacyParams(0.2, 0.8, -0.04)
    assert acc.target_bound(0.3, p) == pytest.approx(0.41802603431, abs=1e-10)
    assert acc.target_bound(0.3, acc.PrivacyParams(0.0, 1.0, 0.0)) == 0.3
    assert acc.target_bound(0.0, acc.PrivacyParams(1.0, 0.5)) == 0.0


def test_compose_examples():
    one = acc.compose([acc.PrivacyParams(0.3, 0.5, -0.1)])
    assert (one.epsilon, one.delta_multiplier, one.theta) == (0.3, 2.0, -0.1)
    two = acc.compose([acc.PrivacyParams(0.1, 0.8, 0.0)] * 2)
    assert two.epsilon == pytest.approx(0.2)
    assert two.delta_multiplier == pytest.approx(1.5625)
    assert two.theta == 0.0
    mixed = acc.compose([acc.PrivacyParams(0.1, 0.8, -0.04), acc.PrivacyParams(0.1, 0.8, -0.02)])
    assert mixed.theta == pytest.approx(-0.0752585459, abs=1e-9)
    with pytest.raises(EmptyList):
        acc.compose([])


def test_compose_equals_step_recursion():
    rng = np.random.default_rng(0)
    for _ in range(50):
        steps = [acc.PrivacyParams(rng.uniform(0, 1), rng.uniform(0.3, 1), -rng.uniform(0, 0.2)) for _ in range(6)]
        p = rng.uniform(0, 1)
        b = p
        for s in steps:
            b = s.factor * b + s.theta
        assert acc.compose(steps).bound(p) == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_trivial_sequential_bound():
    assert acc.trivial_sequential_bound(0.4, [0.0]) == 0.4
    assert acc.trivial_sequential_bound(0.25, [0.1, 0.2]) == pytest.approx(0.3374647019, abs=1e-10)
    steps = [acc.PrivacyParams(e, 1.0, 0.0) for e in (0.1, 0.4, 0.25)]
    assert acc.compose(steps).bound(0.2) == pytest.approx(acc.trivial_sequential_bound(0.2, [0.1, 0.4, 0.25]), abs=1e-12)


def test_error_lower_bound():
    b = acc.error_lower_bound(HEX_SET, 0.5)
    assert b.meters == pytest.approx(2 * math.sqrt(3)) and not b.degenerate
    assert acc.error_lower_bound([(5, 5)], 1.0) == (0.0, True)
    assert acc.error_lower_bound([(0, 0), (3, 3)], 1.0).degenerate


def test_solve_epsilon():
    assert acc.solve_epsilon_for_error(HEX_SET, 1.0) == pytest.approx(math.sqrt(3))
    assert acc.solve_epsilon_for_error(HEX_SET, 10.0) < acc.solve_epsilon_for_error(HEX_SET, 1.0)
    eps = acc.solve_epsilon_for_error(HEX_SET, 2.5)
    assert acc.error_lower_bound(HEX_SET, eps).meters == pytest.approx(2.5)
    with pytest.raises(DegenerateBody):
        acc.solve_epsilon_for_error([(0, 0), (1, 0)], 1.0)
    with pytest.raises(InvalidParams):
        acc.solve_epsilon_for_error(HEX_SET, 0.0)


def test_steps_until_identifiable():
    assert acc.steps_until_identifiable([0.4, 0.9, 1.2]) == 3
    assert acc.steps_until_identifiable([0.1, 0.5]) is None
    assert acc.steps_until_identifiable([]) is None
    # 0.5 * 1.1^(t-1) first exceeds 1 at t = 9
    stream = [0.5 * 1.1 ** (t - 1) for t in range(1, 15)]
    assert acc.steps_until_identifiable(stream) == 9


def test_link_weights_and_thetas():
    w = acc.LinkWeights(acc.TRAJECTORY, np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [0.2, 0.8]]))
    assert w.n_targets == 2 and w.weight(1, 1) == 0.5
    np.testing.assert_allclose(w.target_priors([0.25] * 4), [0.425, 0.575])
    np.testing.assert_allclose(w.thetas([0, 1], [0, 1, 2, 3], 0.8), [-0.0, -0.2 * 0.8])
    np.testing.assert_allclose(w.thetas([0, 1], [0, 1, 3], 0.8), [-0.2 * 0.2, -0.2 * 0.8])
    with pytest.raises(InvalidParams):
        acc.LinkWeights("route", np.eye(2))
    with pytest.raises(InvalidParams):
        acc.LinkWeights(acc.POI, np.array([[1.5]]))


def test_ledger_stream():
    led = acc.PrivacyLedger(acc.POI, "home")
    for _ in range(3):
        led.record(acc.PrivacyParams(0.1, 0.8, -0.01))
    s = led.bounds_stream(0.2)
    assert len(s) == 3 and s[-1] == pytest.approx(led.bound(0.2))
    assert s[0] == pytest.approx(acc.target_bound(0.2, led.per_step[0]))
    assert led.cumulative.epsilon == pytest.approx(0.3)


def test_privacy_params_validation():
    with pytest.raises(InvalidParams):
        acc.PrivacyParams(0.1, 0.0)
    with pytest.raises(InvalidParams):
        acc.PrivacyParams(math.nan, 0.5)
    with pytest.raises(InvalidParams):
        acc.PrivacyParams(0.1, 0.5, math.inf)
