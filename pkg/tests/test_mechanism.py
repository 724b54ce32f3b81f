import math

import numpy as np
import pytest

from lbs_privacy.belief import BeliefState, LocationGrid
from lbs_privacy.errors import DegenerateBody, EmptySet, InvalidDelta, InvalidEpsilon
from lbs_privacy.geometry import POINT, PROPER, SEGMENT, polygon_area, sensitivity_hull
from lbs_privacy.mechanism import (
    ObfuscationSet,
    ReleaseGeometry,
    build_delta_set,
    full_set_release,
    pim_release,
    release_density,
    surrogate,
)

from oracles import knorm_density

ABC = BeliefState(0, np.array([0.5, 0.3, 0.2]))


def test_delta_set_greedy():
    s = build_delta_set(ABC, 0.8)
    assert s.cell_ids == {0, 1} and s.achieved_delta == pytest.approx(0.8)
    s = build_delta_set(ABC, 0.75)
    assert s.cell_ids == {0, 1} and s.achieved_delta == pytest.approx(0.8)
    assert s.requested_delta == 0.75


def test_delta_one_takes_support():
    b = BeliefState(0, np.array([0.5, 0.0, 0.5]))
    s = build_delta_set(b, 1.0)
    assert s.cell_ids == {0, 2} and s.achieved_delta == 1.0


def test_delta_set_ties_by_id():
    s = build_delta_set(BeliefState.uniform(4), 0.5)
    assert s.order == (0, 1)


def test_delta_set_is_minimal():
    rng = np.random.default_rng(1)
    for _ in range(200):
        b = BeliefState.from_weights(rng.random(8) ** 3)
        d = rng.uniform(0.05, 1.0)
        s = build_delta_set(b, d)
        assert s.achieved_delta >= d - 1e-12
        top = np.sort(b.probs)[::-1]
        # one fewer cell never reaches delta
        assert top[: len(s) - 1].sum() < d - 1e-12


def test_delta_validation():
    with pytest.raises(InvalidDelta):
        build_delta_set(ABC, 0.0)
    with pytest.raises(InvalidDelta):
        build_delta_set(ABC, 1.2)


def test_surrogate_rules():
    g = LocationGrid.regular(1, 3, 100.0)
    s = ObfuscationSet(frozenset({0, 2}), 0.8, 0.8)
    assert surrogate((60.0, 40.0), s, g) == (60.0, 40.0)
    assert surrogate((190.0, 50.0), s, g) == (250.0, 50.0)
    # cell 1 is equidistant from cells 0 and 2
    assert surrogate((150.0, 50.0), s, g) == (50.0, 50.0)


def test_singleton_release_is_exact():
    g = LocationGrid.regular(1, 1, 100.0)
    s = build_delta_set(BeliefState.uniform(1), 1.0)
    rec = pim_release(g.center(0), s, g, 1.0, np.random.default_rng(0))
    assert rec.z == g.center(0) and rec.degenerate and rec.hull.kind == POINT


def test_release_is_deterministic():
    g = LocationGrid.regular(3, 3, 200.0)
    s = build_delta_set(BeliefState.uniform(9), 0.5)
    a = pim_release(g.center(4), s, g, 0.7, np.random.default_rng(11))
    b = pim_release(g.center(4), s, g, 0.7, np.random.default_rng(11))
    assert a.z == b.z and a.hull.kind == PROPER


def test_invalid_epsilon():
    g = LocationGrid.regular(2, 2, 100.0)
    s = build_delta_set(BeliefState.uniform(4), 1.0)
    for eps in (0.0, -1.0, math.inf):
        with pytest.raises(InvalidEpsilon):
            pim_release(g.center(0), s, g, eps, np.random.default_rng(0))


def test_mean_error_scales_with_inverse_epsilon():
    geom1 = ReleaseGeometry.for_locations([(0, 0), (400, 0), (100, 300)], 1.0)
    geom2 = ReleaseGeometry.for_locations([(0, 0), (400, 0), (100, 300)], 0.5)
    e1 = np.hypot(*geom1.sample((0, 0), np.random.default_rng(0), 100_000).T).mean()
    e2 = np.hypot(*geom2.sample((0, 0), np.random.default_rng(1), 100_000).T).mean()
    assert e1 / e2 == pytest.approx(0.5, rel=0.05)


def test_density_at_zero_offset():
    geom = ReleaseGeometry.for_locations([(0, 0), (1, 0), (0, 1)], 0.5)
    expected = abs(geom.transform.det) * 0.25 / (2 * geom.body_area)
    assert release_density((3.0, 4.0), (3.0, 4.0), geom) == pytest.approx(expected)
    # law invariance: same as the raw-body K-norm density
    assert expected == pytest.approx(0.25 / (2 * 3.0))


def test_density_matches_raw_body_oracle():
    rng = np.random.default_rng(2)
    for _ in range(10):
        pts = rng.uniform(0, 1000, (4, 2))
        geom = ReleaseGeometry.for_locations(pts, 0.8)
        z = rng.uniform(-500, 1500, (300, 2))
        hull = sensitivity_hull(pts)
        np.testing.assert_allclose(
            geom.density(z, pts[0]), knorm_density(z, pts[0], hull.array, 0.8), rtol=1e-9
        )


def test_density_ratio_bounded_on_grid():
    pts = np.array([(0, 0), (300, 50), (120, 400), (500, 500)], dtype=float)
    eps = 1.0
    geom = ReleaseGeometry.for_locations(pts, eps)
    ax = np.linspace(-1500, 2000, 150)
    z = np.stack(np.meshgrid(ax, ax), -1).reshape(-1, 2)
    logs = np.stack([geom.log_density(z, p) for p in pts])
    assert (logs.max(0) - logs.min(0)).max() <= eps + 1e-9


def test_density_integrates_to_one():
    pts = [(0, 0), (10, 0), (3, 8)]
    geom = ReleaseGeometry.for_locations(pts, 1.0)
    ax = np.linspace(-150, 150, 1201)
    h = ax[1] - ax[0]
    z = np.stack(np.meshgrid(ax, ax), -1).reshape(-1, 2)
    assert geom.density(z, (0.0, 0.0)).sum() * h * h == pytest.approx(1.0, rel=0.01)


def test_samples_follow_density():
    # exp(-g) density on bodies of area ~ g^2 makes the gauge Gamma(2, eps).
    pts = [(0, 0), (200, 0), (50, 150)]
    geom = ReleaseGeometry.for_locations(pts, 1.0)
    s = geom.sample((0, 0), np.random.default_rng(3), 200_000)
    from lbs_privacy.geometry import gauge_many

    g = gauge_many(geom.hull, s)
    cdf = 1 - math.exp(-1) * 2
    assert (g <= 1).mean() == pytest.approx(cdf, abs=0.005)


def test_segment_body():
    geom = ReleaseGeometry.for_locations([(0, 0), (300, 400)], 1.0)
    assert geom.kind == SEGMENT and geom.half_length == pytest.approx(500)
    s = geom.sample((0, 0), np.random.default_rng(4), 50_000)
    # all samples on the line through the set
    assert np.abs(s[:, 0] * 0.8 - s[:, 1] * 0.6).max() < 1e-6
    t = np.linspace(-20000, 20000, 400_001)
    line = np.outer(t, [0.6, 0.8])
    dens = geom.density(line, (0, 0))
    assert dens.sum() * (t[1] - t[0]) == pytest.approx(1.0, rel=1e-3)
    ratio = np.log(geom.density(line, (0, 0))) - np.log(geom.density(line, (300, 400)))
    assert np.abs(ratio).max() <= 1.0 + 1e-9
    assert geom.density((1.0, 0.0), (0, 0)) == 0.0
    with pytest.raises(DegenerateBody):
        release_density((0, 0), (0, 0), geom)


def test_full_set_release_uses_every_cell():
    g = LocationGrid.regular(3, 3, 100.0)
    rec = full_set_release(g.center(4), g, 1.0, np.random.default_rng(0))
    assert rec.obf_set.cell_ids == frozenset(range(9))
    assert polygon_area(rec.hull) == pytest.approx(4 * 200 * 200)
    single = full_set_release((50.0, 50.0), LocationGrid.regular(1, 1, 100.0), 1.0, np.random.default_rng(0),
                              prior=BeliefState.uniform(1))
    assert single.z == (50.0, 50.0)


def test_full_set_error_exceeds_delta_set():
    g = LocationGrid.regular(6, 6, 200.0)
    d = np.hypot(*(g.centers - g.center(14)).T)
    prior = BeliefState.from_weights(np.exp(-(d / 300.0) ** 2))
    obf = build_delta_set(prior, 0.8)
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    loc = g.center(14)
    full = [np.hypot(*(np.asarray(full_set_release(loc, g, 1.0, rng_a, prior).z) - loc)) for _ in range(2000)]
    part = [np.hypot(*(np.asarray(pim_release(loc, obf, g, 1.0, rng_b).z) - loc)) for _ in range(2000)]
    assert np.mean(full) > np.mean(part)


def test_empty_set_rejected():
    with pytest.raises(EmptySet):
        ObfuscationSet(frozenset(), 1.0, 1.0)
