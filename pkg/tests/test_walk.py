import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from snakelab import environment as E
from snakelab import walk as Wk
from snakelab.errors import EnvironmentExhausted, IncompletePathError, ParameterError


def hand_path(sites, n=1):
    return Wk.WalkPath(np.asarray(sites, dtype=np.int64), n)


def fair(n=10, length=2000):
    return E.constant_environment(0.5, length, n=n)


def test_stop_rule_parse():
    assert Wk.StopRule.parse("steps:10").kind == "steps"
    r = Wk.StopRule.parse("local:3:0.5")
    assert (r.kind, r.level, r.value) == ("local", 3, 0.5)
    with pytest.raises(ParameterError):
        Wk.StopRule.parse("forever")


def test_first_step_symmetric():
    ups = [Wk.simulate_walk(fair(), Wk.StopRule.parse("steps:1"), 1, r).sites[1] == 1 for r in range(4000)]
    p = np.mean(ups)
    assert abs(p - 0.5) < 4 * np.sqrt(0.25 / len(ups))


def test_first_step_uses_site_zero():
    renv = E.rescaled_environment(E.EnvironmentSpec(kind="iid-logit", length=50, v_bound=0.1, seed=3), 1)
    b0 = float(renv.beta(0))
    ups = np.mean([Wk.simulate_walk(renv, Wk.StopRule.parse("steps:1"), 2, r).sites[1] == 1 for r in range(4000)])
    assert abs(ups - b0) < 4 * np.sqrt(b0 * (1 - b0) / 4000)


def test_first_return_two_step_probability():
    renv = E.rescaled_environment(E.EnvironmentSpec(kind="iid-logit", length=50, v_bound=0.1, seed=4), 1)
    target = float(renv.beta(0) * (1 - renv.beta(1)))
    hits = np.mean([np.array_equal(Wk.simulate_walk(renv, Wk.StopRule.parse("returns:1"), 3, r).sites, [0, 1, 0])
                    for r in range(4000)])
    assert abs(hits - target) < 4 * np.sqrt(target * (1 - target) / 4000)


def test_walk_steps_are_nearest_neighbour():
    p = Wk.simulate_walk(fair(), Wk.StopRule.parse("returns:20"), 5)
    assert p.sites[0] == 0
    assert np.all(np.abs(np.diff(p.sites)) == 1)
    assert np.count_nonzero(p.sites[1:] == 0) == 20


def test_environment_exhausted():
    with pytest.raises(EnvironmentExhausted):
        Wk.simulate_walk(fair(length=3), Wk.StopRule.parse("steps:100000"), 1)


def test_retry_grows_environment():
    spec = E.EnvironmentSpec(kind="iid-logit", length=2, seed=1)
    p = Wk.simulate_walk_with_retry(spec, 10, Wk.StopRule.parse("steps:2000"), 1)
    assert len(p.sites) == 2001


def test_local_time_stop():
    p = Wk.simulate_walk(fair(n=5), Wk.StopRule.parse("local:1:0.6"), 7)
    field = Wk.local_time_field(p, convention="absolute")
    # stops at the step completing the first up-step count above n*r = 3
    assert field.count(1, len(p.sites)) == 4


def test_fold_examples():
    assert Wk.fold(np.array([13]), 10)[0] == 7
    assert Wk.fold(np.array([23]), 10)[0] == 3
    s = np.arange(-10, 11)
    np.testing.assert_array_equal(Wk.fold(s, 10), np.abs(s))


@given(hst.integers(-10 ** 6, 10 ** 6), hst.integers(1, 50))
def test_fold_in_range_and_periodic(s, nk):
    f = Wk.fold(np.array([s]), nk)[0]
    assert 0 <= f <= nk
    assert f == Wk.fold(np.array([s + 2 * nk]), nk)[0]
    assert f == Wk.fold(np.array([-s]), nk)[0]


def test_reflect_walk_needs_integer_nk():
    p = hand_path([0, 1, 0], n=3)
    with pytest.raises(ParameterError):
        Wk.reflect_walk(p, 0.5)
    r = Wk.reflect_walk(hand_path([0, 1, 2, 3, 2], n=2), 1.0)
    np.testing.assert_array_equal(r.sites, [0, 1, 2, 1, 2])


def test_return_times_examples():
    assert Wk.return_times(hand_path([0, 1, 0])).kth(1) == 2
    st = Wk.return_times(hand_path([0, -1, 0, 1, 0]))
    assert (st.kth(1), st.kth(2)) == (2, 4)
    with pytest.raises(IncompletePathError):
        st.kth(3)
    p = Wk.simulate_walk(fair(), Wk.StopRule.parse("returns:30"), 9)
    assert np.all(np.diff(Wk.return_times(p).return_times) > 0)


def test_upcrossing_examples():
    p = hand_path([0, 1, 2, 1, 0])
    assert Wk.upcrossing_counts(p, 0)[-1] == 1
    assert Wk.upcrossing_counts(p, 1)[-1] == 1
    assert Wk.upcrossing_counts(p, 5)[-1] == 0
    q = Wk.simulate_walk(fair(), Wk.StopRule.parse("returns:10"), 2)
    for conv in ("reflected", "absolute"):
        assert np.all(np.diff(Wk.upcrossing_counts(q, 1, conv)) >= 0)
    # absolute convention counts |S|: 0,-1,-2 has an up-step of |S| from 1
    assert Wk.upcrossing_counts(hand_path([0, -1, -2]), 1, "absolute")[-1] == 1
    assert Wk.upcrossing_counts(hand_path([0, -1, -2]), 1, "reflected")[-1] == 0


def test_local_time_field_scaled():
    p = hand_path([0, 1, 2, 1, 0], n=2)
    f = Wk.local_time_field(p)
    # L^{n,s}_t counts up-steps from floor(ns) starting at j <= floor(n^2 t)
    assert f.local_time(0.0, 1.0) == 0.5
    assert f.local_time(0.5, 0.0) == 0.0
    assert f.local_time(0.5, 0.25) == 0.5
    assert f.local_time(3.0, 1.0) == 0.0


def test_inverse_local_time():
    p = hand_path([0, 1, 2, 1, 2, 1, 0], n=1)
    f = Wk.local_time_field(p)
    assert Wk.inverse_local_time(f, 1, 0.999) == 1.0
    assert Wk.inverse_local_time(f, 1, 1.0) == 3.0
    assert Wk.inverse_local_time(f, 1, 2.0) == np.inf
    assert Wk.inverse_local_time(f, 7, 0.0) == np.inf
    times = [Wk.inverse_local_time(f, 1, r) for r in np.linspace(0, 1.9, 13)]
    assert np.all(np.diff(times) >= 0)
    with pytest.raises(ParameterError):
        Wk.inverse_local_time(f, 1, -1)


def test_extract_bpre_examples():
    bp = Wk.extract_bpre(hand_path([0, 1, 2, 1, 0]), n=1)
    np.testing.assert_array_equal(bp.masses, [1.0, 1.0])
    with pytest.raises(IncompletePathError):
        Wk.extract_bpre(hand_path([0, 1, 2]), n=1)


def test_extract_bpre_root_mass_and_additivity():
    walk = Wk.simulate_walk(fair(n=20, length=4000), Wk.StopRule.parse("returns:20"), 4)
    bp = Wk.extract_bpre(walk)
    assert bp.masses[0] == 1.0
    parts = Wk.split_excursions(walk)
    total = np.zeros(len(bp.counts) + 50, dtype=np.int64)
    for ex in parts:
        c = Wk.extract_bpre(ex, n=1).counts
        total[:len(c)] += c
    np.testing.assert_array_equal(total[:len(bp.counts)], bp.counts)
    assert np.all(total[len(bp.counts):] == 0)


def test_occupation_identity():
    walk = Wk.simulate_walk(fair(), Wk.StopRule.parse("steps:5000"), 8)
    v = walk.sites
    ups = np.bincount(v[:-1][v[1:] > v[:-1]] - v.min())
    downs = np.bincount(v[:-1][v[1:] < v[:-1]] - v.min())
    assert ups.sum() + downs.sum() == len(v) - 1


def test_reflected_walk_bounds_and_counts():
    renv = E.rescaled_environment(E.EnvironmentSpec(kind="gaussian-hermite", length=200, seed=2), 20)
    r = Wk.simulate_reflected_walk(renv, 1.0, 20, 3)
    assert r.sites.min() == 0 and r.sites.max() <= 20
    assert np.all(np.abs(np.diff(r.sites)) == 1)
    counts = Wk.reflected_upcounts(renv, 1.0, 20, 3)
    full = Wk.extract_bpre(r, K=1.0).counts
    np.testing.assert_array_equal(counts[:20], full[:20])


@settings(max_examples=20, deadline=None)
@given(hst.integers(0, 10 ** 6))
def test_extract_bpre_absorbs(seed):
    walk = Wk.simulate_walk(fair(n=5, length=5000), Wk.StopRule.parse("returns:5"), seed)
    m = Wk.extract_bpre(walk).masses
    zero = np.flatnonzero(m == 0)
    if len(zero):
        assert np.all(m[zero[0]:] == 0)


def test_offspring_counts_hand():
    # excursion 0,1,2,1,2,1,0: the root has two children, both childless
    levels, counts = Wk.offspring_counts(Wk.ReflectedWalkPath(np.array([0, 1, 2, 1, 2, 1, 0]), 1, None, 5.0))
    assert sorted(zip(levels.tolist(), counts.tolist())) == [(0, 2), (1, 0), (1, 0)]
