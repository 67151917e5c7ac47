import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp

from nonstat_pm.schedules import (FixedSchedule, InadmissibleError, QdsArray, alternating, finite_markov,
                                  fixed_schedule, iid_uniform, linear_tau, mixing_profile, qds_row,
                                  read_schedule, sample_omega, stationary_vector, write_schedule)


def test_constant_schedule():
    s = fixed_schedule(0.1)
    assert np.all(s.take(1000) == 0.1)
    assert s[10**9] == 0.1
    assert not s.is_finite


def test_alternating_is_admissible():
    s = alternating(0.05, 0.25, beta_star=0.3)
    assert list(s.take(5)) == [0.05, 0.25, 0.05, 0.25, 0.05]


def test_inadmissible_value_names_index():
    with pytest.raises(InadmissibleError, match="inadmissible at index 0"):
        fixed_schedule([0.4], beta_star=0.3)
    with pytest.raises(InadmissibleError, match="inadmissible at index 2"):
        fixed_schedule([0.1, 0.2, -0.01])
    rule = fixed_schedule(lambda i: 0.1 if i < 5 else 0.5)
    assert rule[4] == 0.1
    with pytest.raises(InadmissibleError, match="index 5"):
        rule.take(8)
    with pytest.raises(InadmissibleError, match="index 7"):
        rule[7]


def test_finite_schedule_length():
    s = fixed_schedule([0.1, 0.2, 0.3])
    assert len(s) == 3 and s[1:] .tolist() == [0.2, 0.3]
    with pytest.raises(ValueError):
        s.take(4)
    with pytest.raises(TypeError):
        len(fixed_schedule(0.2))


def test_sample_omega_reproducible_and_in_range():
    p = iid_uniform(0.0, 0.3, seed=4)
    a = sample_omega(p, 5, stream_id=2).take(5)
    b = sample_omega(p, 5, stream_id=2).take(5)
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a <= 0.3))
    assert np.array_equal(sample_omega(p, 50, stream_id=2).take(5), a)


def test_absorbing_chain_is_constant():
    p = finite_markov([0.1], [[1.0]])
    assert np.all(sample_omega(p, 100).take(100) == 0.1)
    p2 = finite_markov([0.1, 0.2], np.eye(2), seed=3)
    draw = sample_omega(p2, 100).take(100)
    assert np.all(draw == draw[0])


def test_streams_distinct_with_same_marginal():
    p = iid_uniform(0.0, 0.3, seed=9)
    a = sample_omega(p, 10_000, stream_id=0).take(10_000)
    b = sample_omega(p, 10_000, stream_id=1).take(10_000)
    assert not np.array_equal(a, b)
    assert ks_2samp(a, b).statistic <= 0.02


def test_mixing_profiles(oracle):
    iid = mixing_profile(iid_uniform())
    assert iid(0) == 1.0 and iid(1) == 0.0 and iid(50) == 0.0 and iid.gamma == np.inf
    P = [[0.75, 0.25], [0.25, 0.75]]
    m = mixing_profile(finite_markov([0.1, 0.2], P))
    assert m.rate == pytest.approx(oracle["markov_two_state_slem"], abs=1e-14)
    assert m(np.arange(1, 6)) == pytest.approx(2.0 ** -np.arange(1, 6), rel=1e-12)
    assert m.mixing
    stuck = mixing_profile(finite_markov([0.1, 0.2], np.eye(2)))
    assert not stuck.mixing and stuck.gamma == 0 and stuck(100) == 1.0


def test_markov_stationarity():
    P = np.array([[0.7, 0.2, 0.1], [0.3, 0.4, 0.3], [0.2, 0.2, 0.6]])
    states = [0.0, 0.1, 0.25]
    pi = stationary_vector(P)
    assert np.allclose(pi @ P, pi, atol=1e-14)
    draw = sample_omega(finite_markov(states, P, seed=1), 100_000).take(100_000)
    emp = np.array([np.mean(draw == s) for s in states])
    assert 0.5 * np.abs(emp - pi).sum() < 0.01


def test_qds_rows(oracle):
    const = QdsArray(linear_tau(0.1))
    assert np.all(qds_row(const, 8).take(8) == 0.1)
    lin = QdsArray(linear_tau(0.05, 0.2))
    assert qds_row(lin, 4).take(4) == pytest.approx(oracle["qds_row_linear_n4"], abs=1e-15)
    for n in (10, 100, 1000):
        pert = QdsArray(linear_tau(0.05, 0.2), eta=1.0, c_pert=0.5, seed=3)
        k = np.arange(n + 1)
        dev = np.abs(pert.level(n) - lin.tau(k / n))
        assert dev.max() <= 0.5 / n + 1e-15
        assert np.any(dev > 0)


def test_qds_limit_curve_convergence():
    arr = QdsArray(linear_tau(0.05, 0.2), eta=0.5, c_pert=0.02, seed=1)
    for t in (0.0, 0.3, 0.77, 1.0):
        for n in (16, 256, 4096):
            k = int(np.floor(n * t))
            bound = arr.tau_modulus * n**-arr.eta + arr.c_pert * n**-arr.eta
            assert abs(arr.level(n)[k] - arr.tau(t)) <= bound + 1e-15


def test_qds_rejects_bad_curves():
    with pytest.raises(ValueError):
        QdsArray(linear_tau(0.2, 0.2), beta_star=0.3)
    with pytest.raises(ValueError):
        QdsArray(eta=0)


def test_schedule_file_roundtrip(tmp_path):
    s = sample_omega(iid_uniform(seed=5), 20)
    path = tmp_path / "s.txt"
    write_schedule(path, s)
    lines = path.read_text().splitlines()
    assert lines[0] == "#schedule kind=iid_uniform beta_star=0.29999999999999999 seed=5"
    back = read_schedule(path)
    assert np.array_equal(back.take(20), s.take(20)) and back.seed == 5
    write_schedule(path, alternating(0.05, 0.25), length=4)
    assert read_schedule(path).take(4).tolist() == [0.05, 0.25, 0.05, 0.25]
    path.write_text("0.1\n")
    with pytest.raises(ValueError):
        read_schedule(path)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.0, 0.3), st.floats(0.0, 0.3))
def test_admissibility_fuzz(seed, a, b):
    lo, hi = min(a, b), max(a, b)
    p = iid_uniform(lo, hi, beta_star=0.3, seed=seed)
    draw = sample_omega(p, 100_000 // 30, stream_id=seed % 7).take(100_000 // 30)
    assert np.all((draw >= lo) & (draw <= hi))


def test_admissibility_bulk():
    draw = sample_omega(iid_uniform(0.0, 0.3), 100_000).take(100_000)
    assert draw.min() >= 0 and draw.max() <= 0.3
    m = sample_omega(finite_markov([0.0, 0.3], [[0.5, 0.5], [0.5, 0.5]]), 100_000).take(100_000)
    assert set(np.unique(m)) <= {0.0, 0.3}


def test_beta_star_validation():
    with pytest.raises(ValueError):
        FixedSchedule(values=[0.1], beta_star=1.0)
    with pytest.raises(ValueError):
        iid_uniform(0.0, 0.4, beta_star=0.3)
