"""Acceptance criteria, one test each, at their stated tolerances.

Each test records a one-line verdict; ``conftest.py`` prints the table at
the end of the session.  Seeds are fixed per criterion.
"""
import math
import time

import numpy as np
import pytest

from nonstat_pm import rates, stats, transfer
from nonstat_pm.ensemble import (InitialMeasure, birkhoff_sums, covariance_stderr, empirical_covariance,
                                 simulate_xi)
from nonstat_pm.observables import lip_pair_2d, x_minus_half
from nonstat_pm.schedules import QdsArray, alternating, fixed_schedule, iid_uniform, linear_tau, qds_row, sample_omega
from nonstat_pm.stats import (cosine_battery, green_kubo, rds_sigma_sq, sigma_t_integral, smooth_test_distance,
                              wasserstein1_stderr, wasserstein1_to_normal)
from nonstat_pm.transfer import (Grid, GridDensity, build_ulam, cone_check, covariance_along, invariant_density,
                                 lag_correlation, transfer_apply)

pytestmark = pytest.mark.acceptance

VERDICTS: dict[int, tuple[bool, str]] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    VERDICTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_c01_doubling_green_kubo():
    transfer._build_cached.cache_clear()
    stats._green_kubo_cached.cache_clear()
    t0 = time.perf_counter()
    gk = green_kubo(0.0, x_minus_half(), 2**12, K_max=60)[0, 0]
    wall = time.perf_counter() - t0
    err = abs(gk - 0.25)
    verdict(1, err <= 1e-6 and wall < 10, f"GK = {gk:.12f}, |err| = {err:.1e} (tol 1e-6), {wall:.2f} s (< 10 s)")


def test_c02_ulam_exactness():
    d = invariant_density(0.0, 2**12)
    dev = float(np.abs(d.cells - 1.0).max())
    u = GridDensity.uniform(2**12)
    f = x_minus_half()
    lag = max(abs(lag_correlation([0.0] * 10, f, f, 0, k, u) - 2.0**-k / 12) for k in range(1, 11))
    verdict(2, dev <= 1e-10 and lag <= 1e-12,
            f"density deviation {dev:.1e} (tol 1e-10), lag error {lag:.1e} (tol 1e-12)")


def test_c03_cone_conformance():
    G = 2**13
    bad = [a for a in (0.05, 0.15, 0.25, 0.3) if not cone_check(invariant_density(a, G), a).is_member]
    rng = np.random.default_rng(3)
    grid = Grid.uniform(G)
    beta = 0.3
    escaped = 0
    for _ in range(20):
        k = int(rng.integers(1, 4))
        ex = rng.uniform(0, beta, k)
        w = rng.dirichlet(np.ones(k + 1))
        d = GridDensity.from_function(lambda x: w[0] + sum(w[i + 1] * x ** (-ex[i]) for i in range(k)), grid)
        assert cone_check(d, beta).is_member
        out = transfer_apply(build_ulam(rng.uniform(0, beta), grid), d)
        escaped += not cone_check(out, beta).is_member
    verdict(3, not bad and escaped == 0,
            f"invariant densities outside the cone: {bad or 'none'}; transferred members escaping: {escaped}/20")


def test_c04_stationary_clt():
    N, M = 2**13, 10**5
    alphas = fixed_schedule(0.1).take(N - 1)
    mu = InitialMeasure.lebesgue()
    S = birkhoff_sums(alphas, x_minus_half(), mu, [N], M, seed=4).at(N)[:, 0]
    var = covariance_along(alphas, x_minus_half(), N, mu.linear)[N][0, 0]
    sig = math.sqrt(var / N)
    w1 = wasserstein1_to_normal(S / math.sqrt(N), sig)
    verdict(4, w1 <= 0.03, f"W1 = {w1:.5f} (tol 0.03), sigma_N^2 = {sig**2:.6f}")


@pytest.fixture(scope="module")
def sequential():
    Ns = [2**8, 2**10, 2**12, 2**14]
    M = 10**5
    sched = alternating(0.05, 0.25, beta_star=0.25)
    alphas = sched.take(Ns[-1] - 1)
    mu = InitialMeasure.lebesgue(beta_star=0.25)
    f = x_minus_half()
    sums = birkhoff_sums(alphas, f, mu, Ns, M, seed=5)
    var = covariance_along(alphas, f, Ns[-1], mu.linear, Ns)
    return Ns, sums, {N: float(var[N][0, 0]) for N in Ns}


def test_c05_rate_shape_domination(sequential):
    Ns, sums, var = sequential
    d, se = [], []
    for N in Ns:
        W = sums.at(N)[:, 0] / math.sqrt(N)
        sig = math.sqrt(var[N] / N)
        d.append(wasserstein1_to_normal(W, sig))
        se.append(wasserstein1_stderr(W, sig, 50, seed=5))
    monotone = all(d[i + 1] <= d[i] + 2 * math.hypot(se[i], se[i + 1]) for i in range(len(d) - 1))
    shape = [rates.rate_value(rates.RateSpec("thm21", {"beta_star": 0.25, "N": N})) for N in Ns]
    C = rates.fit_constant(Ns[0], d[0], lambda N: shape[Ns.index(N)])
    dominated = all(C * s >= x for s, x in zip(shape[1:], d[1:]))
    pts = ", ".join(f"{x:.5f}±{s:.5f}" for x, s in zip(d, se))
    verdict(5, monotone and dominated,
            f"d(N) = [{pts}]; non-increasing within 2 SE: {monotone}; C*shape dominates: {dominated}")


def test_c06_self_norming(sequential):
    Ns, sums, var = sequential
    N = 2**14
    z = sums.at(N)[:, 0] / math.sqrt(var[N])
    w1 = wasserstein1_to_normal(z, 1.0)
    verdict(6, w1 <= 0.05, f"W1(S/sqrt(Var S), Z) = {w1:.5f} at N = 2^14 (tol 0.05)")


def test_c07_stein_k_choice():
    worst = []
    n_bad = 0
    for beta in (0.1, 0.2, 0.3):
        for k in range(8, 17):
            N = 2**k
            ratio = rates.stein_rhs(N, rates.stein_k_choice(N, beta), beta) / rates.stein_min(N, beta)[1]
            n_bad += ratio > 2
            worst.append((ratio, beta, k))
    r, b, k = max(worst)
    verdict(7, n_bad == 0, f"{n_bad}/27 (N, beta) points exceed factor 2; worst ratio {r:.2f} at beta={b}, N=2^{k}")


@pytest.fixture(scope="module")
def qds():
    arr = QdsArray(linear_tau(0.05, 0.2))
    f = lip_pair_2d()
    mu = InitialMeasure.lebesgue()
    target = sigma_t_integral(arr, f, 1.0, n_quad=32, K_max=1000)
    out = {}
    for n in (2**8, 2**10, 2**12):
        xi = simulate_xi(arr, n, 1.0, f, mu, 2 * 10**5, seed=8)
        exact = covariance_along(qds_row(arr, n).take(n), f, n, mu.linear, [n])[n] / n
        out[n] = (xi, exact)
    return target, out


def test_c08_qds_covariance(qds):
    target, out = qds
    gaps, ses, exact = [], [], []
    for n, (xi, C_exact) in out.items():
        diff = np.abs(empirical_covariance(xi) - target)
        idx = np.unravel_index(np.argmax(diff), diff.shape)
        gaps.append(float(diff.max()))
        ses.append(float(covariance_stderr(xi)[idx]))
        exact.append(float(np.abs(C_exact - target).max()))
    decreasing = all(gaps[i + 1] <= gaps[i] + 2 * math.hypot(ses[i], ses[i + 1]) for i in range(2))
    exact_decreasing = all(exact[i + 1] < exact[i] for i in range(2))
    final_ok = gaps[-1] <= 2 * ses[-1] + 5e-3
    pts = ", ".join(f"{g:.5f}±{s:.5f}" for g, s in zip(gaps, ses))
    verdict(8, decreasing and exact_decreasing and final_ok,
            f"MC gaps [{pts}]; transfer-exact gaps [{', '.join(f'{e:.5f}' for e in exact)}]; "
            f"final {gaps[-1]:.5f} <= {2 * ses[-1] + 5e-3:.5f}: {final_ok}")


def test_c09_qds_multivariate_clt(qds):
    target, out = qds
    xi, _ = out[2**12]
    d = smooth_test_distance(xi.samples, target, cosine_battery(2))
    verdict(9, bool(np.all(d <= 0.02)), f"battery distances {np.round(d, 5).tolist()} (tol 0.02)")


def test_c10_quenched_concentration():
    grid = Grid.graded(2**-10, 1 / 16)
    mu = GridDensity.uniform(grid)
    f = x_minus_half()
    proc = iid_uniform(0.0, 0.3, beta_star=0.3, seed=10)
    sig = []
    for j in range(50):
        omega = sample_omega(proc, 2**12 - 1, stream_id=j).take(2**12 - 1)
        cov = covariance_along(omega, f, 2**12, mu, [2**8, 2**12])
        sig.append([cov[2**8][0, 0] / 2**8, cov[2**12][0, 0] / 2**12])
    sd = np.std(np.asarray(sig), axis=0, ddof=1)
    shrink = sd[0] / sd[1]
    a = rds_sigma_sq(proc, f, mu, K_max=40, i_burn=200, n_omega=50)
    b = rds_sigma_sq(proc, f, mu, K_max=40, i_burn=200, n_omega=100)
    rel = abs(a - b) / abs(b)
    verdict(10, shrink >= 2 and rel <= 0.05 and a > 0,
            f"std over omega {sd[0]:.5f} -> {sd[1]:.5f} (factor {shrink:.2f} >= 2); "
            f"rds sigma^2 {a:.5f} vs {b:.5f} (rel {rel:.2%} <= 5%)")


def test_c11_wasserstein_self_tests():
    pm = wasserstein1_to_normal(np.zeros(10**4), 1.0)
    M = 1000
    lat = wasserstein1_to_normal(stats.ndtri((np.arange(M) + 0.5) / M), 1.0)
    verdict(11, abs(pm - math.sqrt(2 / math.pi)) <= 1e-3 and lat <= 2 / M,
            f"point mass {pm:.7f} vs sqrt(2/pi) = {math.sqrt(2 / math.pi):.7f}; lattice M=1000: {lat:.6f} <= {2 / M}")
