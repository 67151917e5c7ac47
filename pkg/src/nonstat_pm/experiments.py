"""Named experiments built from a validated :class:`ExperimentConfig`.

Each runner returns a table (column names plus rows) and a list of JSON
records.  The first column of every table is the config hash.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rates
from .config import ExperimentConfig
from .ensemble import InitialMeasure, birkhoff_sums, covariance_stderr, empirical_covariance, simulate_xi
from .observables import builtin
from .schedules import (FixedSchedule, QdsArray, alternating, finite_markov, fixed_schedule, iid_uniform,
                        linear_tau, qds_row, sample_omega)
from .stats import (cosine_battery, default_battery, green_kubo, result_record, rds_sigma_sq,
                    sigma_t_integral, smooth_test_distance, test_function_stderr, wasserstein1_stderr,
                    wasserstein1_to_normal)
from .transfer import Grid, covariance_along


@dataclass
class ExperimentOutput:
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)


def build_grid(cfg: ExperimentConfig) -> Grid:
    g = cfg["grid"]
    if g["type"] == "uniform":
        return Grid.uniform(g["size"])
    return Grid.graded(g["spacing"], g["ratio"])


def schedule_seed(cfg: ExperimentConfig) -> int:
    s = cfg["schedule"].get("seed")
    return cfg.seed if s is None else s


def build_schedule(cfg: ExperimentConfig):
    s, beta = cfg["schedule"], cfg["experiment"]["beta_star"]
    st = s["type"]
    if st == "constant":
        return fixed_schedule(s["value"], beta_star=beta)
    if st == "alternating":
        return alternating(*s["values"], beta_star=beta)
    if st == "list":
        return fixed_schedule(s["values"], beta_star=beta)
    if st == "iid_uniform":
        return iid_uniform(s["low"], s["high"], beta_star=beta, seed=schedule_seed(cfg))
    if st == "finite_markov":
        return finite_markov(s["states"], s["transition"], beta_star=beta, seed=schedule_seed(cfg))
    if st == "qds":
        return QdsArray(linear_tau(s["tau_a0"], s["tau_slope"]), eta=s["eta"], c_pert=s["c_pert"],
                        beta_star=beta, seed=schedule_seed(cfg))
    raise ValueError(st)


def _common(cfg: ExperimentConfig):
    e = cfg["experiment"]
    grid = build_grid(cfg)
    f = builtin(e["observable"])
    mu = InitialMeasure.lebesgue(grid, e["beta_star"])
    return e, grid, f, mu


def _clt(cfg: ExperimentConfig) -> ExperimentOutput:
    e, grid, f, mu = _common(cfg)
    a = cfg["analysis"]
    kind, h = cfg.kind, cfg.hash
    sched: FixedSchedule = build_schedule(cfg)
    Ns = e["N"]
    alphas = sched.take(max(Ns) - 1)
    sums = birkhoff_sums(alphas, f, mu, Ns, e["M"], e["centering"], cfg.seed, e["threads"])
    var = covariance_along(alphas, f, max(Ns), mu.linear, Ns)
    beta = e["beta_star"]
    if kind == "self_norming":
        out = ExperimentOutput(["config_hash", "N", "var_S", "w1_self_normed", "w1_stderr"])
    else:
        out = ExperimentOutput(["config_hash", "N", "sigma_N_sq", "w1", "w1_stderr", "thm21_shape"])
    gk = None
    if kind == "stationary_clt":
        gk = float(green_kubo(float(alphas[0]) if alphas.size else sched[0], f, grid,
                              a["K_max"], a["tail_tol"])[0, 0])
    for N in Ns:
        S = sums.at(N)[:, 0]
        v = float(var[N][0, 0])
        params = {"config_hash": h, "N": N, "M": e["M"], "seed": cfg.seed}
        if kind == "self_norming":
            z = S / math.sqrt(v)
            w1 = wasserstein1_to_normal(z, 1.0)
            se = wasserstein1_stderr(z, 1.0, a["n_boot"], cfg.seed)
            out.rows.append([h, N, v, w1, se])
            out.records.append(result_record(f"{kind}/N={N}", {**params, "var_S": v}, w1, se,
                                             "W1(S/sqrt(Var S), N(0,1)); Var S by transfer operators"))
        else:
            W = S / math.sqrt(N)
            sig = math.sqrt(max(v / N, 0.0))
            w1 = wasserstein1_to_normal(W, sig)
            se = wasserstein1_stderr(W, sig, a["n_boot"], cfg.seed)
            shape = rates.rate_value(rates.RateSpec("thm21", {"beta_star": beta, "N": N}))
            out.rows.append([h, N, v / N, w1, se, shape])
            extra = {"sigma_N_sq": v / N}
            if gk is not None:
                extra["green_kubo"] = gk
            out.records.append(result_record(f"{kind}/N={N}", {**params, **extra}, w1, se,
                                             "W1(W, sigma_N Z); sigma_N by transfer operators"))
    return out


def _quenched(cfg: ExperimentConfig) -> ExperimentOutput:
    e, grid, f, mu = _common(cfg)
    a = cfg["analysis"]
    h = cfg.hash
    process = build_schedule(cfg)
    Ns = e["N"]
    n_omega = a["n_omega"]
    sig = np.empty((n_omega, len(Ns)))
    for j in range(n_omega):
        omega = sample_omega(process, max(Ns) - 1, stream_id=j).take(max(Ns) - 1)
        cov = covariance_along(omega, f, max(Ns), mu.linear, Ns)
        sig[j] = [cov[N][0, 0] / N for N in Ns]
    out = ExperimentOutput(["config_hash", "N", "sigma_N_sq_mean", "sigma_N_sq_std", "n_omega"])
    for c, N in enumerate(Ns):
        m, s = float(sig[:, c].mean()), float(sig[:, c].std(ddof=1))
        out.rows.append([h, N, m, s, n_omega])
        out.records.append(result_record(f"quenched/N={N}", {"config_hash": h, "N": N, "n_omega": n_omega},
                                         {"mean": m, "std": s}, s / math.sqrt(n_omega),
                                         "sigma_N^2(omega) by transfer operators, spread over omega"))
    for n_om in (n_omega, 2 * n_omega):
        val, draws = rds_sigma_sq(process, f, mu.linear, a["rds_K_max"], a["i_burn"], n_om, return_draws=True)
        out.records.append(result_record(
            f"quenched/rds_sigma_sq/n_omega={n_om}",
            {"config_hash": h, "K_max": a["rds_K_max"], "i_burn": a["i_burn"], "n_omega": n_om},
            val, float(np.std(draws, ddof=1) / math.sqrt(n_om)), "averaged lag-covariance series"))
    return out


def _qds(cfg: ExperimentConfig) -> ExperimentOutput:
    e, grid, f, mu = _common(cfg)
    a = cfg["analysis"]
    h = cfg.hash
    array: QdsArray = build_schedule(cfg)
    t = a["t"]
    target = sigma_t_integral(array, f, t, a["n_quad"], grid, a["K_max"], a["tail_tol"])
    if cfg.kind == "qds_covariance":
        out = ExperimentOutput(["config_hash", "n", "t", "gap", "gap_stderr", "gap_transfer"])
    else:
        out = ExperimentOutput(["config_hash", "n", "t", "test", "distance", "stderr", "theta_shape"])
        battery = cosine_battery(f.dim) if a["battery"] == "cosine" else default_battery(f.dim)
        theta = rates.qds_theta(array.eta, e["beta_star"])
    for n in e["N"]:
        xi = simulate_xi(array, n, t, f, mu, e["M"], e["centering"], cfg.seed, e["threads"])
        params = {"config_hash": h, "n": n, "t": t, "M": e["M"]}
        if cfg.kind == "qds_covariance":
            C = empirical_covariance(xi)
            se = covariance_stderr(xi)
            diff = np.abs(C - target)
            idx = np.unravel_index(np.argmax(diff), diff.shape)
            gap, gap_se = float(diff.max()), float(se[idx])
            k = n * t
            exact = float("nan")
            if abs(k - round(k)) < 1e-9 and round(k) >= 1:
                k = int(round(k))
                C_exact = covariance_along(qds_row(array, n).take(n), f, k, mu.linear, [k])[k] / n
                exact = float(np.abs(C_exact - target).max())
            out.rows.append([h, n, t, gap, gap_se, exact])
            out.records.append(result_record(f"qds_covariance/n={n}", {**params, "gap_transfer": exact},
                                             gap, gap_se, "max entry of |Sigma_{n,t} - Sigma_t|"))
        else:
            dist = smooth_test_distance(xi.samples, target, battery)
            se = test_function_stderr(xi.samples, battery)
            shape = n ** (-theta)
            for hf, dv, sv in zip(battery, dist, se):
                out.rows.append([h, n, t, hf.name, float(dv), float(sv), shape])
                out.records.append(result_record(f"qds_clt/n={n}/{hf.name}", params, float(dv), float(sv),
                                                 "|E h(xi_n(t)) - Phi_Sigma_t(h)|"))
    return out


def _rate_sweep(cfg: ExperimentConfig) -> ExperimentOutput:
    e, a = cfg["experiment"], cfg["analysis"]
    h = cfg.hash
    beta = e["beta_star"]
    out = ExperimentOutput(["config_hash", "rate", "N", "value", "exponent"])
    for r in a["rates"]:
        for N in e["N"]:
            params = {"beta_star": beta, "N": N, "n": N, "epsilon_var": a["epsilon_var"], "gamma": math.inf if a["gamma"] is None else a["gamma"],
                      "K": rates.stein_k_choice(N, beta) if N > 1 else 0}
            spec = rates.RateSpec(r, {k: params[k] for k in rates.REQUIRED[r]})
            value = rates.rate_value(spec)
            try:
                expo = rates.rate_exponent(spec)
            except ValueError:
                expo = float("nan")
            out.rows.append([h, r, N, value, expo])
            out.records.append(result_record(f"rate_sweep/{r}/N={N}", {"config_hash": h, **spec.params},
                                             value, None, "bound shape with constant 1"))
    return out


RUNNERS = {
    "stationary_clt": _clt,
    "sequential_clt": _clt,
    "self_norming": _clt,
    "quenched": _quenched,
    "qds_covariance": _qds,
    "qds_clt": _qds,
    "rate_sweep": _rate_sweep,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentOutput:
    return RUNNERS[cfg.kind](cfg)
