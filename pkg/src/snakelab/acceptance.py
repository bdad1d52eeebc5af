"""The acceptance suite: fourteen checks, each returning a list of StatReports.

``quick=True`` shrinks replica counts for smoke runs; the thresholds never
change. Every check is deterministic given its seed.
"""
import time

import numpy as np

from . import branching as B
from . import diffusion as D
from . import environment as E
from . import snake as S
from . import stats as st
from . import superprocess as SP
from . import walk as Wk
from .config import DEFAULT_SEED, THRESHOLDS, parallel_map, replica_rng


def _scale(quick, full, small):
    return small if quick else full


def _flag(name, ok, statistic=0.0, **meta):
    return st.StatReport(name, float(statistic), bool(ok), None, None, (), meta)


# ----------------------------------------------------------------------------
# 1, 2: snake / particle coupling and total mass

def _coupled_run(seed, n=100, K=1.0, d=2):
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=4 * n, hurst=0.7, seed=seed)
    renv = E.rescaled_environment(spec, n)
    contour = Wk.simulate_reflected_walk(renv, K, n, seed)
    sn = S.build_snake(contour, d, seed)
    return contour, sn, SP.particles_from_snake(sn)


def check_coupling(seed=DEFAULT_SEED, quick=False):
    seeds = _scale(quick, 100, 10)
    bad = 0
    atoms = 0
    for r in range(seeds):
        contour, sn, ps = _coupled_run(seed + r)
        for i in range(contour.nK + 1):
            a = S.measure_from_snake(sn, i)
            b = ps.measure(i)
            atoms += len(a.atoms)
            if not (np.array_equal(a.atoms, b.atoms) and a.n == b.n):
                bad += 1
    return [_flag("snake/particle coupling is atom-for-atom identical", bad == 0, bad,
                  seeds=seeds, atoms=atoms)]


def check_total_mass(seed=DEFAULT_SEED, quick=False):
    seeds = _scale(quick, 100, 10)
    worst = 0.0
    for r in range(seeds):
        contour, sn, ps = _coupled_run(seed + r)
        bp = Wk.extract_bpre(contour, K=contour.K)
        snake_mass = np.array([S.measure_from_snake(sn, i).mass for i in range(contour.nK + 1)])
        direct = np.array([ps.measure(i).mass for i in range(contour.nK + 1)])
        worst = max(worst, np.max(np.abs(snake_mass - bp.masses)), np.max(np.abs(direct - bp.masses)))
    return [_flag("total mass equals extracted branching mass", worst == 0.0, worst, seeds=seeds)]


# ----------------------------------------------------------------------------
# 3: geometric offspring from excursions

def check_geometric(seed=DEFAULT_SEED, quick=False):
    excursions = _scale(quick, 10 ** 5, 10 ** 4)
    n, K = 10, 5.0
    renv = E.constant_environment(0.5, 100, n=n)
    path = Wk.simulate_reflected_walk(renv, K, excursions, seed)
    levels, counts = Wk.offspring_counts(path)
    # the top level is forced down, so only levels below nK - 1 are critical
    keep = levels < path.nK - 1
    counts = counts[keep]
    hist = np.bincount(counts)
    pmf = 0.5 ** (np.arange(len(hist)) + 1)
    rep = st.chi_square_discrete(hist, pmf, "offspring pmf vs Geom(1/2)", excursions=excursions,
                                 individuals=int(keep.sum()))
    return [rep]


# ----------------------------------------------------------------------------
# 4: exit probabilities of the associated process

def check_exit_probabilities(seed=DEFAULT_SEED, quick=False):
    n = 200
    runs = _scale(quick, 10 ** 4, 2000)
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=2000, hurst=0.7, seed=seed)
    renv = E.rescaled_environment(spec, n)
    pot = E.discrete_potential(renv, (-0.25, 0.25))
    cells = replica_rng(seed, 0, 11).choice(np.arange(-40, 41), size=5, replace=False)
    ds = 1.0 / (10.0 * n ** 2)
    out = []
    for j, c in enumerate(cells):
        freq = D.exit_right_frequency(pot, int(c), runs, ds, seed + j)
        beta = float(renv.beta(int(c)))
        se = np.sqrt(beta * (1 - beta) / runs)
        out.append(st.se_report(f"exit-right frequency at cell {int(c)}", freq, beta, se,
                                THRESHOLDS["se_moment"], (runs,)))
    return out


# ----------------------------------------------------------------------------
# 5: survival asymptotics

def check_survival(seed=DEFAULT_SEED, quick=False):
    n, delta, b = 2000, 0.5, 1.0
    gens = int(np.floor(n * delta))
    reps = _scale(quick, 4 * 10 ** 6, 2 * 10 ** 5)
    sched = B.fixed_geometric_schedule(b, n, gens)
    target = B.h_survival(b, delta)
    est = B.survival_estimate(sched, n, delta, reps, seed)
    rel = abs(est.scaled - target) / target
    exact = n * float(B.survival_exact(sched))
    out = [
        st.StatReport("fixed environment n*P(survive) within 5% of h(1, 1/2)", rel,
                      bool(rel < THRESHOLDS["rel_asymptotic"]), None, THRESHOLDS["rel_asymptotic"], (reps,),
                      {"estimate": est.scaled, "se": est.se, "target": target, "ci": [est.ci_low, est.ci_high]}),
        st.se_report("fixed environment n*P(survive) vs exact finite-n value", est.scaled, exact, est.se,
                     THRESHOLDS["se_moment"], (reps,)),
    ]
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=2 * gens, hurst=0.7, seed=seed)
    dep_reps = _scale(quick, 10 ** 5, 2 * 10 ** 4)
    b_star = B.matched_b(spec, n, delta)
    bound = B.h_survival(b_star, delta)
    dep = B.survival_estimate(B.environment_schedule(spec, n), n, delta, dep_reps, seed + 1)
    margin = THRESHOLDS["se_tight"] * dep.se
    out.append(st.StatReport("dependent environment below matched upper bound", dep.scaled,
                             bool(dep.scaled <= bound + margin), None, bound + margin, (dep_reps,),
                             {"b_star": b_star, "bound": bound, "se": dep.se}))
    return out


# ----------------------------------------------------------------------------
# 6: V(1) -> 2

def check_variance_functional(seed=DEFAULT_SEED, quick=False):
    n = 10 ** 4
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=n + 1, hurst=0.7, seed=seed)
    renv = E.rescaled_environment(spec, n)
    v1 = B.variance_functional(renv, 1.0)
    return [st.StatReport("|V(1) - 2| < 0.05", abs(v1 - 2.0), bool(abs(v1 - 2.0) < 0.05), None, 0.05, (n,),
                          {"V1": v1})]


# ----------------------------------------------------------------------------
# 7, 8: Ray-Knight checks

RK_N = 500
RK_NK = 126


def walk_masses(renv, levels, reps, seed):
    """M~^n at ``levels`` (integers) from independent reflected walks of n excursions."""
    K = RK_NK / renv.n
    out = np.empty((reps, len(levels)))
    for r in range(reps):
        c = Wk.reflected_upcounts(renv, K, renv.n, seed, r)
        out[r] = c[levels] / renv.n
    return out


def check_ray_knight_flat(seed=DEFAULT_SEED, quick=False):
    reps = _scale(quick, 10 ** 4, 1000)
    t0 = 0.25
    renv = E.constant_environment(0.5, 4 * RK_N, n=RK_N)
    m = walk_masses(renv, [int(round(t0 * RK_N))], reps, seed)[:, 0]
    eta = D.feller_marginal(1.0, 1.0, 2 * t0, reps, seed)
    return [st.ks_two_sample(m, eta, "flat environment masses vs Feller eta(2 t0)")]


def check_ray_knight_dependent(seed=DEFAULT_SEED, quick=False):
    reps = _scale(quick, 10 ** 4, 1000)
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=4 * RK_N, hurst=0.7, seed=seed)
    renv = E.rescaled_environment(spec, RK_N)
    pot = E.discrete_potential(renv, (0.0, RK_NK / RK_N))
    t0s = (0.1, 0.25)
    levels = [int(round(t * RK_N)) for t in t0s]
    m = walk_masses(renv, levels, reps, seed)
    out = []
    for k, t in enumerate(t0s):
        h = D.sample_H(pot, t, reps, seed + k)
        out.append(st.ks_two_sample(m[:, k], h, f"walk masses vs time-changed Feller at t0={t}"))
    h = D.sample_H(pot, 0.25, reps, seed + 7)
    rk = D.rk_rhs_sampler(pot, [0.25], reps, seed)
    out.append(st.ks_two_sample(rk.values[:, 0], h, "local-time route vs time-changed Feller at t0=0.25"))
    return out


# ----------------------------------------------------------------------------
# 9-11: semimartingale decomposition

def _gh_run(n, r, seed, d=2, K=1.0):
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=2 * n, hurst=0.7, seed=seed)
    renv = E.rescaled_environment(spec, n, r)
    return SP.simulate_bbmre(renv, n, K, d, seed, r)


def check_decomposition(seed=DEFAULT_SEED, quick=False):
    seeds = _scale(quick, 50, 10)
    phi = SP.Cosine((1.0, 0.5))
    worst = max(SP.decomposition(_gh_run(200, r, seed), phi, "gaussian-hermite").relative_residual
                for r in range(seeds))
    return [st.StatReport("decomposition residual below 1e-10 relative", worst, bool(worst < 1e-10), None,
                          1e-10, (seeds,))]


def check_quadratic_variation(seed=DEFAULT_SEED, quick=False):
    reps = _scale(quick, 500, 100)
    phi = SP.Cosine((1.0, 0.0))
    ens = [SP.decomposition(_gh_run(200, r, seed), phi, "gaussian-hermite") for r in range(reps)]
    q = SP.qv_estimate(ens)
    gap = q.relative_gap()
    return [st.StatReport("predictable QV vs 2 int X(phi^2) within 10%", gap, bool(gap < 0.10), None, 0.10,
                          (reps,), {"predictable": float(q.predictable[-1]), "target": float(q.target[-1]),
                                    "realized": float(q.realized[-1])})]


def check_env_noise_vanishing(seed=DEFAULT_SEED, quick=False):
    reps = _scale(quick, 200, 40)
    phi = SP.Cosine((1.0,))
    medians = []
    for n in (100, 400, 1600):
        sups = [np.abs(SP.decomposition(_gh_run(n, r, seed, d=1), phi, "gaussian-hermite").N).max()
                for r in range(reps)]
        medians.append(float(np.median(sups)))
    ok = medians[0] > medians[1] > medians[2]
    return [_flag("median sup|N| strictly decreasing over n = 100, 400, 1600", ok, medians[-1],
                  medians=medians, reps=reps)]


# ----------------------------------------------------------------------------
# 12: environment scaling

def check_environment_scaling(seed=DEFAULT_SEED, quick=False):
    spec = E.EnvironmentSpec(kind="gaussian-hermite", hurst=0.7)
    ns = 2 ** np.arange(8, 15)
    h_exact = st.hurst_regress(E.variance_growth_table(spec, ns))
    paths = _scale(quick, 400, 100)
    rng = replica_rng(seed, 0, 12)
    x = E.fgn_paths(0.7, 2 ** 12, paths, rng)
    cov, se = st.autocovariance(x, 10)
    z = np.abs(cov - E.fgn_autocov(0.7, np.arange(11))) / se
    g = E.transform(x, spec.g0)
    h_mc = st.hurst_regress(st.variance_growth(g, 2 ** np.arange(3, 9)))
    return [
        st.StatReport("Hurst index from exact D_n^2 growth within 0.05 of 0.7", abs(h_exact - 0.7),
                      bool(abs(h_exact - 0.7) < 0.05), None, 0.05, (len(ns),), {"H": h_exact}),
        st.StatReport("Hurst index from sampled logits within 0.05 of 0.7", abs(h_mc - 0.7),
                      bool(abs(h_mc - 0.7) < 0.05), None, 0.05, (paths,), {"H": h_mc}),
        st.StatReport("fGn autocovariance within 4 SE at lags <= 10", float(z.max()),
                      bool(z.max() < THRESHOLDS["se_moment"]), None, THRESHOLDS["se_moment"], (paths,)),
    ]


# ----------------------------------------------------------------------------
# 13, 14: exact samplers

def check_feller_laplace(seed=DEFAULT_SEED, quick=False):
    reps = _scale(quick, 10 ** 5, 10 ** 4)
    c, T = 1.0, 1.0
    path = D.simulate_feller(1.0, c, T, T / 10, seed, reps=reps)
    eta = path.values[:, -1]
    out = []
    for lam in (0.5, 1.0, 2.0):
        e = np.exp(-lam * eta)
        out.append(st.se_report(f"Feller Laplace transform at lambda={lam}", e.mean(),
                                D.feller_laplace(1.0, c, T, lam), e.std(ddof=1) / np.sqrt(reps),
                                THRESHOLDS["se_tight"], (reps,)))
    return out


def check_flat_potential(seed=DEFAULT_SEED, quick=False):
    reps = _scale(quick, 10 ** 4, 2000)
    n = 10
    pot = E.PotentialPath.constant(0.0, n, -8.0, 8.0)
    y = D.associated_batch(pot, 1.0, 1.0 / (10 * n ** 2), reps, seed)[:, 0]
    ref = replica_rng(seed, 0, 14).standard_normal(reps)
    dead = int(np.count_nonzero(np.isnan(y)))
    return [st.ks_two_sample(np.nan_to_num(y, nan=np.inf), ref, "flat potential Y(1) vs N(0,1)", dead=dead)]


CRITERIA = {
    1: ("exact snake/particle coupling", check_coupling),
    2: ("total-mass identity", check_total_mass),
    3: ("critical geometric emergence", check_geometric),
    4: ("exit probabilities of the associated process", check_exit_probabilities),
    5: ("survival asymptotics", check_survival),
    6: ("V(1) -> 2", check_variance_functional),
    7: ("Ray-Knight, flat environment", check_ray_knight_flat),
    8: ("Ray-Knight, dependent environment", check_ray_knight_dependent),
    9: ("decomposition identity", check_decomposition),
    10: ("quadratic variation", check_quadratic_variation),
    11: ("environment noise vanishing", check_env_noise_vanishing),
    12: ("environment scaling", check_environment_scaling),
    13: ("Feller exactness", check_feller_laplace),
    14: ("flat potential marginal", check_flat_potential),
}


def run_criterion(k, seed=DEFAULT_SEED, quick=False):
    title, fn = CRITERIA[k]
    t = time.perf_counter()
    reports = fn(seed=seed, quick=quick)
    return title, reports, time.perf_counter() - t


def _log_result(log, k, title, reports, secs):
    ok = all(r.passed for r in reports)
    log(f"criterion {k:2d} {'PASS' if ok else 'FAIL'} ({secs:.1f}s) {title}")
    for r in reports:
        log("    " + r.line())


def run_all(seed=DEFAULT_SEED, quick=False, only=None, threads=1, log=print):
    """Run the selected criteria; results come back in criterion order."""
    keys = sorted(CRITERIA) if only is None else list(only)
    if threads > 1:
        results = parallel_map(lambda k: (k,) + run_criterion(k, seed, quick), keys, threads)
        for res in results:
            _log_result(log, *res)
        return results
    results = []
    for k in keys:
        res = (k,) + run_criterion(k, seed, quick)
        _log_result(log, *res)
        results.append(res)
    return results
