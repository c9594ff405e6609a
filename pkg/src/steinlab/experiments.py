"""Named experiment pipelines behind the command line interface."""
from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ExperimentSpec, default_output_dir
from .integrals import RadialFieldFamily, bump_field, build_radial_family, cumulant
from .kernel import (BumpFunction, KernelEvaluator, apply_kernel, calibrate, estimate_Kd,
                     eval_kernel, kernel_bound_ratios, random_pairs, verify_divergence_identity,
                     young_constant)
from .malliavin import (TEST_FUNCTIONS, TransformCache, builtin_fixtures, commutation_check,
                        covariant_nabla, duality_check, edgeworth_residual, gamma_check,
                        gradient_D_process, isometry_check, moment_identity, operator_norm_check,
                        skorohod_correction)
from .quadrature import ball_rule
from .sampling import (MCSettings, SamplerSpec, derive_seed, make_rng, mean_and_se,
                       sample_configuration, uniform_in_ball, variance_and_se)
from .stein import BALANCE_TOL, bound_report, mc_distance, mc_samples

CSV_COLUMNS = ("profile", "d", "R", "k", "n_mc", "seed", "w1", "w1_se", "bound_classical",
               "bound_third_cumulant", "bound_o1k", "kd_empirical")
MC_SIGMAS = 4.0


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    name: str
    checks: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def add(self, name: str, value: float, threshold: float, passed: bool | None = None,
            detail: str = "") -> Check:
        ok = bool(value <= threshold) if passed is None else bool(passed)
        c = Check(name, float(value), float(threshold), ok, detail)
        self.checks.append(c)
        return c


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def rows_to_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_outputs(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if result.rows:
        (out_dir / "results.csv").write_text(rows_to_csv(result.rows))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("check", "value", "threshold", "passed", "detail"))
    for c in result.checks:
        w.writerow((c.name, repr(c.value), repr(c.threshold), int(c.passed), c.detail))
    (out_dir / "checks.csv").write_text(buf.getvalue())
    for name, pts in result.curves.items():
        lines = [f"{k} {v!r}" for k, v in pts]
        (out_dir / f"{name}.dat").write_text("# k value\n" + "\n".join(lines) + "\n")
    doc = {"experiment": result.name, "passed": result.passed, "summary": result.summary,
           "provenance": result.provenance}
    (out_dir / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def provenance(spec: ExperimentSpec) -> dict:
    return {"config": spec.resolved, "version": __version__, "seed": spec.mc.master_seed,
            "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


# ------------------------------------------------------------------ helpers


def make_kernel(spec: ExperimentSpec, calibrated: bool = True) -> KernelEvaluator:
    R, d = spec.R, spec.dim
    eta = BumpFunction.default(d, R)
    if spec.eta_center is not None or spec.eta_radius is not None:
        c = np.asarray(spec.eta_center, dtype=float) * R if spec.eta_center else eta.center
        rho = spec.eta_radius * R if spec.eta_radius else eta.rho
        eta = BumpFunction(c, rho, d)
    ke = KernelEvaluator(eta, R, spec.quadrature)
    if spec.kd_override is not None:
        return ke.with_kd(spec.kd_override)
    return calibrate(ke, spec.kd_pairs, spec.kd_seed) if calibrated else ke


def fit_slope(k, y, y_se=None) -> tuple[float, float]:
    """Log-log least squares slope and the half width of its 95% interval.

    With standard errors the fit is weighted by the delta-method variance of
    log y; points with y <= 0 are dropped.
    """
    k = np.asarray(k, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > 0
    x, ly = np.log(k[keep]), np.log(y[keep])
    if x.size < 2:
        return math.nan, math.nan
    w = np.ones_like(x) if y_se is None else 1.0 / np.maximum(
        np.asarray(y_se, dtype=float)[keep] / y[keep], 1e-12) ** 2
    A = np.stack([x, np.ones_like(x)], axis=1)
    W = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * W[:, None], ly * W, rcond=None)
    if x.size < 3 and y_se is None:
        return float(coef[0]), 0.0
    if y_se is None:
        resid = ly - A @ coef
        s2 = float(resid @ resid) / (x.size - 2)
        cov = s2 * np.linalg.inv(A.T @ A)
    else:
        cov = np.linalg.inv((A * w[:, None]).T @ A)
    return float(coef[0]), float(1.96 * math.sqrt(max(cov[0, 0], 0.0)))


def _member_row(spec, fam: RadialFieldFamily, k: int, ke: KernelEvaluator, mc: MCSettings):
    f = fam.member(k)
    w = mc_distance(f, mc)
    rep = bound_report(f, ke.rescaled(f.support_radius), fam, k, spec.kd_override)
    prof = fam.profile
    balanced = abs(prof.moment(3, fam.dim)) <= BALANCE_TOL * prof.moment(2, fam.dim) ** 1.5
    return {"profile": fam.profile.name, "d": spec.dim, "R": prof.R, "k": k,
            "n_mc": mc.replications, "seed": mc.master_seed, "w1": w.value, "w1_se": w.std_error,
            "bound_classical": rep.classical, "bound_third_cumulant": rep.third_cumulant,
            "bound_o1k": rep.o1k if balanced else None, "kd_empirical": rep.kd_used}


# --------------------------------------------------------------- pipelines


def run_verify_kernel(spec: ExperimentSpec) -> ExperimentResult:
    """Divergence identity, compatibility zeros, pointwise and Young bounds."""
    res = ExperimentResult(spec.name, provenance=provenance(spec))
    d, R = spec.dim, spec.R
    ke = make_kernel(spec)

    h = bump_field(np.zeros(d), R, name="unit_bump")
    probes = uniform_in_ball(make_rng(derive_seed(spec.mc.master_seed, 1)), spec.probes, d, R)
    t0 = time.perf_counter()
    err = verify_divergence_identity(ke, h, probes)
    res.add("divergence_identity", err, 1e-2, detail=f"{spec.probes} probes")
    res.summary["divergence_identity_seconds"] = time.perf_counter() - t0

    x, y = random_pairs(ke, spec.pairs, derive_seed(spec.mc.master_seed, 2), radius=R)
    swap = x[:, 0] > y[:, 0]
    x[swap], y[swap] = y[swap].copy(), x[swap].copy()
    keep = np.linalg.norm(x - y, axis=1) > 1e-9
    gmax = float(np.max(np.linalg.norm(eval_kernel(ke, x[keep], y[keep]), axis=1)))
    res.add("compatibility_zeros", gmax, 1e-12, detail=f"{int(keep.sum())} pairs with x1 <= y1")

    kd = ke.Kd_empirical
    fx, fy = random_pairs(ke, spec.kd_pairs, derive_seed(spec.mc.master_seed, 3))
    ratio = float(np.max(kernel_bound_ratios(ke, fx, fy)))
    res.add("pointwise_bound", ratio, kd, detail="max |G||x-y|^(d-1) on fresh pairs vs K_d")
    if spec.kd_override is None:
        kd2 = estimate_Kd(ke, spec.kd_pairs, spec.kd_seed + 1)
        rel = abs(kd2 - kd) / kd
        res.add("kd_stability", rel, 0.15, detail=f"K_d = {kd:.6g} vs {kd2:.6g}")

    rng = make_rng(derive_seed(spec.mc.master_seed, 4))
    young = young_constant(ke)
    worst = 0.0
    for i in range(3):
        c = uniform_in_ball(rng, 1, d, 0.5 * R)[0]
        g = bump_field(c, R * rng.uniform(0.2, 0.45), amplitude=rng.uniform(0.5, 2.0))
        pts, w = ball_rule(d, ke.Rprime, 24, 24)
        V = apply_kernel(ke, g)(pts)
        norm = math.sqrt(float(np.dot(w, np.einsum("nd,nd->n", V, V))))
        worst = max(worst, norm / (young * g.l2_norm))
    res.add("young_bound", worst, 1.0, detail="||apply_kernel(g)||_2 / (K_d v_d R' ||g||_2)")
    res.summary.update({"kd_empirical": kd, "eta_center": ke.eta.center.tolist(),
                        "eta_radius": ke.eta.rho, "eta_admissible": bool(ke.compatible)})
    return res


def run_identities(spec: ExperimentSpec) -> ExperimentResult:
    """Isometry, duality, predictability, commutation, moment and Gamma identities."""
    res = ExperimentResult(spec.name, provenance=provenance(spec))
    d, R = spec.dim, spec.R
    ke = make_kernel(spec)
    mc = spec.mc
    seed = mc.master_seed

    # isometry for a normalised radial member
    fam = build_radial_family(spec.profiles[0], d)
    f = fam.member(1)
    z = mc_samples(f, mc)
    var, var_se = variance_and_se(z)
    mean, mean_se = mean_and_se(z)
    res.add("isometry_variance", abs(var - 1.0), MC_SIGMAS * var_se,
            detail=f"Var = {var:.6f} +- {var_se:.2e}")
    res.add("isometry_mean", abs(mean), MC_SIGMAS * mean_se, detail=f"mean = {mean:.2e}")

    fixtures = builtin_fixtures(d)
    cache = TransformCache(ke)
    for name in ("deterministic", "random", "predictable"):
        fx = fixtures[name]
        r = duality_check(ke, fx.u, fx.F, mc, cache)
        res.add(f"duality_{name}", abs(r.diff), MC_SIGMAS * r.se,
                detail=f"E<u,DF> = {r.lhs:.6f}, E[F delta(u)] = {r.rhs:.6f}")
    pu = fixtures["predictable"].u
    iso = isometry_check(ke, pu, mc)
    res.add("isometry_predictable", abs(iso.diff), MC_SIGMAS * iso.se,
            detail=f"E[delta(u)^2] = {iso.second_moment:.6f}, E[int u^2] = {iso.expected:.6f}")

    # pathwise checks on a few realisations
    spec_cfg = lambda i: SamplerSpec(d, R, derive_seed(seed, 1000 + i))
    corr = max(float(np.max(np.abs(skorohod_correction(ke, pu, sample_configuration(spec_cfg(i)),
                                                        cache))))
               for i in range(spec.realizations))
    res.add("predictable_correction", corr, 1e-6, detail="max |<g_i, D G_i>|")

    rng = make_rng(derive_seed(seed, 5))
    worst = 0.0
    for i in range(spec.realizations):
        cfg = sample_configuration(spec_cfg(i))
        x = uniform_in_ball(rng, spec.probes, d, R)
        y = uniform_in_ball(rng, spec.probes, d, R)
        lo, hi = np.minimum(x[:, 0], y[:, 0]), np.maximum(x[:, 0], y[:, 0])
        x[:, 0], y[:, 0] = lo, hi
        keep = np.linalg.norm(x - y, axis=1) > 1e-9
        Dv = gradient_D_process(ke, pu, cfg, x[keep], y[keep])
        Nv = covariant_nabla(ke, pu, x[keep], y[keep], cfg)
        worst = max(worst, float(np.max(np.abs(Dv), initial=0.0)),
                    float(np.max(np.abs(Nv), initial=0.0)))
    res.add("predictability_zeros", worst, 1e-12, detail="D_y u_x and nabla~_y u_x for x <= y")

    h = bump_field(0.1 * np.eye(d)[0], 0.7 * R, amplitude=3.0, name="h")
    worst = 0.0
    for i in range(spec.realizations):
        cfg = sample_configuration(spec_cfg(100 + i))
        y = uniform_in_ball(rng, spec.probes, d, R)
        worst = max(worst, float(np.max(commutation_check(ke, h, cfg, y))))
    res.add("commutation", worst, 1e-2,
            detail=f"{spec.realizations} realisations x {spec.probes} probes")

    pairs = [(bump_field(np.array([0.1, 0.05] + [0.0] * (d - 2)) * R, 0.7 * R, amplitude=3.0),
              bump_field(np.array([-0.1] + [0.0] * (d - 1)) * R, 0.6 * R, amplitude=2.0)),
             (bump_field(np.array([-0.2] + [0.1] * (d - 1)) * R, 0.6 * R, amplitude=2.0),
              bump_field(np.array([0.15] + [0.0] * (d - 1)) * R, 0.5 * R, amplitude=1.5))]
    worst = 0.0
    for p, (hh, ff) in enumerate(pairs):
        for n in (1, 2):
            for m in (1, 2, 3):
                lhs, rhs = moment_identity(ke, hh, ff, n, m)
                worst = max(worst, abs(lhs - rhs) / abs(rhs))
    res.add("moment_identity", worst, 1e-2, detail="(n, m) in {1,2}x{1,2,3}, two pairs")

    hh, ff = pairs[0]
    ratio = 0.0
    for n in (1, 2, 3):
        norm, bound = operator_norm_check(ke, hh, n, ff)
        ratio = max(ratio, norm / bound)
    res.add("operator_power_bound", ratio, 1.0, detail="max_n ||(nabla~h)^n f|| / bound, n <= 3")

    worst = 0.0
    for k in (2, 3, 4):
        _, _, rel = gamma_check(ke, hh, k)
        worst = max(worst, rel)
    for k in (2, 3):
        _, _, rel = gamma_check(ke, f, k)
        worst = max(worst, rel)
    res.add("gamma_cumulant", worst, 1e-2, detail="k in {2,3,4} bump, k in {2,3} radial member")
    res.summary["kd_empirical"] = ke.Kd_empirical
    return res


def run_rates(spec: ExperimentSpec) -> ExperimentResult:
    """W1 and the three bounds along k_grid, with log-log slopes."""
    res = ExperimentResult(spec.name, provenance=provenance(spec))
    ke = make_kernel(spec)
    by_profile = {}
    for prof in spec.profiles:
        fam = build_radial_family(prof, spec.dim)
        rows = [_member_row(spec, fam, k, ke, spec.mc) for k in spec.k_grid]
        res.rows.extend(rows)
        by_profile[prof.name] = rows
        ks = [r["k"] for r in rows]
        name = prof.name
        res.curves[f"w1_{name}"] = [(r["k"], r["w1"]) for r in rows]
        res.curves[f"w1_se_{name}"] = [(r["k"], r["w1_se"]) for r in rows]
        res.curves[f"bound_classical_{name}"] = [(r["k"], r["bound_classical"]) for r in rows]
        res.curves[f"bound_third_cumulant_{name}"] = [(r["k"], r["bound_third_cumulant"])
                                                       for r in rows]
        cs, _ = fit_slope(ks, [r["bound_classical"] for r in rows])
        ws, wci = fit_slope(ks, [r["w1"] for r in rows], [r["w1_se"] for r in rows])
        res.summary[name] = {"slope_classical": cs, "slope_w1": ws, "slope_w1_ci95": wci}
        if len(ks) > 1:
            res.add(f"slope_classical_{name}", abs(cs + 0.5), 1e-3, detail=f"slope {cs:.6f}")
        if rows[0]["bound_o1k"] is not None:
            res.curves[f"bound_o1k_{name}"] = [(r["k"], r["bound_o1k"]) for r in rows]
            os_, _ = fit_slope(ks, [r["bound_o1k"] for r in rows])
            res.summary[name]["slope_o1k"] = os_
            if len(ks) > 1:
                res.add(f"slope_o1k_{name}", abs(os_ + 1.0), 1e-3, detail=f"slope {os_:.6f}")
    if {"g_plus", "g_balanced"} <= set(by_profile):
        common = sorted(set(r["k"] for r in by_profile["g_plus"])
                        & set(r["k"] for r in by_profile["g_balanced"]))
        if common:
            k = 64 if 64 in common else common[-1]
            a = next(r for r in by_profile["g_plus"] if r["k"] == k)
            b = next(r for r in by_profile["g_balanced"] if r["k"] == k)
            n_sep = spec.separation_replications
            if n_sep is not None and n_sep != spec.mc.replications:
                # the gap is a few SE at the grid's sample size, so rerun this one k larger
                mc = replace(spec.mc, replications=n_sep)
                a, b = (_member_row(spec, build_radial_family(spec.profile(p), spec.dim), k, ke, mc)
                        for p in ("g_plus", "g_balanced"))
                res.rows.extend([a, b])
            se = math.hypot(a["w1_se"], b["w1_se"])
            gap = a["w1"] - b["w1"]
            res.add(f"w1_separation_k{k}", gap / se if se > 0 else math.inf, MC_SIGMAS,
                    passed=gap >= MC_SIGMAS * se,
                    detail=f"W1 g_plus {a['w1']:.5f} - g_balanced {b['w1']:.5f}, "
                           f"combined SE {se:.5f}, n = {a['n_mc']} (value in SE units, must be >= 4)")
    res.summary["kd_empirical"] = ke.Kd_empirical
    return res


def run_bounds(spec: ExperimentSpec) -> ExperimentResult:
    """Empirical W1 against every applicable bound."""
    res = ExperimentResult(spec.name, provenance=provenance(spec))
    ke = make_kernel(spec)
    for prof in spec.profiles:
        fam = build_radial_family(prof, spec.dim)
        for k in spec.k_grid:
            row = _member_row(spec, fam, k, ke, spec.mc)
            res.rows.append(row)
            slack = MC_SIGMAS * row["w1_se"]
            for b in ("bound_classical", "bound_third_cumulant", "bound_o1k"):
                if row[b] is None:
                    continue
                res.add(f"{b}_{prof.name}_k{k}", row["w1"], row[b] + slack,
                        detail=f"W1 {row['w1']:.5f} +- {row['w1_se']:.5f} vs {row[b]:.6g}")
    res.summary["kd_empirical"] = ke.Kd_empirical
    res.summary["kd_is_empirical"] = spec.kd_override is None
    return res


def run_edgeworth(spec: ExperimentSpec) -> ExperimentResult:
    """Edgeworth residuals of a family member against the analytic remainder."""
    res = ExperimentResult(spec.name, provenance=provenance(spec))
    ke = make_kernel(spec)
    fam = build_radial_family(spec.profile(spec.edgeworth_profile), spec.dim)
    f = fam.member(spec.edgeworth_k)
    kf = ke.rescaled(f.support_radius)
    tg = TEST_FUNCTIONS[spec.test_function]
    for n in spec.orders:
        r = edgeworth_residual(kf, f, tg, n, spec.mc)
        res.add(f"edgeworth_n{n}", abs(r.residual), r.remainder_bound + MC_SIGMAS * r.residual_se,
                detail=f"residual {r.residual:.3e} +- {r.residual_se:.1e}, "
                       f"remainder bound {r.remainder_bound:.3e}")
        res.summary[f"n{n}"] = {"lhs": r.lhs, "terms": list(r.terms), "residual": r.residual,
                                "residual_se": r.residual_se,
                                "remainder_bound": r.remainder_bound}
    res.summary["kd_empirical"] = ke.Kd_empirical
    res.summary["kappas"] = [cumulant(f, j) for j in range(2, 5)]
    return res


RUNNERS = {"verify-kernel": run_verify_kernel, "identities": run_identities,
           "rates": run_rates, "bounds": run_bounds, "edgeworth": run_edgeworth}


def run_experiment(spec: ExperimentSpec, out_dir: Path | None = None) -> ExperimentResult:
    result = RUNNERS[spec.name](spec)
    write_outputs(result, out_dir or default_output_dir(spec))
    return result
