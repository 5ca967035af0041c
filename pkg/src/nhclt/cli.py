"""Batch experiment driver.

``nhclt <kind> --config <path> --out <dir> [--seed S] [--workers W]``

Every run writes ``report.json`` (config, seed, version, results and one
verdict per certificate) plus CSV series, each file written atomically.
Exit status: 0 when every certificate passes, 3 when one fails, 2 for an
invalid config.
"""

import argparse
import copy
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from jsonschema import Draft202012Validator
from referencing import Registry, Resource

from . import __version__
from .altsub import (
    ReconstructionError,
    altsub_alpha_certificate,
    build_altsub_chain,
    simulate_policy,
    solve_alt_thresholds,
)
from .decomposition import (
    center_rewards,
    decompose,
    delta_n_l2_check,
    dobrushin_lower_bound_check,
    marginals,
    moments_exact,
    oscillation_bound_suite,
    supports,
    variance_identity_check,
)
from .inventory import (
    Demand,
    GridTooCoarseError,
    InventoryModel,
    InventoryModelError,
    bivariate_degeneracy_demo,
    build_inventory_chain,
    inventory_alpha_certificate,
    inventory_variance_growth,
    solve_base_stock,
    typical_class_check,
)
from .kernels import (
    KernelError,
    KernelSequence,
    StateGrid,
    StochasticKernel,
    compose,
    dobrushin_delta,
    minimal_ergodic_coefficient,
    multistep,
    oscillation,
    sequence_from_dict,
)
from .montecarlo import (
    WORKERS_ENV,
    altsub_family,
    clt_condition_report,
    histogram_series,
    inventory_family,
    normality_report,
    parity_family,
    path_uniforms,
    resolve_workers,
    total_reward_samples,
)
from .reference import InstanceBundle, parity_counterexample, random_instance

KINDS = ("coeff", "decompose", "inventory", "altsub", "clt", "counterexample")
EXIT_OK, EXIT_CONFIG, EXIT_CERTIFICATE = 0, 2, 3
COEFF_TOL = 1e-12
CONDITION_DEFAULTS = {
    "inventory": [50, 100, 200],
    "altsub": [100, 200, 400],
    "counterexample": [51, 101, 201],
}


class ConfigError(ValueError):
    """Every problem found in a config, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: dict
    raw: dict = field(repr=False)

    @property
    def seed(self):
        return self.params.get("seed", 0)


# --- schemas -----------------------------------------------------------------

def _load_schema(name):
    return json.loads(resources.files("nhclt").joinpath("schemas", f"{name}.json").read_text())


_COMMON = _load_schema("_common")
_REGISTRY = Registry().with_resource(_COMMON["$id"], Resource.from_contents(_COMMON))


def schema_for(kind):
    return _load_schema(kind)


def _resolve(node, base=""):
    """Merge ``$ref`` and ``allOf`` members into one flat schema dict."""
    if not isinstance(node, dict):
        return {}
    out = {}
    if "$ref" in node:
        uri, _, pointer = node["$ref"].partition("#")
        uri = uri or base
        target = _REGISTRY.contents(uri)
        for part in filter(None, pointer.split("/")):
            target = target[part]
        out.update(_resolve(target, uri))
        base = uri
    for member in node.get("allOf", ()):
        merged = _resolve(member, base)
        props = {**out.get("properties", {}), **merged.get("properties", {})}
        out.update(merged)
        out["properties"] = props
    own = {k: v for k, v in node.items() if k not in ("$ref", "allOf")}
    if "properties" in own:
        inherited = out.get("properties", {})
        # a bare ``true`` only admits a property declared elsewhere
        own["properties"] = {**inherited, **{k: v for k, v in own["properties"].items()
                                             if not (v is True and k in inherited)}}
    out.update(own)
    if base:
        out["properties"] = {k: _rebase(v, base) for k, v in out.get("properties", {}).items()}
    return out


def _rebase(node, base):
    if isinstance(node, dict) and node.get("$ref", "").startswith("#"):
        return {**node, "$ref": base + node["$ref"]}
    if isinstance(node, dict) and "allOf" in node:
        return {**node, "allOf": [_rebase(m, base) for m in node["allOf"]]}
    return node


def _fill_defaults(instance, schema):
    flat = _resolve(schema)
    for name, sub in flat.get("properties", {}).items():
        sub_flat = _resolve(sub)
        if name not in instance and "default" in sub_flat:
            instance[name] = copy.deepcopy(sub_flat["default"])
        if isinstance(instance.get(name), dict):
            _fill_defaults(instance[name], sub)
    return instance


def _format_error(err):
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"{where}: {err.message}"


# --- semantic checks -----------------------------------------------------------

def _cost_errors(doc, where=""):
    """Cost invariants, checked even when other fields fail the schema."""
    if not isinstance(doc, dict):
        return []
    num = {k: doc.get(k) for k in ("c", "c_h", "c_p")}
    num = {k: v for k, v in num.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}
    errors = []
    if "c" in num and "c_p" in num and not (0 < num["c"] < num["c_p"]):
        errors.append(f"{where}c: model invariant 0 < c < c_p violated (c={num['c']}, c_p={num['c_p']})")
    if "c_h" in num and not num["c_h"] > 0:
        errors.append(f"{where}c_h: model invariant c_h > 0 violated (c_h={num['c_h']})")
    return errors


def _inventory_errors(doc, where=""):
    errors = _cost_errors(doc, where)
    if errors:
        return errors
    try:
        model = build_inventory_model(doc)
    except InventoryModelError as exc:
        return [f"{where}demand: {exc}"]
    s_inf = model.demand.ppf(model.s_inf_ratio)
    if abs(doc["start_state"]) > s_inf + 1e-12:
        errors.append(f"{where}start_state: {doc['start_state']} outside [-s_inf, s_inf] "
                      f"with s_inf = {s_inf:.6g}")
    return errors


def _semantic_errors(kind, p):
    errors = []
    try:
        if kind == "coeff" and "sequence" in p:
            sequence_from_dict(p["sequence"])
        elif kind == "decompose" and "instance" in p:
            InstanceBundle.from_dict(p["instance"])
        elif kind == "inventory":
            errors += _inventory_errors(p)
        elif kind == "clt":
            if p["model"] == "inventory":
                errors += _inventory_errors(p["inventory"], "inventory/")
            elif p["model"] == "counterexample":
                parity_counterexample(2, p["grid"])
        elif kind == "counterexample":
            parity_counterexample(2, p["grid"], p.get("weights"))
    except (KernelError, ValueError, KeyError, TypeError) as exc:
        errors.append(f"{kind}: {exc}")
    return errors


def parse_config(text, kind=None):
    """Validate JSON config text and apply the schema defaults.

    Raises
    ------
    ConfigError
        Listing every schema and model-invariant violation found.
    """
    try:
        raw = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError([f"malformed JSON: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    doc = copy.deepcopy(raw)
    if kind is not None:
        if "kind" in doc and doc["kind"] != kind:
            raise ConfigError([f"kind: config says {doc['kind']!r} but {kind!r} was requested"])
        doc["kind"] = kind
    k = doc.get("kind")
    if k not in KINDS:
        raise ConfigError([f"kind: unknown experiment kind {k!r}; allowed kinds: {', '.join(KINDS)}"])
    schema = schema_for(k)
    validator = Draft202012Validator(schema, registry=_REGISTRY)
    errors = [_format_error(e) for e in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))]
    if k == "inventory":
        errors += _cost_errors(doc)
    elif k == "clt":
        errors += _cost_errors(doc.get("inventory"), "inventory/")
    if errors:
        raise ConfigError(errors)
    _fill_defaults(doc, schema)
    if k == "coeff" and "sequence" not in doc:
        doc["random"] = _fill_defaults(doc.get("random", {}), schema["properties"]["random"])
    if k == "decompose" and "instance" not in doc:
        doc["random"] = _fill_defaults(doc.get("random", {}), schema["properties"]["random"])
    if k == "clt":
        doc.setdefault("condition_n_list", CONDITION_DEFAULTS[doc["model"]])
    errors = _semantic_errors(k, doc)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(k, doc, raw)


def build_inventory_model(doc):
    d = doc["demand"]
    demand = Demand(d["kind"], d.get("params", {}), d.get("J", 1.0))
    return InventoryModel(float(doc["c"]), float(doc["c_h"]), float(doc["c_p"]),
                          demand, doc.get("grid_step"))


# --- experiments -------------------------------------------------------------

@dataclass
class _Run:
    results: dict = field(default_factory=dict)
    certificates: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def certify(self, name, passed, **detail):
        self.certificates[name] = {"passed": bool(passed), **detail}


def _coeff_checks(seq, rng, run_totals):
    """Product, multi-step and oscillation checks on one sequence."""
    deltas = [dobrushin_delta(K) for K in seq.kernels]
    worst = run_totals
    for t in range(len(seq.kernels) - 1):
        lhs = dobrushin_delta(compose(seq.kernels[t], seq.kernels[t + 1]))
        worst["product"] = max(worst["product"], lhs - deltas[t] * deltas[t + 1])
    n = seq.horizon
    if n >= 2:
        alpha = minimal_ergodic_coefficient(seq).alpha_n
        for i in range(1, n):
            for j in range(i + 1, n + 1):
                lhs = dobrushin_delta(multistep(seq, i, j))
                worst["multistep"] = max(worst["multistep"], lhs - float(np.prod(deltas[i - 1:j - 1])))
                worst["multistep_alpha"] = max(worst["multistep_alpha"], lhs - (1 - alpha) ** (j - i))
    for K, d in zip(seq.kernels, deltas):
        h = rng.uniform(-10, 10, size=len(seq.grid))
        worst["oscillation"] = max(worst["oscillation"], oscillation(K.apply(h)) - d * oscillation(h))
    worst["count"] += 1


def run_coeff(p, seed, workers):
    run = _Run()
    textbook = dobrushin_delta(np.array([[0.5, 0.5], [0.25, 0.75]]))
    run.certify("textbook_delta", textbook == 0.25, value=textbook)
    rng = np.random.default_rng(seed)
    worst = {"product": -np.inf, "multistep": -np.inf, "multistep_alpha": -np.inf,
             "oscillation": -np.inf, "count": 0}
    if "sequence" in p:
        seq = sequence_from_dict(p["sequence"])
        _coeff_checks(seq, rng, worst)
        if seq.horizon >= 2:
            run.results["coefficients"] = minimal_ergodic_coefficient(seq).to_dict()
    else:
        cfg = p["random"]
        for _ in range(cfg["count"]):
            s = int(rng.integers(2, cfg["max_states"] + 1))
            n = int(rng.integers(2, cfg["max_n"] + 1))
            grid = StateGrid(np.arange(s, dtype=float))
            ks = tuple(StochasticKernel(grid, rng.dirichlet(np.full(s, 0.5), size=s))
                       for _ in range(n - 1))
            _coeff_checks(KernelSequence(grid, ks, n), rng, worst)
    run.results["sequences_checked"] = worst.pop("count")
    for name, excess in worst.items():
        run.certify(name, excess <= COEFF_TOL, worst_excess=excess, tolerance=COEFF_TOL)
    return run


def run_decompose(p, seed, workers):
    run = _Run()
    if "instance" in p:
        bundle = InstanceBundle.from_dict(p["instance"])
    else:
        r = p["random"]
        bundle = random_instance(seed, r["states"], r["n"], r["m"], r["reward_scale"])
    law, rewards = bundle.law, bundle.rewards
    rep = decompose(law, rewards)
    supp = supports(marginals(law))
    run.results["provenance"] = bundle.provenance
    run.results["decomposition"] = rep.to_dict()
    run.files["decomposition.csv"] = rep.to_csv(supp)
    tol = 1e-10 * max(1.0, rep.bound_Cn)
    run.certify("martingale_property", rep.max_conditional_mean <= tol,
                max_conditional_mean=rep.max_conditional_mean, tolerance=tol)
    run.certificates["variance_identity"] = variance_identity_check(rep).to_dict()
    run.certificates["delta_n_l2"] = delta_n_l2_check(law, rewards, rep).to_dict()
    if law.m == 0 and law.n >= 2:
        run.certificates["variance_lower_bound"] = dobrushin_lower_bound_check(law, rewards).to_dict()
    if p["suite"]:
        suite = oscillation_bound_suite(law, rewards)
        for name, res in suite.results.items():
            run.certificates[f"suite.{name}"] = res.to_dict()
    return run


def run_inventory(p, seed, workers):
    run = _Run()
    model = build_inventory_model(p)
    n, h = p["n"], model.h
    run.results["model"] = model.to_dict()
    horizon = max(n, p["suite_n"], p["bivariate_n"], max(p["variance_n_list"]))
    try:
        sol = solve_base_stock(model, horizon)
    except GridTooCoarseError as exc:
        run.certify("s1_quantile", False, error=str(exc))
        return run
    run.files["base_stock.csv"] = sol.to_csv()
    levels = sol.levels[:n]
    run.results["s_1"], run.results["s_n"] = float(levels[0]), float(levels[-1])
    run.results["s1_quantile"], run.results["s_inf"] = sol.s1_quantile, sol.s_inf
    run.certify("base_stock_monotone", sol.is_monotone())
    run.certify("s1_quantile", abs(levels[0] - sol.s1_quantile) <= 2 * h,
                s_1=float(levels[0]), quantile=sol.s1_quantile, tolerance=2 * h)
    run.certify("s_n_bound", levels[-1] <= sol.s_inf + 2 * h,
                s_n=float(levels[-1]), s_inf=sol.s_inf, tolerance=2 * h)
    defect = sol.convexity_defect()
    run.certify("value_convexity", defect >= -1e-9, defect=defect)

    chain = build_inventory_chain(model, sol, n, p["start_state"])
    law = chain.law
    supp = supports(marginals(law))
    pts = law.grid.points
    lo = min(float(pts[s].min()) for s in supp)
    hi = max(float(pts[s].max()) for s in supp)
    run.certify("reachable_states", lo >= -model.demand.J - 1e-12 and hi <= sol.s_inf + 2 * h,
                min_state=lo, max_state=hi)
    mean, var = moments_exact(law, chain.rewards)
    v_n = sol.value(n, p["start_state"])
    run.results["mean_cost"], run.results["var_cost"] = mean, var
    run.certify("mean_matches_value", abs(mean - v_n) <= 2 * h * n,
                mean=mean, value=v_n, tolerance=2 * h * n)

    typical = typical_class_check(model.demand, np.arange(1, 9) * model.demand.J / 8, h)
    run.certify("typical_class", typical.is_typical, **typical.to_dict())
    if typical.is_typical:
        cert = inventory_alpha_certificate(model, chain, p["alpha_pairs"], seed)
        run.certificates["alpha"] = cert.to_dict()
    else:
        run.certify("alpha", False, error="demand density is not in the typical class")

    bchain = build_inventory_chain(model, sol, p["bivariate_n"], p["start_state"])
    biv = bivariate_degeneracy_demo(bchain)
    run.certify("bivariate_degeneracy", biv.alpha_hat == 0.0 and biv.rho_hat == 1.0, **biv.to_dict())

    growth = inventory_variance_growth(model, p["variance_n_list"], p["start_state"], sol)
    g = growth.to_dict()
    run.results["variance_growth"] = g
    run.certify("variance_doubling", growth.ratios_ok and growth.slope > 0,
                ratios=g["ratios"], slope=growth.slope)
    run.certify("variance_beta", growth.beta_ok, beta=growth.beta,
                variances=g["variances"], n_list=g["n_list"])

    if p["suite_n"]:
        schain = build_inventory_chain(model, sol, p["suite_n"], p["start_state"])
        suite = oscillation_bound_suite(schain.law, schain.rewards)
        rep = decompose(schain.law, schain.rewards)
        run.certify("inequality_suite", suite.passed, n=p["suite_n"],
                    failed=[k for k, r in suite.results.items() if not r.passed])
        run.certificates["variance_identity"] = variance_identity_check(rep).to_dict()
    return run


def run_altsub(p, seed, workers):
    run = _Run()
    n, G = p["n"], p["grid_points"]
    try:
        sol = solve_alt_thresholds(n, G)
    except ReconstructionError as exc:
        run.certify("threshold_properties", False, error=str(exc))
        return run
    run.certify("threshold_properties", True)
    g = sol.thresholds
    x = sol.states
    upper = x >= 1.0 / 3.0
    k50 = min(n, 50)
    run.certify("identity_on_upper_third", bool(np.all(g[:k50, upper] == x[upper])), k_max=k50)
    low = float(g[2:].min())
    run.certify("threshold_floor", low >= 1 / 6 - 2 * sol.step, min_g=low, tolerance=2 * sol.step)
    run.files["thresholds.csv"] = sol.to_csv(range(1, min(n, p["csv_max_k"]) + 1))

    chain = build_altsub_chain(sol, n)
    mean, var = moments_exact(chain.law, chain.rewards)
    rate = mean / n
    target = 2 - math.sqrt(2)
    run.results.update({"mean": mean, "var": var, "rate": rate})
    run.certify("mean_rate", abs(rate - target) <= 10 / n + 0.01, rate=rate, target=target,
                tolerance=10 / n + 0.01)
    half = build_altsub_chain(sol, n // 2)
    _, var_half = moments_exact(half.law, half.rewards)
    run.certify("variance_growth", var >= 1.5 * var_half - 1e-9, var_n=var, var_half=var_half)
    cert = altsub_alpha_certificate(chain)
    doc = cert.to_dict()
    doc.pop("per_step_delta")
    run.certificates["alpha"] = doc

    u = path_uniforms(seed, 0, p["N"], n)
    paths, count = simulate_policy(sol, n, u)
    switches = np.count_nonzero(np.diff(paths, axis=1), axis=1)
    se = math.sqrt(var / p["N"])
    sim_mean = float(count.mean())
    run.certify("simulation_counts_match", bool(np.array_equal(switches, count)))
    run.certify("simulation_mean", abs(sim_mean - mean) <= 5 * se, sample_mean=sim_mean,
                exact_mean=mean, tolerance=5 * se)
    return run


def _clt_family(p):
    model = p["model"]
    top = max(p["n"], max(p["condition_n_list"]))
    if model == "inventory":
        inv = p["inventory"]
        return inventory_family(build_inventory_model(inv), inv["start_state"], top)
    if model == "altsub":
        return altsub_family(p["grid_points"], top)
    return parity_family(p["grid"])


def run_clt(p, seed, workers):
    run = _Run()
    family = _clt_family(p)
    n, N = p["n"], p["N"]
    law, rewards = family(n)
    exact = moments_exact(law, rewards)
    C = center_rewards(law, rewards).bound_Cn
    batch = total_reward_samples(law, rewards, seed, N, workers)
    cond = clt_condition_report(family, p["condition_n_list"])
    alpha_row = clt_condition_report(family, [n]).rows[0]
    report = normality_report(batch, exact, alpha_row.ratio)
    doc = report.to_dict()
    doc["bound_Cn"] = float(C)
    doc["alpha_n"] = alpha_row.alpha_n
    run.results["normality"] = doc
    run.results["condition"] = cond.to_dict()
    run.files["totals.csv"] = batch.to_csv()
    rows = histogram_series(batch, exact, p["bins"])
    run.files["histogram.csv"] = "z,empirical_density,normal_density\n" + "".join(
        f"{a!r},{b!r},{c!r}\n" for a, b, c in rows)
    if p["model"] == "counterexample":
        if report.degenerate:
            run.certify("degenerate_flagged", report.sample_var == 0.0, sample_var=report.sample_var)
        else:
            run.certify("negative_control", report.ks_distance >= p["ks_min"],
                        ks=report.ks_distance, threshold=p["ks_min"])
        run.certify("condition_rejects", not cond.verdict, verdict=cond.to_dict()["verdict"])
    else:
        run.certify("ks_distance", not report.degenerate and report.ks_distance <= p["ks_max"],
                    ks=report.ks_distance, threshold=p["ks_max"])
        se = math.sqrt(exact[1] / N)
        run.certify("sample_mean", abs(report.sample_mean - exact[0]) <= 5 * se,
                    sample_mean=report.sample_mean, exact_mean=exact[0], tolerance=5 * se)
        run.certify("condition_trend", cond.verdict, slope=cond.slope)
    return run


def run_counterexample(p, seed, workers):
    run = _Run()
    n = p["n"]
    bundle = parity_counterexample(n, p["grid"], p.get("weights"))
    law, rewards = bundle.law, bundle.rewards
    x, w = law.grid.points, law.initial
    var_x = float(w @ (x - w @ x) ** 2)
    mean, var = moments_exact(law, rewards)
    margs = marginals(law)
    indiv = 0.0
    for i in range(1, n + 1):
        joint = margs[i - 1][:, None] * law.kernel(i)
        f = rewards.tensor(i)
        mu = float((joint * f).sum())
        indiv += float((joint * (f - mu) ** 2).sum())
    expected = 0.0 if n % 2 == 0 else var_x
    run.results.update({"var_x": var_x, "mean_Sn": mean, "var_Sn": var,
                        "sum_individual_variances": indiv, "parity": "even" if n % 2 == 0 else "odd"})
    run.certify("variance_exact", abs(var - expected) <= 1e-12 * max(1.0, var_x),
                var_Sn=var, expected=expected)
    run.certify("individual_variances", abs(indiv - n * var_x) <= 1e-12 * n * max(1.0, var_x),
                total=indiv, expected=n * var_x)
    batch = total_reward_samples(law, rewards, seed, p["N"], workers)
    report = normality_report(batch, (mean, var))
    run.results["normality"] = report.to_dict()
    run.files["totals.csv"] = batch.to_csv()
    if report.degenerate:
        run.certify("degenerate_flagged", n % 2 == 0 and report.sample_var == 0.0,
                    sample_var=report.sample_var)
    else:
        run.certify("negative_control", report.ks_distance >= p["ks_min"],
                    ks=report.ks_distance, threshold=p["ks_min"])
    cond = clt_condition_report(parity_family(law.grid), p["condition_n_list"])
    run.results["condition"] = cond.to_dict()
    run.certify("condition_rejects", not cond.verdict, verdict=cond.to_dict()["verdict"])
    return run


RUNNERS = {
    "coeff": run_coeff,
    "decompose": run_decompose,
    "inventory": run_inventory,
    "altsub": run_altsub,
    "clt": run_clt,
    "counterexample": run_counterexample,
}


# --- output ------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _atomic_write(path, text):
    folder = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_experiment(config, out_dir, seed=None, workers=None):
    """Run one experiment and write its files.

    Returns
    -------
    (exit_code, report) where ``report`` is the dict written to report.json.
    """
    seed = config.seed if seed is None else int(seed)
    if seed < 0:
        raise ConfigError(["seed: must be nonnegative"])
    workers = resolve_workers(workers)
    run = RUNNERS[config.kind](config.params, seed, workers)
    passed = all(c["passed"] for c in run.certificates.values())
    report = _jsonable({
        "artifact": "nhclt",
        "version": __version__,
        "kind": config.kind,
        "seed": seed,
        "config": config.raw,
        "resolved_config": config.params,
        "results": run.results,
        "certificates": run.certificates,
        "passed": passed,
    })
    os.makedirs(out_dir, exist_ok=True)
    for name, text in sorted(run.files.items()):
        _atomic_write(os.path.join(out_dir, name), text)
    body = json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"
    _atomic_write(os.path.join(out_dir, "report.json"), body)
    return (EXIT_OK if passed else EXIT_CERTIFICATE), report


def _summary(report, out_dir):
    lines = [f"nhclt {report['version']} {report['kind']} seed={report['seed']} -> {out_dir}"]
    for name, cert in sorted(report["certificates"].items()):
        lines.append(f"  {'PASS' if cert['passed'] else 'FAIL'}  {name}")
    lines.append("all certificates passed" if report["passed"] else "certificate failure")
    return "\n".join(lines)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="nhclt", description=__doc__.splitlines()[0])
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--workers", type=int, default=None,
                        help=f"sampling threads (default: ${WORKERS_ENV} or 1)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    args = parser.parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        config = parse_config(text, args.kind)
        workers = resolve_workers(args.workers)
        code, report = run_experiment(config, args.out, args.seed, workers)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_summary(report, args.out))
    return code


if __name__ == "__main__":
    sys.exit(main())
