"""Experiment runners: validated config in, deterministic reports and files out.

Every runner returns a RunResult with a stable exit code contract:
0 pass, 1 fail (a verified clause was violated), 2 inconclusive, 3 config
error.  Reports are canonical JSON (sorted keys, no timestamps); wall-clock
metadata lives only in the output manifest so byte-identical reproduction is
checkable.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import drift, finite, mixing, netctl, rates, registry
from .chains import FiniteKernel, annotate_stopping_times, simulate, trajectory_csv
from .config import ExperimentConfig
from .registry import ConfigError

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_CONFIG = 0, 1, 2, 3

_VERDICT_EXIT = {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}

THEOREMS = ("harris", "subgeometric", "det_sampling", "connor_fort", "geometric", "douc")


@dataclass
class RunResult:
    exit_code: int
    report: dict
    artifacts: list = field(default_factory=list)  # (name, text) pairs

    def report_json(self) -> str:
        return json.dumps(_jsonable(self.report), sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, float) and obj != obj:
        return "nan"
    return obj


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _build_model(cfg: ExperimentConfig):
    m = cfg.model
    if m.kind == "finite":
        if m.matrix is None and m.matrix_path is None:
            raise ConfigError("finite model needs a matrix or matrix_path")
        matrix = m.matrix
        if matrix is None:
            path = Path(m.matrix_path)
            if not path.exists():
                raise ConfigError(f"matrix_path {path} does not exist")
            if path.suffix == ".csv":
                matrix = np.loadtxt(path, delimiter=",").tolist()
            else:
                matrix = json.loads(path.read_text())["matrix"]
        try:
            chain = finite.FiniteChain(matrix, m.labels)
        except ValueError as e:
            raise ConfigError(f"bad transition matrix: {e}") from e
        return {"kind": "finite", "chain": chain,
                "kernel": FiniteKernel(matrix, m.labels), "params": None}
    params = m.params or cfg.model.params
    if params is None:
        from .config import NetctlParams
        params = NetctlParams()
    plant = netctl.PlantParams(a=params.a, b=params.b, noise_std=params.noise_std)
    coder = netctl.CoderParams(K=params.K, Delta0=params.Delta0, alpha=params.alpha,
                               delta_zoom=params.delta_zoom, L=params.L, p=params.p)
    kernel = netctl.as_kernel(plant, coder, first_step_success=m.first_step_success)
    return {"kind": "netctl", "plant": plant, "coder": coder, "kernel": kernel,
            "params": params}


def _state_from(value, model):
    if model["kind"] == "finite":
        return int(value)
    x, d = (value if isinstance(value, (list, tuple)) else (0.0, float(value)))
    return netctl.make_state(float(x), float(d), model["plant"], model["coder"])


def _grid_from(values, model):
    return [_state_from(v, model) for v in values]


def run_simulate(cfg: ExperimentConfig) -> RunResult:
    model = _build_model(cfg)
    kernel = model["kernel"]
    x0 = _state_from(cfg.x0, model)
    traj = simulate(kernel, x0, cfg.budgets.horizon, cfg.seed)
    if cfg.policy is not None:
        policy = registry.policy_from(cfg.policy, model["kind"])
        if getattr(policy, "kind", None) == "record":
            times, truncated = policy.times(traj)
            traj = traj.with_stopping_times(times, truncated)
        else:
            traj = annotate_stopping_times(traj, policy, cfg.seed)
    artifacts = [("trajectory.csv", trajectory_csv(traj, kernel))]
    if model["kind"] == "netctl" and traj.records is not None:
        lines = ["t,x,Delta,Upsilon,overflow,u"]
        for rec in traj.records:
            lines.append(f"{rec['t']},{rec['x']!r},{rec['Delta']!r},{rec['Upsilon']},"
                         f"{int(rec['overflow'])},{rec['u']!r}")
        artifacts.append(("events.csv", "\n".join(lines) + "\n"))
    report = {"kind": "simulate", "seed": cfg.seed, "horizon": cfg.budgets.horizon,
              "kernel": kernel.kernel_id, "rows": len(traj.states),
              "stopping_times": list(traj.stopping_times or ()),
              "truncated": traj.truncated}
    return RunResult(EXIT_PASS, report, artifacts)


def _drift_spec(cfg: ExperimentConfig, model) -> drift.DriftSpec:
    if cfg.drift is None:
        raise ConfigError("this run needs a drift block")
    kind = model["kind"]
    d = cfg.drift
    return drift.DriftSpec(
        V=registry.scalar_fn(d.V, kind),
        C=registry.set_fn(d.C, kind),
        f=registry.scalar_fn(d.f, kind) if d.f else None,
        delta=registry.scalar_fn(d.delta, kind) if d.delta else None,
        lam=d.lam, b=d.b, epsilon=d.epsilon)


def run_verify(cfg: ExperimentConfig) -> RunResult:
    if cfg.theorem not in THEOREMS:
        raise ConfigError(f"unknown theorem id {cfg.theorem!r}; choose from {THEOREMS}")
    model = _build_model(cfg)
    kernel = model["kernel"]
    spec = _drift_spec(cfg, model)
    grid = _grid_from(cfg.budgets.grid, model)
    if not grid and cfg.theorem != "det_sampling":
        raise ConfigError("budgets.grid must list at least one state")
    B = cfg.budgets
    if cfg.theorem == "det_sampling":
        if cfg.policy is None or cfg.policy.get("kind") != "deterministic":
            raise ConfigError("det_sampling verifies a deterministic policy")
        n_fn = registry.n_of_state_fn(cfg.policy["n"], model["kind"])
        r = registry.rate_from(cfg.rate) if cfg.rate else None
        if r is None:
            raise ConfigError("det_sampling needs a rate block")
        cert = drift.check_deterministic_sampling(n_fn, r, spec.lam, grid or [0])
    else:
        policy = registry.policy_from(cfg.policy, model["kind"]) if cfg.policy else None
        if cfg.theorem == "harris":
            cert = drift.check_harris_recurrence(kernel, policy, spec, grid, B.n_samples,
                                                 horizon=B.horizon, seed=cfg.seed)
        elif cfg.theorem == "subgeometric":
            r = registry.rate_from(cfg.rate) if cfg.rate else None
            if r is None:
                raise ConfigError("subgeometric needs a rate block")
            cert = drift.check_subgeometric_rate(kernel, policy, spec, r, grid, B.n_samples,
                                                 horizon=B.horizon, seed=cfg.seed,
                                                 k_blocks=B.k_blocks)
        elif cfg.theorem == "connor_fort":
            r = registry.rate_from(cfg.rate) if cfg.rate else None
            if r is None:
                raise ConfigError("connor_fort needs a rate block for R")
            cert = drift.check_connor_fort(kernel, policy, spec, r, grid, B.n_samples,
                                           horizon=B.horizon, seed=cfg.seed)
        elif cfg.theorem == "geometric":
            grid_c = _grid_from(B.grid_in_C, model)
            cert = drift.check_geometric_rate(kernel, policy, spec, cfg.a_test, grid,
                                              grid_c, B.n_samples, horizon=B.horizon,
                                              seed=cfg.seed)
        else:  # douc
            phi_block = cfg.rate or {"family": "polynomial", "params": {"alpha": 0.5, "c": 1.0}}
            exponent = float(phi_block.get("params", {}).get("alpha", 0.5))
            scale = float(phi_block.get("params", {}).get("c", 1.0))
            if exponent > 1.0:
                raise ConfigError("douc phi must be concave: exponent <= 1")
            phi = lambda v: scale * v ** exponent
            cert = drift.check_douc_drift(kernel, spec.V, phi, spec.C, grid, B.n_samples,
                                          b=spec.b, seed=cfg.seed)
    report = {"kind": "verify", "certificate": cert.to_dict(), "seed": cfg.seed}
    return RunResult(_VERDICT_EXIT[cert.verdict], report,
                     [("certificate.json", json.dumps(_jsonable(cert.to_dict()), sort_keys=True))])


def run_rate(cfg: ExperimentConfig) -> RunResult:
    model = _build_model(cfg)
    rr = cfg.rate_run
    if rr is None:
        raise ConfigError("rate runs need a rate_run block")
    B = cfg.budgets
    if rr.mode == "exact":
        if model["kind"] != "finite":
            raise ConfigError("exact mode needs a finite model")
        curve = mixing.exact_tv_curve(model["chain"], int(rr.x0), B.n_max)
    elif rr.mode == "coupling":
        if model["kind"] != "finite":
            raise ConfigError("coupling mode needs a finite model")
        if rr.minorization is None:
            raise ConfigError("coupling mode requires a minorization block")
        C = registry.set_members(rr.minorization["C"], model["chain"].n)
        witness = finite.find_minorization(model["chain"], C, int(rr.minorization.get("n0", 1)))
        bound = mixing.coupled_tv_bound(model["chain"], witness, int(rr.x0),
                                        mixing.stationary_sampler(model["chain"]),
                                        B.n_max, B.n_pairs, cfg.seed)
        curve = mixing.DecayCurve(bound["n"], bound["bound"], bound["ci_lo"],
                                  bound["ci_hi"], exact=False,
                                  meta={"witness_epsilon": witness.epsilon})
    else:
        if model["kind"] != "finite":
            raise ConfigError("empirical mode currently supports finite models")
        ns = list(range(0, B.n_max + 1))
        dist, lo, hi = [], [], []
        for n in ns:
            est = mixing.empirical_distance(model["chain"], int(rr.x0), n, B.n_samples,
                                            seed=cfg.seed + n)
            dist.append(est["tv"])
            lo.append(est["ci_lo"])
            hi.append(est["ci_hi"])
        curve = mixing.DecayCurve(ns, dist, lo, hi, exact=False)
    fit = mixing.fit_rate(curve)
    report = {"kind": "rate", "mode": rr.mode, "fit": fit, "seed": cfg.seed,
              "points": len(curve.n)}
    code = EXIT_INCONCLUSIVE if fit.get("inconclusive") else EXIT_PASS
    return RunResult(code, report, [("decay_curve.csv", curve.to_csv()),
                                    ("fit.json", json.dumps(_jsonable(fit), sort_keys=True))])


def default_netctl_config(seed: int = 17) -> ExperimentConfig:
    """The stability-experiment defaults: a=2, b=1, K=3, p=0.9, alpha=0.7,
    delta_zoom=0.1, L=1, noise 0.1, small set {Delta <= 10}."""
    return parse_config({
        "model": {"kind": "netctl", "params": {}, "first_step_success": True},
        "policy": {"kind": "granular_success"},
        "drift": {"V": {"name": "delta_sq"}, "C": {"kind": "delta_leq", "value": 10.0},
                  "lambda": 0.8, "b": 1e4, "epsilon": 0.2},
        "theorem": "geometric",
        "a_test": 1.2,
        "budgets": {"n_samples": 20000, "horizon": 2000, "n_traj": 2000,
                    "grid": [[0.0, 1e4], [0.0, 1e5], [0.0, 1e6]],
                    "grid_in_C": [[0.0, 2.0], [0.0, 8.0]]},
        "seed": seed,
    })


def run_netctl_demo(cfg: ExperimentConfig) -> RunResult:
    """End-to-end reproduction of the erasure-channel stability experiment:
    analytic margins, the quadratic-stability batch run, inter-time tail
    checks, and the geometric-ergodicity certificate."""
    model = _build_model(cfg)
    if model["kind"] != "netctl":
        raise ConfigError("netctl-demo needs a netctl model")
    plant, coder, params = model["plant"], model["coder"], model["params"]
    B = cfg.budgets
    rv = netctl.rate_variables(coder.K)
    margin = netctl.stability_margin(plant.a, coder.p, rv["R"])
    budget = netctl.epsilon_budget(coder, plant.a)
    run = netctl.batch_run(plant, coder, B.n_traj, B.horizon, cfg.seed, Delta_init=1e6)

    def window_stats(arr):
        w = max(B.horizon // 4, 2)
        t1, t2 = B.horizon // 2, B.horizon
        w1 = arr[t1 - w + 1:t1 + 1].mean(axis=0)
        w2 = arr[t2 - w + 1:t2 + 1].mean(axis=0)
        m1, m2 = float(w1.mean()), float(w2.mean())
        groups = 40
        mom1 = float(np.median([g.mean() for g in np.array_split(w1, groups)]))
        mom2 = float(np.median([g.mean() for g in np.array_split(w2, groups)]))
        return {"window": w, "t": [t1, t2], "mean": [m1, m2],
                "rel_change": abs(m2 - m1) / m1,
                "median_of_means": [mom1, mom2],
                "mom_rel_change": abs(mom2 - mom1) / mom1}

    x2 = window_stats(run["x"] ** 2)
    d2 = window_stats(run["Delta"] ** 2)
    quad_pass = x2["rel_change"] < 0.05 and d2["rel_change"] < 0.05
    table = netctl.intertime_table(run)
    tails = netctl.verify_intertime_tails(
        table, coder.p, [0.0, 10.0 * coder.L, 100.0 * coder.L, 1000.0 * coder.L])
    # certificate on the success-conditioned kernel: the drift conditional at a
    # stopping time includes the success event at that time
    kernel_forced = netctl.as_kernel(plant, coder, first_step_success=True)
    policy = netctl.GranularSuccessPolicy()
    spec = _drift_spec(cfg, model) if cfg.drift is not None else drift.DriftSpec(
        V=lambda s: s.Delta ** 2, C=lambda s: s.Delta <= params.F, lam=1.0 - 0.2,
        b=1e4, epsilon=0.2)
    grid = _grid_from(B.grid, model) or [netctl.make_state(0.0, d, plant, coder)
                                         for d in (1e4, 1e5, 1e6)]
    grid_c = _grid_from(B.grid_in_C, model) or [netctl.make_state(0.0, d, plant, coder)
                                                for d in (2.0, 8.0)]
    cert = drift.check_geometric_rate(kernel_forced, policy, spec, cfg.a_test, grid,
                                      grid_c, B.n_samples, horizon=B.horizon,
                                      seed=cfg.seed)
    p = coder.p
    fitted_B = cert.constants["B"]
    window_ok = p < fitted_B < p / spec.lam
    report = {
        "kind": "netctl_demo",
        "params": {"a": plant.a, "b": plant.b, "noise_std": plant.noise_std,
                   "K": coder.K, "Delta0": coder.Delta0, "alpha": coder.alpha,
                   "delta_zoom": coder.delta_zoom, "L": coder.L, "p": coder.p,
                   "F": params.F},
        "rate_variables": rv,
        "stability_margin": margin,
        "epsilon_budget": budget,
        "quadratic_stability": {"x_sq": x2, "Delta_sq": d2, "passes": quad_pass,
                                "n_traj": B.n_traj},
        "intertime_tails": tails,
        "certificate": cert.to_dict(),
        "fitted_B_in_window": window_ok,
        "seed": cfg.seed,
    }
    ok = (margin < 1.0 and quad_pass and tails["passes"]
          and cert.verdict == "pass" and window_ok)
    code = EXIT_PASS if ok else (EXIT_INCONCLUSIVE if cert.verdict == "inconclusive" else EXIT_FAIL)
    return RunResult(code, report,
                     [("netctl_demo.json", json.dumps(_jsonable(report), sort_keys=True))])


def run_selftest(cfg: ExperimentConfig | None = None) -> RunResult:
    """Fast oracle checks: the two-state chain ground truths, quantizer edges,
    rate-class gates, and the product inequality of conjugate pairs."""
    checks = []

    def check(name, ok, detail=""):
        checks.append({"name": name, "ok": bool(ok), "detail": detail})

    chain = finite.FiniteChain([[0.9, 0.1], [0.2, 0.8]])
    pi = finite.stationary(chain)
    check("stationary_two_state", abs(pi[0] - 2 / 3) < 1e-12 and abs(pi[1] - 1 / 3) < 1e-12,
          f"pi = {pi.tolist()}")
    check("slem_two_state", abs(finite.slem(chain) - 0.7) < 1e-9)
    fit = mixing.fit_rate(mixing.exact_tv_curve(chain, 0, 40))
    check("fit_recovers_slem", abs(fit["geometric"]["rate"] - 0.7) < 0.02,
          f"rate = {fit['geometric']['rate']:.4f}")
    check("quantizer_edges",
          netctl.quantize(-0.3, 2, 1.0) == -0.5 and netctl.quantize(1.0, 2, 1.0) == 0.5
          and netctl.quantize(3.0, 2, 1.0) == 0.0)
    check("stability_margin_exact", netctl.stability_margin(2, 0.9, 2) == 0.8)
    check("rate_gate_polynomial",
          rates.lambda0_membership(rates.make_polynomial(1, 2), 1000)["passes"])
    check("rate_gate_geometric_rejected",
          not rates.lambda0_membership(rates.make_geometric(2, 1), 100)["passes"])
    pair = rates.young_pair(2.0)
    rng = np.random.default_rng(0)
    xs, ys = 10.0 ** rng.uniform(0, 6, 2000), 10.0 ** rng.uniform(0, 6, 2000)
    check("young_inequality", bool(np.all(pair.psi1(xs) * pair.psi2(ys) <= xs + ys)))
    ok = all(c["ok"] for c in checks)
    report = {"kind": "selftest", "checks": checks, "passes": ok}
    return RunResult(EXIT_PASS if ok else EXIT_FAIL, report,
                     [("selftest.json", json.dumps(_jsonable(report), sort_keys=True))])


RUNNERS = {
    "simulate": run_simulate,
    "verify": run_verify,
    "rate": run_rate,
    "netctl-demo": run_netctl_demo,
    "selftest": run_selftest,
}


def execute(kind: str, raw_config: dict | None) -> RunResult:
    """Parse, run, and map config problems to exit code 3."""
    try:
        if kind == "selftest":
            return run_selftest(None)
        cfg = parse_config(raw_config or {})
        drift.THREADS = cfg.threads
        try:
            return RUNNERS[kind](cfg)
        finally:
            drift.THREADS = 1
    except (ConfigError, KeyError) as e:
        return RunResult(EXIT_CONFIG, {"kind": kind, "error": str(e)})


def write_outputs(result: RunResult, out_dir, config_raw: dict | None) -> Path:
    """Write artifacts plus a manifest listing their hashes; timestamps live
    only in the manifest metadata, never in reports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    report_text = result.report_json()
    (out / "report.json").write_text(report_text)
    entries.append({"name": "report.json", "sha256": _sha(report_text),
                    "bytes": len(report_text.encode())})
    for name, text in result.artifacts:
        (out / name).write_text(text)
        entries.append({"name": name, "sha256": _sha(text), "bytes": len(text.encode())})
    manifest = {
        "artifacts": entries,
        "config_sha256": _sha(json.dumps(_jsonable(config_raw or {}), sort_keys=True)),
        "exit_code": result.exit_code,
        "metadata": {"created_utc": datetime.now(timezone.utc).isoformat()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return out / "manifest.json"


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
