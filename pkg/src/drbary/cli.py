"""Batch front end: ingest measures, run a pipeline, emit artifacts.

Subcommands: solve, certify, verify-oracle, divergence-demo, make-fixtures.
Exit codes: 0 success, 1 input error, 2 budget exhausted before reaching the
requested tolerance.  Every run emits an effective config.json sidecar;
re-running with ``--config <sidecar>`` reproduces the outputs (fixed seed;
wall-clock columns excepted).  Flag precedence: flags > config file >
defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import numpy as np

from . import __version__
from .dual import suboptimality_certificate, barycenter_from_duals
from .entropic import Potential
from .errors import DrbaryError
from .free_support import OracleParams, run_free_support
from .langevin import Domain, samples_to_csv
from .measures import CostOracle, DiscreteMeasure, SolverConfig, validate_problem
from .oracle import verify_oracle_properties
from .reference import instance_from_dict, write_fixtures
from .sinkhorn import run

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_BUDGET = 2

_SOLVE_DEFAULTS = {
    "mode": "fixed", "lam": 1.0, "tau": 1.0, "eta": None, "tol": 1e-6,
    "max_iters": 1000, "seed": 0, "threads": 0, "weights": None,
    "marginals": None, "reference": None, "radius": None, "dim": None,
    "preset": None, "out": "out",
    "oracle_eps": 0.5, "n_samples": None, "zeta": None, "sigma": None,
    "c_sigma": None, "eps_kl": None, "final_eps_kl": None,
    "final_samples": 10000, "delta": 0.05, "enforce_budget": True,
}


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--weights", nargs="+", type=float)
    p.add_argument("--marginals", nargs="+")
    p.add_argument("--reference")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drb", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="compute a barycenter")
    _add_common(sp)
    sp.add_argument("--mode", choices=["fixed", "free"])
    sp.add_argument("--eta", type=float)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iters", dest="max_iters", type=int)
    sp.add_argument("--preset", choices=["debiased"])
    sp.add_argument("--radius", type=float, help="free mode: domain ball radius")
    sp.add_argument("--dim", type=int, help="free mode: ambient dimension")
    sp.add_argument("--oracle-eps", dest="oracle_eps", type=float)
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--zeta", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--c-sigma", dest="c_sigma", type=float)
    sp.add_argument("--eps-kl", dest="eps_kl", type=float)
    sp.add_argument("--final-eps-kl", dest="final_eps_kl", type=float)
    sp.add_argument("--final-samples", dest="final_samples", type=int)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--no-enforce-budget", dest="enforce_budget",
                    action="store_false", default=None)

    cp = sub.add_parser("certify", help="evaluate the certificate for given duals")
    _add_common(cp)
    cp.add_argument("--psi", required=True,
                    help='JSON file {"psi": [[...], ...]}')

    vp = sub.add_parser("verify-oracle", help="measure the oracle contract")
    _add_common(vp)
    vp.add_argument("--n", type=int, default=100000)
    vp.add_argument("--zeta", type=float, default=None)
    vp.add_argument("--eps", type=float, default=0.5)
    vp.add_argument("--delta", type=float, default=0.05)
    vp.add_argument("--reps", type=int, default=1)

    dp = sub.add_parser("divergence-demo",
                        help="damped vs undamped traces on the shipped fixture")
    dp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    dp.add_argument("--tau", type=float, default=0.25)
    dp.add_argument("--iters", type=int, default=200)
    dp.add_argument("--fixture", help="override the shipped instance")
    dp.add_argument("--out", default="out")

    fp = sub.add_parser("make-fixtures", help="regenerate oracle fixture bundles")
    fp.add_argument("--out", default="fixtures")
    fp.add_argument("--iters", type=int, default=20000)
    return ap


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    cfg = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            on_file = json.load(fh)
        cfg.update({k: v for k, v in on_file.items() if k in cfg})
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    env_threads = os.environ.get("DRB_THREADS")
    if env_threads:
        cfg["threads"] = int(env_threads)
    return cfg


def _load_problem(cfg: dict):
    if not cfg["marginals"]:
        raise DrbaryError("at least one --marginals file is required")
    marginals = [DiscreteMeasure.load(p) for p in cfg["marginals"]]
    weights = cfg["weights"] or [1.0 / len(marginals)] * len(marginals)
    tau = cfg["tau"]
    if cfg.get("preset") == "debiased":
        tau = cfg["lam"] / 2.0
    mode = "free_support" if cfg.get("mode") == "free" else "fixed_support"
    solver_cfg = SolverConfig(
        lam=cfg["lam"], tau=tau, weights=np.asarray(weights, dtype=np.float64),
        eta=cfg.get("eta"), max_iters=int(cfg.get("max_iters", 1000)),
        tol_certificate=float(cfg.get("tol", 1e-6)), mode=mode,
        seed=int(cfg.get("seed", 0)))
    reference = DiscreteMeasure.load(cfg["reference"]) if cfg.get("reference") else None
    report = validate_problem(marginals, reference, solver_cfg,
                              radius=cfg.get("radius"))
    if not report.ok:
        raise DrbaryError("invalid problem: " + "; ".join(report.errors))
    return marginals, reference, solver_cfg, report


def _write(out_dir: str, name: str, text: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        fh.write(text)


def _emit_config(out_dir: str, cfg: dict, command: str):
    payload = {k: v for k, v in cfg.items()}
    payload["command"] = command
    _write(out_dir, "config.json", json.dumps(payload, indent=1) + "\n")


def _cmd_solve(args) -> int:
    cfg = _merge_config(args, _SOLVE_DEFAULTS)
    marginals, reference, solver_cfg, report = _load_problem(cfg)
    out = cfg["out"]
    _emit_config(out, cfg, "solve")
    if cfg["mode"] == "free":
        if cfg["radius"] is None:
            raise DrbaryError("free mode requires --radius")
        domain = Domain.ball(cfg["radius"])
        params = OracleParams(
            eps=cfg["oracle_eps"], delta=cfg["delta"],
            n_samples=cfg["n_samples"], zeta=cfg["zeta"], sigma=cfg["sigma"],
            c_sigma=cfg["c_sigma"], eps_kl=cfg["eps_kl"],
            final_eps_kl=cfg["final_eps_kl"],
            final_samples=int(cfg["final_samples"]),
            enforce_budget=bool(cfg["enforce_budget"]))
        result = run_free_support(marginals, domain, solver_cfg, params)
        _write(out, "trace.csv", result.trace.to_csv())
        _write(out, "samples.csv", samples_to_csv(result.samples.samples))
        _write(out, "samples_meta.json", json.dumps({
            "sigma": result.info.get("sigma"),
            "eps_mu_certified": result.samples.eps_mu,
            "eps_kl": result.samples.eps_kl,
            "smoothing_tv": result.samples.smoothing_tv,
            "budget_valid": result.samples.budget_valid,
            "lsi_certified": result.samples.lsi_certified,
            "n_samples": int(result.samples.samples.shape[0]),
            "best_iteration": result.best_t,
        }, indent=1) + "\n")
        return EXIT_OK if result.converged else EXIT_BUDGET

    cost = CostOracle.squared_euclidean().with_c_inf(report.c_inf)
    result = run(marginals, reference, cost, solver_cfg)
    bary = DiscreteMeasure(points=reference.points, weights=result.state.mu_weights)
    _write(out, "barycenter.json", bary.to_json() + "\n")
    _write(out, "trace.csv", result.trace.to_csv())
    _write(out, "certificate.json", result.certificate.to_json() + "\n")
    return EXIT_OK if result.converged else EXIT_BUDGET


def _cmd_certify(args) -> int:
    cfg = _merge_config(args, _SOLVE_DEFAULTS)
    marginals, reference, solver_cfg, report = _load_problem(cfg)
    with open(args.psi, "r", encoding="utf-8") as fh:
        psi_raw = json.load(fh)["psi"]
    psi = [Potential(np.asarray(block, dtype=np.float64), f"nu[{j}]")
           for j, block in enumerate(psi_raw)]
    cost = CostOracle.squared_euclidean().with_c_inf(report.c_inf)
    state = barycenter_from_duals(psi, reference, marginals, cost, solver_cfg)
    cert = suboptimality_certificate(state, marginals, cost, solver_cfg)
    text = cert.to_json() + "\n"
    if cfg["out"]:
        _emit_config(cfg["out"], cfg, "certify")
        _write(cfg["out"], "certificate.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_verify_oracle(args) -> int:
    from .dual import log_pushforward_marginal
    from .free_support import DiscreteSamplingOracle
    from .oracle import accuracy_bound, choose_oracle_params
    from .sinkhorn import initial_state

    cfg = _merge_config(args, _SOLVE_DEFAULTS)
    marginals, reference, solver_cfg, report = _load_problem(cfg)
    cost = CostOracle.squared_euclidean().with_c_inf(report.c_inf)
    c_inf = report.c_inf
    m_total = sum(nu.size for nu in marginals)
    m_max = max(nu.size for nu in marginals)
    zeta = args.zeta
    if zeta is None:
        zeta, _ = choose_oracle_params(args.eps, c_inf, m_max, m_total, args.delta)
    state = initial_state(marginals, reference, cost, solver_cfg)
    eps_claim = max(
        accuracy_bound(nu.size, m_total, args.n, zeta, 0.0, args.delta, c_inf)
        for nu in marginals)
    oracle = DiscreteSamplingOracle(marginals, reference, cost, solver_cfg,
                                    n=args.n, zeta=zeta,
                                    delta_per_call=args.delta,
                                    seed=solver_cfg.seed)
    psis = [np.zeros(nu.size) for nu in marginals]
    eta = solver_cfg.damping
    reports = []
    for rep in range(args.reps):
        oracle.seed = solver_cfg.seed + rep
        outputs, _ = oracle.step(psis, 0)
        per_j = []
        for j, nu in enumerate(marginals):
            exact = np.exp(log_pushforward_marginal(state, j, marginals, cost, solver_cfg))
            rep_j = verify_oracle_properties(outputs[j], exact, nu,
                                             Potential(psis[j]), eta,
                                             solver_cfg.lam, c_inf, eps_claim)
            per_j.append(json.loads(rep_j.to_json()))
        reports.append(per_j)
    payload = json.dumps({"eps_claim": eps_claim, "zeta": zeta, "n": args.n,
                          "reports": reports}, indent=1) + "\n"
    if cfg["out"]:
        _emit_config(cfg["out"], cfg, "verify-oracle")
        _write(cfg["out"], "oracle_report.json", payload)
    sys.stdout.write(payload)
    return EXIT_OK


def shipped_divergence_instance() -> dict:
    with resources.files("drbary.data").joinpath("divergence.json").open("r") as fh:
        return json.load(fh)


def _cmd_divergence_demo(args) -> int:
    obj = (json.load(open(args.fixture)) if args.fixture
           else shipped_divergence_instance())
    inst = instance_from_dict(obj["instance"], max_iters=args.iters,
                              tol_certificate=0.0)
    # regularization strengths come from the flags, geometry from the fixture
    cfg = SolverConfig(lam=args.lam, tau=args.tau, weights=inst.cfg.weights,
                       max_iters=args.iters, tol_certificate=0.0, seed=0)
    cost = inst.cost()
    damped = run(inst.marginals, inst.reference, cost, cfg)
    undamped = run(inst.marginals, inst.reference, cost, cfg, undamped=True)
    _write(args.out, "damped_trace.csv", damped.trace.to_csv())
    _write(args.out, "undamped_trace.csv", undamped.trace.to_csv())
    dv, uv = damped.trace.dual_values(), undamped.trace.dual_values()
    sys.stdout.write(
        f"damped: monotone={bool(np.all(np.diff(dv) >= -1e-9))}  "
        f"undamped: max_drop={float(np.max(np.maximum(uv[:-1] - uv[1:], 0.0)))!r}\n")
    return EXIT_OK


def _cmd_make_fixtures(args) -> int:
    written = write_fixtures(args.out, iters=args.iters)
    sys.stdout.write("\n".join(written) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "certify":
            return _cmd_certify(args)
        if args.command == "verify-oracle":
            return _cmd_verify_oracle(args)
        if args.command == "divergence-demo":
            return _cmd_divergence_demo(args)
        if args.command == "make-fixtures":
            return _cmd_make_fixtures(args)
        return EXIT_INPUT
    except (DrbaryError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
