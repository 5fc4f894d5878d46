"""Command-line driver: ``rma synthesize|invert|sweep|morozov|spectrum|jltest``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .analysis import (MorozovStudy, discrepancy_tau, morozov_trial, trial_seed,
                       tune_sketch_dimension)
from .config import ExperimentConfig, build_problem, synthesize
from .mesh import Field
from .objective import Objective
from .optimizer import minimize
from .sketch import ALL_DISTRIBUTIONS, SketchDistribution, build_sketch, failure_probability


class CliError(Exception):
    """Bad invocation; reported as JSON with exit status 2."""


def _meta(cfg: ExperimentConfig, seed) -> dict:
    return {"version": __version__, "config_hash": cfg.config_hash(), "seed": seed}


def _stamp(cfg, seed) -> str:
    return f"rma {__version__} config={cfg.config_hash()} seed={seed}"


def _csv_text(cfg, seed, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {_stamp(cfg, seed)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write_json(path: Path, cfg, seed, payload: dict) -> None:
    doc = {"meta": {**_meta(cfg, seed), "created": time.strftime("%Y-%m-%dT%H:%M:%S")},
           "config": cfg.to_dict(), **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else x


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.desk_2d()
    updates = {}
    if args.n is not None or args.dist is not None:
        sk = cfg.sketch.model_dump() if cfg.sketch else {"kind": "achlioptas", "n": 50}
        if args.n is not None:
            sk["n"] = _int_list(args.n)[0]
        if args.dist is not None:
            sk["kind"], sk["s"] = _dist_list(args.dist)[0].name, None
        updates["sketch"] = sk
    if args.seed is not None:
        updates["seeds"] = {**cfg.seeds.model_dump(), "sketch": args.seed}
    return cfg.with_updates(**updates) if updates else cfg


def _int_list(text) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"expected comma-separated integers, got {text!r}") from exc


def _dist_list(text) -> list[SketchDistribution]:
    if text == "all":
        return list(ALL_DISTRIBUTIONS)
    try:
        return [SketchDistribution.from_name(v) for v in text.split(",")]
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_synthesize(args, cfg):
    out = _out_dir(args, cfg)
    forward, truth, data, std = synthesize(cfg)
    nodes = forward.mesh.nodes[forward.observed]
    axes = ["x", "y"][: forward.mesh.dim]
    rows = [[int(i), *map(_fmt, x), _fmt(d)] for i, x, d in zip(forward.observed, nodes, data)]
    (out / "data.csv").write_text(_csv_text(cfg, cfg.seeds.noise, ["node", *axes, "value"], rows))
    Field(forward.mesh, truth).to_csv(out / "truth.csv", "u", _stamp(cfg, cfg.seeds.noise))
    _write_json(out / "metadata.json", cfg, cfg.seeds.noise,
                {"N": int(data.size), "noise_std": std, "num_parameters": forward.mesh.num_nodes})
    return {"N": int(data.size), "noise_std": std}


def _load_data(path) -> np.ndarray:
    rows = [r for r in csv.reader(Path(path).read_text().splitlines()) if r and not r[0].startswith("#")]
    return np.array([float(r[-1]) for r in rows[1:]])


def cmd_invert(args, cfg):
    out = _out_dir(args, cfg)
    data = _load_data(args.data) if args.data else None
    problem = build_problem(cfg, data)
    sketch = None
    if cfg.sketch is not None:
        sketch = build_sketch(cfg.sketch.distribution(), cfg.sketch.n, problem.N, cfg.seeds.sketch)
    report = minimize(Objective(problem, sketch), problem.prior.u0, cfg.solver.build())
    r = problem.whitened_misfit(report.u_final)
    payload = {"report": report.to_dict(), "tau": float(r @ r) / problem.N,
               "sketch": sketch.spec() if sketch else None}
    if sketch is not None:
        Sr = sketch.apply(r)
        payload["tau_prime"] = float(Sr @ Sr) / problem.N
    seed = cfg.seeds.sketch if sketch else None
    _write_json(out / "report.json", cfg, seed, payload)
    hist = report.history_csv().splitlines()
    (out / "history.csv").write_text(
        _csv_text(cfg, seed, hist[0].split(","), [h.split(",") for h in hist[1:]]))
    Field(problem.forward.mesh, report.u_final).to_csv(out / "u_map.csv", "u", _stamp(cfg, seed))
    return {"pde_solves": report.pde_solves, "converged": report.converged, "tau": payload["tau"]}


# Workers rebuild the problem once per process: factorizations do not pickle.
_WORKER_CACHE: dict = {}


def _worker_problem(cfg_dict):
    key = json.dumps(cfg_dict, sort_keys=True)
    if key not in _WORKER_CACHE:
        _WORKER_CACHE.clear()
        _WORKER_CACHE[key] = build_problem(ExperimentConfig.model_validate(cfg_dict))
    return _WORKER_CACHE[key]


def _run_trial(task):
    cfg_dict, dist_name, n, seed, epsilon = task
    cfg = ExperimentConfig.model_validate(cfg_dict)
    problem = _worker_problem(cfg_dict)
    sketch = build_sketch(SketchDistribution.from_name(dist_name), n, problem.N, seed)
    return morozov_trial(problem, sketch, epsilon, cfg.solver.build())


def _map(tasks, jobs):
    if jobs <= 1:
        return [_run_trial(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_trial, tasks))


def _baseline(cfg):
    problem = build_problem(cfg)
    rep = minimize(Objective(problem), problem.prior.u0, cfg.solver.build())
    return rep, discrepancy_tau(problem, rep.u_final)


def cmd_sweep(args, cfg):
    out = _out_dir(args, cfg)
    n_list = _int_list(args.n or "50")
    dists = _dist_list(args.dist or "all")
    base_seed = cfg.seeds.sketch
    cfg_dict = cfg.to_dict()
    tasks, keys = [], []
    for dist in dists:
        for n in n_list:
            for t in range(args.trials):
                seed = trial_seed(base_seed, t)
                tasks.append((cfg_dict, dist.name, n, seed, 0.5))
                keys.append((dist.name, n, t, seed))
    records = _map(tasks, args.jobs)
    base, base_tau = _baseline(cfg)
    rows = [[d, n, t, s, r.pde_solves, _fmt(r.tau), _fmt(r.tau_prime)]
            for (d, n, t, s), r in zip(keys, records)]
    (out / "sweep.csv").write_text(_csv_text(
        cfg, base_seed, ["dist", "n", "trial", "seed", "pde_solves", "tau", "tau_prime"], rows))
    summary = {}
    for dist in dists:
        for n in n_list:
            sel = [r.pde_solves for (d, m, _, _), r in zip(keys, records) if d == dist.name and m == n]
            summary[f"{dist.name}/n={n}"] = float(np.mean(sel))
    payload = {"deterministic": {"pde_solves": base.pde_solves, "tau": base_tau,
                                 "converged": base.converged},
               "mean_pde_solves": summary, "trials": args.trials}
    _write_json(out / "report.json", cfg, base_seed, payload)
    return payload


def cmd_morozov(args, cfg):
    out = _out_dir(args, cfg)
    dist = _dist_list(args.dist or "achlioptas")[0]
    base_seed = cfg.seeds.sketch
    cfg_dict = cfg.to_dict()
    eps = args.epsilon
    tuning = None
    if args.n is None:
        problem = build_problem(cfg)
        pilot = max(1, args.pilot)

        def evaluate(n):
            tasks = [(cfg_dict, dist.name, n, trial_seed(base_seed + 1, 1000 * n + t), eps)
                     for t in range(pilot)]
            return np.mean([r.tau_prime for r in _map(tasks, args.jobs)])

        tuning = tune_sketch_dimension(evaluate, 10, args.max_n or 4 * problem.N)
        n = tuning.n
    else:
        n = _int_list(args.n)[0]
    tasks = [(cfg_dict, dist.name, n, trial_seed(base_seed, t), eps) for t in range(args.trials)]
    study = MorozovStudy(_map(tasks, args.jobs))
    text = study.table_csv()
    (out / "table_morozov.csv").write_text(_csv_text(
        cfg, base_seed, text.splitlines()[0].split(","),
        [line.split(",") for line in text.splitlines()[1:]]))
    payload = {"n": n, "epsilon": eps, "p": study.p, "success_rate": study.success_rate,
               "mean_tau_prime": study.mean_tau_prime,
               "tuning": None if tuning is None else [list(h) for h in tuning.history]}
    _write_json(out / "report.json", cfg, base_seed, payload)
    return payload


def _spectrum_point(problem, where, seed):
    if where == "truth":
        return problem.u_truth
    if where == "map":
        return minimize(Objective(problem), problem.prior.u0).u_final
    return problem.prior.sample(seed)


def cmd_spectrum(args, cfg):
    out = _out_dir(args, cfg)
    problem = build_problem(cfg)
    seed = cfg.seeds.sketch
    u = _spectrum_point(problem, args.at, seed)
    full = Objective(problem).misfit_hessian_spectrum(u)
    cols, header = [full], ["index", "full"]
    counts = {"full_above_1": int(np.sum(full > 1.0))}
    if cfg.sketch is not None:
        sk = build_sketch(cfg.sketch.distribution(), cfg.sketch.n, problem.N, seed)
        lam = Objective(problem, sk).misfit_hessian_spectrum(u)
        cols.append(lam)
        header.append(f"sketched_n{sk.n}")
        counts.update({"sketched_above_1": int(np.sum(lam > 1.0)),
                       "sketched_above_rel_1e-10": int(np.sum(lam > 1e-10 * lam[0])), "n": sk.n})
    rows = [[i, *(_fmt(c[i]) for c in cols)] for i in range(full.size)]
    (out / "spectrum.csv").write_text(_csv_text(cfg, seed, header, rows))
    _write_json(out / "report.json", cfg, seed, {"at": args.at, **counts})
    return counts


def cmd_jltest(args, cfg):
    out = _out_dir(args, cfg)
    problem = build_problem(cfg)
    seed = cfg.seeds.sketch
    v = problem.whitened_misfit(problem.prior.sample(seed))
    vv = float(v @ v)
    n = _int_list(args.n)[0] if args.n else 100
    eps = args.epsilon
    rows, result = [], {}
    for dist in _dist_list(args.dist or "all"):
        bad = 0
        for t in range(args.trials):
            Sv = build_sketch(dist, n, problem.N, trial_seed(seed, t)).apply(v)
            bad += abs(float(Sv @ Sv) / vv - 1.0) > eps
        rate = bad / args.trials
        bound = failure_probability(n, eps)
        rows.append([dist.name, n, _fmt(eps), args.trials, bad, _fmt(rate), _fmt(bound)])
        result[dist.name] = {"violation_rate": rate, "bound": bound}
    (out / "jltest.csv").write_text(_csv_text(
        cfg, seed, ["dist", "n", "epsilon", "trials", "violations", "rate", "bound"], rows))
    _write_json(out / "report.json", cfg, seed, {"n": n, "epsilon": eps, "rates": result})
    return result


COMMANDS = {"synthesize": cmd_synthesize, "invert": cmd_invert, "sweep": cmd_sweep,
            "morozov": cmd_morozov, "spectrum": cmd_spectrum, "jltest": cmd_jltest}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rma", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rma {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config (default: 2D desk problem)")
        p.add_argument("--n", help="sketch dimension (comma-separated list for sweep)")
        p.add_argument("--dist", help="sketch distribution(s), comma-separated, or 'all'")
        p.add_argument("--trials", type=int, default=10)
        p.add_argument("--seed", type=int, help="base sketch seed")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", help="output directory (default: config 'output')")
        if name == "invert":
            p.add_argument("--data", help="data CSV written by 'rma synthesize'")
        if name in ("morozov", "jltest"):
            p.add_argument("--epsilon", type=float, default=0.5)
        if name == "morozov":
            p.add_argument("--pilot", type=int, default=3, help="pilot trials per tuning probe")
            p.add_argument("--max-n", type=int, help="largest n tried when tuning (default 4N)")
        if name == "spectrum":
            p.add_argument("--at", choices=["prior", "truth", "map"], default="prior")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.trials < 1 or args.jobs < 1:
            raise CliError("--trials and --jobs must be positive")
        cfg = _load_config(args)
        result = COMMANDS[args.command](args, cfg)
    except (CliError, ValidationError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report anything else machine-readably
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, "result": result}, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
