"""Command-line interface: ``mfnets {fit,predict,gradcheck,generate,experiment}``.

Exit codes: 0 success, 1 input or configuration error, 2 fit stopped without
converging (outputs are still written), 3 gradient check above threshold.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import experiments as exps
from .data_io import (
    DataFormatError,
    error_report,
    generate_analytical_noise,
    generate_family,
    generate_three_model,
    graph_from_dict,
    graph_to_dict,
    load_dataset,
    load_graph,
    load_params,
    read_table,
    save_dataset,
    save_datasets,
    save_params,
)
from .graph import GraphError
from .mfnet import LayoutError, MFNet, evaluate, init_params
from .objective import Problem, RegConfig
from .optimize import FitConfig, InvalidConfigError, NonFiniteObjectiveError, fit_auto, gradient_check

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_GRADCHECK = 0, 1, 2, 3

REG_KINDS = {"none": "none", "l2": "gaussian", "gaussian": "gaussian", "l1": "laplace", "laplace": "laplace"}
FAMILIES = ("three_model", "analytical_noise", "peer_truth", "chain_truth")
INPUT_ERRORS = (FileNotFoundError, DataFormatError, GraphError, LayoutError, InvalidConfigError,
                ValueError, KeyError, TypeError, yaml.YAMLError, json.JSONDecodeError)


class ManifestError(ValueError):
    pass


def parse_counts(text: str) -> tuple:
    try:
        counts = tuple(int(c) for c in text.split("/"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"counts must look like 20/5/2, got {text!r}") from None
    if any(c < 1 for c in counts):
        raise argparse.ArgumentTypeError("counts must be positive")
    return counts


def parse_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# -- manifests --------------------------------------------------------------------


def load_manifest(path) -> dict:
    """Read a fit manifest; relative paths are resolved against its directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    doc = yaml.safe_load(path.read_text()) or {}
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a mapping")
    base = path.parent
    if "graph" not in doc:
        raise ManifestError(f"{path}: missing 'graph'")
    g = doc["graph"]
    graph = graph_from_dict(g) if isinstance(g, dict) else load_graph(base / g)
    if not doc.get("data"):
        raise ManifestError(f"{path}: missing 'data' entries")
    entries = []
    for ent in doc["data"]:
        if not isinstance(ent, dict) or "node" not in ent or "path" not in ent:
            raise ManifestError(f"{path}: data entries need 'node' and 'path'")
        entries.append({**ent, "path": base / ent["path"]})
    truth = doc.get("truth")
    if truth is not None:
        truth = {"node": int(truth["node"]), "path": base / truth["path"]}
    out = doc.get("output_dir")
    return {
        "graph": graph,
        "datasets": load_dataset(entries),
        "fit": dict(doc.get("fit") or {}),
        "truth": truth,
        "output_dir": None if out is None else base / out,
    }


def fit_config(fit_doc: dict, args) -> FitConfig:
    """Combine manifest ``fit`` fields with command-line overrides (flags win)."""
    merged = dict(fit_doc)
    for key in ("reg", "lambda", "max_iters", "grad_tol", "seed", "restarts", "init"):
        val = getattr(args, key.replace("lambda", "lam"), None)
        if val is not None:
            merged[key] = val
    reg = str(merged.get("reg", "none"))
    if reg not in REG_KINDS:
        raise InvalidConfigError(f"unknown regularization {reg!r}; expected one of none, l2, l1")
    kind = REG_KINDS[reg]
    lam = float(merged.get("lambda", 0.0))
    return FitConfig(
        max_iters=int(merged.get("max_iters", 500)),
        grad_tol=float(merged.get("grad_tol", 1e-8)),
        step_tol=float(merged.get("step_tol", 1e-10)),
        init=str(merged.get("init", "edge-one")),
        seed=int(merged.get("seed", 0)),
        restarts=int(merged.get("restarts", 0)),
        reg=RegConfig(kind, lam if kind != "none" else 0.0),
    )


# -- commands ----------------------------------------------------------------------


def cmd_fit(args) -> int:
    man = load_manifest(args.manifest)
    cfg = fit_config(man["fit"], args)
    problem = Problem(man["graph"], man["datasets"])
    res = fit_auto(man["graph"], problem, cfg)
    out = Path(args.output) if args.output else man["output_dir"] or Path(args.manifest).parent / "fit_output"
    out.mkdir(parents=True, exist_ok=True)
    save_params(out / "params.json", res.params)
    exps.write_csv(out / "trace.csv", [{"iteration": i, "objective": v}
                                       for i, v in enumerate(res.objective_trace)])
    report = {
        "converged": res.converged,
        "reason": res.reason,
        "iterations": res.iterations,
        "grad_norm_final": res.grad_norm_final,
        "objective": res.objective,
    }
    if man["truth"] is not None:
        x, y = read_table(man["truth"]["path"])
        pred = evaluate(problem.net, res.params, man["truth"]["node"], x)
        er = error_report(y, pred)
        report["error"] = {"node": man["truth"]["node"], "rel_rmse": er.rel_rmse,
                           "max_error": er.max_error, "n": er.n}
    exps.dump_json(out / "fit_report.json", report)
    print(f"{res.reason}: objective {res.objective:.10g} after {res.iterations} iterations -> {out}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_predict(args) -> int:
    graph = load_graph(args.graph)
    net = MFNet(graph)
    params = load_params(args.params)
    net.check(params)
    net.require_node(args.node)
    pts_path = Path(args.points)
    if not pts_path.exists():
        raise FileNotFoundError(f"points file not found: {pts_path}")
    if not pts_path.read_text().strip():
        x = np.zeros((0, net.dim))
    else:
        x, _ = read_table(pts_path, with_y=False)
    if x.shape[1] != net.dim:
        raise DataFormatError(f"{pts_path}: points have {x.shape[1]} columns, graph input dimension is {net.dim}")
    y = evaluate(net, params, args.node, x) if x.shape[0] else np.zeros(0)
    if args.output:
        save_dataset(args.output, x, y)
    else:
        for v in y:
            print(repr(float(v)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    man = load_manifest(args.manifest)
    problem = Problem(man["graph"], man["datasets"])
    if args.params:
        params = load_params(args.params)
        problem.net.check(params)
    else:
        params = init_params(problem.net, args.init or "gaussian", args.seed or 0)
    chk = gradient_check(problem.net, params, problem, args.fd_step)
    print(f"max relative discrepancy {chk.max_discrepancy:.3e} at {chk.name or '-'} "
          f"(fd step {args.fd_step:g}, threshold {args.threshold:g})")
    return EXIT_OK if chk.max_discrepancy <= args.threshold else EXIT_GRADCHECK


def _write_generated(out: Path, graph, datasets, params, grid, truth: dict, target: int):
    out.mkdir(parents=True, exist_ok=True)
    entries = save_datasets(out, datasets)
    (out / "graph.yaml").write_text(yaml.safe_dump(graph_to_dict(graph), sort_keys=False))
    if params is not None:
        save_params(out / "params.json", params)
    manifest = {"graph": "graph.yaml", "data": entries}
    if target in truth:
        save_dataset(out / "truth.csv", grid, truth[target])
        manifest["truth"] = {"node": target, "path": "truth.csv"}
    manifest["fit"] = {"reg": "none", "max_iters": 500}
    (out / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False))


def cmd_generate(args) -> int:
    if args.family not in FAMILIES:
        print(f"error: unknown family {args.family!r}; valid families: {', '.join(FAMILIES)}",
              file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.output)
    if args.family == "three_model":
        sd = generate_three_model(args.counts or (2, 3, 3), seed=args.seed)
        _write_generated(out, sd.graph, sd.datasets, sd.params, sd.grid, sd.truth, 3)
    elif args.family == "analytical_noise":
        counts = exps._noise_counts(args.counts or exps.NOISE_DEFAULTS["counts"])
        sd = generate_analytical_noise(counts, seed=args.seed)
        graph = exps.ordering_graphs()["natural"]
        _write_generated(out, graph, sd.datasets, None, sd.grid, sd.truth, 9)
    else:
        sd = generate_family(args.family, dim=args.dim, counts=args.counts, noise=args.noise,
                             seed=args.seed, test_size=args.test_size)
        _write_generated(out, sd.graph, sd.datasets, sd.params, sd.grid, sd.truth, sd.graph.target)
    print(f"wrote {args.family} data to {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    name = args.name
    seeds = range(args.seed, args.seed + args.seeds) if args.seeds else None
    kw = {}
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    if args.init is not None:
        kw["init"] = args.init
    if name == "three-model":
        if args.counts:
            kw["counts"] = args.counts
        if args.lam is not None:
            kw["lam"] = args.lam
        res = exps.run_three_model(seeds or range(20), **kw)
    elif name == "noise-orderings":
        if args.counts:
            kw["counts"] = args.counts
        if args.lam is not None:
            kw["lam"] = args.lam
        res = exps.run_noise_orderings(seeds or range(10), **kw)
    elif name == "topology":
        if args.counts:
            kw["counts"] = args.counts
        if args.lam is not None:
            kw["lam"] = args.lam
        res = exps.run_topology_histogram(args.trials, args.seed, **kw)
    elif name in ("sparsity", "hf-sweep"):
        kw.pop("init", None)
        if args.lambda_grid:
            kw["lambdas"] = tuple(v for v in args.lambda_grid if v > 0)
        if name == "sparsity":
            if args.counts:
                kw["hf_counts"] = args.counts
            res = exps.run_sparsity_study(seeds or range(20), **kw)
        else:
            lam = args.lam if args.lam is not None else 0.01
            kw.pop("lambdas", None)
            res = exps.run_hf_sweep(seeds or range(20), args.counts or (2, 4, 6, 8), lam, **kw)
    else:
        print(f"error: unknown experiment {name!r}; valid: {', '.join(exps.EXPERIMENTS)}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.output or f"results/{name}")
    res.write(out)
    print(json.dumps(exps._jsonable(res.summary), indent=2, sort_keys=True))
    print(f"wrote {name} results to {out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _fit_flags(p):
    p.add_argument("--reg", choices=sorted(REG_KINDS), default=None, help="regularization (l2/l1)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="penalty weight")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--grad-tol", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--init", choices=["zeros", "gaussian", "edge-one"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfnets", description="Multifidelity network surrogates")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a network described by a manifest")
    p.add_argument("manifest")
    _fit_flags(p)
    p.add_argument("--output", help="output directory (overrides the manifest)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="evaluate a fitted node at new points")
    p.add_argument("--params", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--points", required=True, help="file with header x1,...,xd")
    p.add_argument("--output", help="output file (default: print to stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="compare sweep gradients with finite differences")
    p.add_argument("manifest")
    p.add_argument("--params", help="parameter file (default: random initialization)")
    p.add_argument("--fd-step", type=float, default=1e-6)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=["zeros", "gaussian", "edge-one"], default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("generate", help="write synthetic datasets and a manifest")
    p.add_argument("--family", required=True, help=f"one of {', '.join(FAMILIES)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--counts", type=parse_counts, default=None, help="samples per node, e.g. 2/3/3")
    p.add_argument("--noise", type=float, default=0.0, help="noise std (random families)")
    p.add_argument("--dim", type=int, default=1, help="input dimension (random families)")
    p.add_argument("--test-size", type=int, default=200, help="truth grid size (random families)")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("experiment", help="run a scripted study")
    p.add_argument("name", help=", ".join(exps.EXPERIMENTS))
    p.add_argument("--seeds", type=int, default=None, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="first / master seed")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--counts", type=parse_counts, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lambda-grid", type=parse_floats, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--init", choices=["zeros", "gaussian", "edge-one"], default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteObjectiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except INPUT_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
