"""Command-line pipeline: simulate-data, train, solve, report, sweep.

Each subcommand funnels its randomness through one explicit ``--seed``,
writes machine-readable outputs (CSV / JSON) under ``--out``, and exits with
0 on success, 2 on usage errors, 3 when the solver finishes non-optimal, and
4 on I/O failures.  Errors are reported as one JSON object on stderr.

``solve`` emits a per-run stats row carrying structural counts, build and
solve times, and the per-category timer totals; ``report`` turns any number
of such rows into the three benchmark tables (structure, solve times, and
solve-time percentage breakdown).  ``sweep`` runs the formulation x Hessian
x network-size matrix by zero-padding a trained surrogate to each target
size, so every cell optimizes the same underlying problem while paying the
full arithmetic cost of its nominal parameter count.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import mlp, transim
from .grid import CaseError, parse_case
from .ipm import IpmOptions, solve
from .nlp import structure_report
from .scopf import Contingency, attach_stability, build_scopf, verify_power_balance
from .transim import TransientConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_IO = 4

STATS_COLUMNS = [
    "run_id", "params", "formulation", "hessian", "platform",
    "build_time_s", "solve_time_s", "iterations", "time_per_iter_s",
    "status", "objective", "n_variables", "n_constraints",
    "jacobian_nnz", "hessian_nnz",
    "t_function_s", "t_jacobian_s", "t_hessian_s", "t_solver_s", "t_other_s",
]


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "usage", "message": message}),
              file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fail(message: str, code: int) -> "CliError":
    return CliError(message, code)


def _platform_label() -> str:
    return f"CPU ({platform.machine()})"


def _human_params(count: int) -> str:
    if count >= 1_000_000:
        return f"{count / 1e6:.0f}M" if count >= 10_000_000 else f"{count / 1e6:.1f}M"
    if count >= 1_000:
        return f"{count / 1e3:.0f}k"
    return str(count)


def _parse_size(text: str) -> int:
    text = text.strip().lower()
    mult = 1
    if text.endswith("k"):
        mult, text = 1_000, text[:-1]
    elif text.endswith("m"):
        mult, text = 1_000_000, text[:-1]
    return int(float(text) * mult)


def _load_case(path: str):
    try:
        return parse_case(path)
    except FileNotFoundError as exc:
        raise _fail(f"case file not found: {path}", EXIT_IO) from exc
    except CaseError as exc:
        raise _fail(str(exc), EXIT_USAGE) from exc


def _load_net(path: str):
    try:
        return mlp.load_weights(path)
    except FileNotFoundError as exc:
        raise _fail(f"weight file not found: {path}", EXIT_IO) from exc
    except mlp.NetworkError as exc:
        raise _fail(str(exc), EXIT_USAGE) from exc


# -- simulate-data ---------------------------------------------------------------


def cmd_simulate_data(args) -> int:
    if args.n < 1:
        raise _fail("--n must be at least 1", EXIT_USAGE)
    case = _load_case(args.case)
    cfg = TransientConfig(horizon=args.horizon, step=args.step,
                          contingency=args.contingency,
                          disturbance_time=args.disturbance_time)
    ds = transim.sample_dataset(case, cfg, n=args.n, seed=args.seed,
                                spread=args.spread)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    transim.write_dataset_csv(ds, out)
    print(f"wrote {args.n} rows to {out} (resampled {ds.resampled})")
    return EXIT_OK


# -- train -----------------------------------------------------------------------


def cmd_train(args) -> int:
    try:
        X, Y, _header = transim.read_dataset_csv(args.data)
    except FileNotFoundError as exc:
        raise _fail(f"dataset not found: {args.data}", EXIT_IO) from exc
    widths = [int(w) for w in args.widths.split(",") if w]
    if X.shape[1] == 0 or any(w < 1 for w in widths):
        raise _fail("invalid layer widths", EXIT_USAGE)
    cfg = mlp.TrainConfig(learning_rate=args.lr, max_epochs=args.max_epochs,
                          loss_threshold=args.threshold,
                          patience=args.patience, seed=args.seed)
    try:
        result = mlp.train_adam(X, Y, widths, cfg)
    except mlp.NetworkError as exc:
        raise _fail(str(exc), EXIT_USAGE) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mlp.save_weights(result.network, out)
    if args.loss_out:
        with open(args.loss_out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mse"])
            for e, v in enumerate(result.loss_history):
                writer.writerow([e, repr(float(v))])
    print(f"trained {result.network.parameter_count} parameters in "
          f"{result.epochs} epochs; final standardized MSE "
          f"{result.loss_history[-1]:.6f}")
    if not result.converged:
        print(json.dumps({"error": "unconverged",
                          "final_mse": float(result.loss_history[-1])}),
              file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# -- solve -----------------------------------------------------------------------


def _run_solve_cell(case, net, formulation, hessian, eta, contingencies,
                    options=None):
    """Build, embed, solve; returns (result, stats_row, scopf)."""
    t_build = time.perf_counter()
    scopf = build_scopf(case, contingencies)
    if net is not None:
        attach_stability(scopf, net, formulation, eta)
    rep = structure_report(scopf.model)
    opts = options or IpmOptions()
    opts.hessian_mode = hessian
    from .nlp import canonicalize

    canon, _ = canonicalize(scopf.model)
    build_time = time.perf_counter() - t_build
    res = solve(canon, opts)
    row = {
        "run_id": "",
        "params": net.parameter_count if net is not None else 0,
        "formulation": formulation if net is not None else "none",
        "hessian": hessian,
        "platform": _platform_label(),
        "build_time_s": build_time,
        "solve_time_s": res.stats.wall_time,
        "iterations": res.stats.iterations,
        "time_per_iter_s": res.stats.time_per_iteration,
        "status": res.status,
        "objective": res.objective,
        "n_variables": rep.num_variables,
        "n_constraints": rep.num_constraints,
        "jacobian_nnz": rep.jacobian_nnz,
        "hessian_nnz": rep.hessian_nnz,
        "t_function_s": res.stats.timers["function"],
        "t_jacobian_s": res.stats.timers["jacobian"],
        "t_hessian_s": res.stats.timers["hessian"],
        "t_solver_s": res.stats.timers["solver"],
        "t_other_s": res.stats.timers["other"],
    }
    return res, row, scopf


def write_stats_rows(rows, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=STATS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_stats_rows(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _contingencies_from_args(args, case):
    ctgs = []
    for gid in args.contingency or []:
        ctgs.append(Contingency(f"gen{gid}-out", gen_ids=(gid,)))
    return ctgs


def cmd_solve(args) -> int:
    case = _load_case(args.case)
    net = _load_net(args.net) if args.net else None
    ctgs = _contingencies_from_args(args, case)
    if net is not None and not ctgs:
        raise _fail("a stability surrogate needs --contingency", EXIT_USAGE)
    options = IpmOptions(tol=args.tol, max_iter=args.max_iter)
    try:
        res, row, scopf = _run_solve_cell(case, net, args.formulation,
                                          args.hessian, args.eta, ctgs,
                                          options)
    except CaseError as exc:
        raise _fail(str(exc), EXIT_USAGE) from exc
    row["run_id"] = args.run_id or "solve"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stats_rows([row], out / "stats.csv")

    pg, qg = scopf.dispatch(res.x)
    solution = {
        "status": res.status,
        "objective": res.objective,
        "iterations": res.stats.iterations,
        "dispatch_mw": {str(g.id): float(p * case.base_mva)
                        for g, p in zip(case.generators, pg)},
        "reactive_mvar": {str(g.id): float(q * case.base_mva)
                          for g, q in zip(case.generators, qg)},
        "power_balance_mismatch_pu": (
            float(verify_power_balance(scopf, res.x))
            if res.status == "optimal" else None),
    }
    if net is not None and res.status == "optimal":
        feats = np.concatenate([*case.demand_vectors(), pg])
        solution["predicted_min_frequency_hz"] = [
            float(v) for v in net.forward(feats)]
    with open(out / "solution.json", "w", encoding="utf-8") as fh:
        json.dump(solution, fh, indent=1)
        fh.write("\n")
    print(f"{row['formulation']}/{args.hessian}: {res.status}, "
          f"objective {res.objective:.4f}, {res.stats.iterations} iterations")
    return EXIT_OK if res.status == "optimal" else EXIT_SOLVER


# -- report ----------------------------------------------------------------------


def _fmt_seconds(v: float) -> str:
    if v != v:  # NaN
        return "--"
    if v < 0.0995:
        return f"{v * 1000:.0f} ms"
    if v < 9.95:
        return f"{v:.1f} s"
    return f"{v:.0f} s"


def build_tables(rows, fmt: str) -> dict[str, str]:
    """Three tables from stats rows; fmt is 'csv' or 'md'."""
    structure = [["Parameters", "Formulation", "N. Variables",
                  "N. Constraints", "Jacobian NNZ", "Hessian NNZ"]]
    times = [["Parameters", "Formulation", "Hessian", "Platform",
              "Build time", "Solve time", "Iterations", "Time/iter."]]
    breakdown = [["Formulation", "Parameters", "Hessian", "Platform",
                  "Solve time", "Function", "Jacobian", "Hessian",
                  "Solver", "Other"]]
    seen_structure = set()
    for row in rows:
        try:
            params = int(row["params"])
            label = _human_params(params) if params else "--"
            formulation = {"none": "No surrogate", "full": "Full-space",
                           "reduced": "Reduced-space",
                           "graybox": "Gray-box"}.get(row["formulation"],
                                                      row["formulation"])
            hessian = {"exact": "Exact", "lbfgs": "Approx."}.get(
                row["hessian"], row["hessian"])
            skey = (label, formulation, row["n_variables"],
                    row["n_constraints"], row["jacobian_nnz"],
                    row["hessian_nnz"])
            if skey not in seen_structure:
                seen_structure.add(skey)
                structure.append([label, formulation, row["n_variables"],
                                  row["n_constraints"], row["jacobian_nnz"],
                                  row["hessian_nnz"]])
            iters = int(row["iterations"])
            times.append([
                label, formulation, hessian, row["platform"],
                _fmt_seconds(float(row["build_time_s"])),
                _fmt_seconds(float(row["solve_time_s"])),
                str(iters),
                _fmt_seconds(float(row["time_per_iter_s"])),
            ])
            solve_time = float(row["solve_time_s"])
            parts = {k: float(row[f"t_{k}_s"]) for k in
                     ("function", "jacobian", "hessian", "solver", "other")}
            total = max(sum(parts.values()), 1e-12)

            def pct(key):
                if key == "hessian" and row["hessian"] == "lbfgs":
                    return "--"
                share = 100.0 * parts[key] / total
                return f"<0.1" if 0 < share < 0.05 else f"{share:.1f}"

            breakdown.append([
                formulation, label, hessian, row["platform"],
                _fmt_seconds(solve_time),
                pct("function"), pct("jacobian"), pct("hessian"),
                pct("solver"), pct("other"),
            ])
        except (KeyError, TypeError, ValueError) as exc:
            print(json.dumps({"warning": "skipped malformed stats row",
                              "detail": repr(exc)}), file=sys.stderr)
    render = _render_csv if fmt == "csv" else _render_markdown
    return {"structure": render(structure), "times": render(times),
            "breakdown": render(breakdown)}


def _render_csv(rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    for row in rows:
        writer.writerow(row)
    return out.getvalue()


def _render_markdown(rows) -> str:
    cells = [[str(v) for v in row] for row in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(cells[0]))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("| " + " | ".join(v.ljust(w) for v, w in zip(row, widths))
                     + " |")
        if i == 0:
            lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    rows = []
    for path in args.stats:
        try:
            rows.extend(read_stats_rows(path))
        except FileNotFoundError as exc:
            raise _fail(f"stats file not found: {path}", EXIT_IO) from exc
    if not rows:
        raise _fail("no stats rows found", EXIT_USAGE)
    tables = build_tables(rows, args.format)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if args.format == "csv" else "md"
    for name, text in tables.items():
        (out / f"{name}.{ext}").write_text(text, encoding="utf-8")
        print(f"wrote {out / f'{name}.{ext}'}")
    return EXIT_OK


# -- sweep -----------------------------------------------------------------------


def widths_for_parameters(base_net, target: int) -> list[int]:
    """Smallest uniform hidden width whose padded net reaches the target."""
    depth = len(base_net.widths) - 2
    n0, nl = base_net.input_dim, base_net.output_dim
    base_hidden = base_net.widths[1:-1]

    def count(h):
        sizes = [n0] + [max(h, b) for b in base_hidden] + [nl]
        return sum(r * (c + 1) for c, r in zip(sizes, sizes[1:]))

    h = max(base_hidden)
    while count(h) < target:
        h += 1 + h // 16
    return [max(h, b) for b in base_hidden]


def cmd_sweep(args) -> int:
    case = _load_case(args.case)
    base_net = _load_net(args.net)
    ctgs = _contingencies_from_args(args, case)
    if not ctgs:
        raise _fail("sweep needs at least one --contingency", EXIT_USAGE)
    sizes = [_parse_size(s) for s in args.sizes.split(",") if s]
    formulations = args.formulations.split(",")
    hessians = args.hessians.split(",")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    res, row, _ = _run_solve_cell(case, None, "none", "exact", args.eta, ctgs,
                                  IpmOptions(tol=args.tol, max_iter=args.max_iter))
    row["run_id"] = "baseline"
    rows.append(row)
    print(f"baseline: {res.status} obj={res.objective:.4f}")
    for size in sizes:
        net = mlp.widen(base_net, widths_for_parameters(base_net, size))
        for formulation in formulations:
            if formulation == "full" and net.parameter_count > args.full_space_limit:
                print(f"skip full-space at {_human_params(net.parameter_count)} "
                      f"(over --full-space-limit)")
                continue
            for hessian in hessians:
                res, row, _ = _run_solve_cell(
                    case, net, formulation, hessian, args.eta, ctgs,
                    IpmOptions(tol=args.tol, max_iter=args.max_iter))
                row["run_id"] = f"{formulation}-{hessian}-{size}"
                rows.append(row)
                print(f"{row['run_id']}: {res.status} "
                      f"obj={res.objective:.4f} "
                      f"build={row['build_time_s']:.2f}s "
                      f"solve={row['solve_time_s']:.2f}s "
                      f"iters={row['iterations']}")
    write_stats_rows(rows, out / "stats.csv")
    tables = build_tables(rows, args.format)
    ext = "csv" if args.format == "csv" else "md"
    for name, text in tables.items():
        (out / f"{name}.{ext}").write_text(text, encoding="utf-8")
    print(f"wrote {out / 'stats.csv'} and {len(tables)} tables")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------


def make_parser() -> _Parser:
    parser = _Parser(prog="surropt",
                     description="stability-constrained OPF with embedded "
                                 "neural surrogates")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-data", help="sample transient simulations")
    p.add_argument("--case", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--contingency", type=int, default=None,
                   help="outaged generator id")
    p.add_argument("--horizon", type=float, default=30.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--disturbance-time", type=float, default=1.0)
    p.add_argument("--spread", type=float, default=0.2)
    p.set_defaults(func=cmd_simulate_data)

    p = sub.add_parser("train", help="fit the nadir surrogate")
    p.add_argument("--data", required=True)
    p.add_argument("--widths", required=True, help="hidden sizes, e.g. 64,64")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-epochs", type=int, default=20000)
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--loss-out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="build and solve one model")
    p.add_argument("--case", required=True)
    p.add_argument("--net", default=None)
    p.add_argument("--formulation", default="graybox",
                   choices=["full", "reduced", "graybox"])
    p.add_argument("--hessian", default="exact", choices=["exact", "lbfgs"])
    p.add_argument("--eta", type=float, default=59.4)
    p.add_argument("--contingency", type=int, action="append")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="csv", choices=["csv", "md"])
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=3000)
    p.add_argument("--run-id", default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("report", help="render benchmark tables")
    p.add_argument("stats", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="md", choices=["csv", "md"])
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="formulation x hessian x size matrix")
    p.add_argument("--case", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--sizes", default="7k,100k,1m")
    p.add_argument("--formulations", default="full,reduced,graybox")
    p.add_argument("--hessians", default="exact,lbfgs")
    p.add_argument("--eta", type=float, default=59.4)
    p.add_argument("--contingency", type=int, action="append")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="md", choices=["csv", "md"])
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=3000)
    p.add_argument("--full-space-limit", type=int, default=200_000)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": "failure", "message": str(exc)}),
              file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
