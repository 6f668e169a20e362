"""Command-line experiment runner.

    combqfi validate <comb-file>
    combqfi {qfi,sweep,probe,variational,channel-ncopy} <config.yaml> [--seed S] [-o out.csv]

Exit codes: 0 success, 1 comb validation failed, 2 bad input or config,
3 at least one solve failed (the CSV is still written, failed rows carry nan).
The worker count comes from the COMBQFI_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .channels import adaptive_channel_qfi, phase_unitary_family, random_channel_family
from .collision import FrequencyTask, build_comb_family
from .comb import ToothStructure, validate_comb
from .config import ConfigError, ExperimentConfig, load_config
from .errors import CombQfiError
from .qfi import comb_qfi_dual, dual_problem, optimal_probe, probe_qfi
from .sdp import dump_problem
from .tensor import LabeledOperator
from .variational import VariationalConfig, optimize_probe, worker_count

CSV_HEADER = ("experiment", "scenario", "interaction", "N", "t_tot", "omega", "g", "qfi", "gap", "wall_ms")
EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def fmt(x) -> str:
    """17 significant digits, '.' decimal separator; blank for None."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# -- grid points -------------------------------------------------------------

def grid(cfg: ExperimentConfig) -> list[dict]:
    """Grid points in output order: N, then t_tot, then scenario."""
    pts = []
    if cfg.experiment == "channel-ncopy":
        names = _channel_names(cfg)
        for N in cfg.N:
            for name in names:
                pts.append({"scenario": name, "N": N, "t_tot": N * cfg.channel.t})
        return pts
    scenarios = ("nm-control",) if cfg.experiment == "variational" else cfg.scenarios
    for N in cfg.N:
        for t in cfg.t_tot:
            for sc in scenarios:
                pts.append({"scenario": sc, "N": N, "t_tot": t})
    return pts


def _channel_names(cfg):
    if cfg.channel.type == "random":
        return [f"random-{k}" for k in range(cfg.channel.draws)]
    if cfg.channel.type == "collision-step":
        return [f"step-{cfg.channel.scenario}"]
    return ["phase"]


def _channel(cfg, name):
    ch = cfg.channel
    if ch.type == "phase":
        return phase_unitary_family(ch.t)
    if ch.type == "collision-step":
        task = FrequencyTask(cfg.omega, cfg.g, 1, ch.t, ch.t, cfg.env_init)
        return build_comb_family(ch.scenario, cfg.interaction, task)
    k = int(name.split("-")[1])
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, k]))
    return random_channel_family(rng, name=name)


def _task(cfg, pt):
    return FrequencyTask.from_total(pt["t_tot"], pt["N"], cfg.omega, cfg.g, cfg.env_init)


def _solver_kw(cfg):
    return dict(gap_tol=cfg.solver.gap_tol, feas_tol=cfg.solver.feas_tol, backend=cfg.solver.backend)


def _row(cfg, pt, experiment, qfi, gap, ms):
    return {"experiment": experiment, "scenario": pt["scenario"], "interaction": cfg.interaction,
            "N": pt["N"], "t_tot": pt["t_tot"], "omega": cfg.omega, "g": cfg.g,
            "qfi": qfi, "gap": gap, "wall_ms": ms if cfg.timing else None}


def run_point(args) -> tuple[list[dict], list[str]]:
    """Evaluate one grid point; returns (rows, error messages)."""
    cfg, pt = args
    exp = cfg.experiment
    t0 = time.perf_counter()
    label = f"{pt['scenario']} N={pt['N']} t_tot={pt['t_tot']:g}"
    try:
        if exp == "channel-ncopy":
            J = adaptive_channel_qfi(_channel(cfg, pt["scenario"]), pt["N"], cfg.omega, **_solver_kw(cfg))
            return [_row(cfg, pt, exp, J, None, _ms(t0))], []
        task = _task(cfg, pt)
        fam = build_comb_family(pt["scenario"], cfg.interaction, task)
        res = comb_qfi_dual(fam, task.omega, **_solver_kw(cfg))
        if exp in ("qfi", "sweep"):
            return [_row(cfg, pt, exp, res.J, res.gap, _ms(t0))], []
        if exp == "probe":
            probe, _ = optimal_probe(fam, task.omega, result=res, **_solver_kw(cfg))
            return [_row(cfg, pt, exp, probe_qfi(fam, task.omega, probe), res.gap, _ms(t0))], []
        v = cfg.variational
        vr = optimize_probe(task, cfg.interaction, VariationalConfig(
            restarts=v.restarts, max_iters=v.max_iters, fd_step=v.fd_step, seed=cfg.seed, workers=1))
        ms = _ms(t0)
        return [_row(cfg, pt, "variational", vr.fisher, None, ms),
                _row(cfg, pt, "variational-bound", res.J, res.gap, ms)], []
    except CombQfiError as exc:
        exps = ["variational", "variational-bound"] if exp == "variational" else [exp]
        return [_row(cfg, pt, e, float("nan"), float("nan"), _ms(t0)) for e in exps], [f"{label}: {exc}"]


def _ms(t0):
    return round(1000.0 * (time.perf_counter() - t0), 3)


def run_experiment(cfg: ExperimentConfig, out=None, workers=None) -> tuple[list[dict], list[str]]:
    """Run every grid point and write the CSV; rows keep grid order."""
    jobs = [(cfg, pt) for pt in grid(cfg)]
    n = worker_count(workers)
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(run_point, jobs))
    else:
        results = [run_point(j) for j in jobs]
    rows = [r for rs, _ in results for r in rs]
    errors = [e for _, es in results for e in es]
    if out is not None:
        write_csv(rows, out)
    return rows, errors


def write_csv(rows, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r[k] if k in ("experiment", "scenario", "interaction") else fmt(r[k]) for k in CSV_HEADER])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    """Inverse of :func:`write_csv`."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {rd.fieldnames}")
        rows = []
        for r in rd:
            row = dict(r)
            row["N"] = int(r["N"])
            for k in ("t_tot", "omega", "g", "qfi", "gap", "wall_ms"):
                row[k] = float(r[k]) if r[k] != "" else None
            rows.append(row)
    return rows


# -- comb files ---------------------------------------------------------------

def read_comb_file(path) -> tuple[LabeledOperator, ToothStructure]:
    """Text comb file: '#' comments, 'N n', 'dims d1 ... d2N', then the matrix.

    The matrix follows row-major as interleaved real and imaginary parts
    (re00 im00 re01 im01 ...), whitespace separated with any line breaks.
    """
    header, values = {}, []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head = line.split()
            if head[0] in ("N", "dims"):
                if values:
                    raise ValueError(f"line {lineno}: header line after matrix data")
                try:
                    header[head[0]] = [int(x) for x in head[1:]]
                except ValueError:
                    raise ValueError(f"line {lineno}: '{head[0]}' needs integers") from None
                continue
            try:
                values.extend(float(x) for x in head)
            except ValueError:
                raise ValueError(f"line {lineno}: cannot parse matrix entries") from None
    if "N" not in header or len(header["N"]) != 1 or header["N"][0] < 1:
        raise ValueError("missing or malformed 'N' line")
    N = header["N"][0]
    dims = header.get("dims")
    if dims is None or len(dims) != 2 * N or min(dims) < 1:
        raise ValueError(f"'dims' must list {2 * N} positive dimensions")
    D = int(np.prod(dims))
    if len(values) != 2 * D * D:
        raise ValueError(f"expected {2 * D * D} numbers for a {D}x{D} complex matrix, got {len(values)}")
    v = np.array(values).reshape(D, D, 2)
    s = ToothStructure.canonical(N, dims)
    return LabeledOperator(s.spaces, v[..., 0] + 1j * v[..., 1]), s


def write_comb_file(op: LabeledOperator, path, N: int | None = None) -> None:
    N = len(op.dims) // 2 if N is None else N
    lines = [f"N {N}", "dims " + " ".join(str(d) for d in op.dims)]
    for row in op.matrix:
        lines.append(" ".join(f"{fmt(x.real)} {fmt(x.imag)}" for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


# -- entry point ----------------------------------------------------------------

def _cmd_validate(args) -> int:
    try:
        op, s = read_comb_file(args.comb_file)
    except (OSError, ValueError) as exc:
        print(f"error: {args.comb_file}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rep = validate_comb(op, s, tol=args.tol)
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_INVALID


def _cmd_experiment(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.experiment != args.command and {cfg.experiment, args.command} != {"qfi", "sweep"}:
        print(f"error: config describes a '{cfg.experiment}' experiment, not '{args.command}'", file=sys.stderr)
        return EXIT_CONFIG
    cfg = replace(cfg, experiment=args.command)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.timing:
        cfg = replace(cfg, timing=True)
    out = args.output or cfg.output or f"{args.command}.csv"
    if args.dump_sdp:
        pts = grid(cfg)
        stem = Path(args.dump_sdp)
        for i, pt in enumerate(pts):
            if cfg.experiment == "channel-ncopy":
                break
            task = _task(cfg, pt)
            target = stem if len(pts) == 1 else stem.with_name(f"{stem.stem}_{i}{stem.suffix or '.json'}")
            dump_problem(dual_problem(build_comb_family(pt["scenario"], cfg.interaction, task), task.omega), target)
    rows, errors = run_experiment(cfg, out)
    for r in rows:
        print(f"{r['experiment']:>17} {r['scenario']:>16} N={r['N']} t_tot={r['t_tot']:<8g} qfi={r['qfi']:.10g}")
    print(f"wrote {len(rows)} rows to {out}")
    for e in errors:
        print(f"solver failure: {e}", file=sys.stderr)
    return EXIT_SOLVER if errors else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="combqfi", description="QFI of parametrized quantum combs.")
    sub = ap.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check the comb conditions of a comb file")
    v.add_argument("comb_file")
    v.add_argument("--tol", type=float, default=1e-8)
    for name in ("qfi", "sweep", "probe", "variational", "channel-ncopy"):
        p = sub.add_parser(name, help=f"run a '{name}' experiment from a YAML config")
        p.add_argument("config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("-o", "--output", default=None, help="CSV path (default: config 'output')")
        p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
        p.add_argument("--dump-sdp", default=None, metavar="PATH", help="also write each dual SDP as JSON")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return _cmd_validate(args)
    return _cmd_experiment(args)


if __name__ == "__main__":
    sys.exit(main())
