"""Command-line front end.

Exit codes: 0 on success, 1 on invalid input, 2 when a ``verify`` suite fails.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import flux as fx
from .dynamics import CoupledConfig, run, run_coupled
from .kernels import TwoLaneRates, load_rates, parse_rates, rates_from_dict
from .lattice import Config, LaneGeometry
from .measures import sample_batch, spec_from_json, spec_to_json
from .rng import replica_seed
from .suites import SUITES


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class ExperimentConfig:
    command: str
    kernel: dict | None = None
    measure: dict | None = None
    measure2: dict | None = None
    geometry: dict | None = None
    T: float | None = None
    replicas: int = 1
    seed: int = 0
    snapshots: list[float] | None = None
    output: str | None = None
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


# ---------------------------------------------------------------------------
# argument helpers


def _rates(args):
    if getattr(args, "kernel", None):
        return load_rates(args.kernel)
    if getattr(args, "rates", None):
        return parse_rates(args.rates.replace(";", "\n"))
    raise UsageError("give --kernel FILE or --rates 'd0=..;l0=..;...'")


def _measure(text: str):
    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    elif os.path.exists(text):
        text = Path(text).read_text()
    return spec_from_json(json.loads(text))


def _snapshots(text: str | None, T: float) -> list[float]:
    if not text:
        return [T]
    return sorted(float(v) for v in text.split(",") if v.strip())


def _open_out(path: str | None):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _num(v: float):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return repr(float(v))


# ---------------------------------------------------------------------------
# subcommands


def cmd_sample(args) -> int:
    g = LaneGeometry.parse(args.geometry)
    spec = _measure(args.measure)
    cfg = ExperimentConfig("sample", measure=spec_to_json(spec), geometry=g.to_dict(),
                           replicas=args.count, seed=args.seed, output=args.out)
    occ = sample_batch(spec, g, args.count, args.seed)
    fh, close = _open_out(args.out)
    try:
        fh.write(json.dumps({"config": cfg.to_json()}) + "\n")
        for k, o in enumerate(occ):
            fh.write(json.dumps({"index": k, "config": Config(g, o).to_json()["lanes"]}) + "\n")
    finally:
        if close:
            fh.close()
    return 0


def _simulate_one(task):
    rates_d, geom_d, occ, T, snaps, seed, coupled = task
    rates = rates_from_dict(rates_d)
    g = LaneGeometry.from_dict(geom_d)
    if coupled:
        cc = CoupledConfig(Config(g, occ[0]), Config(g, occ[1]))
        return run_coupled(cc, rates, T, seed=seed, snapshots=snaps).to_json()
    return run(Config(g, occ), rates, T, seed=seed, snapshots=snaps).to_json()


def _fan_out(tasks, jobs):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(tasks) < 2:
        return [_simulate_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_simulate_one, tasks))


def cmd_simulate(args, coupled: bool = False) -> int:
    rates = _rates(args)
    g = LaneGeometry.parse(args.geometry)
    spec = _measure(args.measure)
    spec2 = _measure(args.measure2) if coupled else None
    snaps = _snapshots(args.snapshots, args.T)
    cfg = ExperimentConfig("couple" if coupled else "simulate", kernel=rates.to_dict(),
                           measure=spec_to_json(spec),
                           measure2=spec_to_json(spec2) if coupled else None,
                           geometry=g.to_dict(), T=args.T, replicas=args.replicas,
                           seed=args.seed, snapshots=snaps, output=args.out)
    occ = sample_batch(spec, g, args.replicas, replica_seed(args.seed, 1 << 40))
    if coupled:
        occ2 = sample_batch(spec2, g, args.replicas, replica_seed(args.seed, (1 << 40) + 1))
        occ = np.stack([occ, occ2], axis=1)
    seeds = [replica_seed(args.seed, k) for k in range(args.replicas)]
    tasks = [(rates.to_dict(), g.to_dict(), occ[k], args.T, snaps, seeds[k], coupled)
             for k in range(args.replicas)]
    results = _fan_out(tasks, args.jobs)
    fh, close = _open_out(args.out)
    try:
        fh.write(json.dumps({"config": cfg.to_json()}) + "\n")
        for k, res in enumerate(results):
            res["replica"] = k
            res["stream"] = seeds[k]
            fh.write(json.dumps(res) + "\n")
    finally:
        if close:
            fh.close()
    return 0


def _flux_rows(curve: fx.FluxCurve, grid: int):
    xs = np.linspace(0.0, 2.0, grid)
    rows = []
    for x in xs:
        vals = [fx.G(curve, x)]
        for order in (1, 2, 3):
            try:
                vals.append(fx.G_derivative(curve, x, order))
            except ValueError:
                vals.append(None)
        rows.append([float(x)] + vals)
    return rows


def cmd_flux(args) -> int:
    if args.kernel or args.rates:
        curve = fx.FluxCurve.from_rates(_rates(args))
    else:
        if args.gamma0 is None or args.gamma1 is None or args.r is None:
            raise UsageError("give --gamma0, --gamma1 and --r (or a kernel)")
        curve = fx.FluxCurve(args.gamma0, args.gamma1, args.r)
    if args.grid < 2:
        raise UsageError("--grid must be at least 2")
    cfg = ExperimentConfig("flux", output=args.out,
                           params={"gamma0": curve.gamma0, "gamma1": curve.gamma1,
                                   "r": curve.r if math.isfinite(curve.r) else "inf",
                                   "grid": args.grid})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["rho", "G", "G1", "G2", "G3"])
    for row in _flux_rows(curve, args.grid):
        w.writerow([_num(v) for v in row])
    fh, close = _open_out(args.out)
    try:
        fh.write(buf.getvalue())
    finally:
        if close:
            fh.close()
    if close:
        Path(str(args.out) + ".json").write_text(json.dumps({"config": cfg.to_json()}, indent=2))
    return 0


def classify_report(d: float | None, r: float, rates: TwoLaneRates | None = None) -> dict:
    curve = fx.FluxCurve.from_rates(rates) if rates is not None else fx.FluxCurve.normalized(d, r)
    c = fx.classify_R0(curve)
    out = c.to_json()
    out["rho_star"] = None
    out["in_Z"] = None
    s = curve.gamma0 + curve.gamma1
    if not c.degenerate and s != 0 and 0 < curve.r <= 1:
        dd = curve.gamma0 / s
        if 0 <= dd <= 1:
            out["rho_star"] = fx.solve_rho_dr(dd, curve.r)
            out["in_Z"] = fx.in_Z(dd, curve.r)
    return out


def cmd_classify(args) -> int:
    if args.kernel or args.rates:
        rates = _rates(args)
        if not isinstance(rates, TwoLaneRates):
            raise UsageError("classify needs two-lane rates")
        report = classify_report(None, 0.0, rates)
        params = {"kernel": rates.to_dict()}
    else:
        if args.d is None or args.r is None:
            raise UsageError("give --d and --r (or a kernel)")
        if not 0 <= args.d <= 1 or args.r < 0:
            raise ValueError("need d in [0, 1] and r >= 0")
        report = classify_report(args.d, args.r)
        params = {"d": args.d, "r": args.r}
    report["config"] = ExperimentConfig("classify", params=params).to_json()
    fh, close = _open_out(args.out)
    try:
        fh.write(json.dumps(report, indent=2) + "\n")
    finally:
        if close:
            fh.close()
    return 0


def cmd_phase_diagram(args) -> int:
    n = args.grid
    if n < 2:
        raise UsageError("--grid must be at least 2")
    ds = np.linspace(0.0, 1.0, n)
    rs = np.arange(1, n + 1) / n  # n values in (0, 1]
    cfg = ExperimentConfig("phase-diagram", output=args.out, params={"grid": n})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["d", "r", "R0_size", "in_Z"])
    for d in ds:
        for r in rs:
            c = fx.classify_R0(fx.FluxCurve.normalized(float(d), float(r)))
            w.writerow([_num(d), _num(r), len(c.R0), int(fx.in_Z(float(d), float(r)))])
    fh, close = _open_out(args.out)
    try:
        fh.write(buf.getvalue())
    finally:
        if close:
            fh.close()
    if close:
        Path(str(args.out) + ".json").write_text(json.dumps({"config": cfg.to_json()}, indent=2))
    return 0


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    report = {"config": ExperimentConfig("verify", seed=args.seed,
                                         params={"suite": args.suite}).to_json(), "checks": []}
    for name in names:
        for label, passed, detail in SUITES[name](seed=args.seed, jobs=args.jobs):
            ok &= bool(passed)
            report["checks"].append({"suite": name, "check": label, "passed": bool(passed),
                                     "detail": detail})
            print(f"[{'PASS' if passed else 'FAIL'}] {name}: {label} {detail}".rstrip(),
                  file=sys.stderr)
    report["passed"] = ok
    fh, close = _open_out(args.out)
    try:
        fh.write(json.dumps(report, indent=2) + "\n")
    finally:
        if close:
            fh.close()
    return 0 if ok else 2


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="multilane-sep", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def kernel_args(sp):
        sp.add_argument("--kernel", help="rate file with key = value lines")
        sp.add_argument("--rates", help="inline rates, ';'-separated key=value pairs")

    def run_args(sp):
        kernel_args(sp)
        sp.add_argument("--geometry", required=True, help="LxN:periodic|closed[:torus]")
        sp.add_argument("-T", type=float, required=True)
        sp.add_argument("--snapshots", help="comma-separated times in [0, T]")
        sp.add_argument("--replicas", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=None)
        sp.add_argument("--out", default="-")

    sp = sub.add_parser("sample", help="draw configurations from a measure")
    sp.add_argument("--measure", required=True, help="JSON spec, @file or path")
    sp.add_argument("--geometry", required=True)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("simulate", help="run replicas from a measure")
    run_args(sp)
    sp.add_argument("--measure", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("couple", help="basic coupling of two initial measures")
    run_args(sp)
    sp.add_argument("--measure", required=True, help="law of eta")
    sp.add_argument("--measure2", required=True, help="law of xi")
    sp.set_defaults(func=lambda a: cmd_simulate(a, coupled=True))

    sp = sub.add_parser("flux", help="tabulate G and its derivatives")
    kernel_args(sp)
    sp.add_argument("--gamma0", type=float)
    sp.add_argument("--gamma1", type=float)
    sp.add_argument("--r", type=float, help="q/p; 'inf' for p = 0")
    sp.add_argument("--grid", type=int, default=201)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_flux)

    sp = sub.add_parser("classify", help="amplitude-one entropy shocks and Z membership")
    kernel_args(sp)
    sp.add_argument("--d", type=float)
    sp.add_argument("--r", type=float)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("phase-diagram", help="scan (d, r)")
    sp.add_argument("--grid", type=int, default=101)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_phase_diagram)

    sp = sub.add_parser("verify", help="run a self-check suite")
    sp.add_argument("--suite", required=True, choices=sorted(SUITES) + ["all"])
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--jobs", type=int, default=None)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, IndexError, TypeError, OSError, json.JSONDecodeError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
