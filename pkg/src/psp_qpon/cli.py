"""Command-line interface: ``psp-qpon <subcommand> [options]``.

Exit codes: 0 success, 2 invalid input (scenario, arguments), 3 runtime or
stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import PRESETS, ScenarioConfig, dump_scenario, load_scenario
from .dsp import CalibrationRecord, unit_record
from .errors import (
    QponError,
    ScenarioParseError,
    ScenarioValidationError,
    StageError,
    UnknownAxis,
)
from .frames import iter_frames, write_frame
from .report import KeyRateReport, export_report, load_report

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--scenario", default="table1_4qnu", help=f"scenario file or preset ({', '.join(PRESETS)})")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed (u64)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
    p.add_argument("--analytic", action="store_true", help="closed-form model instead of Monte Carlo")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="psp-qpon", description="PSP CV-QKD passive optical network simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="write raw detector frames")

    p = sub.add_parser("dsp", parents=[common], help="process raw frames")
    p.add_argument("--in", dest="inp", required=True, help="directory written by 'simulate'")

    p = sub.add_parser("estimate", parents=[common], help="covariance estimates from processed frames")
    p.add_argument("--in", dest="inp", required=True, help="directory written by 'dsp'")

    p = sub.add_parser("keyrate", parents=[common], help="key-rate report from estimates or the analytic model")
    p.add_argument("--in", dest="inp", help="estimates.json written by 'estimate'")

    p = sub.add_parser("run", parents=[common], help="end-to-end run")
    p.add_argument("--dump-frames", action="store_true", help="also write raw frames to <out>/frames")

    p = sub.add_parser("sweep", parents=[common], help="key rate versus one parameter")
    p.add_argument("--axis", required=True, help=f"one of {', '.join(pipeline.SWEEP_AXES)}")
    p.add_argument("--values", required=True, help="comma list 'a,b,c' or range 'start:stop:count'")

    p = sub.add_parser("report", parents=[common], help="re-render a saved JSON report")
    p.add_argument("--in", dest="inp", required=True, help="report JSON")
    return ap


def parse_values(text: str) -> list[float]:
    if ":" in text:
        start, stop, num = text.split(":")
        return [float(v) for v in np.linspace(float(start), float(stop), int(num))]
    return [float(v) for v in text.split(",") if v.strip()]


def _config(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ScenarioValidationError("seed", "must be an unsigned 64-bit integer")
        cfg = cfg.with_updates({"seed": args.seed})
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _outdir(args)
    (out / "scenario.yaml").write_text(dump_scenario(cfg))
    handles = [open(out / f"role{r}.qpf", "wb") for r in range(cfg.fanout + 1)]
    try:
        n = 0
        for slot in pipeline.Simulator(cfg).slots_iter():
            if slot.qlt is not None:
                write_frame(handles[0], slot.qlt)
            for i, f in enumerate(slot.qnus, start=1):
                write_frame(handles[i], f)
            n += 1
    finally:
        for h in handles:
            h.close()
    _log(f"simulate: {n} slots for {cfg.fanout} QNU(s) -> {out}")
    return EXIT_OK


def cmd_dsp(args) -> int:
    cfg = _config(args)
    src, out = Path(args.inp), _outdir(args)
    slots = pipeline.slots_from_frames(
        iter_frames(src / "role0.qpf"), [iter_frames(src / f"role{i}.qpf") for i in range(1, cfg.fanout + 1)]
    )
    handles = [open(out / f"processed{r}.qpf", "wb") for r in range(cfg.fanout + 1)]
    records = []
    try:
        for pf in pipeline.process_frames(cfg, slots):
            write_frame(handles[0], pf.qlt)
            for i, f in enumerate(pf.qnus, start=1):
                write_frame(handles[i], f)
                rec = f.snu_ref
                records.append({"qnu": i, **rec.__dict__, "contributing_frames": list(rec.contributing_frames)})
    finally:
        for h in handles:
            h.close()
    (out / "calibration.json").write_text(json.dumps(records, indent=1))
    _log(f"dsp: {len(records) // max(cfg.fanout, 1)} signal frames -> {out}")
    return EXIT_OK


def _processed_frames(cfg: ScenarioConfig, src: Path):
    recs = {(r["qnu"], r["target_frame_index"]): r for r in json.loads((src / "calibration.json").read_text())}
    streams = [iter_frames(src / f"processed{r}.qpf") for r in range(cfg.fanout + 1)]
    for group in zip(*streams):
        qlt, qnus = group[0], []
        for i, f in enumerate(group[1:], start=1):
            r = dict(recs[(i, f.frame_index)])
            r.pop("qnu")
            r["contributing_frames"] = tuple(r["contributing_frames"])
            qnus.append(f.with_samples(f.z, snu_ref=CalibrationRecord(**r)))
        yield pipeline.ProcessedFrame(qlt.frame_index, qlt.with_samples(qlt.z, snu_ref=unit_record(qlt.frame_index)), qnus, [])


def cmd_estimate(args) -> int:
    cfg = _config(args)
    out = _outdir(args)
    est = pipeline.estimate_points(cfg, _processed_frames(cfg, Path(args.inp)))
    doc = {
        "scenario_digest": cfg.digest(),
        "points": [
            {
                "point": p.point,
                "first_frame": p.first_frame,
                "n_frames": p.n_frames,
                "n_samples": p.n_samples,
                "covariance": cov.tolist(),
            }
            for p, cov in zip(est.points, est.covariances)
        ],
        "pooled_covariance": est.total.covariance().tolist(),
    }
    (out / "estimates.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    _log(f"estimate: {len(est.points)} estimation point(s) -> {out / 'estimates.json'}")
    return EXIT_OK


def cmd_keyrate(args) -> int:
    cfg = _config(args)
    if args.analytic or not args.inp:
        report = pipeline.run_analytic(cfg)
    else:
        doc = json.loads(Path(args.inp).read_text())
        if doc["scenario_digest"] != cfg.digest():
            raise ScenarioValidationError("scenario", "estimates were produced by a different scenario")
        report = KeyRateReport(cfg.digest(), cfg.to_dict(), "monte_carlo")
        for d in doc["points"]:
            report.points.append(
                pipeline.evaluate_point(
                    cfg, np.asarray(d["covariance"]), d["n_samples"], d["point"], d["first_frame"], d["n_frames"]
                )
            )
        report.covariance = doc["pooled_covariance"]
    path = export_report(report, args.format, _outdir(args))
    _log(f"keyrate: {path}")
    return EXIT_OK


def _summary(report: KeyRateReport) -> None:
    for qnu, avg in report.averages().items():
        _log(
            f"QNU {qnu}: T={avg['T_db_hat']:.3f} dB  xi={avg['xi_x']:.4f}/{avg['xi_p']:.4f}  "
            f"SNR={avg['snr']:.4f}  chi={avg['chi_trusted']:.4f}  K={avg['K_eq1'] / 1e6:.2f} Mbps"
        )


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _outdir(args)
    if args.analytic:
        report = pipeline.run_analytic(cfg)
    else:
        try:
            report = pipeline.run_pipeline(cfg, out / "frames" if args.dump_frames else None, progress=_log)
        except StageError as exc:
            if exc.partial is not None:
                export_report(exc.partial, "json", out / "report.partial.json")
            raise
    path = export_report(report, args.format, out)
    _summary(report)
    _log(f"run: {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.axis not in pipeline.SWEEP_AXES:
        raise UnknownAxis(f"unknown sweep axis {args.axis!r}; choose from {', '.join(pipeline.SWEEP_AXES)}")
    try:
        values = parse_values(args.values)
    except ValueError as exc:
        raise ScenarioValidationError("values", str(exc)) from None
    rows = pipeline.sweep(cfg, args.axis, values, analytic=args.analytic)
    path = _outdir(args) / f"sweep_{args.axis}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=pipeline.SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in r.items()})
    _log(f"sweep: {len(values)} value(s) -> {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    report = load_report(args.inp)
    path = export_report(report, args.format, _outdir(args))
    _summary(report)
    _log(f"report: {path}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "dsp": cmd_dsp,
    "estimate": cmd_estimate,
    "keyrate": cmd_keyrate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioParseError, ScenarioValidationError, UnknownAxis) as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except (QponError, OSError, KeyError, ValueError) as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
