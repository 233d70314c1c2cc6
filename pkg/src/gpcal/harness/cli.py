"""Command line entry point: ``gpcal <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import io
from ..nozzle_solver import write_state_csv
from . import pipeline
from .config import SCENARIOS, ConfigError, hash_of, load_config, resolve

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out-dir", type=Path, help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, help="worker processes for Monte Carlo")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gpcal", description="Chaos-based propagation and calibration for nozzle flow.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("propagate", parents=[common], help="stochastic Galerkin propagation of the area prior")
    mc = sub.add_parser("mc-baseline", parents=[common], help="Monte Carlo propagation baseline")
    mc.add_argument("--samples", type=int, help="number of Monte Carlo samples")
    conv = sub.add_parser("convergence", parents=[common], help="accuracy and cost versus modes and order")
    conv.add_argument("--modes", type=int, nargs="+", default=[1, 2, 3, 4])
    conv.add_argument("--orders", type=int, nargs="+", default=[1, 2])
    conv.add_argument("--samples", type=int, help="Monte Carlo reference samples")
    cal = sub.add_parser("calibrate", parents=[common], help="run a calibration scenario")
    cal.add_argument("scenario", choices=SCENARIOS)
    rep = sub.add_parser("report", parents=[common], help="summarize JSON reports in the output directory")
    rep.add_argument("--scenario", choices=SCENARIOS, action="append")
    return p


def _resolve(args):
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    cfg = load_config(args.config) if args.config else resolve()
    cfg = resolve({k: v for k, v in cfg.items()}, **over)
    if args.out_dir is not None:
        cfg["out_dir"] = str(args.out_dir)
    return cfg


def _out(cfg) -> Path:
    d = Path(cfg["out_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_propagate(cfg, args):
    h = hash_of(cfg)
    out = _out(cfg)
    prop = pipeline.propagate(cfg)
    write_state_csv(out / "propagate_responses.csv", prop.state.x, prop.responses, f"config_hash={h}")
    io.write_json(out / "klmodes.json", io.klmodes_to_dict(prop.area.klmodes), h)
    io.write_json(out / "area_field.json", io.field_to_dict(prop.area.field), h)
    basis = prop.area.basis
    rows = []
    for g, x in enumerate(prop.state.x):
        row = [x]
        for k in cfg["responses"]:
            c = prop.responses[k][g]
            row += [c[0], float(np.sum(c[1:] ** 2 * basis.norms[1:]))]
        rows.append(row)
    header = ["x"] + [f"{k}_{s}" for k in cfg["responses"] for s in ("mean", "var")]
    io.write_csv(out / "propagate_moments.csv", header, rows, h)
    io.write_json(
        out / "propagate.json",
        {"config": cfg, "basis_size": basis.size, "steps": prop.state.steps, "residual": prop.state.residual},
        h,
    )
    print(f"stochastic solve: P={basis.size}, {prop.state.steps} steps -> {out}")


def cmd_mc(cfg, args):
    h = hash_of(cfg)
    out = _out(cfg)
    mc = pipeline.mc_propagate(cfg, args.samples)
    header = ["x"] + [f"{k}_{s}" for k in cfg["responses"] for s in ("mean", "var")]
    rows = [[x] + [v for k in cfg["responses"] for v in (mc.mean[k][g], mc.variance[k][g])] for g, x in enumerate(mc.x)]
    io.write_csv(out / "mc_moments.csv", header, rows, h)
    io.write_json(
        out / "mc_summary.json",
        {"config": cfg, "n_samples": mc.n_samples, "n_failed": mc.n_failed, "failure_rate": mc.failure_rate, "method": mc.method},
        h,
    )
    print(f"Monte Carlo: {mc.n_samples} samples, {mc.n_failed} failed -> {out}")


def cmd_convergence(cfg, args):
    h = hash_of(cfg)
    out = _out(cfg)
    rows = pipeline.run_convergence_study(cfg, args.modes, args.orders, args.samples)
    io.write_csv(out / "convergence.csv", ["n_modes", "order", "cpu_time", "l1_mean_err", "l1_var_err"], rows, h)
    print(f"convergence: {len(rows)} rows -> {out / 'convergence.csv'}")


def cmd_calibrate(cfg, args):
    h = hash_of(cfg)
    out = _out(cfg)
    rep = pipeline.run_experiment(cfg, args.scenario)
    summary = {"scenario": rep.scenario, "config": cfg, "timing": rep.timing, "runs": []}
    for run in rep.runs:
        tag = f"{args.scenario}_{run.label}".replace("(", "").replace(")", "").replace(",", "-")
        io.write_chain(out / f"{tag}_chain.csv", run.chain, h)
        header = ["x", "mean"] + [k for k in run.area if k.startswith("q")]
        rows = [[x] + [run.area[k][g] for k in header[1:]] for g, x in enumerate(run.area["x"])]
        io.write_csv(out / f"{tag}_area.csv", header, rows, h)
        hyper = {f"area_{k}": v for k, v in run.hyper_area.items()}
        for resp, d in run.hyper_discrepancy.items():
            hyper.update({f"{resp}_{k}": v for k, v in d.items()})
        io.write_csv(out / f"{tag}_hyper.csv", list(hyper), np.column_stack(list(hyper.values())).tolist(), h)
        entry = {
            "label": run.label,
            "discrepancy": run.discrepancy,
            "variance_prior": run.variance_prior,
            "response_scale": run.response_scale,
            "data_scale": run.data_scale,
            "errors": run.errors,
            "ks": run.ks,
            "timing": run.timing,
            "acceptance_rate": run.chain.acceptance_rate,
            "step": run.chain.step,
            "surrogate_fallbacks": run.surrogate.n_fallback,
            "diagnostics": run.chain.diagnostics,
        }
        if run.credibility is not None:
            entry["credibility"] = run.credibility.to_dict()
            io.write_json(out / f"{tag}_credibility.json", run.credibility.to_dict(), h)
        summary["runs"].append(entry)
    io.write_json(out / f"report_{args.scenario}.json", summary, h)
    for e in summary["runs"]:
        cred = e.get("credibility", {})
        verdicts = ", ".join(f"{k}: {v['verdict']}" for k, v in cred.items())
        print(
            f"{args.scenario}/{e['label']}: area L2 error {e['errors']['prior_mean_l2']:.4f} -> "
            f"{e['errors']['posterior_mean_l2']:.4f}" + (f"; {verdicts}" if verdicts else "")
        )


def cmd_report(cfg, args):
    out = Path(cfg["out_dir"])
    scenarios = args.scenario or SCENARIOS
    found = False
    for s in scenarios:
        p = out / f"report_{s}.json"
        if not p.is_file():
            continue
        found = True
        rep = io.read_json(p)
        print(f"== {s} (config {rep.get('config_hash')})")
        for e in rep["runs"]:
            err = e["errors"]
            print(f"  {e['label']}: L2 prior {err['prior_mean_l2']:.4f} posterior {err['posterior_mean_l2']:.4f}")
            for k, c in e.get("credibility", {}).items():
                print(f"    {k}: {c['verdict']}")
    if not found:
        raise FileNotFoundError(f"no calibration reports in {out}")


COMMANDS = {
    "propagate": cmd_propagate,
    "mc-baseline": cmd_mc,
    "convergence": cmd_convergence,
    "calibrate": cmd_calibrate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"gpcal: configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"gpcal: configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        print(f"gpcal: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
