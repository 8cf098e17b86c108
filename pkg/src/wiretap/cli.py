"""Command-line entry point: ``wiretap <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation, mine
from .config import RunConfig, load_config
from .trainer import WiretapTrainer

log = logging.getLogger("wiretap")

OBJECTIVE_FLAGS = {"mimi": "mimi", "mice": "mice", "aece": "aece"}


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "objective", None) is not None:
        changes["objective"] = OBJECTIVE_FLAGS[args.objective]
    if getattr(args, "alpha", None) is not None:
        changes["alpha"] = args.alpha
    if getattr(args, "samples", None) is not None:
        changes["sweep_samples"] = args.samples
    return cfg.replace(**changes) if changes else cfg


def _print_sweep(res: evaluation.SweepResult, out=None):
    out = out or sys.stdout
    print(f"# scenario={res.scenario}", file=out)
    print("snr_db_main\tsnr_db_eve_eff\tser_bob\t+-\tser_eve\t+-\tqam16", file=out)
    for p in res.points:
        print(f"{p.snr_db_main:g}\t{p.snr_db_eve_effective:.2f}\t{p.ser_bob:.5f}\t{p.halfwidth_bob:.5f}\t"
              f"{p.ser_eve:.5f}\t{p.halfwidth_eve:.5f}\t{evaluation.qam16_ser(p.snr_db_main):.5f}", file=out)
    gap = evaluation.qam16_gap_db(res)
    print(f"# gap to 16-QAM at SER 1e-2: {'n/a' if gap is None else f'{gap:.2f} dB'}", file=out)


def cmd_train(args):
    cfg = _resolve_config(args)
    tr = WiretapTrainer(cfg).run()
    evaluation.export_artifacts(tr, args.out, sweeps=False)
    bob_ce, eve_ce = np.mean(tr.decoder_losses[-50:], axis=0) if tr.decoder_losses else (float("nan"),) * 2
    print(f"run written to {args.out}")
    print(f"I(X;Y)~{tr.mi0.smoothed:.4f} I(X;Z)~{tr.mi1.smoothed:.4f} nats; "
          f"decoder CE bob={bob_ce:.4f} eve={eve_ce:.4f}")


def cmd_sweep(args):
    run = evaluation.load_run(args.out)
    cfg = run.config
    if args.samples is not None:
        cfg = cfg.replace(sweep_samples=args.samples)
    scenarios = (args.eve_decoder,) if args.eve_decoder else evaluation.SCENARIOS
    results = evaluation.export_sweeps(args.out, cfg, run.encoder, run.bob, run.eve, scenarios)
    for res in results.values():
        _print_sweep(res)


def cmd_export(args):
    run = evaluation.load_run(args.out)
    evaluation.export_models(args.out, run.config, run.encoder, run.bob, run.eve)
    evaluation.write_qam16(Path(args.out) / "qam16.csv", run.config.snr_grid())
    print(f"exported manifest, schema, constellation and weights to {args.out}")


def cmd_alpha_study(args):
    cfg = _resolve_config(args)
    alphas = [float(a) for a in args.alphas.split(",")]
    rows = evaluation.alpha_study(cfg, alphas, args.out)
    print("alpha\tsnr_db\tser_bob\tser_eve_own\tser_eve_bobdec")
    for r in rows:
        print(f"{r['alpha']:g}\t{r['snr_db_main']:g}\t{r['ser_bob']:.5f}\t{r['ser_eve_own']:.5f}\t"
              f"{r['ser_eve_bobdec']:.5f}")


def cmd_compare(args):
    cfg = _resolve_config(args)
    summary = evaluation.compare_methods(cfg, args.out)
    print("objective\tbob_ce\teve_ce\tser_bob@12dB\tser_eve@12dB")
    for obj, s in summary.items():
        own = s["sweeps"]["own"]
        p = own.at(12.0) if 12.0 in own.snr() else own.points[-1]
        print(f"{obj}\t{s['bob_ce']:.4f}\t{s['eve_ce']:.4f}\t{p.ser_bob:.5f}\t{p.ser_eve:.5f}")
    best = min(summary, key=lambda o: summary[o]["sweeps"]["own"].ser_bob().mean())
    print(f"# lowest mean Bob SER: {best}")


def cmd_mine_bench(args):
    rhos = [float(r) for r in args.rhos.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    print("rho\ttrue_mi\testimate\tabs_err")
    for rho in rhos:
        est = mine.gaussian_benchmark(rho, steps=args.steps, seed=args.seed or 0)
        truth = mine.gaussian_mi(rho)
        rows.append([repr(rho), repr(float(truth)), repr(float(est.smoothed))])
        print(f"{rho:g}\t{truth:.4f}\t{est.smoothed:.4f}\t{abs(est.smoothed - truth):.4f}")
    with open(out / "mine_bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "true_mi_nats", "smoothed_estimate_nats"])
        w.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wiretap", description="Dual-estimator secure coding over a Gaussian wiretap channel")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="run directory"):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help=out_help)

    def training(sp):
        sp.add_argument("--objective", choices=sorted(OBJECTIVE_FLAGS))
        sp.add_argument("--alpha", type=float)

    sp = sub.add_parser("train", help="run all three training phases and save the models")
    common(sp)
    training(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="Monte Carlo SER vs main-link SNR for a trained run")
    sp.add_argument("--out", required=True, help="run directory written by train")
    sp.add_argument("--eve-decoder", choices=["own", "bob"], help="default: both scenarios")
    sp.add_argument("--samples", type=int, help="symbols per grid point")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("export", help="rewrite manifest, schema, constellation and weights of a run")
    sp.add_argument("--out", required=True, help="run directory written by train")
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("alpha-study", help="train and sweep one run per alpha")
    common(sp, "study directory")
    training(sp)
    sp.add_argument("--alphas", default="0.4,0.6,0.7")
    sp.add_argument("--samples", type=int)
    sp.set_defaults(func=cmd_alpha_study)

    sp = sub.add_parser("compare", help="train MI+MI, MI+CE and AE+CE with the same seed and alpha")
    common(sp, "comparison directory")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--samples", type=int)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("mine-bench", help="estimator check on jointly Gaussian pairs")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--rhos", default="0,0.5,0.9")
    sp.add_argument("--steps", type=int, default=5000)
    sp.set_defaults(func=cmd_mine_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # surfaced as one machine-readable line
        print("error: " + json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
