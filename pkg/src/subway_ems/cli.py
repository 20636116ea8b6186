"""Command-line pipeline: ``subway-ems <stage> --config cfg.json``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .experiment import ExperimentConfig, Pipeline, StaleArtifact

log = logging.getLogger("subway_ems")

STAGES = (
    "gen-scenarios",
    "fit-noise",
    "calibrate",
    "offline-sdpo",
    "offline-sdpa",
    "simulate",
    "assess",
    "compare",
    "export-milp",
    "validate-discretization",
    "report",
)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subway-ems", description=__doc__)
    ap.add_argument("--config", help="experiment config (JSON); defaults to the bundled desk config")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="optimization seed; the assessment seed is seed + 1")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--scale", choices=("desk", "full"), default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        if name == "simulate":
            p.add_argument("--policy", default="sdpo", choices=("reference", "sdpo", "sdpa", "mpc"))
            p.add_argument("--scenario", type=int, default=0)
        elif name == "assess":
            p.add_argument("--policies", default="sdpo,sdpa,mpc")
        elif name == "compare":
            p.add_argument("--a", default="sdpo")
            p.add_argument("--b", default="mpc")
            p.add_argument("--bins", type=int, default=30)
        elif name == "export-milp":
            p.add_argument("--t0", type=int, default=0)
            p.add_argument("--horizon", type=int, default=60)
            p.add_argument("--scenario", type=int, default=0)
        elif name == "validate-discretization":
            p.add_argument("--stride", type=int, default=15, help="coarse step in grid intervals")
        elif name == "report":
            p.add_argument("--policies", default="sdpo,sdpa,mpc")
    return ap


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.scale:
        cfg = cfg.with_scale(args.scale)
    if args.seed is not None:
        cfg = replace(cfg, seed_optimization=args.seed, seed_assessment=args.seed + 1)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def run(args) -> object:
    pipe = Pipeline(load_config(args), threads=args.threads)
    stage = args.stage
    if stage == "gen-scenarios":
        return [str(p) for p in pipe.gen_scenarios()]
    if stage == "fit-noise":
        return [str(p) for p in pipe.fit_noise()]
    if stage == "calibrate":
        return pipe.calibrate()
    if stage == "offline-sdpo":
        return {"offline_s": pipe.offline_sdpo()}
    if stage == "offline-sdpa":
        return {"offline_s": pipe.offline_sdpa()}
    if stage == "simulate":
        return str(pipe.simulate_one(args.policy, args.scenario))
    if stage == "assess":
        return pipe.assess([p for p in args.policies.split(",") if p])
    if stage == "compare":
        return pipe.compare(args.a, args.b, args.bins)
    if stage == "export-milp":
        return str(pipe.export_milp(args.t0, args.horizon, args.scenario))
    if stage == "validate-discretization":
        return pipe.validate_discretization(stride=args.stride)
    if stage == "report":
        return pipe.report([p for p in args.policies.split(",") if p])
    raise ValueError(f"unknown stage {stage}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = run(args)
    except (StaleArtifact, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
