"""Run every stage of the desk (or full-size) experiment in order.

    python scripts/run_pipeline.py --config configs/desk.json --out runs/desk
"""

import argparse
import json
import time

from subway_ems.experiment import ExperimentConfig, Pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--out", default=None)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--policies", default="sdpo,sdpa,mpc")
    ap.add_argument("--skip-calibration", action="store_true")
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config)
    p = Pipeline(cfg, threads=args.threads, out=args.out)
    policies = tuple(s for s in args.policies.split(",") if s)
    t0 = time.perf_counter()

    def stage(name, fn, *a):
        t = time.perf_counter()
        out = fn(*a)
        print(f"{name:<26s} {time.perf_counter() - t:8.1f} s", flush=True)
        return out

    stage("gen-scenarios", p.gen_scenarios)
    stage("fit-noise", p.fit_noise)
    if not args.skip_calibration:
        cal = stage("calibrate", p.calibrate)
        print("  lambda scan:", json.dumps(cal["lambda_scan"]))
    stage("offline-sdpo", p.offline_sdpo)
    stage("offline-sdpa", p.offline_sdpa)
    stage("assess", p.assess, policies)
    stage("validate-discretization", p.validate_discretization)
    for other in policies:
        if other != "sdpo":
            stage(f"compare sdpo/{other}", p.compare, "sdpo", other)
    table = stage("report", p.report, policies)
    print(json.dumps(table, indent=2))
    print(f"total {time.perf_counter() - t0:.1f} s, artifacts in {p.out}")


if __name__ == "__main__":
    main()
