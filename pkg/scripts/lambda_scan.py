"""Mean PM10 of SDPO against the comfort weight on held-out optimization paths.

Needs the ``gen-scenarios`` and ``fit-noise`` artifacts of the chosen config.
"""

import argparse

from subway_ems.experiment import ExperimentConfig, Pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--out", default=None)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    p = Pipeline(ExperimentConfig.load(args.config), threads=args.threads, out=args.out)
    res = p.calibrate()
    ref = res["current"]["pm10_mean"]
    print(f"reference mean PM10 {ref:.2f}")
    for row in res["lambda_scan"]:
        flag = "<=" if row["pm10_mean"] <= ref else "> "
        print(f"  lambda {row['lambda']:.1e}  pm10 {row['pm10_mean']:7.2f} {flag} ref")
    print(f"selected {res['lambda_selected']}, configured {res['lambda_configured']}")


if __name__ == "__main__":
    main()
