"""Re-derive the station constants from the reference-case targets.

Prints demand scale, (alpha, beta) and the resulting reference metrics;
paste the first three into ``subway_ems/calibration.py`` if they move.
"""

import argparse
import json

from subway_ems.calibration import calibrate_reference, default_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lambda-comfort", type=float, default=None)
    args = ap.parse_args()
    m = default_model() if args.lambda_comfort is None else default_model(args.lambda_comfort)
    print(json.dumps(calibrate_reference(m), indent=2))


if __name__ == "__main__":
    main()
