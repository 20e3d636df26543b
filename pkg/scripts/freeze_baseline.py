"""Recompute and store the frozen-seed regression baseline used by the acceptance suite.

Only rerun this after a deliberate change to the sampler's numerics; the stored
values are what later runs are checked against.
"""
import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

import baseline  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--check", action="store_true", help="compare with the stored baseline instead of writing")
    args = ap.parse_args()
    values = baseline.compute()
    if args.check:
        stored = baseline.load()
        same = json.dumps(stored, sort_keys=True) == json.dumps(values, sort_keys=True)
        print("baseline reproduced" if same else "baseline differs")
        return 0 if same else 1
    baseline.save(values)
    print(json.dumps(values, sort_keys=True, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
