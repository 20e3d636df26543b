"""Regenerate the bundled synthetic networks in src/nmadta/data/."""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from nmadta.dataset import write_dataset
from nmadta.synthetic import hcc_like, prostate_like

DATA = Path(__file__).resolve().parents[1] / "src" / "nmadta" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=2025)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, make in (("hcc_like", hcc_like), ("prostate_like", prostate_like)):
        net = make(args.seed)
        with open(args.out / f"{name}.csv", "w", newline="") as fh:
            write_dataset(net.data, fh)
        model = net.truth.model
        fixed = {model.layout.names[i]: float(v)
                 for i, v in zip(range(model.layout.slices["fixed"].start, model.layout.slices["fixed"].stop),
                                 model.layout.flatten(net.truth)[model.layout.slices["fixed"]])}
        (args.out / f"{name}.truth.json").write_text(json.dumps(fixed, sort_keys=True, indent=1) + "\n")
        print(f"{name}: {len(net.data.studies)} studies, {len(net.data.tests)} tests, {len(net.data.series)} series")


if __name__ == "__main__":
    main()
