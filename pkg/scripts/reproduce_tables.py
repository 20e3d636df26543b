"""Model-comparison and pooled-accuracy tables for a network.

Fits the four comparison models (V1, V2, V3, MetaRegression) and prints a DIC
table, then pooled accuracy of every test at its reference threshold under the
model with the lowest DIC. Defaults run on the bundled synthetic analogs; pass
``--data`` to use a real extraction in the same cell format.
"""
import argparse
import warnings
from importlib import resources

from nmadta.dataset import build_network_graph, read_dataset, validate_for_model
from nmadta.inference import SamplerConfig, dic, run_mcmc
from nmadta.model import ModelSpec
from nmadta.summaries import pooled_accuracy

PRESETS = ("V1", "V2", "V3", "MetaRegression")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--network", choices=["hcc_like", "prostate_like"], default="prostate_like")
    ap.add_argument("--data", help="cell-format file to use instead of a bundled network")
    ap.add_argument("--warmup", type=int, default=2000)
    ap.add_argument("--keep", type=int, default=4000)
    ap.add_argument("--chains", type=int, default=3)
    ap.add_argument("--seed", type=int, default=20250101)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--threshold", action="append", default=[], metavar="TEST:VALUE",
                    help="extra pooled-accuracy thresholds, e.g. AFP:20")
    args = ap.parse_args()
    if args.data:
        d = read_dataset(args.data)
    else:
        with resources.as_file(resources.files("nmadta") / "data" / f"{args.network}.csv") as path:
            d = read_dataset(path)
    cfg = SamplerConfig(chains=args.chains, warmup_iters=args.warmup, keep_iters=args.keep, seed=args.seed)
    graph = build_network_graph(d)
    fits = {}
    print("model\tresidual_deviance\tpV\tDIC")
    for preset in PRESETS:
        spec = ModelSpec.preset(preset)
        report = validate_for_model(d, graph, spec.variant)
        if not report.ok:
            print(f"{preset}\tnot applicable: {report.to_text().strip()}")
            continue
        fits[preset] = run_mcmc(d, spec, cfg, threads=args.threads)
        rep = dic(fits[preset])
        print(f"{preset}\t{rep.mean_residual_deviance:.1f}\t{rep.pV:.1f}\t{rep.dic:.1f}")
    best = min(fits, key=lambda p: dic(fits[p]).dic)
    print(f"\npooled accuracy under {best}")
    print("test\tthreshold\tsensitivity (95% CrI)\tspecificity (95% CrI)")
    extra = [(t, float(v)) for t, _, v in (x.rpartition(":") for x in args.threshold)]
    queries = [(t.test_id, None) for t in d.tests] + extra
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for test, c in queries:
            a = pooled_accuracy(fits[best], test, c)
            sens, spec = a.sensitivity, a.specificity
            th = "NA" if a.threshold is None else f"{a.threshold:g}"
            print(f"{test}\t{th}\t{sens[0]:.3f} ({sens[1]:.3f}, {sens[2]:.3f})\t"
                  f"{spec[0]:.3f} ({spec[1]:.3f}, {spec[2]:.3f})")


if __name__ == "__main__":
    main()
