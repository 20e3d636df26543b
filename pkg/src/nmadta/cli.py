"""Command-line entry point: validate, fit, compare, summarize, simulate.

Exit codes: 0 success, 1 validation failure, 2 parse/config error, 3 sampling failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_run_config
from .dataset import (Dataset, DatasetError, build_network_graph, read_dataset, reduce_to_reference_thresholds,
                      validate_for_model, write_dataset)
from .figures import curve_rows, plot_sroc, plot_threshold_curves
from .inference import SamplingError, diagnostics, dic, read_container, run_mcmc, write_container
from .inference.dic import MIN_DRAWS
from .model import Model, ModelSpec, ModelVariant
from .summaries import (pooled_accuracy, rankings, rows_to_text, sroc_curve, summary_report, summary_rows,
                        threshold_curve)
from .synthetic import NETWORKS, generate

EXIT_OK, EXIT_VALIDATION, EXIT_PARSE, EXIT_SAMPLING = 0, 1, 2, 3
CONTAINER = "posterior.bin"


class _Writer:
    """Single writer for one output directory; records the hash of every artifact."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hashes: dict[str, str] = {}

    def path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if self.root.resolve() not in p.parents:
            raise ValueError(f"refusing to write outside {self.root}: {name}")
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, name: str) -> None:
        self.hashes[name] = hashlib.sha256(self.path(name).read_bytes()).hexdigest()

    def text(self, name: str, content: str) -> None:
        self.path(name).write_text(content)
        self.record(name)

    def manifest(self, cfg: RunConfig | None, data: Dataset | None, status: str, **extra) -> None:
        body = {
            "software": "nmadta",
            "version": __version__,
            "status": status,
            "artifacts": dict(sorted(self.hashes.items())),
        }
        if cfg is not None:
            body.update({"config_hash": cfg.hash(), "seed": cfg.sampler.seed, "config": cfg.to_text(),
                         "data_path": os.path.relpath(cfg.data_path, self.root.resolve())})
        if data is not None:
            body["data_fingerprint"] = data.fingerprint()
        body.update(extra)
        self.path("manifest.json").write_text(json.dumps(body, sort_keys=True, indent=1) + "\n")


def _err(msg: str) -> None:
    print(f"nmadta: {msg}", file=sys.stderr)


def _load_data(path, reference_only: bool) -> Dataset:
    d = read_dataset(path)
    return reduce_to_reference_thresholds(d) if reference_only else d


# -- validate -------------------------------------------------------------------
def cmd_validate(args) -> int:
    try:
        d = _load_data(args.data, args.reference_only)
    except (DatasetError, OSError) as exc:
        _err(str(exc))
        return EXIT_PARSE
    report = validate_for_model(d, build_network_graph(d), ModelVariant(args.variant))
    sys.stdout.write(report.to_text())
    return EXIT_OK if report.ok else EXIT_VALIDATION


# -- fit ---------------------------------------------------------------------
def _prepare(cfg: RunConfig, spec: ModelSpec):
    d = _load_data(cfg.data_path, cfg.reference_only)
    report = validate_for_model(d, build_network_graph(d), spec.variant)
    return d, report


def _write_outputs(w: _Writer, cfg: RunConfig, samples, model: Model) -> dict:
    """Diagnostics, DIC and the requested summaries for a finished fit."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        diag = diagnostics(samples)
    w.text("diagnostics.tsv", diag.to_text())
    info = {"draws": int(samples.draws.shape[0] * samples.draws.shape[1]), "flagged_rhat": len(diag.flagged)}
    if samples.deviance.size >= MIN_DRAWS:
        rep = dic(samples)
        w.text("dic.txt", f"mean_residual_deviance = {rep.mean_residual_deviance:.6f}\n"
                          f"pV = {rep.pV:.6f}\ndic = {rep.dic:.6f}\nn_draws = {rep.n_draws}\n")
        info["dic"] = rep.dic
    else:
        w.text("dic.txt", f"insufficient draws: {samples.deviance.size} < {MIN_DRAWS}\n")
        return info
    o = cfg.outputs
    tests = model.tests
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pooled = [pooled_accuracy(samples, t.test_id, model=model) for t in tests]
        pooled += [pooled_accuracy(samples, t, c, model=model) for t, c in o.thresholds]
    if o.tables:
        w.text("pooled.csv", rows_to_text(summary_rows(pooled)))
        rank = rankings(samples, model=model) if len(tests) >= 2 else None
        if rank is not None:
            w.text("rankings.csv", rows_to_text(rank.to_rows()))
        w.text("report.json", summary_report(pooled, rank))
    cont = [t.test_id for t in tests if t.is_continuous]
    curves = [threshold_curve(samples, t, o.grid_size, model=model) for t in cont] if o.curves or o.figures else []
    if o.curves and curves:
        w.text("threshold_curves.csv", rows_to_text(curve_rows(curves)))
    if o.figures:
        if curves:
            plot_threshold_curves(curves, w.path("threshold_curves.svg"))
            w.record("threshold_curves.svg")
        srocs = [sroc_curve(samples, t.test_id, o.grid_size, model=model) for t in tests]
        plot_sroc(srocs, w.path("sroc.svg"))
        w.record("sroc.svg")
    return info


def _fit_one(w: _Writer, cfg: RunConfig, spec: ModelSpec, threads: int, resume: bool) -> tuple[int, dict]:
    try:
        d, report = _prepare(cfg, spec)
    except (DatasetError, OSError) as exc:
        _err(str(exc))
        return EXIT_PARSE, {"error": str(exc)}
    if not report.ok:
        sys.stderr.write(report.to_text())
        w.text("validation.txt", report.to_text())
        w.manifest(cfg, d, "validation-failed")
        return EXIT_VALIDATION, {"error": "validation failed"}
    model = Model(d, spec)
    previous = None
    if resume:
        try:
            previous = read_container(w.path(CONTAINER))
        except (OSError, ValueError) as exc:
            _err(f"cannot resume: {exc}")
            return EXIT_PARSE, {"error": str(exc)}
    try:
        samples = run_mcmc(d, spec, cfg.sampler, threads=threads, resume=previous, model=model)
    except SamplingError as exc:
        _err(f"sampling failed: {exc}")
        if exc.partial is not None and exc.partial.n_draws:
            write_container(exc.partial, w.path(CONTAINER), extra={"status": "failed"})
            w.record(CONTAINER)
            w.record(CONTAINER + ".index.json")
        w.text("FAILED", str(exc) + "\n")
        w.manifest(cfg, d, "sampling-failed", failure=str(exc))
        return EXIT_SAMPLING, {"error": str(exc)}
    samples.model = model
    write_container(samples, w.path(CONTAINER))
    w.record(CONTAINER)
    w.record(CONTAINER + ".index.json")
    info = _write_outputs(w, cfg, samples, model)
    w.manifest(cfg, d, "ok")
    return EXIT_OK, info


def _config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    return cfg.with_overrides(seed=args.seed, out=args.out)


def cmd_fit(args) -> int:
    try:
        cfg = _config(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_PARSE
    w = _Writer(cfg.outputs.directory)
    code, info = _fit_one(w, cfg, cfg.spec, args.threads, args.resume)
    if code == EXIT_OK:
        print(f"fit complete: {info['draws']} draws written to {cfg.outputs.directory}")
    return code


# -- compare -------------------------------------------------------------------
def cmd_compare(args) -> int:
    try:
        cfg = _config(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_PARSE
    if len(cfg.compare) < 2:
        _err("compare needs at least two specs ([compare] specs = ... or [compare:NAME] sections)")
        return EXIT_PARSE
    root = _Writer(cfg.outputs.directory)
    rows = []
    for label, spec in cfg.compare:
        sub = _Writer(root.path(f"compare/{label}"))
        code, info = _fit_one(sub, cfg, spec, args.threads, False)
        for name, digest in sub.hashes.items():
            root.hashes[f"compare/{label}/{name}"] = digest
        if (sub.root / "manifest.json").exists():
            root.record(f"compare/{label}/manifest.json")
        row = {"label": label, "variant": spec.variant.value, "covariance": spec.cov.value, "status": "ok"}
        if code == EXIT_OK and "dic" in info:
            rep = dic(read_container(sub.path(CONTAINER)))
            row.update(residual_deviance=rep.mean_residual_deviance, pV=rep.pV, dic=rep.dic,
                       se_dbar=rep.se_mean_deviance)
        else:
            row["status"] = info.get("error", "failed")
        rows.append(row)
    ok = sorted((r for r in rows if "dic" in r), key=lambda r: r["dic"])
    failed = [r for r in rows if "dic" not in r]
    lines = ["label,variant,covariance,residual_deviance,pV,dic,se_dbar,minimum,status"]
    for i, r in enumerate(ok):
        lines.append(f"{r['label']},{r['variant']},{r['covariance']},{r['residual_deviance']:.4f},"
                     f"{r['pV']:.4f},{r['dic']:.4f},{r['se_dbar']:.4f},{'yes' if i == 0 else 'no'},ok")
    for r in failed:
        lines.append(f"{r['label']},{r['variant']},{r['covariance']},,,,,no,{r['status'].replace(',', ';')}")
    table = "\n".join(lines) + "\n"
    root.text("compare.csv", table)
    try:
        d = _load_data(cfg.data_path, cfg.reference_only)
    except (DatasetError, OSError):
        d = None
    root.manifest(cfg, d, "ok" if ok else "failed")
    sys.stdout.write(table)
    return EXIT_OK if ok else EXIT_SAMPLING


# -- summarize ---------------------------------------------------------------
def cmd_summarize(args) -> int:
    from .config import OutputConfig
    try:
        samples = read_container(args.container)
        d = _load_data(args.data, args.reference_only)
        thresholds = tuple((t, float(v)) for t, _, v in (x.rpartition(":") for x in args.threshold))
    except (OSError, ValueError, DatasetError) as exc:
        _err(str(exc))
        return EXIT_PARSE
    if samples.data_fingerprint != d.fingerprint():
        _err("container was produced from different data")
        return EXIT_VALIDATION
    model = Model(d, samples.spec, check=False)
    samples.model = model
    cfg = RunConfig(Path(args.data).resolve(), samples.spec, samples.config,
                    OutputConfig(Path(args.out), grid_size=args.grid_size, thresholds=thresholds),
                    args.reference_only)
    w = _Writer(args.out)
    _write_outputs(w, cfg, samples, model)
    w.manifest(cfg, d, "ok", container=hashlib.sha256(Path(args.container).read_bytes()).hexdigest())
    print(f"summaries written to {args.out}")
    return EXIT_OK


# -- simulate ------------------------------------------------------------------
def cmd_simulate(args) -> int:
    net = generate(args.network, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        write_dataset(net.data, fh)
    model = net.truth.model
    truth = {"network": args.network, "seed": args.seed, "spec": net.spec.to_config(),
             "parameters": dict(zip(model.layout.names, model.layout.flatten(net.truth).tolist()))}
    out.with_name(out.name + ".truth.json").write_text(json.dumps(truth, sort_keys=True, indent=1) + "\n")
    print(f"{args.network}: {len(net.data.studies)} studies, {len(net.data.tests)} tests -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nmadta", description="Network meta-analysis of diagnostic test accuracy "
                                                            "with multiple thresholds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a dataset against a model variant's data requirements")
    v.add_argument("data")
    v.add_argument("--variant", required=True, choices=[m.value for m in ModelVariant])
    v.add_argument("--reference-only", action="store_true",
                   help="keep only each continuous test's reference threshold")
    v.set_defaults(func=cmd_validate)

    for name, func, text in (("fit", cmd_fit, "fit one model"), ("compare", cmd_compare, "DIC comparison")):
        f = sub.add_parser(name, help=text)
        f.add_argument("--config", required=True)
        f.add_argument("--seed", type=int)
        f.add_argument("--threads", type=int, default=1)
        f.add_argument("--out")
        if name == "fit":
            f.add_argument("--resume", action="store_true", help="extend the chains stored in the output directory")
        f.set_defaults(func=func)

    s = sub.add_parser("summarize", help="summaries and figures from an existing posterior container")
    s.add_argument("--container", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--grid-size", type=int, default=100)
    s.add_argument("--threshold", action="append", default=[], metavar="TEST:VALUE")
    s.add_argument("--reference-only", action="store_true")
    s.set_defaults(func=cmd_summarize)

    g = sub.add_parser("simulate", help="write a synthetic network")
    g.add_argument("--network", required=True, choices=sorted(NETWORKS))
    g.add_argument("--seed", type=int, default=2025)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
