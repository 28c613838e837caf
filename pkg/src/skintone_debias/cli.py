"""Command line front end.

Subcommands: annotate, report, agree, synth, train, eval, gradcheck.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import annotate as ann
from .config import ConfigError, build, split_file
from .evalbias import (
    ProbeConfig, SyntheticBiasSpec, evaluate, gen_synthetic_biased, primary_scores, roc_points,
)
from .imageproc import ToneConfig
from .unlearn import METHODS, TrainConfig, TrainingDiverged, gradcheck, load_result, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(parser: argparse.ArgumentParser, section: str, cls, prefix: str = "",
                      skip: tuple[str, ...] = ()) -> None:
    group = parser.add_argument_group(f"{section} settings (flag overrides config file)")
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        flag = "--" + prefix + f.name.replace("_", "-")
        group.add_argument(flag, dest=f"{section}.{f.name}", default=None, metavar="V",
                           help=f"{section}.{f.name} (default: {f.default})")


def _flag_layer(args: argparse.Namespace, section: str) -> dict:
    prefix = section + "."
    return {k[len(prefix):]: v for k, v in vars(args).items() if k.startswith(prefix)}


def _write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# -- annotation commands ---------------------------------------------------------

def cmd_annotate(args) -> int:
    (tone_file,) = split_file(args.config, ("tone", ToneConfig))
    tone = build(ToneConfig, tone_file, _flag_layer(args, "tone"))
    try:
        manifest = ann.load_manifest(args.manifest)
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {args.manifest}")
    except ann.ManifestError as exc:
        raise UsageError(str(exc))
    for line, reason in manifest.rejects:
        print(f"warning: manifest line {line} rejected: {reason}", file=sys.stderr)

    records = ann.annotate_dataset(manifest, tone, workers=args.workers)
    dist = ann.distribution_report(records)
    out = Path(args.out)
    report_path = Path(args.report) if args.report else out.with_suffix(".distribution.json")
    _write_atomic(out, ann.annotations_to_csv(records))
    _write_atomic(report_path, ann.report_json(
        dist, config=dataclasses.asdict(tone), manifest_rejects=len(manifest.rejects)))
    print(dist.to_text())
    if records and dist.failures == len(records):
        print("error: every image failed to annotate", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _read_annotations(path) -> list[ann.AnnotationRecord]:
    try:
        return ann.read_annotations(path)
    except FileNotFoundError:
        raise UsageError(f"annotations not found: {path}")
    except ann.ManifestError as exc:
        raise UsageError(str(exc))


def cmd_report(args) -> int:
    dist = ann.distribution_report(_read_annotations(args.annotations))
    print(dist.to_text())
    if args.json:
        _write_atomic(Path(args.json), ann.report_json(dist))
    return EXIT_OK


def cmd_agree(args) -> int:
    records = _read_annotations(args.annotations)
    try:
        manifest = ann.load_manifest(args.manifest)
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {args.manifest}")
    except ann.ManifestError as exc:
        raise UsageError(str(exc))
    try:
        rep = ann.agreement(records, manifest, tolerance=args.tolerance)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(rep.to_text())
    if args.json:
        _write_atomic(Path(args.json), ann.report_json(rep))
    return EXIT_OK


# -- synthetic experiment commands -------------------------------------------------

SECTIONS = (("train", TrainConfig), ("spec", SyntheticBiasSpec), ("probe", ProbeConfig))


def _experiment_configs(args):
    files = split_file(args.config, *SECTIONS)
    seed = {"seed": args.seed} if args.seed is not None else {}
    built = []
    for (section, cls), file_layer in zip(SECTIONS, files):
        flags = _flag_layer(args, section)
        if section == "train" and getattr(args, "method", None):
            flags["method"] = args.method
        built.append(build(cls, file_layer, seed, flags))
    return built


def _split_csv(split, name: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dim = split.x.shape[1]
    w.writerow(["split", *(f"x{i}" for i in range(dim)), "y", "b", "group"])
    for xi, yi, bi, gi in zip(split.x, split.y, split.b, split.group):
        w.writerow([name, *(repr(float(v)) for v in xi), int(yi), int(bi), int(gi)])
    return buf.getvalue()


def cmd_synth(args) -> int:
    _, spec, _ = _experiment_configs(args)
    train_split, test_split = gen_synthetic_biased(spec)
    text = _split_csv(train_split, "train") + _split_csv(test_split, "test").split("\n", 1)[1]
    _write_atomic(Path(args.out), text)
    print(f"wrote {len(train_split)} train and {len(test_split)} test rows to {args.out} (seed {spec.seed})")
    return EXIT_OK


def _write_eval(out_dir: Path, model, test_split, probe, extra: dict) -> dict:
    report = evaluate(model, test_split, probe)
    _write_atomic(out_dir / "eval.json", report.to_json(**extra))
    scores = primary_scores(model, test_split.x)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "score", "y", "b", "group"])
    for i, (s, y, b, g) in enumerate(zip(scores, test_split.y, test_split.b, test_split.group)):
        w.writerow([i, repr(float(s)), int(y), int(b), int(g)])
    _write_atomic(out_dir / "scores.csv", buf.getvalue())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fpr", "tpr"])
    for t, fpr, tpr in roc_points(scores, test_split.y):
        w.writerow([repr(t), repr(fpr), repr(tpr)])
    _write_atomic(out_dir / "roc.csv", buf.getvalue())
    return report.to_dict()


def _print_eval(d: dict) -> None:
    groups = ", ".join(f"group {k}: {v:.4f}" for k, v in sorted(d["auc_per_group"].items()))
    print(f"overall AUC {d['overall_auc']:.4f}; {groups}; gap {d['gap']:.4f}; "
          f"bias probe accuracy {d['bias_probe_accuracy']:.4f}")


def cmd_train(args) -> int:
    config, spec, probe = _experiment_configs(args)
    train_split, test_split = gen_synthetic_biased(spec)
    try:
        result = train(train_split.x, train_split.y, train_split.b, config, n_classes=2, n_bias=2)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out_dir = Path(args.out_dir)
    seeds = {"seed": config.seed, "spec": dataclasses.asdict(spec), "probe": dataclasses.asdict(probe)}
    model_doc = {**result.to_dict(), **seeds}
    _write_atomic(out_dir / "model.json", json.dumps(model_doc, indent=1, sort_keys=True) + "\n")
    _write_atomic(out_dir / "history.json",
                  json.dumps({"method": config.method, "seed": config.seed, "history": result.history},
                             indent=1, sort_keys=True) + "\n")
    d = _write_eval(out_dir, result.model, test_split, probe,
                    {"method": config.method, "seed": config.seed})
    _print_eval(d)
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        text = Path(args.model).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"model not found: {args.model}")
    doc = json.loads(text)
    result = load_result(text)
    if args.config is None and all(v is None for k, v in vars(args).items() if k.startswith("spec.")) \
            and args.seed is None and "spec" in doc:
        spec = SyntheticBiasSpec(**doc["spec"])
        probe = ProbeConfig(**doc.get("probe", {}))
    else:
        _, spec, probe = _experiment_configs(args)
    _, test_split = gen_synthetic_biased(spec)
    d = _write_eval(Path(args.out_dir), result.model, test_split, probe,
                    {"method": result.config.method, "seed": spec.seed})
    _print_eval(d)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = 0.0
    methods = [args.method] if args.method else list(METHODS)
    for m in methods:
        for depth in (1, 2):
            err = gradcheck(m, TrainConfig(method=m, head_depth=depth), seed=args.seed or 0, step=args.step)
            print(f"{m:<9} head_depth={depth}  max relative error {err:.3e}")
            worst = max(worst, err)
    ok = worst < args.tolerance
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skintone-debias", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("annotate", help="label the Fitzpatrick type of every manifest image")
    a.add_argument("manifest", help="CSV with image_id,path[,human_fitzpatrick,diagnosis]")
    a.add_argument("--out", required=True, help="annotation CSV to write")
    a.add_argument("--report", help="distribution JSON (default: <out>.distribution.json)")
    a.add_argument("--config", help="key = value file of tone settings")
    a.add_argument("--workers", type=int, default=1, help="parallel worker processes (default: 1)")
    _add_config_flags(a, "tone", ToneConfig)
    a.set_defaults(func=cmd_annotate)

    r = sub.add_parser("report", help="Fitzpatrick type histogram of an annotation CSV")
    r.add_argument("annotations")
    r.add_argument("--json", help="also write the report as JSON")
    r.set_defaults(func=cmd_report)

    g = sub.add_parser("agree", help="agreement of automatic labels with human labels")
    g.add_argument("annotations")
    g.add_argument("manifest")
    g.add_argument("--tolerance", type=int, default=1, help="allowed type difference (default: 1)")
    g.add_argument("--json", help="also write the report as JSON")
    g.set_defaults(func=cmd_agree)

    def experiment(name, help_text, func, method=False):
        e = sub.add_parser(name, help=help_text)
        e.add_argument("--config", help="key = value file; keys may be prefixed train./spec./probe.")
        e.add_argument("--seed", type=int, default=None,
                       help="global seed for data, initialisation and probe (default: 0)")
        if method:
            e.add_argument("--method", choices=METHODS, default=None,
                           help="training procedure (default: baseline)")
        _add_config_flags(e, "train", TrainConfig, skip=("seed", "method"))
        _add_config_flags(e, "spec", SyntheticBiasSpec, prefix="spec-", skip=("seed",))
        _add_config_flags(e, "probe", ProbeConfig, prefix="probe-", skip=("seed",))
        e.set_defaults(func=func)
        return e

    s = experiment("synth", "write a synthetic biased train/test dataset as CSV", cmd_synth)
    s.add_argument("--out", required=True)
    t = experiment("train", "generate data, train a method, evaluate it", cmd_train, method=True)
    t.add_argument("--out-dir", required=True)
    v = experiment("eval", "evaluate a saved model on a synthetic test split", cmd_eval)
    v.add_argument("--model", required=True)
    v.add_argument("--out-dir", required=True)

    c = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    c.add_argument("--method", choices=METHODS)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--step", type=float, default=1e-5, help="finite-difference step (default: 1e-5)")
    c.add_argument("--tolerance", type=float, default=1e-4, help="pass threshold (default: 1e-4)")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
