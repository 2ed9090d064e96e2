"""Command-line entry point: ``nodulex <group> <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Every successful command writes ``run_manifest.json`` next to its outputs.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import traceback
import warnings
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DataError, LengthMismatch

log = logging.getLogger("nodulex")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _tool_version():
    try:
        return version("nodulex")
    except PackageNotFoundError:
        return "0+unknown"


# ------------------------------------------------------------------ helpers


def _on_off(value):
    v = str(value).lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def _sha256_path(path):
    path = Path(path)
    h = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file() and p.name != MANIFEST_NAME) if path.is_dir() else [path]
    for f in files:
        h.update(str(f.relative_to(path) if path.is_dir() else f.name).encode())
        with open(f, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(path):
    """Directory holding the outputs: ``path`` itself, or its parent for a file path."""
    path = Path(path)
    return path if not path.suffix else path.parent


def _write_manifest(args, config, inputs, outputs):
    manifest = {
        "command": [args.group, args.command],
        "config": config,
        "inputs": {str(p): _sha256_path(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        "seed": args.seed,
        "tool_version": _tool_version(),
    }
    target = _out_dir(args.out) / MANIFEST_NAME
    _atomic_write(target, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return target


def _resolved(args):
    skip = {"func", "group", "command", "config", "verbose"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def _patch_shape(arch):
    from .nn.network import ARCHITECTURES, canonical_arch

    return ARCHITECTURES[canonical_arch(arch)]


def _cnn_overrides(args):
    keys = ("epochs", "batch_size", "learning_rate", "augment", "checkpoint")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


# ----------------------------------------------------------------- commands


def cmd_phantom_gen(args):
    from .phantom import PhantomConfig, generate_phantom

    cfg = PhantomConfig(n_patients=args.patients, nodules_per_class=args.nodules_per_class, seed=args.seed)
    _, files = generate_phantom(cfg, args.out)
    log.info("wrote %d patients to %s", args.patients, args.out)
    return [], files


def cmd_ingest_check(args):
    from .ingest import parse_annotations, parse_volume
    from .pipeline import study_files

    rows = []
    for stem, vpath, xpath in study_files(args.input):
        vol = parse_volume(vpath)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            aset = parse_annotations(xpath.read_bytes(), dims=vol.dims)
        rows.append([stem, vol.patient_id, "x".join(map(str, vol.dims)), len(aset.sessions),
                     len(aset.nodule_readings), len(aset.non_nodule_loci), len(caught)])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ingest_report.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "patient_id", "dims", "sessions", "nodule_readings", "non_nodules", "warnings"])
        w.writerows(rows)
    print(f"{len(rows)} studies OK")
    return [args.input], [path]


def cmd_consensus_build(args):
    from .consensus import DESIGNS, build_cohort, write_cohort_csv
    from .errors import EmptyClass
    from .pipeline import process_study

    data = process_study(args.input, with_qif=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "consensus.csv", out / "nonnodules.csv"]
    with open(written[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nodule_uid", "patient_id", "rating", "n_readings", "voxel_count",
                    "centroid_x", "centroid_y", "centroid_z"])
        for n in data.nodules:
            w.writerow([n.nodule_uid, n.patient_id, n.rating, len(n.member_readings),
                        n.consensus_mask.voxel_count, *(repr(float(c)) for c in n.centroid)])
    with open(written[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["locus_id", "patient_id", "x", "y", "z"])
        for nn in data.non_nodules:
            w.writerow([nn.locus_id, nn.patient_id, *(repr(float(c)) for c in nn.position)])
    designs = DESIGNS if args.design == "all" else (args.design,)
    for design in designs:
        try:
            items = build_cohort(data.nodules, data.non_nodules, design, args.balance, args.seed)
        except EmptyClass as exc:
            log.warning("skipping %s: %s", design, exc)
            continue
        written.append(write_cohort_csv(items, out / f"cohort_{design}.csv", design))
    print(f"{len(data.nodules)} consensus nodules, {len(data.non_nodules)} non-nodules")
    return [args.input], written


def _cohort_items(args, data):
    from .consensus import read_cohort_csv

    if getattr(args, "cohort", None):
        return [it for it in read_cohort_csv(args.cohort) if it.label is not None]
    return data.cohort(args.design, args.balance, args.seed)


def cmd_patches_extract(args):
    from .patchset import write_container
    from .pipeline import process_study

    shape = _patch_shape(args.arch)
    data = process_study(args.input, [shape], args.normalization, with_qif=False)
    items = _cohort_items(args, data)
    ps = data.patchset(items, shape, items[0].design if items else "")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_container(ps, args.out)
    print(f"{len(ps)} patches of shape {shape} -> {args.out}")
    return [args.input] + ([args.cohort] if args.cohort else []), [Path(args.out)]


def cmd_qif_extract(args):
    from .pipeline import process_study
    from .qif import write_feature_csv

    data = process_study(args.input)
    pids = {n.nodule_uid: n.patient_id for n in data.nodules}
    pids.update({nn.locus_id: nn.patient_id for nn in data.non_nodules})
    rows = [(item_id, pids[item_id], vec) for item_id, vec in data.qif.items()]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    path = write_feature_csv(rows, args.out)
    print(f"{len(rows)} feature vectors -> {path}")
    return [args.input], [path, path.with_suffix(".registry.txt")]


def _epoch_logger(epoch, train_loss, heldout_loss, heldout_acc):
    log.info("epoch %d train_loss=%.4f heldout_loss=%.4f heldout_acc=%.3f", epoch, train_loss, heldout_loss, heldout_acc)


def cmd_cnn_train(args):
    from .nn.network import build_network
    from .nn.training import TrainConfig, save_checkpoints, train
    from .patchset import read_container
    from .seeding import sub_seed

    ps = read_container(args.patches)
    model = build_network(args.arch, seed=sub_seed(args.seed, "init"))
    config = TrainConfig(seed=args.seed, **_cnn_overrides(args))
    checkpoints = train(model, ps.to_array(), ps.labels, config, log=_epoch_logger)
    paths = save_checkpoints(model, checkpoints, args.out)
    print(f"trained {model.arch}: best held-out loss {checkpoints.best[0].loss:.4f}" if checkpoints.best else "trained")
    return [args.patches], paths + [Path(args.out) / "training_log.csv"]


def cmd_cnn_features(args):
    from .nn.network import extract_cnn_features
    from .nn.training import read_weights
    from .patchset import read_container

    ps = read_container(args.patches)
    model, _ = read_weights(args.weights)
    feats = extract_cnn_features(model, ps.to_array())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "label", *(f"c{i:03d}" for i in range(feats.shape[1]))])
        for item_id, label, row in zip(ps.ids, ps.labels, feats):
            w.writerow([item_id, int(label), *(repr(float(v)) for v in row)])
    print(f"{len(ps)} x {feats.shape[1]} CNN features -> {args.out}")
    return [args.patches, args.weights], [Path(args.out)]


def cmd_fuse_train_rf(args):
    from .classifiers.forest import train_forest, write_forest
    from .classifiers.fusion import concat_features
    from .qif import read_feature_csv
    from .seeding import sub_seed

    with open(args.cnn_features, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    ids = [r[0] for r in rows]
    labels = np.array([int(r[1]) for r in rows])
    cnn = np.array([[float(v) for v in r[2:]] for r in rows]).reshape(len(rows), -1)
    q_ids, _, qif = read_feature_csv(args.qif)
    index = {k: i for i, k in enumerate(q_ids)}
    missing = [k for k in ids if k not in index]
    if missing:
        raise LengthMismatch(f"{len(missing)} items lack QIF vectors, e.g. {missing[0]}")
    X = concat_features(cnn, qif[[index[k] for k in ids]])
    model = train_forest(X, labels, args.trees, sub_seed(args.seed, "forest"), n_jobs=args.threads)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_forest(model, args.out)
    print(f"forest of {model.n_trees} trees on {X.shape[1]} features -> {args.out}")
    return [args.cnn_features, args.qif], [Path(args.out)]


def cmd_eval_run(args):
    from .evaluation import export_report, run_design

    report = run_design(
        args.design, args.models, args.input, seed=args.seed, threshold=args.threshold, balance=args.balance,
        cnn_params=_cnn_overrides(args), n_trees=args.trees, n_jobs=args.threads,
        normalization=args.normalization,
    )
    out = Path(args.out)
    paths = export_report(report, out)
    paths.append(report.write_json(out / "report.json"))
    for r in report.rows:
        print(f"{r.model:<10} auc={r.auc:.3f} acc={r.acc:.3f} sens={r.sens:.3f} spc={r.spc:.3f}")
    return [args.input], paths


def cmd_eval_reduced(args):
    from .evaluation import run_reduced_training
    from .evaluation.report import reduced_csv_text, trial_log_csv_text
    from .pipeline import process_study

    data = process_study(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results, paths = [], []
    for model in args.models:
        for mode in args.modes:
            r = run_reduced_training(args.design, model, mode, data, args.trials, args.seed,
                                     args.threshold, args.balance, args.trees, args.threads)
            results.append(r)
            p = out / f"trials_{r.model.lower()}_{r.mode}.csv"
            p.write_text(trial_log_csv_text(r))
            paths.append(p)
            print(f"{r.model:<10} {r.mode:<18} n_features={r.n_features:<3} acc={r.mean_acc:.3f} auc={r.mean_auc:.3f}")
    summary = out / "reduced.csv"
    summary.write_text(reduced_csv_text(results))
    return [args.input], [summary] + paths


def cmd_report_export(args):
    from .evaluation import EvalReport, export_report

    report = EvalReport.read_json(args.report)
    return [args.report], export_report(report, args.out)


# ------------------------------------------------------------------- parser


def _design(value):
    from .consensus import canonical_design

    try:
        return canonical_design(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _design_or_all(value):
    return "all" if str(value).lower() == "all" else _design(value)


def _models(value):
    from .evaluation import canonical_model

    if isinstance(value, (list, tuple)):
        value = ",".join(value)
    try:
        return [canonical_model(m) for m in value.split(",") if m.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _modes(value):
    from .evaluation.experiments import REDUCED_MODES

    if isinstance(value, (list, tuple)):
        value = ",".join(value)
    modes = [m.strip() for m in value.split(",") if m.strip()]
    bad = [m for m in modes if m not in REDUCED_MODES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown mode {bad[0]!r}; choose from {', '.join(REDUCED_MODES)}")
    return modes


def _common(p, design=False, arch=False, threshold=False, balance=False, normalization=False, cnn=False, trees=False):
    p.add_argument("--seed", type=int, default=0, help="global seed; all randomness derives from it")
    p.add_argument("--threads", type=int, default=1, help="BLAS / worker threads (1 is bit-deterministic)")
    p.add_argument("--config", type=Path, help="JSON file of option defaults, or a run manifest to replay")
    p.add_argument("-v", "--verbose", action="store_true")
    if design:
        p.add_argument("--design", type=_design, default="S1vS45", help="S1vS45, S12vS45 or S0vS1_5")
    if arch:
        p.add_argument("--arch", default="cnn21", choices=["cnn21", "cnn47", "CNN21", "CNN47"])
    if threshold:
        p.add_argument("--threshold", type=float, default=0.5)
    if balance:
        p.add_argument("--balance", type=_on_off, default=True, metavar="{on,off}")
    if normalization:
        p.add_argument("--normalization", default="hu_window", choices=["hu_window", "scan_minmax"])
    if cnn:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--augment", type=_on_off, metavar="{on,off}")
        p.add_argument("--checkpoint", choices=["best", "final"])
    if trees:
        p.add_argument("--trees", type=int, default=1000)


def build_parser():
    parser = _Parser(prog="nodulex", description="Lung-nodule malignancy pipeline on RAWCT studies.")
    groups = parser.add_subparsers(dest="group", metavar="group", parser_class=_Parser)
    groups.required = True

    def group(name, help_):
        sub = groups.add_parser(name, help=help_).add_subparsers(dest="command", metavar="command", parser_class=_Parser)
        sub.required = True
        return sub

    def command(sub, name, func, help_, **common):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        _common(p, **common)
        return p

    g = group("phantom", "synthetic studies")
    p = command(g, "gen", cmd_phantom_gen, "generate a phantom study directory")
    p.add_argument("--patients", type=int, default=10)
    p.add_argument("--nodules-per-class", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)

    g = group("ingest", "volume and annotation parsing")
    p = command(g, "check", cmd_ingest_check, "parse and validate every study file")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    g = group("consensus", "reader consensus")
    p = command(g, "build", cmd_consensus_build, "consensus nodules and per-design cohorts", balance=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--design", type=_design_or_all, default="all")
    p.set_defaults(balance=False)

    g = group("patches", "CNN input patches")
    p = command(g, "extract", cmd_patches_extract, "write an NDX1 patch container",
                design=True, arch=True, balance=True, normalization=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--cohort", type=Path, help="cohort CSV; defaults to the design cohort of --in")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(balance=False)

    g = group("qif", "quantitative image features")
    p = command(g, "extract", cmd_qif_extract, "50-feature CSV for all nodules and non-nodules")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    g = group("cnn", "network training and features")
    p = command(g, "train", cmd_cnn_train, "train a CNN on an NDX1 container", arch=True, cnn=True)
    p.add_argument("--patches", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p = command(g, "features", cmd_cnn_features, "200 penultimate activations per patch")
    p.add_argument("--patches", type=Path, required=True)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    g = group("fuse", "CNN + QIF fusion")
    p = command(g, "train-rf", cmd_fuse_train_rf, "random forest on concatenated features", trees=True)
    p.add_argument("--cnn-features", type=Path, required=True)
    p.add_argument("--qif", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    g = group("eval", "experiments")
    p = command(g, "run", cmd_eval_run, "train and validate models on one design", design=True,
                threshold=True, balance=True, normalization=True, cnn=True, trees=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--models", type=_models, default="CNN21,CNN21+RF,LM")
    p.add_argument("--out", type=Path, required=True)
    p = command(g, "reduced", cmd_eval_reduced, "reduced-training protocols on QIF features", design=True,
                threshold=True, balance=True, trees=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--models", type=_models, default="RF,RF_no_size,LM")
    p.add_argument("--modes", type=_modes, default="train80,train20,one_plus_one_minus")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--out", type=Path, required=True)

    g = group("report", "report artifacts")
    p = command(g, "export", cmd_report_export, "metrics CSV and ROC SVGs from report.json")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _config_defaults(path):
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read --config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"--config {path} must hold a JSON object")
    if "command" in cfg and isinstance(cfg.get("config"), dict):
        cfg = cfg["config"]  # a run manifest
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _config_arg(argv):
    for i, tok in enumerate(argv):
        if tok == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config expects a path")
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _leaf_parser(parser, argv):
    node = parser
    for tok in argv[:2]:
        subs = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not subs or tok not in subs[0].choices:
            return None
        node = subs[0].choices[tok]
    return node


def parse_args(argv):
    """Parse ``argv``; ``--config`` values act as defaults that explicit flags override."""
    parser = build_parser()
    cfg_path = _config_arg(argv)
    leaf = _leaf_parser(parser, argv) if cfg_path else None
    if leaf is not None:
        defaults = _config_defaults(cfg_path)
        known = {a.dest: a for a in leaf._actions}
        unknown = sorted(set(defaults) - set(known))
        if unknown:
            raise UsageError(f"unknown keys in --config: {', '.join(unknown)}")
        for dest, value in defaults.items():
            action = known[dest]
            action.required = False
            if isinstance(value, str) and action.type is not None:
                try:
                    value = action.type(value)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"--config {dest}: {exc}") from None
            action.default = value
    return parser.parse_args(argv)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            inputs, outputs = args.func(args)
        _write_manifest(args, _resolved(args), inputs, outputs)
    except (DataError, OSError) as exc:
        print(f"nodulex: data error: {exc}", file=sys.stderr)
        log.debug("%s", traceback.format_exc())
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
