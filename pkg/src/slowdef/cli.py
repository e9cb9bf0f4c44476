"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical error.
Every command writes a ``run.json`` record next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, _angles, load_config
from .errors import DataError, NumericalError, SlowdefError

log = logging.getLogger("slowdef")

THREADS_ENV = "INSAR_SLOWDEF_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _csv_ints(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _csv_angles(text):
    try:
        return _angles(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated angles, got {text!r}") from None


def _threads(args, cfg: RunConfig) -> int:
    if getattr(args, "threads", None):
        return args.threads
    if cfg.get("threads"):
        return cfg.get("threads")
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig()


def _write_run_record(path: Path, command: str, args, cfg: RunConfig, seed=None, extra=None):
    arg_items = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
                 if k not in ("func", "verbose")}
    record = {
        "command": command,
        "arguments": arg_items,
        "config_sha256": cfg.digest() if cfg.text else None,
        "arguments_sha256": hashlib.sha256(json.dumps(arg_items, sort_keys=True, default=str).encode()).hexdigest(),
        "seed": seed,
        "versions": {"slowdef": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    if extra:
        record.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise FileNotFoundError(f"missing {what}: {path}")
    return Path(path)


# --- subcommands -----------------------------------------------------------

def cmd_synth(args):
    from .classify.corpus import CorpusConfig, make_corpus
    from .raster import GrayImage, write_pgm
    from .synthgen import write_dataset

    cfg = _config(args)
    out = Path(args.out)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out.mkdir(parents=True, exist_ok=True)
    if args.corpus:
        keys = ("pixel_spacing_m", "wavelength_m", "sigma2_max_mm2", "efold_km", "strat_coeff_m_per_km")
        ccfg = CorpusConfig(**{k: cfg.get(k) for k in keys if cfg.get(k) is not None})
        patches, labels = make_corpus(args.corpus, seed, ccfg)
        (out / "patches").mkdir(exist_ok=True)
        manifest = out / "corpus.csv"
        with open(manifest, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["patch_id", "label", "path"])
            for k, (patch, label) in enumerate(zip(patches, labels)):
                rel = f"patches/patch_{k:05d}.pgm"
                write_pgm(GrayImage(patch), out / rel)
                writer.writerow([k, int(label), rel])
        print(f"wrote {len(labels)} patches to {manifest}")
    else:
        manifest = write_dataset(cfg.dataset_config(seed), out)
        print(f"wrote dataset manifest {manifest}")
    _write_run_record(out / "run.json", "synth", args, cfg, seed)


def cmd_wrap(args):
    from .raster import read_fgr, write_fgr
    from .rewrap import WrapParams, displacement_to_wrapped, rewrap_phase, wrap_float32

    cfg = _config(args)
    wavelength = args.wavelength if args.wavelength is not None else cfg.wavelength_m
    grid = read_fgr(_require(args.input, "input raster"))
    params = WrapParams(args.mu, float(np.mod(args.tau, 2 * np.pi)), wavelength)
    if args.input_kind == "displacement":
        wrapped = displacement_to_wrapped(grid, params)
    else:
        wrapped = rewrap_phase(grid, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fgr(wrapped.with_values(wrap_float32(wrapped.values)), out)
    _write_run_record(out.with_name(out.name + ".run.json"), "wrap", args, cfg)


def cmd_train(args):
    from .classify import TrainParams, accuracy, save_model, train
    from .errors import FormatError
    from .raster import read_pgm

    cfg = _config(args)
    manifest = _require(args.manifest, "training manifest")
    patches, labels = [], []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"label", "path"} <= set(reader.fieldnames or []):
            raise FormatError(f"{manifest}: training manifest needs 'label' and 'path' columns")
        for rec in reader:
            patches.append(read_pgm(manifest.parent / rec["path"]).pixels)
            labels.append(int(rec["label"]))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    params = TrainParams(lr=args.lr if args.lr is not None else cfg.get("lr", 1e-3),
                         momentum=cfg.get("momentum", 0.9),
                         batch_size=cfg.get("batch_size", 32),
                         epochs=args.epochs if args.epochs is not None else cfg.get("epochs", 30))
    x, y = np.stack(patches), np.array(labels)
    model = train(x, y, params, seed=seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    meta = dict(model.metadata, training_accuracy=accuracy(model, x, y), n_patches=len(y))
    out.with_name(out.name + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _write_run_record(out.with_name(out.name + ".run.json"), "train", args, cfg, seed)
    print(f"trained model written to {out}; final loss {model.metadata['loss_curve'][-1]:.5f}")


def _date_str(d):
    return d.isoformat() if hasattr(d, "isoformat") else str(d)


def cmd_detect(args):
    from .classify import load_classifier
    from .detect import parse_points, run_timeseries
    from .raster import PhaseGrid, write_fgr
    from .tsinv import read_stack

    cfg = _config(args)
    stack = read_stack(_require(args.stack, "stack manifest"))
    model_spec = args.model or cfg.get("classifier", "baseline")
    classifier = load_classifier(model_spec if model_spec == "baseline" else _require(model_spec, "model"))
    points = parse_points(args.points)
    gains = args.gains or cfg.get("gains", (1, 2, 4, 8))
    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)

    def save_map(date, gain, pm):
        if args.no_maps:
            return
        tag = f"mu{gain}" if gain != "mean" else "mean"
        grid = PhaseGrid(pm.values.astype(np.float32), np.ones(pm.shape, bool), stack[0][1].pixel_spacing_m)
        write_fgr(grid, out / "maps" / f"prob_{_date_str(date)}_{tag}.fgr")

    combine = not args.no_ensemble
    result = run_timeseries(stack, gains, classifier, points, wavelength_m=cfg.wavelength_m,
                            combine=combine, on_map=save_map)
    with open(out / "point_probabilities.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "point", "gain", "probability"])
        for date, name, gain, p in result.rows():
            w.writerow([_date_str(date), name, gain, repr(p)])
    if combine:
        with open(out / "ensemble.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "point", "probability", "first_crossing"])
            for name in points:
                first = result.first_crossing[name]
                for date, p in zip(result.dates, result.ensemble_series[name]):
                    w.writerow([_date_str(date), name, repr(p), int(first is not None and date == first)])
    with open(out / "first_crossing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "gain", "first_crossing_date"])
        for name in points:
            for g in result.gains:
                d = result.first_crossing_by_gain[name][g]
                w.writerow([name, g, "" if d is None else _date_str(d)])
            if combine:
                d = result.first_crossing[name]
                w.writerow([name, "mean", "" if d is None else _date_str(d)])
    _write_run_record(out / "run.json", "detect", args, cfg)
    print(f"wrote detection outputs to {out}")


def cmd_invert(args):
    from .tsinv import invert, read_network, write_series

    cfg = _config(args)
    network = read_network(_require(args.network, "network manifest"))
    result = invert(network)
    index = write_series(result, args.out)
    _write_run_record(Path(args.out) / "run.json", "invert", args, cfg, extra={"report": result.report})
    print(f"wrote {len(result.cumulative)} epochs to {index}; max condition number "
          f"{result.max_condition:.3g}; {result.n_rank_deficient} rank-deficient pixels masked")


def cmd_threshold(args):
    from .classify import load_classifier
    from .evalkit import threshold_sweep
    from .synthgen import read_manifest

    cfg = _config(args)
    rows = read_manifest(_require(args.manifest, "dataset manifest"))
    for rec in rows:
        _require(rec["path"], "dataset raster")
    model_spec = args.model or cfg.get("classifier", "baseline")
    classifier = load_classifier(model_spec if model_spec == "baseline" else _require(model_spec, "model"))
    gains = args.gains or cfg.get("gains", (1, 2, 4, 8))
    taus = args.taus or cfg.get("taus", (0.0, np.pi / 2, np.pi, 3 * np.pi / 2))
    result = threshold_sweep(rows, classifier, gains, taus, cfg.wavelength_m, threads=_threads(args, cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "thresholds.csv", "w", newline="") as fh:
        cols = ["alpha", "beta", "param_kind", "param_value", "a", "b", "residual", "n_ill_posed"]
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in result.table:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    with open(out / "scatter.csv", "w", newline="") as fh:
        cols = ["item_id", "alpha", "beta", "param_kind", "param_value", "max_displacement_m", "probability"]
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in result.scatter:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    _write_run_record(out / "run.json", "threshold", args, cfg)
    print(f"wrote {len(result.table)} threshold rows to {out / 'thresholds.csv'}")


def cmd_evaluate(args):
    from .detect import TimeseriesResult
    from .evalkit import roc_timeseries
    from .tsinv import parse_date

    cfg = _config(args)
    ddir = Path(args.detect_dir)
    pp_path = _require(ddir / "point_probabilities.csv", "detect output point_probabilities.csv")
    ens_path = ddir / "ensemble.csv"
    per_point, dates, gains = {}, [], []
    with open(pp_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            d, g = parse_date(rec["date"]), int(rec["gain"])
            if d not in dates:
                dates.append(d)
            if g not in gains:
                gains.append(g)
            per_point.setdefault(rec["point"], {}).setdefault(g, []).append(float(rec["probability"]))
    ens = None
    if ens_path.exists():
        ens = {}
        with open(ens_path, newline="") as fh:
            for rec in csv.DictReader(fh):
                ens.setdefault(rec["point"], []).append(float(rec["probability"]))
    result = TimeseriesResult(dates, tuple(gains), {k: None for k in per_point}, per_point, ens, {}, {})
    onset = parse_date(args.onset) if args.onset else None
    curves = roc_timeseries(result, onset, args.positive, args.negative)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "roc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gain", "threshold", "fpr", "tpr"])
        for key, curve in curves.items():
            for t, f, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
                w.writerow([key, repr(float(t)), repr(float(f)), repr(float(tp))])
    with open(out / "auc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gain", "auc"])
        for key, curve in curves.items():
            w.writerow([key, repr(curve.auc)])
    _write_run_record(out / "run.json", "evaluate", args, cfg)
    for key, curve in curves.items():
        print(f"gain {key}: AUC {curve.auc:.4f}")


def cmd_version(args):
    print(f"slowdef {__version__}")


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slowdef", description="Slow-deformation detection in rewrapped InSAR imagery.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or logical cores)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate the synthetic evaluation dataset or a training corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--corpus", type=int, metavar="N_PER_CLASS",
                   help="write N labelled patches per class instead of the evaluation dataset")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("wrap", help="rewrap a raster with wrap gain / boundary shift")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mu", type=int, default=1)
    s.add_argument("--tau", type=float, default=0.0)
    s.add_argument("--wavelength", type=float, default=None)
    s.add_argument("--input-kind", choices=("phase", "displacement"), default="displacement")
    s.add_argument("--config")
    s.set_defaults(func=cmd_wrap)

    s = sub.add_parser("train", help="train the reference patch classifier")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="probability maps and ensemble series for a displacement stack")
    s.add_argument("--stack", required=True)
    s.add_argument("--model", default=None, help="CLF1 model path or 'baseline'")
    s.add_argument("--gains", type=_csv_ints, default=None)
    s.add_argument("--points", required=True, help='e.g. "A=10,10;B=120,130"')
    s.add_argument("--out", required=True)
    s.add_argument("--no-maps", action="store_true", help="skip writing per-gain FGR maps")
    s.add_argument("--no-ensemble", action="store_true", help="allow gain sets other than 1,2,..,2^(N-1)")
    s.add_argument("--config")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("invert", help="least-squares time series from an interferogram network")
    s.add_argument("--network", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("threshold", help="detection-threshold sweep over a synthetic dataset")
    s.add_argument("--manifest", required=True)
    s.add_argument("--model", default=None)
    s.add_argument("--gains", type=_csv_ints, default=None)
    s.add_argument("--taus", type=_csv_angles, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("evaluate", help="ROC / AUC from detect outputs")
    s.add_argument("--detect-dir", required=True)
    s.add_argument("--onset", default=None, help="ISO date deformation starts (omit for a stable stack)")
    s.add_argument("--positive", default="B")
    s.add_argument("--negative", default="A")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("version", help="print the package version")
    s.set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            print("slowdef: error: a subcommand is required", file=sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"slowdef: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"slowdef: numerical error: {exc}", file=sys.stderr)
        return 3
    except SlowdefError as exc:
        print(f"slowdef: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
