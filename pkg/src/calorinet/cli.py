"""``calorinet`` command line: synth, train, eval, predict, grad-check.

Exit codes: 0 success, 2 usage, configuration or input-contract error,
1 runtime failure (divergence, stream errors, I/O).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .core import DatasetError, SilhouetteFrame, load_dataset, load_session, read_pbm, write_dataset
from .models import VARIANTS, InputContractError, ModelVariant
from .silhouette import ConfigError as ScaleConfigError
from .silhouette import StreamError

log = logging.getLogger("calorinet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _shape(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("image sides must be positive")
    return h, w


def _int_list(text: str):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive(text: str):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _fmt(v) -> str:
    return "NA" if v is None or not np.isfinite(v) else f"{v:.6f}"


# ---------------------------------------------------------------- config

def _overrides(args) -> dict:
    """Flag values as ``{section: {key: text}}``; flags win over the file."""
    ov = {"experiment": {}, "scales": {}, "train": {}}
    for key in ("dataset", "variant", "seed", "sample_stride"):
        v = getattr(args, key, None)
        if v is not None:
            ov["experiment"][key] = str(v)
    out = getattr(args, "out", None)
    if out is not None:
        ov["experiment"]["output"] = str(out)
    if getattr(args, "no_augment", False):
        ov["experiment"]["augment_enabled"] = "false"
    if getattr(args, "exclude_warmup", False):
        ov["experiment"]["exclude_warmup"] = "true"
    if getattr(args, "T", None) is not None:
        ov["scales"]["T"] = str(args.T)
    if getattr(args, "N", None) is not None:
        ov["scales"]["N"] = str(args.N)
    for key, attr in (("epochs", "epochs"), ("learning_rate", "lr"), ("batch_size", "batch_size")):
        v = getattr(args, attr, None)
        if v is not None:
            ov["train"][key] = str(v)
    for item in getattr(args, "set", None) or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        ov.setdefault(section, {})[key] = value
    return ov


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(getattr(args, "config", None), _overrides(args))
    cfg.validate()
    if cfg.dataset is None:
        raise UsageError("no dataset given (--dataset or [experiment] dataset)")
    if not Path(cfg.dataset).is_dir():
        raise UsageError(f"dataset directory {cfg.dataset} does not exist")
    cfg.resolved_seed()
    return cfg


def _add_common(p, variant=True):
    p.add_argument("--config", help="INI experiment file; flags override it")
    p.add_argument("--dataset", help="dataset root in the canonical layout")
    if variant:
        p.add_argument("--variant", help=f"one of {', '.join(VARIANTS)}")
    p.add_argument("--seed", type=int, help="global seed (falls back to $CALORINET_SEED)")
    p.add_argument("--T", type=int, help="longest silhouette window in frames")
    p.add_argument("--N", type=int, help="index of the shortest scale")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--sample-stride", type=int, help="frames between samples")
    p.add_argument("--no-augment", action="store_true", help="disable training augmentation")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config entry (repeatable)")


# --------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    from .synth import SplitInfoDesign, generate_dataset, make_split_information_set, read_profiles

    if args.split_info:
        design = dataclasses.replace(SplitInfoDesign(), image_shape=args.image or (32, 40))
        ds = make_split_information_set(args.seed, args.subjects, design)
    else:
        profiles = read_profiles(args.profiles) if args.profiles else None
        if profiles is not None and len(profiles) != args.subjects:
            raise UsageError(f"{args.profiles} holds {len(profiles)} profiles, --subjects is {args.subjects}")
        ds = generate_dataset(args.subjects, args.sessions, args.duration, args.image or (60, 80),
                              seed=args.seed, profiles=profiles, shuffle=args.shuffle,
                              lag_s=args.lag, spread=args.spread, gaps=args.gaps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out)
    n_sess = sum(len(s.sessions) for s in ds)
    frames = sum(len(sess.cal_frames) for s in ds for sess in s.sessions)
    print(f"wrote {len(ds)} subjects, {n_sess} sessions, {frames} frames to {out}")
    return EXIT_OK


# --------------------------------------------------------------- train

def cmd_train(args) -> int:
    from .evaluation import InputSpec, extract_samples, fit_variant, make_variant
    from .nn import save_checkpoint, write_history

    cfg = _experiment(args)
    seed = cfg.resolved_seed()
    ds = load_dataset(cfg.dataset)
    if args.subjects:
        ds = ds.select(args.subjects.split(","))
    if len(ds) == 0:
        raise UsageError("dataset has no subjects")
    variant = make_variant(cfg, ds, seed)
    samples = extract_samples(ds, InputSpec.for_variant(variant, cfg.sample_stride))
    result, dropped = fit_variant(variant, samples, cfg, seed)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    meta = {**variant.meta(), "seed": seed, "subjects": list(ds.subject_ids),
            "best_epoch": result.best_epoch, "sample_stride": cfg.sample_stride,
            "imputation_dropped": dropped}
    save_checkpoint(out / "checkpoint.json", variant.model, meta)
    write_history(out / "history.csv", result.history)
    _atomic_write(out / "config.ini", dump_config(cfg))
    print(f"trained {variant.name} on {len(ds)} subjects: best epoch {result.best_epoch}, "
          f"checkpoint {out / 'checkpoint.json'}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _load_variant(path) -> ModelVariant:
    from .nn import load_checkpoint

    model, meta = load_checkpoint(path)
    return ModelVariant.from_checkpoint(model, meta)


def cmd_eval(args) -> int:
    from .evaluation import (METS, buffer_sweep, evaluate_loso, evaluate_mets, evaluate_model,
                             prediction_tables, report_csv, subject_report_csv, sweep_csv)

    cfg = _experiment(args)
    ds = load_dataset(cfg.dataset)
    if len(ds) == 0:
        raise UsageError("dataset has no subjects")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.variant
    if args.checkpoint:
        variant = _load_variant(args.checkpoint)
        cfg = dataclasses.replace(cfg, scales=variant.scales)
        main = evaluate_model(variant, ds, cfg)
    else:
        if name.lower() != METS and name not in VARIANTS:
            raise UsageError(f"unknown variant {name!r}")
        main = evaluate_loso(ds, cfg, name, jobs=args.jobs)
        if main.folds:
            fold_dir = out / "folds"
            fold_dir.mkdir(exist_ok=True)
            for f in main.folds:
                s = main.samples
                lines = ["session,frame,prediction"]
                for i, p in zip(f.test_index, f.predictions):
                    lines.append(f"{s.session[i]},{int(s.frame[i])},{_fmt(p)}")
                _atomic_write(fold_dir / f"{f.plan.test_subject}.csv", "\n".join(lines) + "\n")
    results = [main]
    if main.variant.lower() != METS and not args.no_mets:
        results.append(evaluate_mets(ds, cfg))
    _atomic_write(out / "report.csv", report_csv(main.report))
    _atomic_write(out / "report_by_subject.csv", subject_report_csv(main.report))
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for (sid, sess), text in prediction_tables(results).items():
        _atomic_write(pred_dir / f"{sid}_{sess}.csv", text)
    if args.sweep:
        if name.lower() == METS or args.checkpoint:
            raise UsageError("--sweep needs a trainable --variant")
        sweep = buffer_sweep(ds, args.sweep, name, cfg, jobs=args.jobs)
        _atomic_write(out / "sweep.csv", sweep_csv(sweep))
    print(report_csv(main.report), end="")
    return EXIT_OK


# ------------------------------------------------------------- predict

def _stdin_events(stream):
    """Yield ``("sil", frame, mask)`` or ``("accel", frame, row)`` from text lines."""
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            kind, frame = parts[0], int(parts[1])
            if kind == "accel" and len(parts) == 8:
                yield "accel", frame, np.array([float(v) for v in parts[2:]])
                continue
            if kind == "sil" and len(parts) == 3:
                yield "sil", frame, read_pbm(parts[2])
                continue
        except (ValueError, IndexError):
            pass
        raise StreamError(f"stdin line {lineno}: expected 'accel,<frame>,<6 values>' or 'sil,<frame>,<pbm>'")


def cmd_predict(args) -> int:
    from .streaming import StreamingPredictor, replay_session

    variant = _load_variant(args.checkpoint)
    stride = args.stride or 30
    dump = None
    if args.dump_stack:
        dump = Path(args.dump_stack)
        dump.mkdir(parents=True, exist_ok=True)
    out = sys.stdout

    def emit(rows):
        for frame, v in rows:
            out.write(f"{frame},{_fmt(v)}\n")
        if rows:
            out.flush()

    on_stack = (lambda st: st.dump(dump)) if dump is not None else None
    out.write("frame,kcal_per_min\n")
    if args.session:
        session, _, _ = load_session(args.session)
        span = session.span
        pred = StreamingPredictor(variant, stride, origin=span[0] if span else None, on_stack=on_stack)
        emit(replay_session(pred, session))
    else:
        pred = StreamingPredictor(variant, stride, origin=args.origin, on_stack=on_stack)
        for kind, frame, payload in _stdin_events(sys.stdin):
            if kind == "sil":
                emit(pred.push_silhouette(SilhouetteFrame(frame, payload)))
            else:
                emit(pred.push_accel(frame, payload))
        emit(pred.finish())
    log.info("max resident buffer %d frames (bound %d)", pred.max_resident, pred.buffer_bound)
    return EXIT_OK


# ---------------------------------------------------------- grad-check

def cmd_grad_check(args) -> int:
    from .diagnostics import grad_check_suite

    variants = VARIANTS if args.variant in (None, "all") else (args.variant,)
    if not set(variants) <= set(VARIANTS):
        raise UsageError(f"unknown variant {args.variant!r}")
    worst, kinks = grad_check_suite(range(args.seeds), args.image, args.accel_len,
                                    eps=args.eps, variants=variants)
    ok = True
    for key, err in worst.items():
        passed = err < args.tol
        ok &= passed
        print(f"{key:28s} {err:.3e} {'ok' if passed else 'FAIL'}")
    print(f"kink entries skipped: {kinks}")
    return EXIT_OK if ok else EXIT_RUNTIME


# ----------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calorinet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=_positive, default=6)
    p.add_argument("--sessions", type=_positive, default=2)
    p.add_argument("--duration", type=float, default=240.0, help="seconds per session")
    p.add_argument("--image", type=_shape, help="silhouette size HxW (default 60x80)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lag", type=float, default=15.0, help="metabolic time constant, seconds")
    p.add_argument("--spread", type=float, default=0.3, help="between-subject variation")
    p.add_argument("--shuffle", action="store_true", help="random activity order per session")
    p.add_argument("--gaps", action="store_true", help="insert missing-data intervals")
    p.add_argument("--profiles", help="CSV of subject profiles")
    p.add_argument("--split-info", action="store_true",
                   help="posture/vibration dataset where only fusion sees both factors")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one variant on a dataset")
    _add_common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--subjects", help="comma-separated subject ids to train on")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="leave-one-subject-out evaluation")
    _add_common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--checkpoint", help="score a trained checkpoint instead of running LOSO")
    p.add_argument("--sweep", type=_int_list, help="buffer sizes T to sweep, e.g. 250,500,1000,2000")
    p.add_argument("--jobs", type=_positive, default=1, help="folds trained in parallel")
    p.add_argument("--exclude-warmup", action="store_true")
    p.add_argument("--no-mets", action="store_true", help="omit the METs column")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="online prediction from a session or stdin")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--session", help="session directory to replay")
    p.add_argument("--stride", type=_positive, help="frames between predictions (default 30)")
    p.add_argument("--origin", type=int, help="first tick for stdin input (default first frame)")
    p.add_argument("--dump-stack", help="write every temporal silhouette stack as PGM files")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    p.add_argument("--variant", default="all")
    p.add_argument("--seeds", type=_positive, default=10)
    p.add_argument("--image", type=_shape, default=(24, 32))
    p.add_argument("--accel-len", type=_positive, default=100)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .nn import CheckpointError, DivergenceError

    try:
        return args.func(args)
    except (UsageError, ConfigError, ScaleConfigError, InputContractError, DatasetError,
            CheckpointError) as exc:
        print(f"calorinet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"calorinet {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (StreamError, OSError, ValueError, RuntimeError) as exc:
        print(f"calorinet {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
