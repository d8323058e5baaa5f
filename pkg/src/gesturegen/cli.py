"""Command-line entry point: ``gesturegen <command> [flags]``.

Exit codes: 0 success, 1 usage error (bad flags, refusing to overwrite),
2 runtime error (bad input files, training failure).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, trainer
from .audio_features import FeatureKind, extract_features, write_features_csv
from .checkpoint import CheckpointError
from .models import (
    BASELINE,
    SPEECH_E,
    input_scaler_from_meta,
    load_motion_ed,
    load_net,
    save_motion_ed,
    save_net,
)
from .motion_io import forward_kinematics, load_bvh, read_motion_csv, resample, write_motion_csv
from .synthetic import SynthSpec, gen_corpus
from .wav import load_wav

log = logging.getLogger("gesturegen")

KINDS = [k.value for k in FeatureKind]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _output(path: str, force: bool) -> Path:
    p = Path(path)
    if p.exists() and not force:
        raise UsageError(f"{p} exists; pass --force to overwrite")
    return p


def _header(args, **extra) -> dict:
    """Resolved command configuration, echoed into output headers."""
    out = {"command": args.command}
    for key, value in sorted(vars(args).items()):
        if key in ("command", "func", "force", "verbose") or value is None:
            continue
        out[key] = str(value).replace(" ", "")
    out.update({k: str(v) for k, v in extra.items()})
    return out


def _train_config(args, dae: bool = False, **fixed) -> trainer.TrainConfig:
    prefix = "dae_" if dae else ""
    overrides = {
        "lr": args.lr, f"{prefix}batch_size": args.batch_size, f"{prefix}epochs": args.epochs, "seed": args.seed,
    }
    if not dae:
        overrides["dae_epochs"] = getattr(args, "dae_epochs", None)
    overrides.update(fixed)
    return trainer.load_config(args.config, overrides)


# -- commands ---------------------------------------------------------------------------


def _config_sets(path: str | None, key: str) -> bool:
    return bool(path) and key in trainer.parse_config_text(Path(path).read_text())


def cmd_synth_data(args) -> None:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} is not empty; pass --force to overwrite")
    n_test = args.n_test if args.n_test is not None else max(1, args.n // 10)
    n_val = args.n_val if args.n_val is not None else max(1, args.n // 10)
    spec = SynthSpec(n_utterances=args.n, seed=args.seed, n_train=args.n - n_val - n_test, n_val=n_val, n_test=n_test)
    gen_corpus(spec, out)
    print(f"wrote {args.n} utterances to {out}")


def cmd_features(args) -> None:
    kind = FeatureKind(args.kind)
    if args.corpus:
        corpus = trainer.load_corpus(args.corpus)
        written = 0
        for uid, utt in sorted(corpus.utterances.items()):
            if utt.audio_path is None:
                continue
            path = trainer.feature_cache_path(Path(args.corpus) / "features", kind, uid)
            if path.exists() and not args.force:
                raise UsageError(f"{path} exists; pass --force to overwrite")
            path.parent.mkdir(parents=True, exist_ok=True)
            write_features_csv(path, extract_features(load_wav(utt.audio_path), kind), _header(args, id=uid))
            written += 1
        print(f"wrote {written} {kind.value} feature files")
        return
    if not args.input or not args.out:
        raise UsageError("features needs --in and --out (or --corpus)")
    out = _output(args.out, args.force)
    fs = extract_features(load_wav(args.input), kind)
    write_features_csv(out, fs, _header(args))
    print(f"{out}: {len(fs)} frames x {fs.dims} dims at {fs.fps:g} fps")


def cmd_import_bvh(args) -> None:
    out = _output(args.out, args.force)
    skel, rot = load_bvh(args.input)
    motion = resample(forward_kinematics(skel, rot), args.fps)
    write_motion_csv(out, motion, _header(args, source_fps=f"{rot.fps:g}"))
    if args.joints:
        joints = _output(args.joints, args.force)
        joints.write_text("\n".join(skel.names) + "\n")
    print(f"{out}: {len(motion)} frames x {motion.n_joints} joints at {motion.fps:g} fps")


def _save_log(args, out: Path, history, header) -> None:
    path = Path(args.log) if args.log else out.with_name(out.name + ".log.csv")
    if path.exists() and not args.force:
        raise UsageError(f"{path} exists; pass --force to overwrite")
    trainer.write_loss_log(path, history, header)


def cmd_train_dae(args) -> None:
    out = _output(args.out, args.force)
    cfg = _train_config(args, dae=True, d_z=args.dz)
    corpus = trainer.load_corpus(args.corpus)
    res = trainer.train_dae(corpus, cfg)
    meta = {**cfg.as_meta(), "best_epoch": str(res.best_epoch), "corpus": Path(args.corpus).name}
    save_motion_ed(out, res.model, res.scaler, meta, res.optim)
    _save_log(args, out, res.log, cfg.as_meta())
    last = res.log[res.best_epoch - 1]
    print(f"{out}: d_z={cfg.d_z} best epoch {res.best_epoch} val_loss={last['val_loss']:.6g} val_ape={last['val_ape']:.6g}")


def _train_net(args, model_kind: str) -> None:
    out = _output(args.out, args.force)
    corpus = trainer.load_corpus(args.corpus)
    dae = None
    fixed = {"kind": args.kind}
    if model_kind == SPEECH_E:
        med, scaler, _, _ = load_motion_ed(args.dae)
        dae = (med, scaler)
    cfg = _train_config(args, **fixed)
    if dae is not None and not _config_sets(args.config, "d_z"):
        cfg = cfg.replace(d_z=dae[0].d_z)
    res = trainer.train_net(model_kind, corpus, cfg, dae)
    meta = {**cfg.as_meta(), "best_epoch": str(res.best_epoch), "corpus": Path(args.corpus).name}
    save_net(out, res.model, model_kind, FeatureKind(cfg.kind), res.scaler, meta, res.optim, res.input_scaler)
    _save_log(args, out, res.log, cfg.as_meta())
    last = res.log[res.best_epoch - 1]
    print(f"{out}: {model_kind} best epoch {res.best_epoch} val_loss={last['val_loss']:.6g} val_ape={last['val_ape']:.6g}")


def cmd_train_speech(args) -> None:
    _train_net(args, SPEECH_E)


def cmd_train_baseline(args) -> None:
    _train_net(args, BASELINE)


def cmd_sweep_dz(args) -> None:
    out = _output(args.out, args.force)
    dims = _int_list(args.dims)
    cfg = _train_config(args, kind=args.kind)
    corpus = trainer.load_corpus(args.corpus)
    rows = trainer.sweep_dz(corpus, dims, cfg, runs=args.runs, jobs=args.jobs)
    trainer.write_sweep_csv(out, rows, _header(args, **cfg.as_meta()))
    if args.svg:
        metrics.write_sweep_svg(_output(args.svg, args.force), rows)
    for r in rows:
        print(f"d_z={r['d_z']}: ape {r['ape_mean']:.4g} +/- {r['ape_sd']:.3g}, "
              f"jerk {r['jerk_mean']:.4g} +/- {r['jerk_sd']:.3g} over {r['runs']} runs")


def cmd_synthesize(args) -> None:
    out = _output(args.out, args.force)
    if bool(args.baseline) == bool(args.model):
        raise UsageError("give exactly one of --model (with --dae) or --baseline")
    if args.model and not args.dae:
        raise UsageError("--model needs --dae")
    path, kind = (args.baseline, BASELINE) if args.baseline else (args.model, SPEECH_E)
    net, _, feature_kind, scaler, meta, _ = load_net(path, kind)
    in_scaler = input_scaler_from_meta(meta)
    if in_scaler is None:
        raise CheckpointError(f"{path} has no input standardization")
    fs = extract_features(load_wav(args.audio), feature_kind)
    med = None
    if kind == SPEECH_E:
        med, dae_scaler, _, _ = load_motion_ed(args.dae)
        if not (np.array_equal(dae_scaler.mean, scaler.mean) and np.array_equal(dae_scaler.scale, scaler.scale)):
            raise CheckpointError("SpeechE and autoencoder checkpoints were trained with different motion scalers")
    motion = trainer.predict_utterance(kind, net, fs, scaler, in_scaler, med)
    write_motion_csv(out, motion, _header(args, feature_kind=feature_kind.value))
    print(f"{out}: {len(motion)} frames x {motion.n_joints} joints")


def _joint_names(args, truth_dir: Path) -> list[str]:
    for cand in [args.joints, truth_dir / "joints.txt", truth_dir.parent / "joints.txt"]:
        if cand and Path(cand).exists():
            return Path(cand).read_text().split()
    return []


def _pred_dirs(items: list[str]) -> dict[str, Path]:
    out = {}
    for item in items:
        name, _, path = item.rpartition("=")
        path = Path(path)
        out[name or path.name] = path
    return out


def cmd_evaluate(args) -> None:
    out = _output(args.out, args.force)
    truth_dir = Path(args.truth)
    truth_files = sorted(truth_dir.glob("*.csv"))
    if not truth_files:
        raise FileNotFoundError(f"no motion CSV files in {truth_dir}")
    names = _joint_names(args, truth_dir)
    n_joints = read_motion_csv(truth_files[0]).n_joints
    if args.group == "all":
        group = metrics.JointGroup("all", tuple(range(n_joints)))
    elif not names:
        raise UsageError(f"group {args.group!r} needs joint names (--joints)")
    else:
        group = metrics.joint_group(args.group, names)
    report = metrics.EvaluationReport(metadata=_header(args))
    report.histograms[group.name] = {}
    conditions = {"ground_truth": truth_dir, **_pred_dirs(args.pred)}
    for cond, pdir in conditions.items():
        truths, preds = [], []
        for tf in truth_files:
            pf = pdir / tf.name
            if not pf.exists():
                continue
            t, p = read_motion_csv(tf), read_motion_csv(pf)
            n = min(len(t), len(p))
            truths.append(type(t)(t.positions[:n], t.fps))
            preds.append(type(p)(p.positions[:n], p.fps))
        if not preds:
            raise FileNotFoundError(f"{pdir} has no predictions matching {truth_dir}")
        res = metrics.evaluate_condition(truths, preds)
        if group.name != "all":
            res.acc = [metrics.avg_stat(p, 2, group) for p in preds]
            res.jerk = [metrics.avg_stat(p, 3, group) for p in preds]
        report.conditions[cond] = res
        report.histograms[group.name][cond] = metrics.acceleration_histogram(preds, group, args.bin_width)
    metrics.write_report_csv(out, report)
    if args.histogram:
        metrics.write_histogram_csv(_output(args.histogram, args.force), report)
    if args.svg:
        metrics.write_histogram_svg(_output(args.svg, args.force), report.histograms[group.name],
                                    title=f"acceleration histogram ({group.name})")
    for row in report.rows():
        print(f"{row['condition']}: ape {row['ape_mean']:.4g} +/- {row['ape_sd']:.3g}, "
              f"acc {row['acc_mean']:.4g}, jerk {row['jerk_mean']:.4g}")


def cmd_report(args) -> None:
    rows = metrics.read_report_csv(args.input)
    if not rows:
        raise ValueError(f"{args.input} has no rows")
    key = "condition" if "condition" in rows[0] else "d_z"
    metric_cols = [c[: -len("_mean")] for c in rows[0] if c.endswith("_mean")]
    width = max(len(key), *(len(r[key]) for r in rows))
    print(key.ljust(width) + "".join(f"  {m:>22}" for m in metric_cols))
    for r in rows:
        cells = "".join(f"  {float(r[m + '_mean']):>10.4g} +/- {float(r[m + '_sd']):<7.3g}" for m in metric_cols)
        print(r[key].ljust(width) + cells)
    if args.svg:
        if key != "d_z":
            raise UsageError("--svg renders d_z sweep tables; histograms come from `evaluate --svg`")
        metrics.write_sweep_svg(_output(args.svg, args.force), rows, metric=args.metric)


# -- parser -------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        dims = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--dims must be comma-separated integers, got {text!r}") from None
    if not dims or min(dims) <= 0:
        raise UsageError("--dims must list positive integers")
    return dims


def _training_flags(p) -> None:
    p.add_argument("--corpus", required=True, help="corpus directory (wav/, motion/, split.txt)")
    p.add_argument("--config", help="key=value training config; flags override it")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gesturegen", description="Speech-driven gesture generation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.set_defaults(func=func)
        return p

    p = command("synth-data", cmd_synth_data, "generate the synthetic speech/motion corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)

    p = command("features", cmd_features, "extract speech features at 20 fps")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--corpus", help="extract for every utterance into <corpus>/features/<kind>/")
    p.add_argument("--kind", choices=KINDS, required=True)

    p = command("import-bvh", cmd_import_bvh, "BVH -> global joint positions CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=float, default=20.0)
    p.add_argument("--joints", help="also write joint names to this file")

    p = command("train-dae", cmd_train_dae, "train the motion denoising autoencoder")
    _training_flags(p)
    p.add_argument("--dz", type=int, help="bottleneck size (default 325)")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="loss log CSV (default <out>.log.csv)")

    for name, func, text in (("train-speech", cmd_train_speech, "train SpeechE on autoencoder targets"),
                             ("train-baseline", cmd_train_baseline, "train the direct speech-to-pose baseline")):
        p = command(name, func, text)
        _training_flags(p)
        if name == "train-speech":
            p.add_argument("--dae", required=True)
        p.add_argument("--kind", choices=KINDS, default="mfcc")
        p.add_argument("--out", required=True)
        p.add_argument("--log", help="loss log CSV (default <out>.log.csv)")

    p = command("sweep-dz", cmd_sweep_dz, "retrain autoencoder + SpeechE for several d_z")
    _training_flags(p)
    p.add_argument("--dims", required=True, help="comma-separated d_z values")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dae-epochs", type=int)
    p.add_argument("--kind", choices=KINDS, default="mfcc")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")

    p = command("synthesize", cmd_synthesize, "speech WAV -> predicted joint positions")
    p.add_argument("--model", help="SpeechE checkpoint")
    p.add_argument("--dae", help="motion autoencoder checkpoint")
    p.add_argument("--baseline", help="baseline checkpoint (instead of --model/--dae)")
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)

    p = command("evaluate", cmd_evaluate, "score predicted motion against ground truth")
    p.add_argument("--pred", action="append", required=True, help="prediction directory, optionally NAME=DIR")
    p.add_argument("--truth", required=True)
    p.add_argument("--group", choices=["all", "hands", "shoulders"], default="all")
    p.add_argument("--joints", help="joint names file (default: joints.txt next to --truth)")
    p.add_argument("--bin-width", type=float, default=metrics.DEFAULT_BIN_WIDTH)
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.add_argument("--histogram", help="histogram table CSV")

    p = command("report", cmd_report, "print a report or sweep CSV as a mean +/- sd table")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--svg")
    p.add_argument("--metric", choices=["ape", "jerk"], default="ape")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, FloatingPointError, KeyError) as exc:
        # WavError, BVHParseError, CheckpointError are ValueErrors
        kind = type(exc).__name__
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
