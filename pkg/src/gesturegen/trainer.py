"""Corpus handling and the training procedures for the motion autoencoder,
SpeechE and the baseline network, plus the bottleneck-size sweep."""
from __future__ import annotations

import copy
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, nn
from .audio_features import FeatureKind, FeatureSequence, extract_features, read_features_csv
from .models import (
    BASELINE,
    CONTEXT,
    SPEECH_E,
    ChainedModel,
    MotionED,
    SpeechNet,
    build_context_windows,
    encode_motion,
    synthesize,
    synthesize_baseline,
    temporal_delta,
)
from .motion_io import (
    MOTION_FEATURE_DIM,
    MotionSequence,
    ScalerParams,
    features_to_positions,
    fit_scaler,
    raw_motion_features,
    read_motion_csv,
)
from .wav import load_wav

log = logging.getLogger(__name__)

_STREAM_INIT = 11
_STREAM_SHUFFLE = 12
_STREAM_NOISE = 13
_STREAM_DROPOUT = 14


# -- configuration -------------------------------------------------------------


@dataclass
class TrainConfig:
    """Training hyperparameters; every field can be set from a key=value file.

    ``epochs``/``batch_size`` apply to the speech networks, ``dae_epochs``/
    ``dae_batch_size`` to the motion autoencoder. Batch sizes count frames.
    """

    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 20
    dae_batch_size: int = 128
    dae_epochs: int = 20
    seed: int = 42
    d_z: int = 325
    kind: str = "mfcc"
    noise_scale: float = 0.05
    bptt_len: int = 20
    clip_norm: float = 5.0
    dropout: float = 0.1

    def __post_init__(self):
        for name in ("lr", "batch_size", "epochs", "dae_batch_size", "dae_epochs", "d_z", "bptt_len", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        self.kind = FeatureKind(self.kind).value

    def as_meta(self) -> dict:
        return {f"config.{k}": str(v) for k, v in dataclasses.asdict(self).items()}

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def config_from_mapping(values: dict, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    changes = {}
    for key, value in values.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(base, key)
        changes[key] = type(current)(value) if not isinstance(current, str) else str(value)
    return base.replace(**changes)


def load_config(path: str | os.PathLike | None, overrides: dict | None = None) -> TrainConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_mapping(values)


# -- corpus ----------------------------------------------------------------------


@dataclass
class Utterance:
    id: str
    motion: MotionSequence
    audio_path: Path | None = None
    features: dict = field(default_factory=dict)
    feature_dir: Path | None = None

    def feature(self, kind: FeatureKind) -> FeatureSequence:
        """Features of ``kind``: memoized, read from ``feature_dir`` if cached there,
        otherwise extracted from the audio."""
        kind = FeatureKind(kind)
        if kind not in self.features and self.feature_dir is not None:
            cached = feature_cache_path(self.feature_dir, kind, self.id)
            if cached.exists():
                self.features[kind] = read_features_csv(cached)
        if kind not in self.features:
            if self.audio_path is None:
                raise ValueError(f"utterance {self.id} has no audio for {kind.value} features")
            self.features[kind] = extract_features(load_wav(self.audio_path), kind)
        return self.features[kind]


@dataclass
class Corpus:
    utterances: dict[str, Utterance]
    split: dict[str, list[str]]
    joint_names: list[str] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        seen = set()
        for name, ids in self.split.items():
            for uid in ids:
                if uid not in self.utterances:
                    raise ValueError(f"split {name!r} references unknown utterance {uid!r}")
                if uid in seen:
                    raise ValueError(f"utterance {uid!r} appears in more than one split")
                seen.add(uid)

    def ids(self, part: str) -> list[str]:
        return list(self.split.get(part, []))

    def motions(self, part: str) -> list[MotionSequence]:
        return [self.utterances[u].motion for u in self.ids(part)]

    def aligned(self, uid: str, kind: FeatureKind) -> tuple[FeatureSequence, MotionSequence]:
        """Features and motion truncated to a common frame count."""
        utt = self.utterances[uid]
        fs = utt.feature(kind)
        t = min(len(fs), len(utt.motion))
        return (
            FeatureSequence(fs.data[:t], fs.fps, fs.kind),
            MotionSequence(utt.motion.positions[:t], utt.motion.fps),
        )


def feature_cache_path(feature_dir: Path, kind: FeatureKind, uid: str) -> Path:
    return Path(feature_dir) / FeatureKind(kind).value / f"{uid}.csv"


def read_split(path: str | os.PathLike) -> dict[str, list[str]]:
    split = {}
    for key, value in parse_config_text(Path(path).read_text()).items():
        split[key] = [v for v in value.split(",") if v]
    return split


def load_corpus(root: str | os.PathLike) -> Corpus:
    """Load ``wav/<id>.wav`` + ``motion/<id>.csv`` pairs and ``split.txt``.

    Precomputed features are picked up from ``features/<kind>/<id>.csv``.
    """
    root = Path(root)
    if not (root / "split.txt").exists():
        raise FileNotFoundError(f"{root} has no split.txt")
    utts = {}
    for csv in sorted((root / "motion").glob("*.csv")):
        uid = csv.stem
        wav = root / "wav" / f"{uid}.wav"
        utts[uid] = Utterance(uid, read_motion_csv(csv), wav if wav.exists() else None, feature_dir=root / "features")
    names_file = root / "joints.txt"
    names = names_file.read_text().split() if names_file.exists() else []
    return Corpus(utts, read_split(root / "split.txt"), names, root)


def split_corpus(corpus: Corpus, counts: tuple[int, int, int], seed: int) -> dict[str, list[str]]:
    from .synthetic import split_ids

    return split_ids(sorted(corpus.utterances), counts, seed)


# -- shared helpers ---------------------------------------------------------------


@dataclass
class TrainResult:
    model: object
    scaler: ScalerParams
    log: list[dict]
    best_epoch: int
    optim: nn.AdamState
    input_scaler: ScalerParams | None = None
    seen_ids: set = field(default_factory=set)


def write_loss_log(path: str | os.PathLike, rows: list[dict], header: dict | None = None) -> None:
    lines = [f"# {k}={v}" for k, v in (header or {}).items()]
    lines.append("epoch,train_loss,val_loss,val_ape")
    for r in rows:
        lines.append(f"{r['epoch']},{r['train_loss']!r},{r['val_loss']!r},{r['val_ape']!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def fit_motion_scaler(corpus: Corpus) -> ScalerParams:
    """Scaler fitted on training-split motion only."""
    train = corpus.ids("train")
    if not train:
        raise ValueError("corpus has an empty training split")
    return fit_scaler(np.vstack([raw_motion_features(corpus.utterances[u].motion) for u in train]))


def _standardized(corpus: Corpus, part: str, scaler: ScalerParams) -> list[np.ndarray]:
    return [scaler.apply(raw_motion_features(corpus.utterances[u].motion)) for u in corpus.ids(part)]


# -- motion autoencoder ----------------------------------------------------------


def fit_dae(
    train: np.ndarray, val: np.ndarray, cfg: TrainConfig, identity_init: bool = False, evaluate=None,
) -> tuple[MotionED, list[dict], int, nn.AdamState]:
    """Fit a denoising autoencoder on standardized single-frame rows.

    Inputs get Gaussian noise with ``noise_scale`` times each dimension's
    training standard deviation. ``evaluate(med)`` may supply the per-epoch
    validation APE. Returns the parameters with the lowest validation loss.
    """
    if len(train) == 0:
        raise ValueError("corpus has an empty training split")
    std = train.std(axis=0)
    med = MotionED.create(cfg.d_z, nn.make_rng(cfg.seed, _STREAM_INIT), identity=identity_init,
                          width=train.shape[1])
    optim = nn.AdamState(lr=cfg.lr)
    shuffle = nn.make_rng(cfg.seed, _STREAM_SHUFFLE)
    noise = nn.make_rng(cfg.seed, _STREAM_NOISE)
    history, best, best_loss, best_epoch = [], None, np.inf, 0
    for epoch in range(1, cfg.dae_epochs + 1):
        order = shuffle.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), cfg.dae_batch_size):
            clean = train[order[start : start + cfg.dae_batch_size]]
            noisy = nn.add_gaussian_noise(clean, std, noise, cfg.noise_scale)
            z, m_hat = med.forward(noisy)
            loss, dm = nn.mse_loss(m_hat, clean)
            nn.adam_step(optim, med.params, med.backward(noisy, z, dm))
            total += loss * len(clean)
        train_loss = total / len(train)
        val_loss = nn.mse_loss(med.forward(val)[1], val)[0]
        val_ape = evaluate(med) if evaluate else float("nan")
        history.append(dict(epoch=epoch, train_loss=train_loss, val_loss=val_loss, val_ape=val_ape))
        log.info("dae epoch %d train %.6g val %.6g ape %.4g", epoch, train_loss, val_loss, val_ape)
        if val_loss < best_loss:
            best_loss, best_epoch = val_loss, epoch
            best = (copy.deepcopy(med.params), copy.deepcopy(optim))
    med.params, optim = best
    return med, history, best_epoch, optim


def train_dae(corpus: Corpus, cfg: TrainConfig, identity_init: bool = False) -> TrainResult:
    """Train MotionE/MotionD on the corpus's standardized motion features.

    The scaler is fitted on the training split; validation frames are
    standardized with the same statistics.
    """
    scaler = fit_motion_scaler(corpus)
    train = np.vstack(_standardized(corpus, "train", scaler))
    val_parts = _standardized(corpus, "validation", scaler)
    val = np.vstack(val_parts) if val_parts else train
    val_truth = corpus.motions("validation")
    med, history, best_epoch, optim = fit_dae(
        train, val, cfg, identity_init, evaluate=lambda m: _dae_ape(m, scaler, val_parts, val_truth)
    )
    return TrainResult(med, scaler, history, best_epoch, optim, seen_ids=set(corpus.ids("train")))


def _dae_ape(med: MotionED, scaler: ScalerParams, parts: list[np.ndarray], truth: list[MotionSequence]) -> float:
    if not parts:
        return float("nan")
    errs = [metrics.ape(t, features_to_positions(med.forward(x)[1], scaler, t.fps)) for x, t in zip(parts, truth)]
    return float(np.mean(errs))


def reconstruction_error(med: MotionED, rows: np.ndarray) -> float:
    """Relative MSE: ||m_hat - m||^2 / ||m - mean(m)||^2."""
    m_hat = med.forward(rows)[1]
    return float(np.sum((m_hat - rows) ** 2) / np.sum((rows - rows.mean(axis=0)) ** 2))


# -- speech networks ------------------------------------------------------------------


def fit_input_scaler(corpus: Corpus, kind: FeatureKind) -> ScalerParams:
    """Per-dimension mean/std of training-split speech features."""
    rows = np.vstack([corpus.aligned(u, kind)[0].data for u in corpus.ids("train")])
    std = rows.std(axis=0)
    return ScalerParams(rows.mean(axis=0), np.where(std > 1e-12, std, 1.0))


def standardize_features(fs: FeatureSequence, input_scaler: ScalerParams) -> FeatureSequence:
    return FeatureSequence(input_scaler.apply(fs.data), fs.fps, fs.kind)


@dataclass
class _Sequence:
    uid: str
    x: np.ndarray  # (T, (2C+1) D)
    y: np.ndarray  # (T, out)
    truth: MotionSequence


def _net_targets(model_kind: str, std_motion: np.ndarray, dae: MotionED | None) -> np.ndarray:
    if model_kind == BASELINE:
        return std_motion
    z = encode_motion(dae, std_motion)
    return np.hstack([z, temporal_delta(z)])


def _prepare(corpus, part, kind, model_kind, scaler, input_scaler, dae) -> list[_Sequence]:
    out = []
    for uid in corpus.ids(part):
        fs, motion = corpus.aligned(uid, kind)
        x = build_context_windows(standardize_features(fs, input_scaler), CONTEXT).reshape(len(fs), -1)
        y = _net_targets(model_kind, scaler.apply(raw_motion_features(motion)), dae)
        out.append(_Sequence(uid, x, y, motion))
    return out


def _chunks(seqs: list[_Sequence], length: int, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """(sequence index, start, length) of contiguous training chunks."""
    out = []
    for i, s in enumerate(seqs):
        t = len(s.x)
        if t <= length:
            out.append((i, 0, t))
            continue
        offset = int(rng.integers(0, min(length, t - length + 1)))
        for start in range(offset, t - length + 1, length):
            out.append((i, start, length))
    return out


def _batches(chunks, per_batch: int, rng: np.random.Generator):
    by_len: dict[int, list] = {}
    for c in chunks:
        by_len.setdefault(c[2], []).append(c)
    batches = []
    for length in sorted(by_len):
        group = by_len[length]
        order = rng.permutation(len(group))
        for start in range(0, len(order), per_batch):
            batches.append([group[k] for k in order[start : start + per_batch]])
    return [batches[k] for k in rng.permutation(len(batches))]


def _predict_positions(model_kind, net, seq_x, scaler, dae) -> MotionSequence:
    out, _ = net.forward(seq_x[:, None, :], train=False)
    out = out[:, 0, :]
    if model_kind == BASELINE:
        feats = out[:, :MOTION_FEATURE_DIM]
    else:
        feats = dae.decode(out[:, : dae.d_z])
    return features_to_positions(feats, scaler)


def _evaluate(model_kind, net, seqs, scaler, dae) -> tuple[float, float]:
    if not seqs:
        return float("nan"), float("nan")
    sq, count, apes = 0.0, 0, []
    for s in seqs:
        out, _ = net.forward(s.x[:, None, :], train=False)
        sq += float(np.sum((out[:, 0, :] - s.y) ** 2))
        count += s.y.size
        apes.append(metrics.ape(s.truth, _predict_positions(model_kind, net, s.x, scaler, dae)))
    return sq / count, float(np.mean(apes))


def train_net(
    model_kind: str,
    corpus: Corpus,
    cfg: TrainConfig,
    dae: TrainResult | tuple[MotionED, ScalerParams] | None = None,
) -> TrainResult:
    """Train SpeechE (targets [z, dz]) or the baseline (targets [g, dg]).

    Training runs on contiguous ``bptt_len``-frame chunks with the GRU state
    reset per chunk; validation runs on whole utterances. The epoch with the
    lowest validation loss is returned.
    """
    kind = FeatureKind(cfg.kind)
    if model_kind == SPEECH_E:
        if dae is None:
            raise ValueError("SpeechE training needs a trained motion autoencoder")
        med, scaler = (dae.model, dae.scaler) if isinstance(dae, TrainResult) else dae
        if med.d_z != cfg.d_z:
            raise ValueError(f"autoencoder bottleneck is {med.d_z}, config asks for d_z={cfg.d_z}")
        out_dim = 2 * med.d_z
    elif model_kind == BASELINE:
        med, scaler = None, fit_motion_scaler(corpus)
        out_dim = MOTION_FEATURE_DIM
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    if not corpus.ids("train"):
        raise ValueError("corpus has an empty training split")

    input_scaler = fit_input_scaler(corpus, kind)
    train = _prepare(corpus, "train", kind, model_kind, scaler, input_scaler, med)
    val = _prepare(corpus, "validation", kind, model_kind, scaler, input_scaler, med)
    in_dim = train[0].x.shape[1]
    net = SpeechNet.create(in_dim, out_dim, nn.make_rng(cfg.seed, _STREAM_INIT), dropout=cfg.dropout)
    optim = nn.AdamState(lr=cfg.lr)
    shuffle = nn.make_rng(cfg.seed, _STREAM_SHUFFLE)
    drop = nn.make_rng(cfg.seed, _STREAM_DROPOUT)
    per_batch = max(2, cfg.batch_size // cfg.bptt_len)
    seen: set[str] = set()
    history, best, best_loss, best_epoch = [], None, np.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        total, frames = 0.0, 0
        for batch in _batches(_chunks(train, cfg.bptt_len, shuffle), per_batch, shuffle):
            x = np.stack([train[i].x[s : s + n] for i, s, n in batch], axis=1)
            y = np.stack([train[i].y[s : s + n] for i, s, n in batch], axis=1)
            if x.shape[0] * x.shape[1] < 2:
                continue
            seen.update(train[i].uid for i, _, _ in batch)
            pred, cache = net.forward(x, train=True, rng=drop)
            loss, dy = nn.mse_loss(pred, y)
            grads = net.backward(cache, dy)
            nn.clip_grad_norm(grads, cfg.clip_norm)
            nn.adam_step(optim, net.params, grads)
            total += loss * y.size
            frames += y.size
        val_loss, val_ape = _evaluate(model_kind, net, val, scaler, med)
        train_loss = total / max(frames, 1)
        history.append(dict(epoch=epoch, train_loss=train_loss, val_loss=val_loss, val_ape=val_ape))
        log.info("%s epoch %d train %.6g val %.6g ape %.4g", model_kind, epoch, train_loss, val_loss, val_ape)
        if not np.isfinite(val_loss) or val_loss < best_loss:
            if np.isfinite(val_loss):
                best_loss = val_loss
            best_epoch = epoch
            best = (copy.deepcopy(net.params), copy.deepcopy(net.bn), copy.deepcopy(optim))
    net.params, net.bn, optim = best
    net.sync_bn()
    return TrainResult(net, scaler, history, best_epoch, optim, input_scaler=input_scaler, seen_ids=seen)


# -- inference helpers -------------------------------------------------------------


def predict_utterance(
    model_kind: str, net: SpeechNet, fs: FeatureSequence, scaler: ScalerParams,
    input_scaler: ScalerParams, dae: MotionED | None = None,
) -> MotionSequence:
    fs = standardize_features(fs, input_scaler)
    if model_kind == BASELINE:
        return synthesize_baseline(net, scaler, fs.kind, fs)
    return synthesize(ChainedModel(net, dae, scaler, fs.kind), fs)


def evaluate_split(corpus: Corpus, part: str, predictor) -> list[tuple[MotionSequence, MotionSequence]]:
    """(truth, prediction) pairs for every utterance in ``part``."""
    out = []
    for uid in corpus.ids(part):
        truth, pred = predictor(uid)
        out.append((truth, pred))
    return out


# -- d_z sweep ---------------------------------------------------------------------


SWEEP_COLUMNS = ("d_z", "ape_mean", "ape_sd", "jerk_mean", "jerk_sd")


def _sweep_job(args) -> tuple[int, int, float, float]:
    root, corpus, d_z, run, cfg = args
    if corpus is None:
        corpus = load_corpus(root)
    run_cfg = cfg.replace(d_z=d_z, seed=cfg.seed + run)
    dae = train_dae(corpus, run_cfg)
    se = train_net(SPEECH_E, corpus, run_cfg, dae)
    kind = FeatureKind(run_cfg.kind)
    apes, jerks = [], []
    for uid in corpus.ids("test"):
        fs, truth = corpus.aligned(uid, kind)
        pred = predict_utterance(SPEECH_E, se.model, fs, dae.scaler, se.input_scaler, dae.model)
        apes.append(metrics.ape(truth, pred))
        jerks.append(metrics.avg_stat(pred, 3))
    return d_z, run, float(np.mean(apes)), float(np.mean(jerks))


def sweep_dz(corpus: Corpus, dims: list[int], cfg: TrainConfig, runs: int = 5, jobs: int = 1) -> list[dict]:
    """Train autoencoder + SpeechE ``runs`` times per d_z (seeds seed+0..runs-1).

    Returns one row per d_z with the mean and sample standard deviation of the
    test APE and average jerk over the runs.
    """
    if not dims:
        raise ValueError("dims must not be empty")
    tasks = [(corpus.root, None if jobs > 1 else corpus, d, r, cfg) for d in dims for r in range(runs)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, tasks))
    else:
        results = [_sweep_job(t) for t in tasks]
    rows = []
    for d in dims:
        mine = sorted((r for r in results if r[0] == d), key=lambda r: r[1])
        a_mean, a_sd = metrics.mean_sd([r[2] for r in mine])
        j_mean, j_sd = metrics.mean_sd([r[3] for r in mine])
        rows.append(dict(d_z=d, ape_mean=a_mean, ape_sd=a_sd, jerk_mean=j_mean, jerk_sd=j_sd,
                         runs=len(mine), ape_runs=[r[2] for r in mine], jerk_runs=[r[3] for r in mine]))
    return rows


def write_sweep_csv(path: str | os.PathLike, rows: list[dict], header: dict | None = None) -> None:
    lines = [f"# {k}={v}" for k, v in (header or {}).items()]
    lines.append(",".join(SWEEP_COLUMNS))
    for r in rows:
        lines.append(",".join([str(r["d_z"])] + [f"{r[c]:.9g}" for c in SWEEP_COLUMNS[1:]]))
    Path(path).write_text("\n".join(lines) + "\n")
