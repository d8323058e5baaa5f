"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Runtime limits are part of each verdict. Criteria 5 and 6 share one set of
training runs (5 seeds x {mfcc, prosodic}, plus the mfcc baseline) on a
50-utterance synthetic corpus split 40/5/5.
"""
import time

import numpy as np
import pytest

from gesturegen import audio_features as af
from gesturegen import metrics, nn, trainer
from gesturegen.cli import main
from gesturegen.models import BASELINE, SPEECH_E
from gesturegen.motion_io import (
    JointRotationSequence,
    MotionSequence,
    forward_kinematics,
    fit_scaler,
    parse_bvh,
)
from gesturegen.synthetic import SynthSpec, gen_corpus, synthetic_skeleton
from gesturegen.wav import AudioBuffer

from gradcases import batchnorm_case, dense_case, gru_case, speech_net_case
from oracles import max_relative_error, mfcc_oracle, spectrogram_oracle
from test_motion_io import CHAIN

SEEDS = (42, 43, 44, 45, 46)
E2E_EPOCHS = 10


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail, seconds, limit):
        in_time = seconds < limit
        passed = bool(ok) and in_time
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail} "
                  f"({seconds:.1f} s, limit {limit:g} s)")
        assert ok, detail
        assert in_time, f"took {seconds:.1f} s, limit {limit:g} s"

    return report


def test_criterion_1_gradient_integrity(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    errs = {
        "dense": nn.grad_check(*dense_case(rng), rng),
        "batchnorm": max(nn.grad_check(*batchnorm_case(rng, train), rng) for train in (True, False)),
        "gru(4 steps)": nn.grad_check(*gru_case(rng, steps=4), rng),
        "speech_e stack": nn.grad_check(*speech_net_case(rng), rng, n_samples=400),
    }
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in errs.items())
    verdict(1, "gradient integrity", worst < 1e-4, detail, time.perf_counter() - t0, 60)


def test_criterion_2_feature_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst_m = worst_s = 0.0
    for k in range(20):
        t = np.arange(16000) / 16000
        x = rng.uniform(0.01, 0.5) * rng.standard_normal(16000)
        if k % 2:
            x += rng.uniform(0.1, 0.5) * np.sin(2 * np.pi * rng.uniform(80, 4000) * t)
        audio = AudioBuffer(x, 16000)
        worst_m = max(worst_m, max_relative_error(af.mfcc(audio).data, mfcc_oracle(x, 16000)))
        worst_s = max(worst_s, max_relative_error(af.spectrogram64(audio).data, spectrogram_oracle(x, 16000)))
    detail = f"max relative error mfcc {worst_m:.2e}, spectrogram {worst_s:.2e} over 20 inputs"
    verdict(2, "feature oracle equivalence", max(worst_m, worst_s) < 1e-6, detail, time.perf_counter() - t0, 30)


def test_criterion_3_prosodic_formulas(verdict):
    t0 = time.perf_counter()
    boundary = np.exp(4.0) - 1.0
    f0 = np.concatenate([[0.0, 1.0, boundary, np.nextafter(boundary, 0), np.nextafter(boundary, np.inf)],
                         np.linspace(0, 60, 61), np.linspace(60, 400, 341)])
    expected_p = np.array([max(np.log(v + 1.0) - 4.0, 0.0) for v in f0])
    x = np.concatenate([np.logspace(-8, 4, 121), [1.0, np.e ** 3]])
    expected_i = np.array([np.log(v) - 3.0 for v in x])
    err_p = np.max(np.abs(af.adjust_pitch(f0) - expected_p))
    err_i = np.max(np.abs(af.adjust_intensity(x) - expected_i))
    at_boundary = af.adjust_pitch(np.array([boundary]))[0]
    ok = err_p <= 1e-12 and err_i <= 1e-12 and abs(at_boundary) <= 1e-12 and np.all(af.adjust_pitch(f0) >= 0)
    detail = f"pitch err {err_p:.1e}, intensity err {err_i:.1e}, value at e^4-1 = {at_boundary:.1e}"
    verdict(3, "prosodic formula exactness", ok, detail, time.perf_counter() - t0, 1)


def test_criterion_4_dae_capacity(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    basis = rng.standard_normal((40, 384))

    def rows(n):
        return rng.standard_normal((n, 40)) @ basis + 0.01 * rng.standard_normal((n, 384))

    train, val = rows(8000), rows(1000)
    scaler = fit_scaler(train)
    train, val = scaler.apply(train), scaler.apply(val)
    mse = {}
    for d_z in (8, 64):
        med, _, _, _ = trainer.fit_dae(train, val, trainer.TrainConfig(d_z=d_z))
        mse[d_z] = trainer.reconstruction_error(med, val)
    ok = mse[8] >= 2 * mse[64] and mse[64] < 0.05
    detail = f"relative MSE d_z=8 {mse[8]:.3g}, d_z=64 {mse[64]:.3g} (ratio {mse[8] / mse[64]:.3g})"
    verdict(4, "autoencoder capacity trend", ok, detail, time.perf_counter() - t0, 300)


# -- end-to-end runs shared by criteria 5 and 6 -----------------------------------------------


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    t0 = time.perf_counter()
    root = gen_corpus(SynthSpec(n_utterances=50, n_train=40, n_val=5, n_test=5), tmp_path_factory.mktemp("e2e"))
    corpus = trainer.load_corpus(root)
    pose = metrics.static_mean_pose(corpus.motions("train"))
    test_ids = corpus.ids("test")
    truths = [corpus.aligned(u, af.FeatureKind.MFCC)[1] for u in test_ids]
    static_ape = float(np.mean([metrics.ape(t, metrics.static_prediction(pose, t)) for t in truths]))
    truth_jerk = float(np.mean([metrics.avg_stat(t, 3) for t in truths]))
    runs = {"mfcc": [], "prosodic": [], "baseline": []}
    for kind in ("mfcc", "prosodic"):
        for seed in SEEDS:
            cfg = trainer.TrainConfig(kind=kind, seed=seed, epochs=E2E_EPOCHS)
            dae = trainer.train_dae(corpus, cfg)
            se = trainer.train_net(SPEECH_E, corpus, cfg, dae)
            base = trainer.train_net(BASELINE, corpus, cfg) if kind == "mfcc" else None
            assert not (se.seen_ids | dae.seen_ids) & set(test_ids)
            apes, jerks, base_jerks = [], [], []
            for uid in test_ids:
                fs, truth = corpus.aligned(uid, af.FeatureKind(kind))
                pred = trainer.predict_utterance(SPEECH_E, se.model, fs, dae.scaler, se.input_scaler, dae.model)
                apes.append(metrics.ape(truth, pred))
                jerks.append(metrics.avg_stat(pred, 3))
                if base is not None:
                    bp = trainer.predict_utterance(BASELINE, base.model, fs, base.scaler, base.input_scaler)
                    base_jerks.append(metrics.avg_stat(bp, 3))
            runs[kind].append(dict(ape=float(np.mean(apes)), jerk=float(np.mean(jerks))))
            if base is not None:
                runs["baseline"].append(dict(jerk=float(np.mean(base_jerks))))
    return dict(static_ape=static_ape, truth_jerk=truth_jerk, runs=runs, seconds=time.perf_counter() - t0)


@pytest.mark.slow
def test_criterion_5_end_to_end_learning(e2e, verdict):
    t0 = time.perf_counter()
    parts, ok = [], True
    for kind in ("mfcc", "prosodic"):
        ratios = [r["ape"] / e2e["static_ape"] for r in e2e["runs"][kind]]
        wins = sum(q <= 0.9 for q in ratios)
        ok &= wins >= 4
        parts.append(f"{kind} APE/static {', '.join(f'{q:.2f}' for q in ratios)} ({wins}/5 at <= 0.90)")
    seconds = e2e["seconds"] + time.perf_counter() - t0
    verdict(5, "end-to-end learning", ok, "; ".join(parts), seconds, 30 * 60)


@pytest.mark.slow
def test_criterion_6_smoothness_ordering(e2e, verdict):
    t0 = time.perf_counter()
    truth = e2e["truth_jerk"]
    gap_p = float(np.median([abs(r["jerk"] - truth) for r in e2e["runs"]["mfcc"]]))
    gap_b = float(np.median([abs(r["jerk"] - truth) for r in e2e["runs"]["baseline"]]))
    detail = f"truth jerk {truth:.4f}; median |gap| proposed {gap_p:.4f} vs baseline {gap_b:.4f}"
    seconds = e2e["seconds"] + time.perf_counter() - t0
    verdict(6, "smoothness ordering", gap_p <= gap_b, detail, seconds, 45 * 60)


def test_criterion_7_metric_units(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(707)
    x = MotionSequence(rng.standard_normal((30, 64, 3)), 20.0)
    shifted = MotionSequence(x.positions + np.array([1.0, 0.0, 0.0]), 20.0)
    linear = MotionSequence(np.arange(30.0)[:, None, None] * rng.standard_normal((1, 64, 3)) + 2.0, 20.0)
    hist = metrics.acceleration_histogram([x, shifted], None, 0.05)
    first_diff = np.diff(x.positions, axis=0)
    checks = {
        "ape(x,x)=0": metrics.ape(x, x) == 0.0,
        "unit offset ape=1": metrics.ape(x, shifted) == 1.0,
        "histogram sums to 1": abs(hist.frequencies.sum() - 1.0) <= 1e-9,
        "linear jerk=0": metrics.avg_stat(linear, 3) < 1e-9,
        "order composition": np.allclose(metrics.derivative_magnitudes(x, 3),
                                         metrics.derivative_magnitudes(first_diff, 2), rtol=0, atol=1e-12),
    }
    failed = [k for k, v in checks.items() if not v]
    detail = "all identities hold" if not failed else "failed: " + ", ".join(failed)
    verdict(7, "metric unit suite", not failed, detail, time.perf_counter() - t0, 5)


def test_criterion_8_fk_fixtures(verdict):
    t0 = time.perf_counter()
    pos = forward_kinematics(*parse_bvh(CHAIN)).positions
    rz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    rx = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0.0]])
    root, arm = rz @ rx, rz @ rx @ rx
    expected = np.array([
        [[1, 2, 3], [0, 2, 3], [-1, 2, 3]],
        [[1, 2, 3], [1, 2, 4], [1, 3, 4]],
        [[0, 0, 0], root @ [0, 1, 0], root @ [0, 1, 0] + arm @ [1, 0, 0]],
    ], dtype=float)
    fixture_err = float(np.max(np.abs(pos - expected)))
    skel = synthetic_skeleton()
    rng = np.random.default_rng(808)
    frames = rng.uniform(-180, 180, (100, skel.n_channels))
    gp = forward_kinematics(skel, JointRotationSequence(frames, 0.05)).positions
    bone_err = max(
        float(np.max(np.abs(np.linalg.norm(gp[:, i] - gp[:, j.parent], axis=1) - np.linalg.norm(j.offset))))
        for i, j in enumerate(skel.joints) if j.parent >= 0
    )
    detail = f"fixture max error {fixture_err:.1e}, bone length drift {bone_err:.1e} over 100 frames"
    verdict(8, "BVH/FK fixtures", fixture_err <= 1e-9 and bone_err <= 1e-9, detail, time.perf_counter() - t0, 5)


def test_criterion_9_determinism(tmp_path, verdict):
    t0 = time.perf_counter()
    corpus = tmp_path / "corpus"
    assert main(["synth-data", "--out", str(corpus), "--n", "10", "--seed", "3"]) == 0
    common = ["--corpus", str(corpus), "--epochs", "3", "--seed", "11"]

    def run(tag):
        d = tmp_path / tag
        d.mkdir()
        codes = [
            main(["train-dae", *common, "--dz", "16", "--out", str(d / "dae.ckpt")]),
            main(["train-speech", *common, "--dae", str(d / "dae.ckpt"), "--out", str(d / "se.ckpt")]),
            main(["train-baseline", *common, "--out", str(d / "base.ckpt")]),
        ]
        assert codes == [0, 0, 0]
        return {p.name: p.read_bytes() for p in sorted(d.iterdir())}

    first, second = run("first"), run("second")
    same = [name for name in first if first[name] == second[name]]
    # each command writes a header file, a tensor payload and a loss log
    detail = f"{len(same)}/{len(first)} checkpoint and log files bit-identical across re-runs"
    verdict(9, "determinism", len(same) == len(first) == 9, detail, time.perf_counter() - t0, 300)


def test_criterion_10_five_run_reporting(tmp_path, verdict):
    t0 = time.perf_counter()
    corpus = tmp_path / "corpus"
    assert main(["synth-data", "--out", str(corpus), "--n", "10", "--seed", "4"]) == 0
    sweep = tmp_path / "sweep.csv"
    assert main(["sweep-dz", "--corpus", str(corpus), "--dims", "8,16", "--runs", "5", "--epochs", "2",
                 "--dae-epochs", "2", "--out", str(sweep)]) == 0
    rows = metrics.read_report_csv(sweep)
    header = "# runs=5" in sweep.read_text()
    sweep_ok = [list(r) for r in rows] == [list(trainer.SWEEP_COLUMNS)] * 2 and header

    c = trainer.load_corpus(corpus)
    direct = trainer.sweep_dz(c, [8], trainer.TrainConfig(epochs=2, dae_epochs=2), runs=5)[0]
    runs_ok = direct["runs"] == 5 and len(direct["ape_runs"]) == 5 and np.isclose(
        direct["ape_sd"], np.std(direct["ape_runs"], ddof=1)) and np.isclose(float(rows[0]["ape_mean"]),
                                                                            direct["ape_mean"], rtol=1e-8)
    report = tmp_path / "report.csv"
    truth = corpus / "motion"
    assert main(["evaluate", "--pred", f"copy={truth}", "--truth", str(truth), "--out", str(report)]) == 0
    schema = [ln for ln in report.read_text().splitlines() if not ln.startswith("#")][0]
    report_ok = schema == "condition,ape_mean,ape_sd,acc_mean,acc_sd,jerk_mean,jerk_sd"
    detail = (f"sweep rows {len(rows)} with columns {','.join(rows[0])}; 5 runs per d_z {runs_ok}; "
              f"report header {schema}")
    verdict(10, "five-run reporting protocol", sweep_ok and runs_ok and report_ok, detail,
            time.perf_counter() - t0, 600)
