"""Independent slow reference implementations used as test oracles.

Everything here is written from the textbook definitions with explicit
loops and dense DFT/DCT matrices, sharing no code with the package.
"""
import math

import numpy as np


def hz2mel(f):
    return 2595.0 * math.log10(1.0 + f / 700.0)


def mel2hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def triangle_filters(n_filters, n_fft, sr, lo=20.0, hi=8000.0):
    hi = min(hi, sr / 2)
    mels = [hz2mel(lo) + i * (hz2mel(hi) - hz2mel(lo)) / (n_filters + 1) for i in range(n_filters + 2)]
    pts = [mel2hz(m) for m in mels]
    w = np.zeros((n_filters, n_fft // 2 + 1))
    for j in range(n_filters):
        left, centre, right = pts[j], pts[j + 1], pts[j + 2]
        for k in range(n_fft // 2 + 1):
            f = k * sr / n_fft
            if f < lo or f > hi:
                continue
            if left <= f <= centre:
                w[j, k] = (f - left) / (centre - left)
            elif centre < f <= right:
                w[j, k] = (right - f) / (right - centre)
    return w


def oracle_fft_size(win, n_filters, sr):
    n = 1
    while n < win:
        n *= 2
    while not all(row.max() > 0 for row in triangle_filters(n_filters, n, sr)):
        n *= 2
    return n


def dft_power(frame, n_fft):
    x = np.zeros(n_fft)
    x[: len(frame)] = frame
    n = np.arange(n_fft)
    k = np.arange(n_fft // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * n / n_fft)
    spec = basis @ x
    return np.abs(spec) ** 2


def dct2_ortho(v):
    n = len(v)
    out = np.zeros(n)
    for k in range(n):
        s = sum(v[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
        out[k] = s * (math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n))
    return out


def log_mel_frames(x, sr, win_s, hop_s, n_filters):
    win = int(round(win_s * sr))
    hop = int(round(hop_s * sr))
    n_fft = oracle_fft_size(win, n_filters, sr)
    window = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / win) for i in range(win)])
    fb = triangle_filters(n_filters, n_fft, sr)
    rows = []
    start = 0
    while start + win <= len(x):
        p = dft_power(x[start : start + win] * window, n_fft)
        rows.append(np.log(np.maximum(fb @ p, 1e-10)))
        start += hop
    return np.array(rows)


def mfcc_oracle(x, sr):
    return np.array([dct2_ortho(r)[:26] for r in log_mel_frames(x, sr, 0.02, 0.01, 40)])


def spectrogram_oracle(x, sr):
    return log_mel_frames(x, sr, 0.005, 0.005, 64)


def max_relative_error(actual, expected):
    """Max elementwise deviation relative to the magnitude of the reference matrix."""
    return float(np.max(np.abs(actual - expected)) / np.max(np.abs(expected)))


def numeric_fk_chain(offsets, rotations):
    """Global positions of a serial chain: p_i = p_{i-1} + R_0..R_{i-1} o_i."""
    pos = [np.asarray(offsets[0], dtype=float)]
    acc = np.eye(3)
    for i in range(1, len(offsets)):
        acc = acc @ rotations[i - 1]
        pos.append(pos[-1] + acc @ np.asarray(offsets[i], dtype=float))
    return np.array(pos)
