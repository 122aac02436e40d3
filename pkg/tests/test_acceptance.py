"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL
line (collected again in the terminal summary)."""
import csv
import json
import time

import numpy as np
import pytest
from scipy.signal import lfilter

from conftest import ACCEPTANCE_LINES
from tapkit import cli
from tapkit.acoustics import (N_PARAMS, PARAMETER_NAMES, TapMatrix, extract_all, extract_pitch,
                              standardize)
from tapkit.acoustics.files import CSV_HEADER
from tapkit.acoustics.formants import extract_formants, lpc, polynomial_roots, root_geometry, select_formants
from tapkit.dataset import (MixSpec, gen_test_signal, mix, resonator_coefficients, snr_db,
                            synthesize_corpus, synthetic_utterance)
from tapkit.estimator import (EstimatorConfig, TrainingExample, gradcheck, train)
from tapkit.signal_core import (ComplexSpectrogram, StftConfig, Waveform, frame_energy, istft,
                                load_wav, save_wav, stft)
from tapkit.taploss import (apply_mask, cirm_mse_loss, compute_cirm, mae, pai_report, tap_loss,
                            tap_loss_grad)


def report(n, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_stft_contract():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    w = Waveform(rng.standard_normal(16000 * 10) * 0.3, 16000)
    spec = stft(w)
    back = istft(spec, length=len(w))
    interior = slice(512, len(w) - 512)
    err = float(np.max(np.abs(back.samples[interior] - w.samples[interior])))
    elapsed = time.perf_counter() - t0
    ok = spec.n_bins == 257 and spec.n_frames == 1001 and err < 1e-6 and elapsed < 1.0
    report(1, "STFT contract", ok,
           f"F={spec.n_bins} T={spec.n_frames} roundtrip max err {err:.2e} (<1e-6), {elapsed:.2f}s (<1s)")


def test_02_parseval_frame_energy():
    rng = np.random.default_rng(2)
    N = 512
    cfg = StftConfig(n_fft=N, hop=N, window="rect", center_pad=False)
    x = rng.standard_normal(N * 100)
    spec = stft(Waveform(x, 16000), cfg)
    omega = frame_energy(spec)
    frames = x.reshape(100, N)
    # one-sided bookkeeping: interior bins appear twice in the full spectrum
    x0 = frames.sum(axis=1)
    xn = (frames * (-1.0) ** np.arange(N)).sum(axis=1)
    oracle = (N * np.sum(frames ** 2, axis=1) + x0 ** 2 + xn ** 2) / (2 * cfg.n_bins)
    rel = float(np.max(np.abs(omega - oracle) / oracle))
    full = np.abs(np.concatenate([spec.data, np.conj(spec.data[:, -2:0:-1])], axis=1)) ** 2
    rel_full = float(np.max(np.abs(full.sum(axis=1) - N * np.sum(frames ** 2, axis=1))
                            / (N * np.sum(frames ** 2, axis=1))))
    ok = rel < 1e-6 and rel_full < 1e-6
    report(2, "Parseval / frame energy", ok,
           f"max rel dev omega {rel:.2e}, full-spectrum Parseval {rel_full:.2e} (<1e-6, 100 frames)")


def test_03_pitch_oracle():
    t0 = time.perf_counter()
    sine = extract_pitch(gen_test_signal("sine", 1.0, freq=220.0))
    med = float(np.median(sine.f0[sine.voiced]))
    chirp = extract_pitch(gen_test_signal("chirp", 2.0, freq=100.0, freq_end=400.0))
    t = np.arange(chirp.f0.shape[0]) * 0.01
    truth = 100.0 + 150.0 * t  # instantaneous frequency of the linear sweep
    v = chirp.voiced
    within = np.abs(chirp.f0[v] - truth[v]) <= 0.05 * truth[v]
    frac = float(within.mean()) if v.any() else 0.0
    sil = extract_pitch(gen_test_signal("silence", 1.0))
    elapsed = time.perf_counter() - t0
    ok = abs(med - 220.0) <= 2.0 and frac >= 0.9 and not sil.voiced.any() and elapsed < 5.0
    report(3, "pitch oracle", ok,
           f"sine median {med:.3f} Hz, chirp {100 * frac:.1f}% within 5% ({v.sum()} voiced), "
           f"silence voiced frames {int(sil.voiced.sum())}, {elapsed:.2f}s")


def test_04_formant_oracle():
    t0 = time.perf_counter()
    w = gen_test_signal("pulse_train_vowel", 1.0, f0=100.0,
                        formants=((700.0, 130.0), (1220.0, 70.0), (2600.0, 160.0)))
    fm = extract_formants(w)
    rows = fm[np.all(fm[:, :3] > 0, axis=1)]
    med = np.median(rows[:, :3], axis=0)
    rel = np.abs(med - [700.0, 1220.0, 2600.0]) / [700.0, 1220.0, 2600.0]

    # known-root fixture: impulse response of an all-pole filter with two
    # resonances; order-matched autocorrelation LPC must give them back
    fs = 16000
    den = np.convolve(resonator_coefficients(1000.0, 100.0, fs), resonator_coefficients(2500.0, 200.0, fs))
    h = lfilter([1.0], den, np.r_[1.0, np.zeros(3999)])
    a, okf = lpc(h[None], 4)
    f, b = select_formants(polynomial_roots(a)[0], fs, n=2)
    dev = max(abs(f[0] - 1000.0), abs(f[1] - 2500.0), abs(b[0] - 100.0), abs(b[1] - 200.0))
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(rel < 0.10)) and dev < 1.0 and elapsed < 5.0
    report(4, "formant oracle", ok,
           f"median F {np.round(med, 1).tolist()} rel err {np.round(rel, 4).tolist()} (<0.10), "
           f"known-root max dev {dev:.2e} Hz (<1), {elapsed:.2f}s")


def test_05_standardization():
    m = extract_all(synthetic_utterance(3.0, seed=3))
    z, stats = standardize(m)
    const = m.data.std(axis=0) < 1e-8
    live = ~const
    mean_dev = float(np.max(np.abs(z.data[:, live].mean(axis=0))))
    var_dev = float(np.max(np.abs(z.data[:, live].var(axis=0) - 1.0)))
    # silence makes most columns constant; those must come back as zeros
    zs, _ = standardize(extract_all(gen_test_signal("silence", 1.0)))
    sil_const = extract_all(gen_test_signal("silence", 1.0)).data.std(axis=0) < 1e-8
    zero_ok = bool(np.all(zs.data[:, sil_const] == 0.0)) and bool(np.all(z.data[:, const] == 0.0))
    ok = mean_dev < 1e-9 and var_dev < 1e-6 and zero_ok and sil_const.sum() > 0
    report(5, "standardization", ok,
           f"|mean| max {mean_dev:.1e} (<1e-9), |var-1| max {var_dev:.1e} (<1e-6), "
           f"constant columns zeroed: {zero_ok} ({int(sil_const.sum())} in silence)")


def test_06_loss_identities():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((40, N_PARAMS))
    b = rng.standard_normal((40, N_PARAMS))
    zero_self = mae(a, a) == 0.0
    worst_self = max(tap_loss(a, a, rng.uniform(0, 10, 40) ** rng.uniform(-5, 5)) for _ in range(50))
    fact = abs(tap_loss(a, b, np.full(40, 3.7)) - 0.5 * mae(a, b))
    ok = zero_self and worst_self == 0.0 and fact <= 1e-12
    report(6, "loss identities", ok,
           f"mae(a,a)={mae(a, a)}, max tap_loss(a,a,w) over 50 w = {worst_self}, "
           f"|tap - 0.5 mae| = {fact:.1e} (<=1e-12)")


def test_07_gradient_verification():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    T, P, h = 6, N_PARAMS, 1e-6
    worst_tap = 0.0
    for _ in range(100):
        a = rng.standard_normal((T, P))
        b = rng.standard_normal((T, P))
        omega = rng.uniform(0.0, 5.0, T)
        t, p = rng.integers(T), rng.integers(P)
        if abs(b[t, p] - a[t, p]) < 1e-3:
            b[t, p] = a[t, p] + 0.5
        g = tap_loss_grad(a, b, omega)[t, p]
        bp, bm = b.copy(), b.copy()
        bp[t, p] += h
        bm[t, p] -= h
        fd = (tap_loss(a, bp, omega) - tap_loss(a, bm, omega)) / (2 * h)
        worst_tap = max(worst_tap, abs(g - fd) / max(abs(g), abs(fd)))
    worst_net = max(gradcheck(seed=s, T=3, hidden=2) for s in range(100))
    elapsed = time.perf_counter() - t0
    ok = worst_tap < 1e-4 and worst_net < 1e-4 and elapsed < 30.0
    report(7, "gradient verification", ok,
           f"tap_loss_grad max rel {worst_tap:.2e}, estimator BPTT max rel {worst_net:.2e} "
           f"over 100 seeds (<1e-4), {elapsed:.1f}s (<30s)")


def _overfit_history():
    w = synthetic_utterance(3.0, seed=0)
    target, _ = standardize(extract_all(w))
    ex = [TrainingExample("utt", stft(w), np.array(target.data))]
    _, _, hist = train(ex, EstimatorConfig(), epochs=300)
    return hist


@pytest.mark.slow
def test_08_estimator_overfit():
    t0 = time.perf_counter()
    h1 = _overfit_history()
    h2 = _overfit_history()
    elapsed = time.perf_counter() - t0
    best = h1.best_so_far()
    final = h1.train_mae[-1]
    monotone = bool(np.all(np.diff(best) <= 0))
    identical = h1.train_mae == h2.train_mae
    ok = final < 0.3 and monotone and identical and len(h1.train_mae) == 300 and elapsed < 600
    report(8, "estimator overfit", ok,
           f"MAE epoch1 {h1.train_mae[0]:.4f} -> epoch300 {final:.4f} (<0.3), best-so-far "
           f"non-increasing {monotone}, bit-identical rerun {identical}, {elapsed:.0f}s for two runs")


def test_09_pai_identities():
    rng = np.random.default_rng(9)
    T = 50
    clean = rng.standard_normal((T, N_PARAMS))
    noisy = clean + rng.standard_normal((T, N_PARAMS))
    r = pai_report(clean, noisy, noisy, clean)
    perfect = bool(np.all(r.ours_vs_noisy == 100.0))
    noop = bool(np.all(r.baseline_vs_noisy == 0.0))
    # error-halving fixture: ours deviates by exactly half of baseline's deviation
    dev = rng.choice([-1.0, 1.0], (T, N_PARAMS)) * rng.uniform(0.5, 2.0, (T, N_PARAMS))
    base = clean + dev
    ours = clean + 0.5 * dev
    r2 = pai_report(clean, noisy, base, ours)
    half = float(np.max(np.abs(r2.ours_vs_baseline - 50.0)))
    mean_half = abs(r2.means["ours_vs_baseline"] - 50.0)
    ok = perfect and noop and half <= 1e-9 and mean_half <= 1e-9 and not r.degenerate_indices
    report(9, "PAI identities", ok,
           f"ours=clean -> 100 everywhere {perfect}, baseline=noisy -> 0 {noop}, "
           f"halving fixture max |pai-50| {half:.1e} (<=1e-9)")


def test_10_cirm_roundtrip():
    rng = np.random.default_rng(10)
    S = rng.standard_normal((60, 257)) + 1j * rng.standard_normal((60, 257))
    X = rng.standard_normal((60, 257)) + 1j * rng.standard_normal((60, 257))
    X[::7, ::11] = 1e-10  # floored bins
    M = compute_cirm(S, X)
    away = np.abs(X) > 1e-6
    rel = float(np.max(np.abs(apply_mask(M, X)[away] - S[away]) / np.abs(S[away])))
    ones = np.ones((60, 257), dtype=complex)
    closed = cirm_mse_loss(ones, np.zeros_like(ones))
    ok = rel < 1e-9 and closed == 0.5
    report(10, "cIRM round-trip", ok,
           f"max rel reconstruction error {rel:.1e} (<1e-9, {int((~away).sum())} floored bins excluded), "
           f"closed-form mse {closed} (==0.5)")


def test_11_mixing_accuracy(tmp_path):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(8000, 48000))
        s = Waveform(rng.uniform(0.05, 0.8) * rng.standard_normal(n), 16000)
        v = Waveform(rng.uniform(0.01, 1.0) * rng.standard_normal(int(rng.integers(4000, 60000))), 16000)
        target = float(rng.uniform(-10.0, 30.0))
        m = mix(s, v, target)
        worst = max(worst, abs(m.realized_snr_db - target))

    src = tmp_path / "src"
    src.mkdir()
    specs = []
    for i in range(5):
        save_wav(src / f"c{i}.wav", synthetic_utterance(2.0, seed=i))
        save_wav(src / f"n{i}.wav", Waveform(0.3 * rng.standard_normal(40000), 16000))
        specs.append(MixSpec(f"u{i}", str(src / f"c{i}.wav"), str(src / f"n{i}.wav"),
                             float(rng.uniform(0, 20)), seed=i, target_len=2.0))
    records, errors = synthesize_corpus(specs, tmp_path / "corpus")
    exact = not errors
    for rec in records:
        c = load_wav(tmp_path / "corpus" / rec["clean"]).samples.astype(np.float32)
        nz = load_wav(tmp_path / "corpus" / rec["noise"]).samples.astype(np.float32)
        x = load_wav(tmp_path / "corpus" / rec["noisy"]).samples.astype(np.float32)
        exact &= bool(np.array_equal(x - c, nz))
        stored = snr_db(c.astype(np.float64), (x - c).astype(np.float64))
        worst = max(worst, abs(stored - rec["snr_requested_db"]))
    ok = worst < 0.01 and exact
    report(11, "mixing accuracy", ok,
           f"max |realized - requested| {worst:.2e} dB over 50 mixes + stored corpus (<0.01), "
           f"stored noisy - clean == noise bit-exact {exact}")


def test_12_end_to_end(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    src = tmp_path / "src"
    src.mkdir()
    for i in range(10):
        save_wav(src / f"u{i:02d}.wav", synthetic_utterance(3.0, seed=100 + i))
    for j in range(3):
        noise = lfilter([1.0], [1.0, -0.3 * j], rng.standard_normal(16000 * 4))
        save_wav(src / f"n{j}.wav", Waveform(0.1 * noise / noise.std(), 16000))
    for name, snr in (("low", 5.0), ("high", 15.0)):
        with open(tmp_path / f"{name}.jsonl", "w") as fh:
            for i in range(10):
                fh.write(json.dumps({"id": f"u{i:02d}", "clean": f"src/u{i:02d}.wav",
                                     "noise": f"src/n{i % 3}.wav", "snr_db": snr, "seed": i}) + "\n")
    d = str(tmp_path)
    steps = [
        ["mix", "--manifest", f"{d}/low.jsonl", "-o", f"{d}/low"],
        ["mix", "--manifest", f"{d}/high.jsonl", "-o", f"{d}/high"],
        ["extract", "--manifest", f"{d}/low/manifest.jsonl", "--field", "clean", "-o", f"{d}/tap/clean"],
        ["extract", "--manifest", f"{d}/low/manifest.jsonl", "--field", "noisy", "-o", f"{d}/tap/noisy"],
        # the higher-SNR mixture of the same clean/noise poses as the enhanced output
        ["extract", "--manifest", f"{d}/high/manifest.jsonl", "--field", "noisy", "-o", f"{d}/tap/ours"],
        ["loss", "--manifest", f"{d}/low/manifest.jsonl", "-o", f"{d}/loss.csv"],
        ["pai", "--clean", f"{d}/tap/clean", "--noisy", f"{d}/tap/noisy", "--baseline", f"{d}/tap/noisy",
         "--ours", f"{d}/tap/ours", "-o", f"{d}/pai"],
    ]
    codes = [cli.main(argv) for argv in steps]

    problems = []
    for line in (tmp_path / "low" / "manifest.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if set(rec) != {"id", "clean", "noise", "noisy", "snr_requested_db", "snr_realized_db", "scale", "split"}:
            problems.append(f"manifest keys {sorted(rec)}")
    for sub in ("clean", "noisy", "ours"):
        files = sorted((tmp_path / "tap" / sub).glob("*.csv"))
        if len(files) != 10:
            problems.append(f"{sub}: {len(files)} TAP files")
        for f in files:
            lines = f.read_text().splitlines()
            if lines[0] != CSV_HEADER or len(lines[0].split(",")) != 26 or len(lines) != 302:
                problems.append(f"{f.name}: bad TAP CSV")
    with open(tmp_path / "loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != 10 or list(rows[0]) != list(cli.LOSS_COLUMNS):
        problems.append("loss CSV schema")
    if not all(np.isfinite(float(r[k])) for r in rows for k in cli.LOSS_COLUMNS[1:]):
        problems.append("non-finite loss values")
    doc = json.loads((tmp_path / "pai" / "pai_report.json").read_text())
    for key in ("parameters", "baseline_vs_noisy", "ours_vs_noisy", "ours_vs_baseline", "means", "degenerate"):
        if key not in doc:
            problems.append(f"pai json missing {key}")
    if doc.get("parameters") != list(PARAMETER_NAMES) or len(doc.get("ours_vs_noisy", [])) != 25:
        problems.append("pai vectors")
    with open(tmp_path / "pai" / "pai_parameters.csv") as fh:
        prow = list(csv.DictReader(fh))
    col = [float(r["ours_vs_baseline"]) for r in prow]
    if len(prow) != 25 or col != sorted(col, reverse=True):
        problems.append("pai CSV not sorted by ours_vs_baseline")
    gain = doc["means"]["ours_vs_noisy"]
    elapsed = time.perf_counter() - t0
    ok = all(c == 0 for c in codes) and not problems and gain > 0 and elapsed < 300
    report(12, "end-to-end smoke", ok,
           f"exit codes {codes}, schema problems {problems or 'none'}, "
           f"degraded-condition mean ours_vs_noisy PAI {gain:.2f} (>0), {elapsed:.0f}s (<300s)")
