import json

import numpy as np
import pytest

from tapkit.errors import ConfigError, DimensionError, SizeError
from tapkit.signal_core import Waveform, stft
from tapkit.taploss import (LossWeights, PaiReport, aggregate_pai, apply_mask, cirm_mse_loss,
                            composite_demucs_loss, composite_fullsubnet_loss, compress_mask,
                            compute_cirm, mae, mae_per_parameter, multires_stft_loss, pai_report,
                            smooth_energy_weights, stft_loss_terms, tap_loss, tap_loss_from_spectrogram,
                            tap_loss_grad, waveform_l1_loss)


def test_mae_examples(rng):
    a = rng.standard_normal((7, 25))
    b = rng.standard_normal((7, 25))
    assert mae(a, a) == 0.0
    assert mae(np.ones((3, 25)), np.zeros((3, 25))) == 1.0
    brute = 0.0
    for t in range(7):
        for p in range(25):
            brute += abs(a[t, p] - b[t, p])
    assert abs(mae(a, b) - brute / 175) < 1e-12
    assert mae(a, b) == mae(b, a)


def test_mae_shape_mismatch():
    with pytest.raises(DimensionError):
        mae(np.zeros((3, 25)), np.zeros((4, 25)))
    with pytest.raises(DimensionError):
        mae_per_parameter(np.zeros((3, 25)), np.zeros((3, 24)))


def test_mae_per_parameter(rng):
    a = rng.standard_normal((9, 25))
    b = a.copy()
    b[:, 4] += 2.0
    e = mae_per_parameter(a, b)
    assert e[4] == pytest.approx(2.0) and np.count_nonzero(e) == 1
    c = rng.standard_normal((9, 25))
    brute = np.array([np.mean([abs(a[t, p] - c[t, p]) for t in range(9)]) for p in range(25)])
    assert np.max(np.abs(mae_per_parameter(a, c) - brute)) < 1e-12


def test_smooth_weights():
    assert smooth_energy_weights(np.zeros(3), "raw") == pytest.approx([0.5] * 3)
    assert np.all(smooth_energy_weights(np.full(5, 3.0)) == 0.5)
    w = smooth_energy_weights(np.array([1e-6, 1e-2, 1e2]))
    z = np.log10(np.array([1e-6, 1e-2, 1e2]) + 1e-10)
    z = (z - z.mean()) / z.std()
    assert np.allclose(w, 1 / (1 + np.exp(-z)), rtol=1e-12)
    assert np.all(np.diff(w) > 0) and np.all((w > 0) & (w < 1))


def test_smooth_weights_raw_large_values_bounded():
    w = smooth_energy_weights(np.array([0.0, 1e3, 1e6]), "raw")
    assert np.all(np.isfinite(w)) and w[-1] == 1.0


def test_tap_loss_brute_force(rng):
    a = rng.standard_normal((5, 25))
    b = rng.standard_normal((5, 25))
    omega = rng.uniform(0, 3, 5)
    w = smooth_energy_weights(omega)
    brute = sum(w[t] * abs(a[t, p] - b[t, p]) for t in range(5) for p in range(25)) / 125
    assert abs(tap_loss(a, b, omega) - brute) < 1e-12
    # literal form: weight each matrix, then MAE
    assert abs(tap_loss(a, b, omega) - mae(a * w[:, None], b * w[:, None])) < 1e-12


def test_tap_loss_properties(rng):
    a = rng.standard_normal((6, 25))
    b = rng.standard_normal((6, 25))
    om = rng.uniform(0, 1, 6)
    assert tap_loss(a, b, om) >= 0
    assert tap_loss(a, b, om) == pytest.approx(tap_loss(b, a, om))
    c = b.copy()
    c[2, 3] = a[2, 3] + 2 * (b[2, 3] - a[2, 3])
    assert tap_loss(a, c, om) >= tap_loss(a, b, om)


def test_tap_loss_omega_length():
    with pytest.raises(DimensionError):
        tap_loss(np.zeros((3, 25)), np.zeros((3, 25)), np.zeros(4))


def test_tap_loss_grad_closed_form():
    a = np.zeros((4, 25))
    b = a.copy()
    b[1, 7] = 1.0
    g = tap_loss_grad(a, b, np.full(4, 2.0))
    assert g[1, 7] == pytest.approx(0.5 / 100)
    assert np.count_nonzero(g) == 1
    assert not tap_loss_grad(a, a, np.ones(4)).any()


def test_tap_loss_grad_finite_differences(rng):
    a = rng.standard_normal((4, 25))
    b = a + rng.choice([-1, 1], (4, 25)) * rng.uniform(0.1, 1.0, (4, 25))
    om = rng.uniform(0, 4, 4)
    g = tap_loss_grad(a, b, om)
    h = 1e-6
    for _ in range(30):
        t, p = rng.integers(4), rng.integers(25)
        bp, bm = b.copy(), b.copy()
        bp[t, p] += h
        bm[t, p] -= h
        fd = (tap_loss(a, bp, om) - tap_loss(a, bm, om)) / (2 * h)
        assert abs(fd - g[t, p]) / abs(g[t, p]) < 1e-6


def test_tap_loss_from_spectrogram(rng):
    w = Waveform(rng.standard_normal(1600), 16000)
    spec = stft(w)
    a = rng.standard_normal((spec.n_frames, 25))
    b = rng.standard_normal((spec.n_frames, 25))
    from tapkit.signal_core import frame_energy
    assert tap_loss_from_spectrogram(a, b, spec) == tap_loss(a, b, frame_energy(spec))


def test_waveform_l1(rng):
    s = Waveform(rng.standard_normal(100), 16000)
    assert waveform_l1_loss(s, s) == 0.0
    assert waveform_l1_loss(s, Waveform(s.samples + 0.1, 16000)) == pytest.approx(0.1)
    t = Waveform(rng.standard_normal(100), 16000)
    assert abs(waveform_l1_loss(s, t) - sum(abs(x - y) for x, y in zip(s.samples, t.samples)) / 100) < 1e-12
    with pytest.raises(DimensionError):
        waveform_l1_loss(s, Waveform(np.zeros(99), 16000))


def test_multires_stft(rng):
    s = Waveform(rng.standard_normal(8000), 16000)
    assert multires_stft_loss(s, s) == 0.0
    double = Waveform(2 * s.samples, 16000)
    for res in ((512, 50, 240), (1024, 120, 600), (2048, 240, 1200)):
        sc, _ = stft_loss_terms(s, double, *res)
        assert sc == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(SizeError):
        multires_stft_loss(Waveform(np.zeros(1000), 16000), Waveform(np.zeros(1000), 16000))


def test_multires_componentwise_oracle(rng):
    from scipy.signal import stft as sp_stft
    s = rng.standard_normal(6000)
    y = s + 0.3 * rng.standard_normal(6000)
    total = 0.0
    for n_fft, hop, win in ((512, 50, 240), (1024, 120, 600), (2048, 240, 1200)):
        pad = (n_fft - win) // 2
        wnd = np.pad(np.hanning(win + 1)[:-1], (pad, n_fft - win - pad))
        mags = []
        for x in (s, y):
            xp = np.pad(x, n_fft // 2, mode="reflect")
            n = 1 + (xp.size - n_fft) // hop
            frames = np.stack([xp[i * hop : i * hop + n_fft] for i in range(n)])
            mags.append(np.abs(np.fft.rfft(frames * wnd, axis=1)))
        S, Y = mags
        total += np.linalg.norm(S - Y) / np.linalg.norm(S)
        total += np.mean(np.abs(np.log(S + 1e-7) - np.log(Y + 1e-7)))
    got = multires_stft_loss(Waveform(s, 16000), Waveform(y, 16000))
    assert abs(got - total) < 1e-9


def test_composite_demucs(rng):
    s = Waveform(rng.standard_normal(4000), 16000)
    sh = Waveform(s.samples + 0.2 * rng.standard_normal(4000), 16000)
    a = rng.standard_normal((26, 25))
    b = rng.standard_normal((26, 25))
    om = rng.uniform(0, 1, 26)
    lw, lt, ls = waveform_l1_loss(s, sh), tap_loss(a, b, om), multires_stft_loss(s, sh)
    assert composite_demucs_loss(s, sh, a, b, om, LossWeights(0, 0)) == lw
    got = composite_demucs_loss(s, sh, a, b, om, LossWeights(1.0, 0.3))
    assert abs(got - (lw + lt + 0.3 * ls)) < 1e-12
    # affine in (lambda1, lambda2)
    pts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (2.5, 0.7)]
    v = [composite_demucs_loss(s, sh, a, b, om, LossWeights(l1, l2)) for l1, l2 in pts]
    assert abs(v[3] - (v[0] + 2.5 * (v[1] - v[0]) + 0.7 * (v[2] - v[0]))) < 1e-12


def test_loss_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda1, w.lambda2, w.gamma) == (1.0, 0.3, 0.03)
    with pytest.raises(ConfigError):
        LossWeights(-1.0)


def test_cirm_examples(rng):
    X = rng.standard_normal((4, 257)) + 1j * rng.standard_normal((4, 257))
    assert np.allclose(compute_cirm(X, X), 1.0)
    assert not compute_cirm(np.zeros_like(X), X).any()
    S = rng.standard_normal((4, 257)) + 1j * rng.standard_normal((4, 257))
    M = compute_cirm(S, X)
    assert np.allclose(apply_mask(M, X), S, rtol=1e-12)
    with pytest.raises(DimensionError):
        compute_cirm(S, X[:, :10])


def test_cirm_floor_and_compression():
    X = np.array([[0.0, 1e-12, 1.0]], complex)
    S = np.ones_like(X)
    M = compute_cirm(S, X)
    assert np.all(np.isfinite(M))
    assert abs(M[0, 1]) == pytest.approx(1e8)
    v = np.array([-1e6, -3.0, 0.0, 3.0, 1e6])
    c = compress_mask(v)
    ref = 10 * (1 - np.exp(-0.1 * v[1:4])) / (1 + np.exp(-0.1 * v[1:4]))
    assert np.allclose(c[1:4], ref)
    assert c[0] == -10.0 and c[-1] == 10.0
    Mc = compute_cirm(S, X, compress=True)
    assert np.all(np.abs(Mc.real) <= 10) and np.all(np.abs(Mc.imag) <= 10)


def test_cirm_mse(rng):
    a = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    b = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    assert cirm_mse_loss(a, a) == 0.0
    assert cirm_mse_loss(a + 1, a) == pytest.approx(0.5)
    brute = sum((a[i, j].real - b[i, j].real) ** 2 + (a[i, j].imag - b[i, j].imag) ** 2
                for i in range(3) for j in range(5)) / 30
    assert abs(cirm_mse_loss(a, b) - brute) < 1e-12


def test_composite_fullsubnet(rng):
    m1 = rng.standard_normal((3, 5)) + 0j
    m2 = rng.standard_normal((3, 5)) + 0j
    a = rng.standard_normal((3, 25))
    b = rng.standard_normal((3, 25))
    om = np.ones(3)
    got = composite_fullsubnet_loss(m1, m2, a, b, om, LossWeights(gamma=0.03))
    assert abs(got - (cirm_mse_loss(m1, m2) + 0.03 * tap_loss(a, b, om))) < 1e-12


# --- PAI -------------------------------------------------------------------

def _quad(rng, T=30):
    clean = rng.standard_normal((T, 25))
    noisy = clean + rng.standard_normal((T, 25))
    base = clean + 0.7 * (noisy - clean)
    ours = clean + 0.4 * (noisy - clean)
    return clean, noisy, base, ours


def test_pai_identities(rng):
    c, x, b, o = _quad(rng)
    r = pai_report(c, x, x, c)
    assert np.all(r.baseline_vs_noisy == 0.0)
    assert np.all(r.ours_vs_noisy == 100.0)
    r = pai_report(c, x, x, x)
    assert np.all(r.ours_vs_noisy == 0.0)


def test_pai_values_and_scale_invariance(rng):
    c, x, b, o = _quad(rng)
    r = pai_report(c, x, b, o)
    assert np.allclose(r.baseline_vs_noisy, 30.0)
    assert np.allclose(r.ours_vs_noisy, 60.0)
    assert np.allclose(r.ours_vs_baseline, 100 * (1 - 0.4 / 0.7))
    k = 3.7
    r2 = pai_report(c, c + k * (x - c), c + k * (b - c), c + k * (o - c))
    assert np.allclose(r2.ours_vs_baseline, r.ours_vs_baseline, rtol=1e-12)


def test_pai_hundred_only_at_zero_error(rng):
    c, x, b, o = _quad(rng)
    o2 = o.copy()
    o2[:, :5] = c[:, :5]
    r = pai_report(c, x, b, o2)
    assert np.all(r.ours_vs_noisy[:5] == 100.0)
    assert np.all(r.ours_vs_noisy[5:] < 100.0)


def test_pai_degenerate(rng):
    c, x, b, o = _quad(rng)
    x = x.copy()
    x[:, 2] = c[:, 2]
    r = pai_report(c, x, b, o)
    assert 2 in r.degenerate["baseline_vs_noisy"]
    assert 2 in r.degenerate_indices
    assert np.all(np.isfinite(r.baseline_vs_noisy))
    keep = np.arange(25) != 2
    assert r.means["baseline_vs_noisy"] == pytest.approx(r.baseline_vs_noisy[keep].mean())


def test_pai_json_round_trip(rng):
    r = pai_report(*_quad(rng))
    d = json.loads(r.to_json())
    assert set(d) >= {"parameters", "baseline_vs_noisy", "ours_vs_noisy", "ours_vs_baseline", "means", "degenerate"}
    back = PaiReport.from_dict(d)
    assert np.array_equal(back.ours_vs_baseline, r.ours_vs_baseline)


def test_aggregate_pai(rng):
    reps = [pai_report(*_quad(np.random.default_rng(s))) for s in range(3)]
    agg = aggregate_pai(reps)
    assert np.allclose(agg.ours_vs_noisy, np.mean([r.ours_vs_noisy for r in reps], axis=0))
    with pytest.raises(ConfigError):
        aggregate_pai([])
