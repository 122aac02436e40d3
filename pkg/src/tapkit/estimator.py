"""Recurrent TAP estimator: stacked (bi)LSTM from complex spectrogram frames
to T x 25 parameter estimates, with hand-written BPTT, Adam, and a checksummed
checkpoint format."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .acoustics import N_PARAMS, TapMatrix, as_array, extract_all, standardize
from .acoustics.files import read_tap, write_tap_binary
from .errors import ConfigError, DimensionError, FormatError, IntegrityError, TrainingError
from .signal_core import ComplexSpectrogram, DEFAULT_STFT, load_wav, stft, to_pipeline_rate

log = logging.getLogger(__name__)

CLIP_NORM = 5.0


@dataclass(frozen=True)
class EstimatorConfig:
    num_layers: int = 3
    hidden_size: int = 64
    bidirectional: bool = True
    n_bins: int = DEFAULT_STFT.n_bins
    output_size: int = N_PARAMS
    seed: int = 0
    # optional constant gain on the real/imag STFT features
    input_scale: float = 1.0

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_size < 1 or self.n_bins < 1:
            raise ConfigError("num_layers, hidden_size and n_bins must be positive")
        if self.output_size != N_PARAMS:
            raise ConfigError(f"output_size must be {N_PARAMS}")

    @property
    def input_size(self) -> int:
        return 2 * self.n_bins

    @property
    def directions(self) -> tuple:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)

    def layer_input_size(self, layer: int) -> int:
        if layer == 0:
            return self.input_size
        return self.hidden_size * len(self.directions)


def param_names(cfg: EstimatorConfig) -> list[str]:
    names = []
    for l in range(cfg.num_layers):
        for d in cfg.directions:
            names += [f"l{l}_{d}_W_ih", f"l{l}_{d}_W_hh", f"l{l}_{d}_b"]
    return names + ["out_W", "out_b"]


def param_shapes(cfg: EstimatorConfig) -> dict:
    H = cfg.hidden_size
    shapes = {}
    for l in range(cfg.num_layers):
        for d in cfg.directions:
            shapes[f"l{l}_{d}_W_ih"] = (4 * H, cfg.layer_input_size(l))
            shapes[f"l{l}_{d}_W_hh"] = (4 * H, H)
            shapes[f"l{l}_{d}_b"] = (4 * H,)
    shapes["out_W"] = (cfg.output_size, H * len(cfg.directions))
    shapes["out_b"] = (cfg.output_size,)
    return shapes


def init_estimator(cfg: EstimatorConfig) -> dict:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; gate biases 0 except forget = 1."""
    rng = np.random.default_rng(cfg.seed)
    k = 1.0 / np.sqrt(cfg.hidden_size)
    H = cfg.hidden_size
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_b") and name != "out_b":
            b = np.zeros(shape)
            b[H : 2 * H] = 1.0
            params[name] = b
        elif name == "out_b":
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-k, k, size=shape)
    return params


def features(spec, cfg: EstimatorConfig) -> np.ndarray:
    d = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    if d.ndim != 2 or d.shape[1] != cfg.n_bins:
        raise DimensionError(f"spectrogram has {d.shape[-1]} bins, estimator expects {cfg.n_bins}")
    return np.ascontiguousarray(np.concatenate([d.real, d.imag], axis=1) * cfg.input_scale)


def _check_params(params, cfg):
    shapes = param_shapes(cfg)
    for name, shape in shapes.items():
        if name not in params or params[name].shape != shape:
            raise DimensionError(f"parameter {name} missing or not shaped {shape}")


def _run(params, x, cfg, keep_cache=False):
    cache = []
    inp = x
    for l in range(cfg.num_layers):
        outs = []
        for d in cfg.directions:
            W_ih = params[f"l{l}_{d}_W_ih"]
            W_hh = np.ascontiguousarray(params[f"l{l}_{d}_W_hh"])
            b = params[f"l{l}_{d}_b"]
            xi = inp if d == "fwd" else inp[::-1]
            xi = np.ascontiguousarray(xi)
            xw = np.ascontiguousarray(xi @ W_ih.T + b)
            h, c, acts = _kernels.lstm_forward(xw, W_hh)
            if keep_cache:
                cache.append((l, d, xi, h, c, acts))
            outs.append(h if d == "fwd" else h[::-1])
        inp = np.concatenate(outs, axis=1) if len(outs) > 1 else outs[0]
    y = inp @ params["out_W"].T + params["out_b"]
    return y, inp, cache


def forward(params: dict, spec, cfg: EstimatorConfig) -> TapMatrix:
    _check_params(params, cfg)
    y, _, _ = _run(params, features(spec, cfg), cfg)
    return TapMatrix(y, standardized=True)


def loss_and_grads(params: dict, spec, target, cfg: EstimatorConfig):
    """MAE between forward output and ``target`` plus gradients for every
    parameter by backpropagation through time (subgradient sign(0) = 0)."""
    _check_params(params, cfg)
    x = features(spec, cfg)
    tgt = as_array(target)
    y, top, cache = _run(params, x, cfg, keep_cache=True)
    if tgt.shape != y.shape:
        raise DimensionError(f"target shape {tgt.shape} != output shape {y.shape}")
    diff = y - tgt
    loss = float(np.mean(np.abs(diff)))
    dy = np.sign(diff) / diff.size

    grads = {"out_W": dy.T @ top, "out_b": dy.sum(axis=0)}
    dtop = dy @ params["out_W"]
    H = cfg.hidden_size
    by_layer = {}
    for entry in cache:
        by_layer.setdefault(entry[0], []).append(entry)
    for l in range(cfg.num_layers - 1, -1, -1):
        dx = None
        for j, (_, d, xi, h, c, acts) in enumerate(by_layer[l]):
            W_hh = np.ascontiguousarray(params[f"l{l}_{d}_W_hh"])
            dh = dtop[:, j * H : (j + 1) * H]
            if d == "bwd":
                dh = dh[::-1]
            dpre = _kernels.lstm_backward(np.ascontiguousarray(dh), acts, c, W_hh)
            grads[f"l{l}_{d}_W_ih"] = dpre.T @ xi
            grads[f"l{l}_{d}_W_hh"] = dpre[1:].T @ h[:-1]
            grads[f"l{l}_{d}_b"] = dpre.sum(axis=0)
            dxi = dpre @ params[f"l{l}_{d}_W_ih"]
            if d == "bwd":
                dxi = dxi[::-1]
            dx = dxi if dx is None else dx + dxi
        dtop = dx
    return loss, {k: grads[k] for k in param_names(cfg)}


def clip_gradients(grads: dict, max_norm: float = CLIP_NORM):
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, **kw) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update; returns new (params, state)."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise TrainingError(f"non-finite gradient in {k} ({bad} entries) at step {state.step + 1}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


# ---------------------------------------------------------------------------
# Training

@dataclass
class TrainingExample:
    id: str
    spec: ComplexSpectrogram
    target: np.ndarray  # standardised T x 25


@dataclass
class TrainingHistory:
    train_mae: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.train_mae)) if self.train_mae else np.empty(0)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mae", "val_mae"])
            for i, (tr, va) in enumerate(zip(self.train_mae, self.val_mae), 1):
                w.writerow([i, repr(float(tr)), repr(float(va))])


def evaluate(params, examples, cfg) -> float:
    if not examples:
        return float("nan")
    losses = [np.mean(np.abs(forward(params, ex.spec, cfg).data - ex.target)) for ex in examples]
    return float(np.mean(losses))


def train(examples, cfg: EstimatorConfig, epochs: int, val_examples=(), lr: float = 1e-3,
          clip: float = CLIP_NORM, params=None, state=None, callback=None):
    """One utterance per Adam step, seeded shuffle each epoch.

    The training MAE of an epoch is the mean of the per-utterance losses seen
    before each update. Returns (params, state, history).
    """
    examples = list(examples)
    if not examples:
        raise ConfigError("empty training set")
    if params is None:
        params = init_estimator(cfg)
    if state is None:
        state = AdamState.zeros_like(params, lr=lr)
    rng = np.random.default_rng(cfg.seed + 1)
    history = TrainingHistory()
    for epoch in range(epochs):
        losses = []
        for i in rng.permutation(len(examples)):
            ex = examples[i]
            loss, grads = loss_and_grads(params, ex.spec, ex.target, cfg)
            grads, _ = clip_gradients(grads, clip)
            params, state = adam_step(params, grads, state)
            losses.append(loss)
        history.train_mae.append(float(np.mean(losses)))
        history.val_mae.append(evaluate(params, list(val_examples), cfg))
        if callback is not None:
            callback(epoch, history)
    return params, state, history


def read_training_manifest(path) -> list[dict]:
    base = Path(path).parent
    recs = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            for key in ("clean", "noisy", "tap"):
                if rec.get(key):
                    rec[key] = str(base / rec[key])
            recs.append(rec)
    return recs


def load_examples(records, use_noisy: bool = False, analysis_cfg=None) -> list[TrainingExample]:
    """Spectrograms and standardised targets for manifest records.

    Targets always come from the clean signal; cached ``tap`` files are read
    when present and written when absent.
    """
    from .config import DEFAULT_CONFIG
    acfg = analysis_cfg or DEFAULT_CONFIG
    out = []
    for rec in records:
        clean = to_pipeline_rate(load_wav(rec["clean"]))
        tap_path = rec.get("tap")
        if tap_path and Path(tap_path).exists():
            target = read_tap(tap_path)
            if not target.standardized:
                target, _ = standardize(target)
        else:
            target, _ = standardize(extract_all(clean, acfg))
            if tap_path:
                write_tap_binary(tap_path, target)
        src = to_pipeline_rate(load_wav(rec["noisy"])) if use_noisy and rec.get("noisy") else clean
        out.append(TrainingExample(str(rec["id"]), stft(src), np.array(target.data)))
    return out


# ---------------------------------------------------------------------------
# Gradient verification

def numerical_gradients(params, spec, target, cfg, step=1e-5, names=None):
    out = {}
    for name in names or param_names(cfg):
        p = params[name]
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp = float(np.mean(np.abs(forward(params, spec, cfg).data - target)))
            flat[i] = old - step
            lm = float(np.mean(np.abs(forward(params, spec, cfg).data - target)))
            flat[i] = old
            g.reshape(-1)[i] = (lp - lm) / (2.0 * step)
        out[name] = g
    return out


def relative_error(a, b, floor=1e-6):
    """Elementwise |a - b| / max(|a|, |b|, floor). The floor sits well above
    central-difference roundoff (about eps / step) so near-zero entries are
    judged on absolute error."""
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradcheck(seed: int = 0, T: int = 3, hidden: int = 2, n_bins: int = 5, num_layers: int = 3,
              bidirectional: bool = True, step: float = 1e-5, margin: float = 1e-3):
    """Analytic vs central-difference gradients on a random tiny problem.

    Targets are pushed at least ``margin`` away from the outputs so no |.|
    kink is crossed by the finite-difference step. Returns the max relative
    error over all parameters.
    """
    rng = np.random.default_rng(seed)
    cfg = EstimatorConfig(num_layers=num_layers, hidden_size=hidden, bidirectional=bidirectional,
                          n_bins=n_bins, seed=seed, input_scale=1.0)
    params = init_estimator(cfg)
    for k in params:
        params[k] = params[k] + 0.1 * rng.standard_normal(params[k].shape)
    spec = rng.standard_normal((T, n_bins)) + 1j * rng.standard_normal((T, n_bins))
    y = forward(params, spec, cfg).data
    target = y + rng.standard_normal(y.shape)
    near = np.abs(target - y) < margin
    target[near] = y[near] + margin * np.where(rng.random(near.sum()) < 0.5, -1.0, 1.0) * 2
    _, g_an = loss_and_grads(params, spec, target, cfg)
    g_fd = numerical_gradients(params, spec, target, cfg, step)
    return max(float(relative_error(g_an[k], g_fd[k]).max()) for k in g_an)


# ---------------------------------------------------------------------------
# Checkpoints

_MAGIC = b"TAPE"
_VERSION = 1
_CFG = struct.Struct("<IIBIIQd")


def _pack_tensor(name, arr):
    nb = name.encode()
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _unpack_tensor(buf, off):
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    name = bytes(buf[off : off + n]).decode()
    off += n
    (ndim,) = struct.unpack_from("<B", buf, off)
    off += 1
    shape = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(buf, "<f8", count, off).reshape(shape).astype(np.float64)
    return name, arr, off + 8 * count


def save_checkpoint(path, params: dict, state: AdamState | None, cfg: EstimatorConfig) -> None:
    names = param_names(cfg)
    parts = [_MAGIC, struct.pack("<I", _VERSION),
             _CFG.pack(cfg.num_layers, cfg.hidden_size, int(cfg.bidirectional), cfg.n_bins,
                       cfg.output_size, cfg.seed, cfg.input_scale),
             struct.pack("<I", len(names))]
    parts += [_pack_tensor(n, params[n]) for n in names]
    if state is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BQdddd", 1, state.step, state.lr, state.beta1, state.beta2, state.eps))
        parts += [_pack_tensor(n, state.m[n]) for n in names]
        parts += [_pack_tensor(n, state.v[n]) for n in names]
    body = b"".join(parts)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path, expected: EstimatorConfig | None = None):
    """Returns (params, state or None, cfg). Raises IntegrityError on checksum
    failure and ConfigError on version or configuration mismatch."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 + _CFG.size + 4 + 32 or raw[:4] != _MAGIC:
        raise FormatError(f"{path}: not an estimator checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != _VERSION:
        raise ConfigError(f"{path}: checkpoint version {version}, expected {_VERSION}")
    nl, hs, bi, nb, outs, seed, scale = _CFG.unpack_from(body, 8)
    cfg = EstimatorConfig(nl, hs, bool(bi), nb, outs, seed, scale)
    if expected is not None:
        mism = [k for k, v in asdict(expected).items() if k != "seed" and getattr(cfg, k) != v]
        if mism:
            raise ConfigError(f"{path}: checkpoint config differs in {', '.join(mism)}")
    off = 8 + _CFG.size
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    names = param_names(cfg)
    if count != len(names):
        raise FormatError(f"{path}: {count} tensors, config implies {len(names)}")

    def read_block():
        nonlocal off
        block = {}
        for expect in names:
            name, arr, off = _unpack_tensor(body, off)
            if name != expect:
                raise FormatError(f"{path}: tensor {name!r} where {expect!r} expected")
            block[name] = arr
        return block

    params = read_block()
    (has_state,) = struct.unpack_from("<B", body, off)
    off += 1
    state = None
    if has_state:
        step, lr, b1, b2, eps = struct.unpack_from("<Qdddd", body, off)
        off += struct.calcsize("<Qdddd")
        m = read_block()
        v = read_block()
        state = AdamState(m, v, step, lr, b1, b2, eps)
    if off != len(body):
        raise FormatError(f"{path}: trailing bytes")
    _check_params(params, cfg)
    return params, state, cfg
