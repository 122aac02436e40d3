"""Time the numba kernels against their numpy fallbacks on realistic sizes.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both paths are compiled/imported in one process; the first jit call is
excluded as warm-up. Outputs are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from tapkit import _kernels as K
from tapkit._jit import HAVE_NUMBA


def _cases(rng):
    T = 301  # 3 s of 10 ms frames
    segs = rng.standard_normal((T, 512 + 268))
    r = np.array([np.correlate(f, f, "full")[399:416] for f in rng.standard_normal((T, 400))])
    a, _, _ = K.levinson_np(r, 16)
    H = 64
    xw = rng.standard_normal((T, 4 * H))
    W_hh = rng.uniform(-0.125, 0.125, (4 * H, H))
    h, c, acts = K.lstm_forward_np(xw, W_hh)
    dh = rng.standard_normal((T, H))
    return {
        "yin_difference": ((segs, 512, 267), K.yin_difference_jit, K.yin_difference_np),
        "levinson": ((r, 16), K.levinson_jit, K.levinson_np),
        "durand_kerner": ((a.astype(np.complex128), 100, 1e-10), K.durand_kerner_jit, K.durand_kerner_np),
        "lstm_forward": ((xw, W_hh), K.lstm_forward_jit, K.lstm_forward_np),
        "lstm_backward": ((dh, acts, c, W_hh), K.lstm_backward_jit, K.lstm_backward_np),
    }


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def _first(x):
    return x[0] if isinstance(x, tuple) else x


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return 0
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'jit ms':>10}{'numpy ms':>11}{'speedup':>9}{'max |diff|':>12}")
    for name, (fargs, fj, fn) in _cases(rng).items():
        out_j = fj(*fargs)  # warm-up / compile
        out_n = fn(*fargs)
        a, b = _first(out_j), _first(out_n)
        if name == "durand_kerner":
            # root order can differ between iteration schemes: nearest match
            diff = float(np.max(np.abs(a[:, :, None] - b[:, None, :]).min(axis=2)))
        else:
            diff = float(np.max(np.abs(a - b)))
        tj = _best(fj, fargs, args.repeat)
        tn = _best(fn, fargs, args.repeat)
        print(f"{name:<16}{1e3 * tj:>10.2f}{1e3 * tn:>11.2f}{tn / tj:>9.1f}{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
