"""TAP matrix file formats: CSV (9 significant digits) and the ``TAPM`` binary."""
import io
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from . import N_PARAMS, PARAMETER_NAMES, StandardizationStats, TapMatrix

CSV_HEADER = "frame," + ",".join(PARAMETER_NAMES)

_MAGIC = b"TAPM"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQBII")


def write_tap_csv(path, m: TapMatrix) -> None:
    lines = [CSV_HEADER]
    for t, row in enumerate(m.data):
        lines.append(f"{t}," + ",".join(f"{v:.9g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tap_csv(path, standardized=False) -> TapMatrix:
    text = Path(path).read_text()
    head, _, body = text.partition("\n")
    if head.strip() != CSV_HEADER:
        raise FormatError(f"{path}: unexpected TAP CSV header")
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, N_PARAMS + 1))
    if data.shape[1] != N_PARAMS + 1:
        raise FormatError(f"{path}: expected {N_PARAMS + 1} columns")
    return TapMatrix(data[:, 1:], standardized=standardized)


def write_stats_csv(path, stats: StandardizationStats) -> None:
    lines = ["parameter,mean,std"]
    for name, mu, sd in zip(PARAMETER_NAMES, stats.mean, stats.std):
        lines.append(f"{name},{mu:.17g},{sd:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_stats_csv(path) -> StandardizationStats:
    rows = Path(path).read_text().strip().splitlines()[1:]
    vals = np.array([[float(v) for v in r.split(",")[1:]] for r in rows])
    if vals.shape != (N_PARAMS, 2):
        raise FormatError(f"{path}: expected {N_PARAMS} mean/std rows")
    return StandardizationStats(vals[:, 0], vals[:, 1])


def write_tap_binary(path, m: TapMatrix) -> None:
    T = m.n_frames
    parts = [
        _HEADER.pack(_MAGIC, _VERSION, T, N_PARAMS, int(m.standardized), m.frame_hop, m.sample_rate),
        np.ascontiguousarray(m.data, dtype="<f8").tobytes(),
    ]
    if m.standardized:
        st = m.stats
        if st is None:
            st = StandardizationStats(np.zeros(N_PARAMS), np.zeros(N_PARAMS))
        parts.append(np.stack([st.mean, st.std]).astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_tap_binary(path) -> TapMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, T, P, std_flag, hop, rate = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION or P != N_PARAMS:
        raise FormatError(f"{path}: unsupported version {version} / P={P}")
    need = _HEADER.size + 8 * T * P + (16 * P if std_flag else 0)
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(raw)}")
    data = np.frombuffer(raw, "<f8", T * P, _HEADER.size).reshape(T, P)
    stats = None
    if std_flag:
        s = np.frombuffer(raw, "<f8", 2 * P, _HEADER.size + 8 * T * P).reshape(2, P)
        stats = StandardizationStats(s[0].copy(), s[1].copy())
    return TapMatrix(data, hop, rate, bool(std_flag), stats)


def read_tap(path) -> TapMatrix:
    path = Path(path)
    if path.suffix == ".csv":
        return read_tap_csv(path)
    return read_tap_binary(path)
