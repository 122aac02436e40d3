"""``tapkit`` command line: extract, mix, train, gradcheck, loss, pai.

Exit codes: 0 success, 1 usage or input error, 2 partial failure of a batch,
3 integrity or verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .acoustics import (PARAMETER_NAMES, apply_standardization, destandardize, extract_all,
                        standardize)
from .acoustics.files import (read_stats_csv, read_tap, write_stats_csv, write_tap_binary,
                              write_tap_csv)
from .config import load_config
from .dataset import DEFAULT_SNR_RANGE, MixSpec, read_mix_manifest, synthesize_corpus
from .errors import AlignmentError, ConfigError, DimensionError, TapError
from .signal_core import frame_energy, load_wav, stft, to_pipeline_rate
from .taploss import (LossWeights, aggregate_pai, cirm_mse_loss, compute_cirm,
                      multires_stft_loss, pai_report, tap_loss, waveform_l1_loss)

log = logging.getLogger("tapkit")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_VERIFY = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4
LOSS_COLUMNS = ("utt_id", "l_wave", "l_stft", "l_tap", "l_demucs", "l_cirm", "l_fullsubnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 means partial failure here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _check_format(args, allowed, default):
    fmt = args.format or default
    if fmt not in allowed:
        raise UsageError(f"--format {fmt} not supported by {args.command} (use {', '.join(allowed)})")
    return fmt


def _map(fn, items, jobs):
    """Ordered map, optionally over a process pool."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# extract

def _manifest_inputs(path, field):
    base = Path(path).parent
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            if field not in rec:
                raise ConfigError(f"manifest record {rec.get('id')} has no {field!r} field")
            out.append((str(rec["id"]), str(base / rec[field])))
    return out


def _extract_one(job):
    utt_id, audio, out_dir, fmt, do_std, config_path = job
    try:
        acfg = load_config(config_path)
        m = extract_all(load_wav(audio), acfg)
        stats = None
        if do_std:
            m, stats = standardize(m)
        target = Path(out_dir) / (f"{utt_id}.csv" if fmt == "csv" else f"{utt_id}.tap")
        if fmt == "csv":
            write_tap_csv(target, m)
        else:
            write_tap_binary(target, m)
        if stats is not None:
            write_stats_csv(Path(out_dir) / f"{utt_id}.stats.csv", stats)
        return utt_id, str(target), None
    except (OSError, TapError, ValueError) as exc:
        return utt_id, audio, f"{type(exc).__name__}: {exc}"


def cmd_extract(args):
    fmt = _check_format(args, ("csv", "binary"), "csv")
    if args.manifest:
        inputs = _manifest_inputs(args.manifest, args.field)
    else:
        inputs = [(Path(p).stem, p) for p in args.audio]
    if not inputs:
        raise UsageError("no input audio given")
    ids = [i for i, _ in inputs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate utterance ids among inputs")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, str(p), str(out), fmt, args.standardize, args.config) for i, p in inputs]
    results = _map(_extract_one, jobs, args.jobs)
    failed = [(i, p, err) for i, p, err in results if err]
    log_path = out / "errors.log"
    if failed:
        log_path.write_text("".join(f"{i}\t{p}\t{err}\n" for i, p, err in failed))
        for i, p, err in failed:
            log.error("%s: %s", p, err)
    elif log_path.exists():
        log_path.unlink()
    print(f"extracted {len(results) - len(failed)}/{len(results)} files into {out}")
    if failed:
        return EXIT_PARTIAL if len(failed) < len(results) else EXIT_USAGE
    return EXIT_OK


# ---------------------------------------------------------------------------
# mix

def _mix_specs_from_files(args):
    clean = list(args.clean)
    noise = list(args.noise)
    if not clean or not noise:
        raise UsageError("mix needs --manifest or both --clean and --noise")
    rng = np.random.default_rng(args.seed)
    lo, hi = args.snr_range
    specs = []
    n_dev = int(round(args.dev_fraction * len(clean)))
    for k, path in enumerate(clean):
        snr = args.snr if args.snr is not None else float(rng.uniform(lo, hi))
        specs.append(MixSpec(
            id=Path(path).stem,
            clean_path=str(path),
            noise_path=str(noise[int(rng.integers(len(noise)))]),
            snr_db=snr,
            seed=int(rng.integers(2**63)),
            target_len=args.target_len,
            split="dev" if k >= len(clean) - n_dev else "train",
        ))
    return specs


def cmd_mix(args):
    _check_format(args, ("jsonl",), "jsonl")
    if args.manifest:
        specs = read_mix_manifest(args.manifest)
        if args.snr is not None:
            specs = [MixSpec(s.id, s.clean_path, s.noise_path, args.snr, s.seed, s.target_len, s.split)
                     for s in specs]
    else:
        specs = _mix_specs_from_files(args)
    if args.jobs > 1:
        log.info("mix runs sequentially; --jobs ignored")
    records, errors = synthesize_corpus(specs, args.out)
    print(f"mixed {len(records)}/{len(specs)} entries into {args.out}")
    if errors:
        Path(args.out, "errors.log").write_text("".join(f"{i}\t{e}\n" for i, e in errors))
        return EXIT_PARTIAL if records else EXIT_USAGE
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / gradcheck

def cmd_train(args):
    from .estimator import (AdamState, EstimatorConfig, init_estimator, load_checkpoint,
                            load_examples, read_training_manifest, save_checkpoint, train)
    _check_format(args, ("csv",), "csv")
    if args.jobs > 1:
        log.info("training is single-threaded; --jobs ignored")
    records = read_training_manifest(args.manifest)
    if any("split" in r for r in records):
        train_recs = [r for r in records if r.get("split", "train") == "train"]
        val_recs = [r for r in records if r.get("split") == "dev"]
    else:
        train_recs, val_recs = records, []
    if args.val_manifest:
        val_recs = read_training_manifest(args.val_manifest)
    cfg = EstimatorConfig(num_layers=args.layers, hidden_size=args.hidden,
                          bidirectional=not args.unidirectional, seed=args.seed)
    params = state = None
    if args.resume:
        params, state, cfg = load_checkpoint(args.resume, expected=cfg)
    acfg = load_config(args.config)
    examples = load_examples(train_recs, use_noisy=args.use_noisy, analysis_cfg=acfg)
    val = load_examples(val_recs, use_noisy=args.use_noisy, analysis_cfg=acfg)
    if params is None:
        params = init_estimator(cfg)
        state = AdamState.zeros_like(params, lr=args.lr)

    def report(epoch, hist):
        log.info("epoch %d train_mae %.6f val_mae %.6f", epoch + 1, hist.train_mae[-1], hist.val_mae[-1])

    params, state, hist = train(examples, cfg, args.epochs, val, lr=args.lr, clip=args.clip,
                                params=params, state=state, callback=report)
    save_checkpoint(args.checkpoint, params, state, cfg)
    if args.history:
        hist.write_csv(args.history)
    last = f"{hist.train_mae[-1]:.6f}" if hist.train_mae else "n/a"
    print(f"trained {args.epochs} epochs on {len(examples)} utterances; final train_mae {last}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .estimator import gradcheck
    worst = 0.0
    for k in range(args.trials):
        err = gradcheck(seed=args.seed + k, T=args.frames, hidden=args.hidden, n_bins=args.bins,
                        num_layers=args.layers)
        worst = max(worst, err)
    ok = worst < GRADCHECK_TOL
    print(f"max relative error {worst:.3e} over {args.trials} trial(s): {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# loss

def _audio_pairs(args):
    """(id, clean path, noisy path or None, enhanced path) tuples."""
    if args.manifest:
        base = Path(args.manifest).parent
        pairs = []
        for line in Path(args.manifest).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            uid = str(rec["id"])
            noisy = str(base / rec["noisy"]) if rec.get("noisy") else None
            if args.enhanced:
                enh = str(Path(args.enhanced) / f"{uid}.wav")
            else:
                enh = str(base / rec[args.enhanced_field])
            pairs.append((uid, str(base / rec["clean"]), noisy, enh))
        return pairs
    if not (args.clean and args.enhanced):
        raise UsageError("loss needs --manifest, or --clean and --enhanced directories")
    clean = {p.stem: p for p in sorted(Path(args.clean).glob("*.wav"))}
    enh = {p.stem: p for p in sorted(Path(args.enhanced).glob("*.wav"))}
    noisy = {p.stem: p for p in sorted(Path(args.noisy).glob("*.wav"))} if args.noisy else {}
    missing = sorted(set(clean) ^ set(enh))
    if missing:
        raise AlignmentError(f"ids not present in both clean and enhanced: {', '.join(missing)}")
    return [(k, str(clean[k]), str(noisy[k]) if k in noisy else None, str(enh[k])) for k in clean]


def _loss_row(job):
    uid, clean_p, noisy_p, enh_p, weights, mode, config_path = job
    try:
        acfg = load_config(config_path)
        s = to_pipeline_rate(load_wav(clean_p))
        s_hat = to_pipeline_rate(load_wav(enh_p))
        if len(s) != len(s_hat):
            raise DimensionError(f"length mismatch: clean {len(s)} vs enhanced {len(s_hat)}")
        a_clean, stats = standardize(extract_all(s, acfg))
        a_enh = apply_standardization(extract_all(s_hat, acfg), stats)
        spec_enh = stft(s_hat)
        l_wave = waveform_l1_loss(s, s_hat)
        l_stft = multires_stft_loss(s, s_hat)
        l_tap = tap_loss(a_clean, a_enh, frame_energy(spec_enh), mode)
        l_demucs = l_wave + weights.lambda1 * l_tap + weights.lambda2 * l_stft
        if noisy_p is not None:
            x = to_pipeline_rate(load_wav(noisy_p))
            if len(x) != len(s):
                raise DimensionError(f"length mismatch: clean {len(s)} vs noisy {len(x)}")
            X = stft(x)
            l_cirm = cirm_mse_loss(compute_cirm(stft(s), X, compress=True),
                                   compute_cirm(spec_enh, X, compress=True))
            l_full = l_cirm + weights.gamma * l_tap
        else:
            l_cirm = l_full = float("nan")
        return (uid, l_wave, l_stft, l_tap, l_demucs, l_cirm, l_full), None
    except (OSError, TapError, ValueError) as exc:
        return (uid,), f"{type(exc).__name__}: {exc}"


def cmd_loss(args):
    fmt = _check_format(args, ("csv", "jsonl"), "csv")
    weights = LossWeights(args.lambda1, args.lambda2, args.gamma)
    pairs = _audio_pairs(args)
    jobs = [(u, c, n, e, weights, args.mode, args.config) for u, c, n, e in pairs]
    results = _map(_loss_row, jobs, args.jobs)
    rows = [r for r, err in results if err is None]
    failed = [(r[0], err) for r, err in results if err is not None]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOSS_COLUMNS)
            for r in rows:
                w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    else:
        with open(out, "w") as fh:
            for r in rows:
                fh.write(json.dumps(dict(zip(LOSS_COLUMNS, r))) + "\n")
    meta = {"lambda1": weights.lambda1, "lambda2": weights.lambda2, "gamma": weights.gamma,
            "mode": args.mode, "columns": list(LOSS_COLUMNS), "n_pairs": len(pairs),
            "failed": [{"id": i, "error": e} for i, e in failed]}
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"weights lambda1={weights.lambda1} lambda2={weights.lambda2} gamma={weights.gamma}")
    print(f"loss rows {len(rows)}/{len(pairs)} written to {out}")
    for i, e in failed:
        log.error("%s: %s", i, e)
    if failed:
        return EXIT_PARTIAL if rows else EXIT_USAGE
    return EXIT_OK


# ---------------------------------------------------------------------------
# pai

def _tap_files(directory):
    found = {}
    for p in sorted(Path(directory).iterdir()):
        if p.name.endswith(".stats.csv"):
            continue
        if p.suffix in (".csv", ".tap"):
            if p.stem in found:
                raise ConfigError(f"{directory}: both CSV and binary TAP files for {p.stem}")
            found[p.stem] = p
    return found


def _load_raw_tap(path):
    """TAP matrix in raw units; standardized files are inverted through their
    embedded or sidecar statistics."""
    m = read_tap(path)
    sidecar = path.with_name(f"{path.stem}.stats.csv")
    stats = m.stats
    if stats is None and sidecar.exists():
        stats = read_stats_csv(sidecar)
    if m.standardized or (path.suffix == ".csv" and sidecar.exists()):
        if stats is None:
            raise ConfigError(f"{path}: standardized matrix without statistics")
        m = destandardize(m, stats)
    return m


def cmd_pai(args):
    _check_format(args, ("csv",), "csv")
    dirs = {"clean": args.clean, "noisy": args.noisy, "baseline": args.baseline, "ours": args.ours}
    files = {k: _tap_files(d) for k, d in dirs.items()}
    all_ids = set().union(*(set(f) for f in files.values()))
    offenders = sorted(i for i in all_ids if any(i not in f for f in files.values()))
    if offenders:
        detail = "; ".join(f"{i} (missing from {', '.join(k for k, f in files.items() if i not in f)})"
                           for i in offenders)
        raise AlignmentError(f"utterance ids differ across directories: {detail}")
    if not all_ids:
        raise UsageError("no TAP files found")

    per_utt = {}
    for uid in sorted(all_ids):
        raw = {k: _load_raw_tap(files[k][uid]) for k in dirs}
        shapes = {k: m.shape for k, m in raw.items()}
        if len(set(shapes.values())) != 1:
            raise AlignmentError(f"{uid}: frame counts differ {shapes}")
        clean, stats = standardize(raw["clean"])
        z = {k: apply_standardization(raw[k], stats) for k in ("noisy", "baseline", "ours")}
        per_utt[uid] = pai_report(clean, z["noisy"], z["baseline"], z["ours"])
    corpus = aggregate_pai(per_utt.values())

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = corpus.to_dict()
    doc["mean_of_means"] = float(np.mean(list(corpus.means.values())))
    doc["utterances"] = {u: r.to_dict() for u, r in per_utt.items()}
    (out / "pai_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    order = sorted(range(len(PARAMETER_NAMES)), key=lambda p: (-corpus.ours_vs_baseline[p], p))
    degen = set(corpus.degenerate_indices)
    with open(out / "pai_parameters.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "baseline_vs_noisy", "ours_vs_noisy", "ours_vs_baseline", "degenerate"])
        for p in order:
            w.writerow([PARAMETER_NAMES[p], repr(float(corpus.baseline_vs_noisy[p])),
                        repr(float(corpus.ours_vs_noisy[p])), repr(float(corpus.ours_vs_baseline[p])),
                        int(p in degen)])
    for name, v in corpus.means.items():
        print(f"{name}: {v:.3f}")
    print(f"mean of means: {doc['mean_of_means']:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="analysis config file (key = value lines)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for batch commands")
    common.add_argument("--format", choices=("csv", "jsonl", "binary"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="tapkit", description="Temporal acoustic parameter toolkit")
    p.add_argument("--version", action="version", version=f"tapkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("extract", parents=[common], help="extract 25 TAPs per frame")
    e.add_argument("audio", nargs="*")
    e.add_argument("-o", "--out", required=True)
    e.add_argument("--manifest", help="JSONL manifest; outputs are named by record id")
    e.add_argument("--field", default="clean", help="manifest field holding the audio path")
    e.add_argument("--standardize", action="store_true", help="z-score per utterance, write stats sidecar")
    e.set_defaults(func=cmd_extract)

    m = sub.add_parser("mix", parents=[common], help="synthesize noisy/clean pairs")
    m.add_argument("-o", "--out", required=True)
    m.add_argument("--manifest", help="mix spec JSONL {id, clean, noise, snr_db, seed, target_len, split}")
    m.add_argument("--clean", nargs="*", default=[])
    m.add_argument("--noise", nargs="*", default=[])
    m.add_argument("--snr", type=float, help="fixed SNR in dB (overrides sampling)")
    m.add_argument("--snr-range", type=float, nargs=2, default=DEFAULT_SNR_RANGE, metavar=("LO", "HI"))
    m.add_argument("--target-len", type=float, default=3.0, help="seconds")
    m.add_argument("--dev-fraction", type=float, default=0.0)
    m.set_defaults(func=cmd_mix)

    t = sub.add_parser("train", parents=[common], help="train the TAP estimator")
    t.add_argument("--manifest", required=True)
    t.add_argument("--val-manifest")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--history")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--layers", type=int, default=3)
    t.add_argument("--unidirectional", action="store_true")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--clip", type=float, default=5.0)
    t.add_argument("--use-noisy", action="store_true", help="noisy inputs with clean-signal targets")
    t.add_argument("--resume", help="continue from a checkpoint")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gradcheck", parents=[common], help="verify estimator gradients")
    g.add_argument("--trials", type=int, default=1)
    g.add_argument("--frames", type=int, default=3)
    g.add_argument("--hidden", type=int, default=2)
    g.add_argument("--bins", type=int, default=5)
    g.add_argument("--layers", type=int, default=3)
    g.set_defaults(func=cmd_gradcheck)

    lo = sub.add_parser("loss", parents=[common], help="evaluate losses on clean/enhanced pairs")
    lo.add_argument("-o", "--out", required=True)
    lo.add_argument("--manifest", help="corpus manifest with clean and noisy fields")
    lo.add_argument("--enhanced", help="directory of {id}.wav enhanced signals")
    lo.add_argument("--enhanced-field", default="noisy", help="manifest field used when --enhanced is absent")
    lo.add_argument("--clean", help="directory of clean {id}.wav (without --manifest)")
    lo.add_argument("--noisy", help="directory of noisy {id}.wav (without --manifest)")
    lo.add_argument("--lambda1", type=float, default=1.0)
    lo.add_argument("--lambda2", type=float, default=0.3)
    lo.add_argument("--gamma", type=float, default=0.03)
    lo.add_argument("--mode", choices=("normalized", "raw"), default="normalized")
    lo.set_defaults(func=cmd_loss)

    a = sub.add_parser("pai", parents=[common], help="percent acoustic improvement report")
    for name in ("clean", "noisy", "baseline", "ours"):
        a.add_argument(f"--{name}", required=True, help=f"directory of {name} TAP files")
    a.add_argument("-o", "--out", required=True)
    a.set_defaults(func=cmd_pai)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tapkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TapError as exc:
        print(f"tapkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tapkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
