"""Command-line entry point.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.special import log_softmax

from . import __version__
from .audio_io import WavError, read_wav, write_wav
from .beamforming import BeamformError, BeamformerFilters, beam_pattern
from .features import MelFilterbank, MvnAccumulator, MvnStats, logmel, mvn_apply
from .losses import ctc_loss
from .masking import MaskError
from .metrics import best_permutation_si_sdr, cer, si_sdr, wer
from .pipeline import ConfigError, PipelineConfig, separate_mixture
from .scheduler import (
    CLEAN,
    NOISY,
    BatchPlan,
    ScheduleError,
    UtteranceMeta,
    plan_for_epoch,
    validate_plan,
)
from .spatial import CorpusError, SimulationError, generate_corpus
from .stft import StftError, num_frames, stft
from .tensorio import load_tensor, save_tensor

log = logging.getLogger("beamsep")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        return PipelineConfig.from_yaml(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------------------
# generate

def cmd_generate(args) -> int:
    desc = _read_json(args.description)
    if not desc.get("utterances") and not desc.get("synthetic_utterances"):
        raise DataError(f"{args.description}: no source utterances listed")
    if args.seed is not None:
        desc["seed"] = args.seed
    if args.n_mixtures is not None:
        desc["n_mixtures"] = args.n_mixtures
    try:
        manifest = generate_corpus(desc, args.out, base_dir=Path(args.description).parent,
                                   workers=args.workers)
    except (CorpusError, SimulationError, WavError) as exc:
        raise DataError(str(exc)) from exc
    for entry in manifest["mixtures"]:
        print(f"{entry['id']}\tsnr_db={entry['snr_db']:+.2f}\t{entry['wav_mix']}")
    print(f"{len(manifest['mixtures'])} mixtures written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# separate

def _load_corpus(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = _read_json(path)
    if "mixtures" not in manifest:
        raise DataError(f"{path}: not a corpus manifest (no 'mixtures')")
    return manifest, path.parent


def _separate_one(job):
    entry, corpus_dir, out_dir, cfg = job
    mid = entry["id"]
    try:
        fs = cfg.sample_rate_hz
        mixture = read_wav(corpus_dir / entry["wav_mix"], expected_rate=fs)
        refs = [read_wav(corpus_dir / p, expected_rate=fs) for p in entry.get("wav_refs", [])] or None
        result = separate_mixture(mixture, cfg, refs)
    except (WavError, ConfigError, MaskError, StftError) as exc:
        return mid, EXIT_DATA, str(exc)
    except (BeamformError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return mid, EXIT_NUMERIC, str(exc)

    outputs = []
    for k, wave in enumerate(result.separated):
        name = f"{mid}_s{k}.wav"
        write_wav(out_dir / name, wave)
        outputs.append(name)
    save_tensor(out_dir / f"{mid}_masks.bstn", result.masks.data)
    save_tensor(out_dir / f"{mid}_filters.bstn", result.filters.weights)
    diag = {"id": mid, "outputs": outputs, **result.diagnostics}
    _write_json(out_dir / f"{mid}_diag.json", diag)
    return mid, EXIT_OK, diag


def cmd_separate(args) -> int:
    cfg = _load_config(args.config)
    manifest, corpus_dir = _load_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(e, corpus_dir, out_dir, cfg) for e in manifest["mixtures"]]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_separate_one, jobs))
    else:
        results = [_separate_one(j) for j in jobs]

    worst = EXIT_OK
    summary = []
    for mid, code, payload in results:
        if code != EXIT_OK:
            log.error("%s: %s", mid, payload)
            worst = max(worst, code)
            summary.append({"id": mid, "status": "failed", "error": payload})
            continue
        summary.append({"id": mid, "status": "ok"})
        if not args.quiet and "si_sdr" in payload:
            s = payload["si_sdr"]
            print(f"{mid}\t" + "\t".join(f"s{k}: {v:6.2f} dB (+{i:5.2f})" for k, (v, i) in
                                           enumerate(zip(s["separated_db"], s["improvement_db"]))))
    _write_json(out_dir / "separation_summary.json", {"config": cfg.to_yaml(), "mixtures": summary})
    return worst


# ---------------------------------------------------------------------------
# evaluate

def score_corpus(separated_dir, manifest, corpus_dir, n_speakers=None, hyps=None) -> dict:
    """Best-permutation SI-SDR per mixture, plus CER/WER when hypotheses are given."""
    separated_dir = Path(separated_dir)
    fs = manifest.get("sample_rate_hz")
    rows = []
    for entry in manifest["mixtures"]:
        mid = entry["id"]
        diag_path = separated_dir / f"{mid}_diag.json"
        ref_c = manifest.get("ref_channel", 0)
        if diag_path.exists():
            ref_c = _read_json(diag_path).get("reference_channel", ref_c)
        J = n_speakers or len(entry["wav_refs"])
        refs = [read_wav(corpus_dir / p, fs).samples[ref_c] for p in entry["wav_refs"]]
        mixture = read_wav(corpus_dir / entry["wav_mix"], fs).samples[ref_c]
        ests = []
        for k in range(J):
            est = read_wav(separated_dir / f"{mid}_s{k}.wav", fs).samples[0]
            if len(est) != len(refs[0]):
                raise DataError(f"{mid}_s{k}.wav: length {len(est)} != reference {len(refs[0])}")
            ests.append(est)
        perm, report = best_permutation_si_sdr(ests, refs)
        base = [si_sdr(mixture, r) for r in refs]
        row = {
            "id": mid,
            "permutation": list(perm),
            "si_sdr_db": [round(v, 6) for v in report.si_sdr_db],
            "mixture_si_sdr_db": [round(v, 6) for v in base],
            "improvement_db": [round(v - b, 6) for v, b in zip(report.si_sdr_db, base)],
        }
        if hyps is not None and mid in hyps:
            texts = hyps[mid]
            # hypothesis stream perm[k] was paired with reference k above
            pairs = [(texts[perm[k]], entry["transcripts"][k]) for k in range(J)]
            c = [cer(h, r) for h, r in pairs]
            w = [wer(h, r) for h, r in pairs]
            row["cer"] = sum(x.errors for x in c) / max(1, sum(x.reference_length for x in c))
            row["wer"] = sum(x.errors for x in w) / max(1, sum(x.reference_length for x in w))
        rows.append(row)

    def avg(key):
        vals = [v for r in rows for v in r[key]]
        return round(float(np.mean(vals)), 6) if vals else None

    summary = {
        "n_mixtures": len(rows),
        "average_si_sdr_db": avg("si_sdr_db"),
        "average_mixture_si_sdr_db": avg("mixture_si_sdr_db"),
        "average_improvement_db": avg("improvement_db"),
        "median_improvement_db": (round(float(np.median([v for r in rows for v in r["improvement_db"]])), 6)
                                  if rows else None),
    }
    if hyps is not None:
        scored = [r for r in rows if "cer" in r]
        summary["average_cer"] = round(float(np.mean([r["cer"] for r in scored])), 6) if scored else None
        summary["average_wer"] = round(float(np.mean([r["wer"] for r in scored])), 6) if scored else None
    return {"summary": summary, "mixtures": rows}


def format_table(scores: dict) -> str:
    lines = [f"{'mixture':<12}{'mix SI-SDR':>12}{'sep SI-SDR':>12}{'SI-SDRi':>10}"]
    lines.append("-" * len(lines[0]))
    for r in scores["mixtures"]:
        lines.append(f"{r['id']:<12}{np.mean(r['mixture_si_sdr_db']):>12.2f}"
                     f"{np.mean(r['si_sdr_db']):>12.2f}{np.mean(r['improvement_db']):>10.2f}")
    s = scores["summary"]
    lines.append("-" * len(lines[0]))
    if s["n_mixtures"]:
        lines.append(f"{'average':<12}{s['average_mixture_si_sdr_db']:>12.2f}"
                     f"{s['average_si_sdr_db']:>12.2f}{s['average_improvement_db']:>10.2f}")
    if s.get("average_cer") is not None:
        lines.append(f"CER {100 * s['average_cer']:.2f} %   WER {100 * s['average_wer']:.2f} %")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    manifest, corpus_dir = _load_corpus(args.corpus)
    hyps = _read_json(args.hyp) if args.hyp else None
    try:
        scores = score_corpus(args.separated, manifest, corpus_dir, hyps=hyps)
    except WavError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out) if args.out else Path(args.separated)
    _write_json(out / "scores.json", scores)
    table = format_table(scores)
    (out / "scores.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# schedule-dryrun

def _utterances(args):
    cfg = _load_config(args.config).stft_config()
    manifest, corpus_dir = _load_corpus(args.corpus)
    noisy = []
    for e in manifest["mixtures"]:
        n = read_wav(corpus_dir / e["wav_mix"]).n_samples
        noisy.append(UtteranceMeta(e["id"], NOISY, max(1, num_frames(n, cfg)), float(e["snr_db"]),
                                   e["wav_mix"]))
    clean = []
    if args.clean:
        for u in _read_json(args.clean):
            clean.append(UtteranceMeta(str(u["id"]), CLEAN, int(u["length_frames"]), None, u.get("path", "")))
    return clean, noisy


def cmd_schedule_dryrun(args) -> int:
    try:
        clean, noisy = _utterances(args)
    except (KeyError, ScheduleError) as exc:
        raise DataError(str(exc)) from exc
    everything = clean + noisy
    if args.check_plan:
        plan = BatchPlan.from_dict(_read_json(args.check_plan))
        problems = validate_plan(plan, everything, args.signed_snr)
        for p in problems:
            print(f"VIOLATION: {p}")
        print("plan OK" if not problems else f"{len(problems)} violation(s)")
        return EXIT_DATA if problems else EXIT_OK

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_problems = 0
    for epoch in range(args.epochs):
        try:
            plan = plan_for_epoch(epoch, clean, noisy, args.batch_size, args.seed,
                                  args.curriculum_epochs, args.signed_snr)
        except ScheduleError as exc:
            raise DataError(str(exc)) from exc
        (out / f"epoch_{epoch:03d}.json").write_text(plan.to_json() + "\n")
        problems = validate_plan(plan, everything, args.signed_snr)
        n_problems += len(problems)
        for p in problems:
            print(f"epoch {epoch}: VIOLATION: {p}")
        print(f"epoch {epoch}: {plan.phase}, {len(plan)} batches, {len(problems)} violation(s)")
    return EXIT_DATA if n_problems else EXIT_OK


# ---------------------------------------------------------------------------
# features

def cmd_features(args) -> int:
    cfg = _load_config(args.config)
    scfg = cfg.stft_config()
    fb = MelFilterbank.create(cfg.n_mels, scfg.fft_size, scfg.sample_rate_hz)
    inputs = sorted(Path(args.input).glob("*.wav")) if Path(args.input).is_dir() else [Path(args.input)]
    if not inputs:
        raise DataError(f"no WAV files under {args.input}")
    feats = {}
    for path in inputs:
        try:
            wave = read_wav(path, scfg.sample_rate_hz)
            spec = stft(wave, scfg)
        except (WavError, StftError) as exc:
            raise DataError(f"{path}: {exc}") from exc
        for c in range(spec.n_channels):
            feats[f"{path.stem}_c{c}" if spec.n_channels > 1 else path.stem] = logmel(spec.channel(c), fb)

    if args.stats:
        stats = MvnStats.load(args.stats)
    else:
        acc = MvnAccumulator()
        for f in feats.values():
            acc.update(f)
        stats = acc.finalize()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.stats:
        stats.save(out / "mvn_stats.json")
    if np.any(stats.floored):
        log.warning("std floor substituted in %d dimension(s)", int(np.sum(stats.floored)))
    for name, f in feats.items():
        save_tensor(out / f"{name}_feats.bstn", mvn_apply(f, stats).astype(np.float32))
    print(f"{len(feats)} feature matrices, {stats.frame_count} frames for statistics")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ctc-check

def ctc_self_test(trials: int = 100, seed: int = 0) -> dict:
    """Brute-force enumeration and finite-difference checks of :func:`ctc_loss`."""
    rng = np.random.default_rng(seed)
    quiet = logging.getLogger("beamsep.losses")
    was_disabled, quiet.disabled = quiet.disabled, True  # infeasible draws are expected here
    try:
        worst_loss, worst_grad = _ctc_trials(rng, trials)
    finally:
        quiet.disabled = was_disabled
    return {"trials": trials, "max_loss_abs_error": worst_loss, "max_grad_rel_error": worst_grad,
            "passed": bool(worst_loss < 1e-10 and worst_grad < 1e-4)}


def _ctc_trials(rng, trials):
    worst_loss = worst_grad = 0.0
    for _ in range(trials):
        T = int(rng.integers(1, 5))
        V = int(rng.integers(2, 6))
        N = int(rng.integers(0, 3))
        labels = list(rng.integers(1, V, size=N))
        logits = rng.standard_normal((T, V))
        loss, grad = ctc_loss(logits, labels)
        logp = log_softmax(logits, axis=1)
        total = 0.0
        for path in itertools.product(range(V), repeat=T):
            collapsed = [k for i, k in enumerate(path) if k != 0 and (i == 0 or path[i - 1] != k)]
            if collapsed == labels:
                total += np.exp(sum(logp[t, k] for t, k in enumerate(path)))
        if total == 0:
            if np.isfinite(loss):
                worst_loss = np.inf
            continue
        worst_loss = max(worst_loss, abs(loss + np.log(total)))
        h = 1e-4
        for t in range(T):
            for v in range(V):
                bump = np.zeros_like(logits)
                bump[t, v] = h
                fd = (ctc_loss(logits + bump, labels)[0] - ctc_loss(logits - bump, labels)[0]) / (2 * h)
                rel = abs(fd - grad[t, v]) / max(abs(fd), abs(grad[t, v]), 1e-6)
                worst_grad = max(worst_grad, rel)
    return worst_loss, worst_grad


def cmd_ctc_check(args) -> int:
    report = ctc_self_test(args.trials, args.seed)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# beampattern

def cmd_beampattern(args) -> int:
    cfg = _load_config(args.config)
    manifest, _ = _load_corpus(args.corpus)
    entry = next((e for e in manifest["mixtures"] if e["id"] == args.id), None)
    if entry is None:
        raise DataError(f"mixture {args.id} not in corpus")
    sep = Path(args.separated)
    weights = load_tensor(sep / f"{args.id}_filters.bstn").astype(np.complex128)
    diag = _read_json(sep / f"{args.id}_diag.json")
    u = np.zeros(weights.shape[2])
    u[diag.get("reference_channel", 0)] = 1.0
    filters = BeamformerFilters(weights, u)
    freqs = [float(f) for f in args.freqs.split(",")] if args.freqs else cfg.beampattern_freqs_hz
    scene = entry["scene"]
    try:
        rows = beam_pattern(filters, args.source, freqs, scene["mic_positions_m"],
                            scene["speed_of_sound_mps"], cfg.stft_config())
    except BeamformError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out) if args.out else sep / f"{args.id}_beampattern_s{args.source}.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["azimuth_deg", "freq_hz", "magnitude"])
        writer.writerows((f"{a:g}", f"{f:g}", f"{m:.8g}") for a, f, m in rows)
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# config

def cmd_config(args) -> int:
    if args.action == "show-defaults":
        sys.stdout.write(PipelineConfig().to_yaml())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="beamsep", description="Mask-based multi-source MVDR separation toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a synthetic spatialised corpus")
    g.add_argument("--description", required=True, help="JSON corpus description")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-mixtures", type=int)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("separate", help="oracle/estimated-mask MVDR separation")
    s.add_argument("--corpus", required=True, help="corpus directory or manifest.json")
    s.add_argument("--config", help="YAML pipeline config (defaults: `beamsep config show-defaults`)")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--quiet", action="store_true", help="suppress per-mixture console lines")
    s.set_defaults(func=cmd_separate)

    e = sub.add_parser("evaluate", help="score separated outputs against references")
    e.add_argument("--separated", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--hyp", help="JSON {mixture_id: [hypothesis text per output stream]}")
    e.add_argument("--out", help="directory for scores.json / scores.txt (default: --separated)")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("schedule-dryrun", help="emit and validate per-epoch batch plans")
    d.add_argument("--corpus", required=True)
    d.add_argument("--clean", help="JSON list of {id, length_frames} single-speaker utterances")
    d.add_argument("--config")
    d.add_argument("--batch-size", type=int, default=8)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--epochs", type=int, default=2)
    d.add_argument("--curriculum-epochs", type=int, default=1)
    d.add_argument("--signed-snr", action="store_true", help="sort mixtures by signed SNR instead of |SNR|")
    d.add_argument("--check-plan", help="validate an existing plan JSON instead of building one")
    d.add_argument("--out", default="plans")
    d.set_defaults(func=cmd_schedule_dryrun)

    f = sub.add_parser("features", help="log-mel + global MVN features for WAV files")
    f.add_argument("--input", required=True, help="WAV file or directory")
    f.add_argument("--out", required=True)
    f.add_argument("--stats", help="existing mvn_stats.json to apply instead of estimating")
    f.add_argument("--config")
    f.set_defaults(func=cmd_features)

    c = sub.add_parser("ctc-check", help="CTC loss/gradient self-test")
    c.add_argument("--trials", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_ctc_check)

    b = sub.add_parser("beampattern", help="beam pattern CSV for a separated mixture")
    b.add_argument("--separated", required=True)
    b.add_argument("--corpus", required=True)
    b.add_argument("--id", required=True)
    b.add_argument("--source", type=int, default=1, help="speaker index, 1-based")
    b.add_argument("--freqs", help="comma-separated Hz (default from config)")
    b.add_argument("--config")
    b.add_argument("--out")
    b.set_defaults(func=cmd_beampattern)

    k = sub.add_parser("config", help="configuration helpers")
    k.add_argument("action", choices=["show-defaults"])
    k.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
