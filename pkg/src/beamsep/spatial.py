"""Spatialised multi-speaker mixture simulation.

Propagation is either anechoic (pure delay plus 1/(4*pi*d) spreading) or a
low-order image-source model of a shoebox room with uniform absorption.
Fractional delays use a 31-tap Blackman-windowed sinc centred on the exact
delay.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import WavError, read_wav, write_wav
from .stft import MultichannelWaveform
from .synth import synth_transcript, synth_utterance

log = logging.getLogger(__name__)

FD_HALF_TAPS = 15  # kernel length 2*15 + 1 = 31
MAX_IMAGE_ORDER = 3

__all__ = [
    "SimulationError",
    "RoomScene",
    "MixtureRecord",
    "fractional_delay_kernel",
    "simulate_propagation",
    "mix_at_snr",
    "add_white_noise",
    "sample_scene",
    "generate_corpus",
]


class SimulationError(ValueError):
    pass


@dataclass
class RoomScene:
    room_dims_m: np.ndarray
    source_positions_m: np.ndarray  # (J, 3)
    mic_positions_m: np.ndarray  # (C, 3)
    speed_of_sound_mps: float = 343.0
    mode: str = "anechoic"  # or "image"
    image_order: int = 0
    absorption: float = 0.5

    def __post_init__(self):
        self.room_dims_m = np.asarray(self.room_dims_m, dtype=float).reshape(3)
        self.source_positions_m = np.atleast_2d(np.asarray(self.source_positions_m, dtype=float))
        self.mic_positions_m = np.atleast_2d(np.asarray(self.mic_positions_m, dtype=float))
        self.validate()

    def validate(self):
        if np.any(self.room_dims_m <= 0):
            raise SimulationError("room dimensions must be positive")
        if len(self.source_positions_m) < 1 or len(self.mic_positions_m) < 1:
            raise SimulationError("scene needs at least one source and one microphone")
        points = np.vstack([self.source_positions_m, self.mic_positions_m])
        if points.shape[1] != 3:
            raise SimulationError("positions must be 3-vectors")
        if np.any(points <= 0) or np.any(points >= self.room_dims_m):
            raise SimulationError("all sources and microphones must lie strictly inside the room")
        gaps = np.linalg.norm(points[:, None] - points[None], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        if np.any(gaps == 0):
            raise SimulationError("sources and microphones must be pairwise distinct points")
        if self.speed_of_sound_mps <= 0:
            raise SimulationError("speed of sound must be positive")
        if self.mode not in ("anechoic", "image"):
            raise SimulationError(f"unknown propagation mode {self.mode!r}")
        if self.mode == "image":
            if not 0 <= self.image_order <= MAX_IMAGE_ORDER:
                raise SimulationError(f"image order must be in 0..{MAX_IMAGE_ORDER}")
            if not 0 < self.absorption < 1:
                raise SimulationError("absorption must lie in (0, 1)")

    @property
    def n_mics(self) -> int:
        return len(self.mic_positions_m)

    def distances(self, source_index: int) -> np.ndarray:
        return np.linalg.norm(self.mic_positions_m - self.source_positions_m[source_index], axis=1)

    def to_dict(self) -> dict:
        return {
            "room_dims_m": self.room_dims_m.tolist(),
            "source_positions_m": self.source_positions_m.tolist(),
            "mic_positions_m": self.mic_positions_m.tolist(),
            "speed_of_sound_mps": float(self.speed_of_sound_mps),
            "mode": self.mode,
            "image_order": int(self.image_order),
            "absorption": float(self.absorption),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomScene":
        return cls(**d)


@dataclass
class MixtureRecord:
    mixture: MultichannelWaveform
    references: list[MultichannelWaveform]  # per-source images at every mic
    snr_db: float
    transcripts: list[str] = field(default_factory=list)
    scene: RoomScene | None = None
    noise: MultichannelWaveform | None = None
    source_gains: list[float] = field(default_factory=list)


def fractional_delay_kernel(frac: float) -> np.ndarray:
    """Blackman-windowed sinc taps for a delay of ``frac`` in [0, 1) samples.

    Tap ``n`` (n = -15..15) multiplies input sample ``m`` into output
    ``m + n + integer_delay``.
    """
    t = np.arange(-FD_HALF_TAPS, FD_HALF_TAPS + 1) - frac
    half = FD_HALF_TAPS + 1
    window = 0.42 + 0.5 * np.cos(np.pi * t / half) + 0.08 * np.cos(2 * np.pi * t / half)
    return np.sinc(t) * window


def _image_sources(scene: RoomScene, source_index: int):
    """Yield (position, reflection_count) for every image up to the scene order."""
    src = scene.source_positions_m[source_index]
    if scene.mode == "anechoic":
        yield src, 0
        return
    order = scene.image_order
    L = scene.room_dims_m
    per_dim = []
    for k in range(3):
        options = []
        for n in range(-order, order + 1):
            for q in (0, 1):
                refl = abs(n - q) + abs(n)
                if refl <= order:
                    options.append(((1 - 2 * q) * src[k] + 2 * n * L[k], refl))
        per_dim.append(options)
    for (x, rx), (y, ry), (z, rz) in itertools.product(*per_dim):
        refl = rx + ry + rz
        if refl <= order:
            yield np.array([x, y, z]), refl


def _paths(scene: RoomScene, source_index: int, fs: int):
    beta = np.sqrt(1.0 - scene.absorption) if scene.mode == "image" else 1.0
    for pos, refl in _image_sources(scene, source_index):
        d = np.linalg.norm(scene.mic_positions_m - pos, axis=1)
        if np.any(d == 0):
            raise SimulationError(f"source {source_index} coincides with a microphone")
        yield d * fs / scene.speed_of_sound_mps, beta**refl / (4 * np.pi * d)


def simulate_propagation(
    dry, scene: RoomScene, source_index: int, fs: int | None = None, out_len: int | None = None
) -> MultichannelWaveform:
    """Image of one dry source at every microphone of ``scene``."""
    if isinstance(dry, MultichannelWaveform):
        fs = dry.sample_rate_hz if fs is None else fs
        if dry.n_channels != 1:
            raise SimulationError("dry source must be mono")
        x = dry.samples[0]
    else:
        x = np.asarray(dry, dtype=float).ravel()
    if fs is None:
        raise SimulationError("sample rate required")
    if not np.all(np.isfinite(x)):
        raise SimulationError("dry source contains non-finite samples")

    paths = list(_paths(scene, source_index, fs))
    if out_len is None:
        max_delay = max(int(np.floor(delays.max())) for delays, _ in paths)
        out_len = len(x) + max_delay + FD_HALF_TAPS + 1

    out = np.zeros((scene.n_mics, out_len))
    for delays, gains in paths:
        for c in range(scene.n_mics):
            k = int(np.floor(delays[c]))
            y = gains[c] * np.convolve(x, fractional_delay_kernel(delays[c] - k))
            start = k - FD_HALF_TAPS
            lo = max(0, -start)
            hi = min(len(y), out_len - start)
            if hi > lo:
                out[c, start + lo : start + hi] += y[lo:hi]
    return MultichannelWaveform(out, fs)


def _pad(samples: np.ndarray, n: int) -> np.ndarray:
    return np.pad(samples, ((0, 0), (0, n - samples.shape[1])))


def mix_at_snr(
    images_a: MultichannelWaveform,
    images_b: MultichannelWaveform,
    snr_db: float,
    ref_channel: int = 0,
) -> MixtureRecord:
    """Rescale source ``b`` so that 10*log10(E_a / E_b) at ``ref_channel`` is ``snr_db``."""
    if images_a.sample_rate_hz != images_b.sample_rate_hz:
        raise SimulationError("sample rates differ")
    if images_a.n_channels != images_b.n_channels:
        raise SimulationError("channel counts differ")
    if not np.isfinite(snr_db):
        raise SimulationError("snr_db must be finite")
    if not 0 <= ref_channel < images_a.n_channels:
        raise SimulationError(f"reference channel {ref_channel} out of range")
    n = max(images_a.n_samples, images_b.n_samples)
    a = _pad(images_a.samples, n)
    b = _pad(images_b.samples, n)
    e_a = np.sum(a[ref_channel] ** 2)
    e_b = np.sum(b[ref_channel] ** 2)
    if e_a == 0 or e_b == 0:
        raise SimulationError("cannot mix a silent source")
    gain = np.sqrt(e_a / (e_b * 10.0 ** (snr_db / 10.0)))
    b = b * gain
    fs = images_a.sample_rate_hz
    return MixtureRecord(
        mixture=MultichannelWaveform(a + b, fs),
        references=[MultichannelWaveform(a, fs), MultichannelWaveform(b, fs)],
        snr_db=float(snr_db),
        source_gains=[1.0, float(gain)],
    )


def add_white_noise(record: MixtureRecord, snr_db: float, rng, ref_channel: int = 0) -> MixtureRecord:
    """Add independent white noise per channel at ``snr_db`` below the speech sum."""
    speech = record.mixture.samples
    noise = rng.standard_normal(speech.shape)
    gain = np.sqrt(np.sum(speech[ref_channel] ** 2) / (np.sum(noise[ref_channel] ** 2) * 10 ** (snr_db / 10)))
    noise *= gain
    fs = record.mixture.sample_rate_hz
    record.noise = MultichannelWaveform(noise, fs)
    record.mixture = MultichannelWaveform(speech + noise, fs)
    return record


# Scene sampling ranges below are this package's own choice, not canonical.
ROOM_RANGE_M = ((5.0, 10.0), (5.0, 10.0), (2.5, 3.5))
MIC_SPACING_RANGE_M = (0.10, 0.30)
SOURCE_DISTANCE_RANGE_M = (1.0, 2.5)
MIN_CONE_SEPARATION_DEG = 20.0


def sample_scene(rng, n_sources: int = 2, n_mics: int = 2, mode: str = "anechoic",
                 image_order: int = 0, absorption: float = 0.5) -> RoomScene:
    """Random shoebox scene with a horizontal linear mic array.

    Sources are placed so that their angles relative to the array axis
    differ by at least MIN_CONE_SEPARATION_DEG; a linear array cannot
    distinguish directions sharing the same cone angle.
    """
    for _ in range(1000):
        room = np.array([rng.uniform(*r) for r in ROOM_RANGE_M])
        centre = np.array([
            rng.uniform(2.0, room[0] - 2.0) if room[0] > 4 else room[0] / 2,
            rng.uniform(2.0, room[1] - 2.0) if room[1] > 4 else room[1] / 2,
            rng.uniform(1.0, 1.5),
        ])
        spacing = rng.uniform(*MIC_SPACING_RANGE_M)
        axis_angle = rng.uniform(0, np.pi)
        axis = np.array([np.cos(axis_angle), np.sin(axis_angle), 0.0])
        offsets = (np.arange(n_mics) - (n_mics - 1) / 2) * spacing
        mics = centre + offsets[:, None] * axis

        sources, cones = [], []
        for _ in range(n_sources):
            az = rng.uniform(0, 2 * np.pi)
            dist = rng.uniform(*SOURCE_DISTANCE_RANGE_M)
            pos = centre + dist * np.array([np.cos(az), np.sin(az), 0.0])
            pos[2] = rng.uniform(1.4, 1.9)
            sources.append(pos)
            direction = (pos - centre) / np.linalg.norm(pos - centre)
            cones.append(np.degrees(np.arccos(np.clip(direction @ axis, -1, 1))))
        sources = np.array(sources)
        inside = np.all(sources > 0.2) and np.all(sources < room - 0.2)
        separated = all(
            abs(a - b) >= MIN_CONE_SEPARATION_DEG for a, b in itertools.combinations(cones, 2)
        )
        if inside and separated:
            return RoomScene(room, sources, mics, mode=mode, image_order=image_order,
                             absorption=absorption)
    raise SimulationError("could not sample a valid scene")


# ---------------------------------------------------------------------------
# corpus generation

CORPUS_DEFAULTS = {
    "sample_rate_hz": 16000,
    "n_mixtures": 10,
    "seed": 0,
    "snr_range_db": [-5.0, 5.0],
    "n_mics": 2,
    "mode": "anechoic",
    "image_order": 0,
    "absorption": 0.5,
    "noise_snr_db": None,
    "ref_channel": 0,
}


class CorpusError(ValueError):
    pass


def _load_sources(desc: dict, base_dir: Path, fs: int, seed: int):
    """Return a list of (id, mono samples, transcript)."""
    if desc.get("utterances"):
        out = []
        for utt in desc["utterances"]:
            path = Path(utt["wav"])
            path = path if path.is_absolute() else base_dir / path
            try:
                wave = read_wav(path, expected_rate=fs)
            except WavError as exc:
                raise CorpusError(f"utterance {utt.get('id')!r}: {exc}") from exc
            out.append((str(utt["id"]), wave.samples.mean(axis=0), str(utt.get("transcript", ""))))
        return out
    n_synth = int(desc.get("synthetic_utterances", 0))
    out = []
    for k in range(n_synth):
        rng = np.random.default_rng([seed, 1_000_003, k])
        out.append((f"syn{k:04d}", synth_utterance(rng, fs), synth_transcript(rng)))
    return out


def _make_mixture(args):
    index, sources, cfg, seed = args
    rng = np.random.default_rng([seed, index])
    fs = cfg["sample_rate_hz"]
    pick = rng.choice(len(sources), size=2, replace=False)
    snr = float(rng.uniform(*cfg["snr_range_db"]))
    scene = sample_scene(rng, n_sources=2, n_mics=cfg["n_mics"], mode=cfg["mode"],
                         image_order=cfg["image_order"], absorption=cfg["absorption"])
    images = [simulate_propagation(sources[p][1], scene, j, fs=fs) for j, p in enumerate(pick)]
    record = mix_at_snr(images[0], images[1], snr, ref_channel=cfg["ref_channel"])
    if cfg["noise_snr_db"] is not None:
        add_white_noise(record, float(cfg["noise_snr_db"]), rng, cfg["ref_channel"])
    record.scene = scene
    record.transcripts = [sources[p][2] for p in pick]
    return index, record, [sources[p][0] for p in pick]


def generate_corpus(description: dict, out_dir, base_dir=None, workers: int = 1) -> dict:
    """Render mixtures described by ``description`` into ``out_dir``.

    Writes ``<id>_mix.wav``, ``<id>_ref<j>.wav`` (and ``<id>_noise.wav``
    when noise is enabled) plus ``manifest.json``; returns the manifest.
    Each mixture draws from its own RNG seeded by ``(seed, index)``, so
    results do not depend on ``workers``.
    """
    cfg = {**CORPUS_DEFAULTS, **{k: v for k, v in description.items() if k in CORPUS_DEFAULTS}}
    out_dir = Path(out_dir)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    seed = int(cfg["seed"])
    n = int(cfg["n_mixtures"])
    lo, hi = cfg["snr_range_db"]
    if not lo <= hi:
        raise CorpusError("snr_range_db must be [low, high] with low <= high")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"{out_dir}: {exc}") from exc

    entries = []
    if n > 0:
        sources = _load_sources(description, base_dir, cfg["sample_rate_hz"], seed)
        if len(sources) < 2:
            raise CorpusError("need at least two source utterances to build mixtures")
        jobs = [(i, sources, cfg, seed) for i in range(n)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_make_mixture, jobs))
        else:
            results = [_make_mixture(job) for job in jobs]

        for index, record, src_ids in results:
            mid = f"mix{index:05d}"
            entry = {
                "id": mid,
                "wav_mix": f"{mid}_mix.wav",
                "wav_refs": [f"{mid}_ref{j}.wav" for j in range(len(record.references))],
                "snr_db": record.snr_db,
                "scene": record.scene.to_dict(),
                "transcripts": record.transcripts,
                "source_ids": src_ids,
            }
            try:
                write_wav(out_dir / entry["wav_mix"], record.mixture)
                for path, ref in zip(entry["wav_refs"], record.references):
                    write_wav(out_dir / path, ref)
                if record.noise is not None:
                    entry["wav_noise"] = f"{mid}_noise.wav"
                    write_wav(out_dir / entry["wav_noise"], record.noise)
            except OSError as exc:
                raise CorpusError(f"writing mixture {mid}: {exc}") from exc
            entries.append(entry)

    manifest = {
        "sample_rate_hz": cfg["sample_rate_hz"],
        "seed": seed,
        "ref_channel": cfg["ref_channel"],
        "mixtures": entries,
    }
    try:
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise CorpusError(f"{out_dir / 'manifest.json'}: {exc}") from exc
    log.info("wrote %d mixtures to %s", len(entries), out_dir)
    return manifest
