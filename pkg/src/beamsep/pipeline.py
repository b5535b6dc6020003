"""Front-end pipeline for one mixture and the configuration that drives it."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .beamforming import (
    BeamformerFilters,
    apply_filters,
    estimate_psd,
    mvdr_filters,
    select_reference,
    selector_filters,
)
from .masking import MaskSet, TinyMaskEstimator, apply_masknet, oracle_masks
from .metrics import best_permutation_si_sdr, si_sdr
from .stft import MultichannelWaveform, StftConfig, istft, stft

__all__ = ["ConfigError", "PipelineConfig", "SeparationResult", "separate_mixture"]


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    sample_rate_hz: int = 16000
    window_len_samples: int = 400
    hop_samples: int = 160
    fft_size: int = 512
    mask_source: str = "oracle_irm"  # oracle_irm | oracle_ibm | path to a TinyMaskEstimator .npz
    eps: float = 1e-6
    reference: str | int = "max_power"  # or a channel index
    n_speakers: int = 2
    filter_mode: str = "mvdr"  # mvdr | selector
    lam: float = 0.2
    n_mels: int = 80
    beampattern_freqs_hz: list = field(default_factory=lambda: [500.0, 1000.0, 2000.0, 4000.0])

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_speakers < 1:
            raise ConfigError("n_speakers must be at least 1")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if not 0 <= self.lam <= 1:
            raise ConfigError("lam must be in [0, 1]")
        if self.filter_mode not in ("mvdr", "selector"):
            raise ConfigError(f"unknown filter_mode {self.filter_mode!r}")
        if self.mask_source not in ("oracle_irm", "oracle_ibm") and not Path(self.mask_source).is_file():
            raise ConfigError(f"mask estimator file not found: {self.mask_source}")
        if not (self.reference == "max_power" or isinstance(self.reference, int)):
            raise ConfigError("reference must be 'max_power' or a channel index")
        self.stft_config()

    def stft_config(self) -> StftConfig:
        return StftConfig(self.sample_rate_hz, self.window_len_samples, self.hop_samples, self.fft_size)

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=False)

    @classmethod
    def from_yaml(cls, path) -> "PipelineConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a key-value document")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        return cls(**data)


@dataclass
class SeparationResult:
    separated: list[MultichannelWaveform]
    masks: MaskSet
    filters: BeamformerFilters
    reference_channel: int
    diagnostics: dict


def _padded(wave: MultichannelWaveform, pad: int) -> MultichannelWaveform:
    return MultichannelWaveform(np.pad(wave.samples, ((0, 0), (pad, pad))), wave.sample_rate_hz)


def separate_mixture(mixture: MultichannelWaveform, cfg: PipelineConfig,
                     references: Sequence[MultichannelWaveform] | None = None) -> SeparationResult:
    """Masks -> PSDs -> MVDR -> filtering -> inverse STFT for one mixture.

    ``references`` (per-speaker images at every mic) are needed for oracle
    masks and, when given, are also used to score the output.
    """
    scfg = cfg.stft_config()
    if mixture.sample_rate_hz != scfg.sample_rate_hz:
        raise ConfigError(f"mixture sample rate {mixture.sample_rate_hz} != configured {scfg.sample_rate_hz}")
    # pad by one window on each side so every real sample is fully overlapped
    pad = scfg.window_len_samples
    mix = stft(_padded(mixture, pad), scfg)

    if cfg.mask_source.startswith("oracle_"):
        if references is None or len(references) != cfg.n_speakers:
            raise ConfigError(f"oracle masks need {cfg.n_speakers} reference images")
        ref_specs = [stft(_padded(r, pad), scfg) for r in references]
        masks = oracle_masks(ref_specs, mix, kind=cfg.mask_source.split("_", 1)[1])
    else:
        masks = apply_masknet(TinyMaskEstimator.load(cfg.mask_source), mix)
        if masks.n_speakers != cfg.n_speakers:
            raise ConfigError(f"estimator produces {masks.n_speakers} speakers, config expects {cfg.n_speakers}")

    u = select_reference(mix, masks, cfg.reference)
    ref_c = int(np.argmax(u))
    diagnostics: dict = {"reference_channel": ref_c, "mask_source": cfg.mask_source}
    if cfg.filter_mode == "selector":
        filters = selector_filters(cfg.n_speakers, scfg.n_bins, u)
    else:
        psd = estimate_psd(mix, masks)
        filters = mvdr_filters(psd, u, cfg.eps, absent="zero")
        diagnostics["floored_psd_bins"] = [list(p) for p in psd.floored]
        diagnostics["pinv_fallbacks"] = [list(p) for p in filters.pinv_fallbacks]
        diagnostics["zeroed_filter_bins"] = [list(p) for p in filters.zeroed]
        # NaN marks bins whose filter was zeroed; JSON gets null there
        conds = np.round(filters.condition_numbers, 6)
        diagnostics["condition_numbers"] = [[None if np.isnan(c) else float(c) for c in row] for row in conds]

    sep = apply_filters(filters, mix)
    separated = [
        MultichannelWaveform(istft(sep.source(k)).samples[:, pad : pad + mixture.n_samples], mixture.sample_rate_hz)
        for k in range(cfg.n_speakers)
    ]

    if references is not None:
        refs = [r.samples[ref_c] for r in references]
        est = [s.samples[0] for s in separated]
        perm, report = best_permutation_si_sdr(est, refs)
        base = [si_sdr(mixture.samples[ref_c], r) for r in refs]
        diagnostics["si_sdr"] = {
            "permutation": list(perm),
            "separated_db": report.si_sdr_db,
            "mixture_db": base,
            "improvement_db": [s - b for s, b in zip(report.si_sdr_db, base)],
        }
    return SeparationResult(separated, masks, filters, ref_c, diagnostics)
