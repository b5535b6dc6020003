"""Mask-driven multi-source MVDR beamforming.

Each speaker's filter treats every other source, noise included, as
interference::

    A = (sum_{j != i} Phi_j + reg * I)^-1 Phi_i
    g_i = A / tr(A) @ u

and the separated STFT is ``s_i[t, f] = g_i(f)^H x[t, f]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .masking import MaskSet
from .stft import MultichannelSpectrogram, StftConfig

WEIGHT_FLOOR = 1e-10
DEFAULT_EPS = 1e-6
DEGENERATE_TRACE = 1e-30

__all__ = [
    "BeamformError",
    "PsdSet",
    "BeamformerFilters",
    "SeparatedSpectrograms",
    "estimate_psd",
    "mvdr_filters",
    "selector_filters",
    "apply_filters",
    "select_reference",
    "steering_vector",
    "beam_pattern",
]


class BeamformError(ValueError):
    pass


@dataclass
class PsdSet:
    matrices: np.ndarray  # (J+1, F, C, C)
    floored: list[tuple[int, int]] = field(default_factory=list)  # (source, bin) with zero mask mass

    @property
    def n_speakers(self) -> int:
        return self.matrices.shape[0] - 1


@dataclass
class BeamformerFilters:
    weights: np.ndarray  # (J, F, C); row k belongs to speaker k + 1
    reference: np.ndarray  # (C,)
    condition_numbers: np.ndarray | None = None  # (J, F) of the regularised interference PSD
    pinv_fallbacks: list[tuple[int, int]] = field(default_factory=list)
    zeroed: list[tuple[int, int]] = field(default_factory=list)  # (speaker, bin) with absent target

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.complex128)
        self.reference = np.asarray(self.reference, dtype=np.float64)
        if not np.all(np.isfinite(self.weights)):
            raise BeamformError("non-finite filter weights")
        if self.weights.ndim != 3 or self.weights.shape[2] != self.reference.shape[0]:
            raise BeamformError("weights must be (J, F, C) with C matching the reference vector")
        if np.any(self.reference < 0) or not np.isclose(self.reference.sum(), 1.0):
            raise BeamformError("reference vector must be nonnegative and sum to one")


@dataclass
class SeparatedSpectrograms:
    data: np.ndarray  # (J, T, F)
    config: StftConfig
    original_len_samples: int

    def source(self, k: int) -> MultichannelSpectrogram:
        return MultichannelSpectrogram(self.data[k][..., None], self.config, self.original_len_samples)


def _hermitian(m):
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


def estimate_psd(mix: MultichannelSpectrogram, masks: MaskSet) -> PsdSet:
    """Mask-weighted spatial covariance per source and frequency.

    The per-channel mask vector at each (t, f) is reduced to one weight by
    averaging over channels. Sources whose total weight at a bin is zero get
    the weight floor as denominator (giving a zero matrix) and are listed in
    ``PsdSet.floored``.
    """
    if masks.shape[1:] != mix.shape:
        raise BeamformError(f"mask shape {masks.shape[1:]} does not match mixture {mix.shape}")
    x = mix.data  # (T, F, C)
    w = masks.data.mean(axis=-1)  # (J+1, T, F)
    num = np.einsum("itf,tfc,tfd->ifcd", w, x, np.conj(x))
    den = w.sum(axis=1)  # (J+1, F)
    floored = [tuple(map(int, ij)) for ij in np.argwhere(den <= 0)]
    den = np.maximum(den, WEIGHT_FLOOR)
    return PsdSet(_hermitian(num / den[..., None, None]), floored)


def _solve(phi_int: np.ndarray, phi_target: np.ndarray):
    try:
        factor = scipy.linalg.cho_factor(phi_int, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(factor, phi_target, check_finite=False), False
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.linalg.pinv(phi_int, hermitian=True) @ phi_target, True


def mvdr_filters(psd: PsdSet, u, eps: float = DEFAULT_EPS, absent: str = "error") -> BeamformerFilters:
    """Trace-normalised MVDR filter for every speaker and frequency.

    Interference covariance is loaded with ``eps * tr(Phi_int) / C`` on the
    diagonal. When the interference is exactly zero (trace 0) the loading uses
    the target's trace instead so the system stays solvable.

    A speaker with no mask mass at a bin (listed in ``psd.floored``) has a zero
    target PSD there. ``absent="error"`` raises as for any degenerate target;
    ``absent="zero"`` gives that bin a zero filter and records it in
    ``BeamformerFilters.zeroed``.
    """
    if eps <= 0:
        raise BeamformError("eps must be positive")
    if absent not in ("error", "zero"):
        raise BeamformError(f"unknown absent-target policy {absent!r}")
    skip = set(psd.floored) if absent == "zero" else set()
    phi = psd.matrices
    n_src, F, C, _ = phi.shape
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (C,):
        raise BeamformError(f"reference vector must have length {C}")
    total = phi.sum(axis=0)
    eye = np.eye(C)

    weights = np.empty((n_src - 1, F, C), dtype=np.complex128)
    conds = np.empty((n_src - 1, F))
    fallbacks, zeroed = [], []
    for i in range(1, n_src):
        interference = total - phi[i]
        for f in range(F):
            if (i, f) in skip:
                weights[i - 1, f] = 0.0
                conds[i - 1, f] = np.nan
                zeroed.append((i, f))
                continue
            phi_int = interference[f]
            scale = np.real(np.trace(phi_int)) / C
            if scale <= 0:
                scale = np.real(np.trace(phi[i, f])) / C
            phi_int = phi_int + eps * scale * eye
            conds[i - 1, f] = np.linalg.cond(phi_int)
            a, used_pinv = _solve(phi_int, phi[i, f])
            if used_pinv:
                fallbacks.append((i, f))
            tr = np.trace(a)
            if abs(tr) < DEGENERATE_TRACE:
                raise BeamformError(f"degenerate target PSD at frequency {f} (speaker {i})")
            weights[i - 1, f] = (a / tr) @ u
    return BeamformerFilters(weights, u, conds, fallbacks, zeroed)


def selector_filters(n_speakers: int, n_bins: int, u) -> BeamformerFilters:
    """Filters that simply pass the reference channel for every speaker."""
    u = np.asarray(u, dtype=np.float64)
    return BeamformerFilters(np.broadcast_to(u.astype(complex), (n_speakers, n_bins, len(u))).copy(), u)


def apply_filters(filters: BeamformerFilters, mix: MultichannelSpectrogram) -> SeparatedSpectrograms:
    if filters.weights.shape[2] != mix.n_channels:
        raise BeamformError("filter and mixture channel counts differ")
    if filters.weights.shape[1] != mix.shape[1]:
        raise BeamformError("filter and mixture frequency counts differ")
    out = np.einsum("jfc,tfc->jtf", np.conj(filters.weights), mix.data)
    return SeparatedSpectrograms(out, mix.config, mix.original_len_samples)


def select_reference(mix: MultichannelSpectrogram, masks: MaskSet | None = None,
                     policy: str | int = "max_power") -> np.ndarray:
    """One-hot reference vector.

    ``policy`` is a channel index (fixed reference) or ``"max_power"``, which
    picks the channel with the largest mask-weighted power summed over all
    sources, time and frequency; ties go to the lowest index.
    """
    C = mix.n_channels
    if isinstance(policy, (int, np.integer)) and not isinstance(policy, bool):
        c = int(policy)
        if not 0 <= c < C:
            raise BeamformError(f"reference channel {c} out of range for {C} channels")
    elif policy == "max_power":
        power = np.abs(mix.data) ** 2
        if masks is not None:
            power = masks.data.sum(axis=0) * power
        c = int(np.argmax(power.sum(axis=(0, 1))))
    else:
        raise BeamformError(f"unknown reference policy {policy!r}")
    u = np.zeros(C)
    u[c] = 1.0
    return u


def steering_vector(azimuth_deg, freq_hz: float, mic_positions_m, speed_mps: float = 343.0) -> np.ndarray:
    """Far-field, unit-gain steering vectors in the horizontal plane.

    Phases are relative to the array centroid. Returns shape (n_angles, C).
    """
    mics = np.atleast_2d(np.asarray(mic_positions_m, dtype=float))
    mics = mics - mics.mean(axis=0)
    theta = np.radians(np.atleast_1d(azimuth_deg))
    direction = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=-1)
    # a wave arriving from `direction` reaches mics closer to the source earlier
    delays = -(direction @ mics.T) / speed_mps
    return np.exp(-2j * np.pi * freq_hz * delays)


def beam_pattern(
    filters: BeamformerFilters,
    source_index: int,
    freqs_hz,
    mic_positions_m,
    speed_mps: float = 343.0,
    config: StftConfig | None = None,
    azimuths_deg=None,
) -> list[tuple[float, float, float]]:
    """Rows of (azimuth_deg, freq_hz, magnitude) for speaker ``source_index`` (1-based).

    Each requested frequency is evaluated at the nearest STFT bin, and the
    steering vector uses that bin's centre frequency.
    """
    config = config or StftConfig()
    nyquist = config.sample_rate_hz / 2
    if not 1 <= source_index <= filters.weights.shape[0]:
        raise BeamformError(f"speaker index {source_index} out of range")
    if azimuths_deg is None:
        azimuths_deg = np.arange(360)
    rows = []
    for freq in freqs_hz:
        if freq < 0 or freq > nyquist:
            raise BeamformError(f"frequency {freq} Hz outside [0, {nyquist}] Hz")
        k = int(round(freq * config.fft_size / config.sample_rate_hz))
        d = steering_vector(azimuths_deg, k * config.sample_rate_hz / config.fft_size,
                            mic_positions_m, speed_mps)
        g = filters.weights[source_index - 1, k]
        response = np.abs(d @ np.conj(g))
        rows.extend((float(a), float(freq), float(r)) for a, r in zip(azimuths_deg, response))
    return rows
