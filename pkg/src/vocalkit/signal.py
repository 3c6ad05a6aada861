"""Spectrograms, band-limiting, dereverberation and amplitude-threshold unit segmentation.

All functions are pure: they never mutate their inputs, so corpus-level
parallelism can map them over records freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.fft

from vocalkit.params import Parameters

_AMIN = 1e-10  # linear-magnitude floor before taking logs


class InputTooShortError(ValueError):
    """Audio shorter than one analysis window."""


@dataclass
class Spectrogram:
    """dB-normalised mel spectrogram (max = 0, floor = -top_db) with its geometry.

    values has shape [num_mel_bands, frames]. frame_times holds the centre
    time of each analysis window in seconds; mel_center_hz the centre
    frequency of each band.
    """

    values: np.ndarray
    sample_rate_hz: int
    hop_length: int
    window_length: int
    top_db: float
    mel_center_hz: np.ndarray
    frame_times: np.ndarray

    @property
    def num_bands(self) -> int:
        return self.values.shape[0]

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class UnitSegmentation:
    """Unit onsets/offsets in seconds with per-unit flags.

    Invariants (established by segment_into_units, re-checked after load):
    onsets strictly increasing, offsets[i] > onsets[i], and silence gaps
    are at least the configured minimum.
    """

    onsets_s: np.ndarray
    offsets_s: np.ndarray
    unit_durations_s: np.ndarray
    silence_durations_s: np.ndarray
    flags: list[str] = field(default_factory=list)

    @property
    def num_units(self) -> int:
        return len(self.onsets_s)

    def to_dict(self) -> dict:
        return {
            "onsets_s": [float(x) for x in self.onsets_s],
            "offsets_s": [float(x) for x in self.offsets_s],
            "unit_durations_s": [float(x) for x in self.unit_durations_s],
            "silence_durations_s": [float(x) for x in self.silence_durations_s],
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnitSegmentation":
        return cls(
            onsets_s=np.asarray(d["onsets_s"], dtype=np.float64),
            offsets_s=np.asarray(d["offsets_s"], dtype=np.float64),
            unit_durations_s=np.asarray(d["unit_durations_s"], dtype=np.float64),
            silence_durations_s=np.asarray(d["silence_durations_s"], dtype=np.float64),
            flags=list(d["flags"]),
        )


def hz_to_mel(hz):
    """Perceptual mel scale: m = 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _mel_filterbank_cached(
    num_bands: int, fft_size: int, sample_rate_hz: int, lowcut_hz: float, highcut_hz: float
) -> tuple[np.ndarray, np.ndarray]:
    edges_mel = np.linspace(hz_to_mel(lowcut_hz), hz_to_mel(highcut_hz), num_bands + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_freqs = np.arange(fft_size // 2 + 1) * (sample_rate_hz / fft_size)

    lower = edges_hz[:-2, None]
    center = edges_hz[1:-1, None]
    upper = edges_hz[2:, None]
    up = (bin_freqs[None, :] - lower) / np.maximum(center - lower, 1e-12)
    down = (upper - bin_freqs[None, :]) / np.maximum(upper - center, 1e-12)
    filters = np.maximum(0.0, np.minimum(up, down))
    return filters.astype(np.float32), edges_hz[1:-1].copy()


def mel_filterbank(
    num_bands: int, fft_size: int, sample_rate_hz: int, lowcut_hz: float, highcut_hz: float
) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters evenly spaced on the mel scale between the cut frequencies.

    Returns (filters [num_bands, fft_size//2 + 1], band centre frequencies in Hz).
    Filters peak at 1; bands too narrow for the FFT grid may be empty and end
    up at the dB floor after normalisation. Cached: callers get copies.
    """
    filters, centers = _mel_filterbank_cached(
        int(num_bands), int(fft_size), int(sample_rate_hz), float(lowcut_hz), float(highcut_hz)
    )
    return filters.copy(), centers.copy()


def frame_count(num_samples: int, window_length: int, hop_length: int) -> int:
    """Frames for a signal with no final-window padding."""
    if num_samples < window_length:
        return 0
    return 1 + (num_samples - window_length) // hop_length


def compute_spectrogram(audio: np.ndarray, p: Parameters) -> Spectrogram:
    """STFT magnitude -> mel filterbank -> dB -> normalise to max 0, clip at -top_db.

    Frames are Hann-windowed; the trailing partial window is dropped, so
    frames = 1 + floor((samples - window) / hop). Raises InputTooShortError
    when the audio cannot fill one window.
    """
    audio = np.asarray(audio)
    if audio.ndim != 1:
        raise ValueError(f"audio must be mono, got shape {audio.shape}")
    if not np.all(np.isfinite(audio)):
        raise ValueError("audio contains non-finite samples")
    n = len(audio)
    if n < p.window_length:
        raise InputTooShortError(
            f"audio has {n} samples but the analysis window needs {p.window_length}"
        )

    frames = frame_count(n, p.window_length, p.hop_length)
    window = np.hanning(p.window_length).astype(np.float32)
    strided = np.lib.stride_tricks.sliding_window_view(
        audio.astype(np.float32, copy=False), p.window_length
    )[:: p.hop_length][:frames]
    spectrum = scipy.fft.rfft(strided * window, n=p.fft_size, axis=1)
    magnitude = np.abs(spectrum).T  # [bins, frames]

    filters, centers = _mel_filterbank_cached(
        p.num_mel_bands, p.fft_size, p.sample_rate_hz, float(p.lowcut_hz), float(p.highcut_hz)
    )
    mel = filters @ magnitude
    db = 20.0 * np.log10(np.maximum(mel, _AMIN))
    db -= db.max()
    np.maximum(db, -p.top_db, out=db)

    frame_times = (
        np.arange(frames, dtype=np.float64) * p.hop_length + p.window_length / 2.0
    ) / p.sample_rate_hz
    return Spectrogram(
        values=db.astype(np.float32),
        sample_rate_hz=p.sample_rate_hz,
        hop_length=p.hop_length,
        window_length=p.window_length,
        top_db=p.top_db,
        mel_center_hz=centers.copy(),
        frame_times=frame_times,
    )


def bandpass(spec: Spectrogram, lowcut_hz: float, highcut_hz: float) -> Spectrogram:
    """Silence mel bands whose centre frequency lies outside [lowcut, highcut].

    Out-of-band bands are set to -top_db; in-band values are untouched.
    """
    if lowcut_hz >= highcut_hz:
        raise ValueError(f"inverted band: [{lowcut_hz}, {highcut_hz}]")
    if lowcut_hz < 0 or highcut_hz > spec.sample_rate_hz / 2:
        raise ValueError(
            f"band [{lowcut_hz}, {highcut_hz}] outside [0, {spec.sample_rate_hz / 2}]"
        )
    out = spec.values.copy()
    outside = (spec.mel_center_hz < lowcut_hz) | (spec.mel_center_hz > highcut_hz)
    out[outside, :] = -spec.top_db
    return replace(spec, values=out)


def dereverberate(spec: Spectrogram, strength: float, history_frames: int) -> Spectrogram:
    """Subtract a fraction of the trailing-frame mean magnitude to damp echoes.

    Works on linear magnitudes m = 10^(dB/20):
    out[f, t] = max(m[f, t] - strength * mean(m[f, t-n .. t-1]), 0), with the
    first n frames passed through, then re-normalised back to dB.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must lie in [0, 1], got {strength}")
    if history_frames < 0:
        raise ValueError(f"history_frames must be >= 0, got {history_frames}")
    if strength == 0.0 or history_frames == 0:
        return replace(spec, values=spec.values.copy())

    m = np.power(10.0, spec.values.astype(np.float64) / 20.0)
    n = history_frames
    frames = m.shape[1]
    out = m.copy()
    if frames > n:
        csum = np.cumsum(m, axis=1)
        # mean over frames [t-n, t-1] for t >= n
        trailing = (csum[:, n - 1 : frames - 1] - np.concatenate(
            [np.zeros((m.shape[0], 1)), csum[:, : frames - n - 1]], axis=1
        )) / n
        out[:, n:] = np.maximum(m[:, n:] - strength * trailing, 0.0)

    db = 20.0 * np.log10(np.maximum(out, _AMIN))
    db -= db.max()
    np.maximum(db, -spec.top_db, out=db)
    return replace(spec, values=db.astype(np.float32))


def amplitude_envelope(spec: Spectrogram) -> np.ndarray:
    """Per-frame envelope: maximum over mel bands of the dB values."""
    return spec.values.max(axis=0)


def _active_runs(active: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as inclusive (start, end) frame pairs."""
    runs: list[tuple[int, int]] = []
    start = None
    for i, flag in enumerate(active):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(active) - 1))
    return runs


def segment_into_units(spec: Spectrogram, p: Parameters) -> UnitSegmentation:
    """Threshold the envelope into units: activate, group, merge gaps, drop, flag.

    Steps: (1) frames with envelope >= silence_threshold_db are active;
    (2) maximal active runs become candidates; (3) candidates separated by a
    gap shorter than min_silence_duration_s are merged; (4) units shorter
    than min_unit_duration_s are dropped; (5) units longer than
    max_unit_duration_s are flagged, never split; (6) frame indices map to
    seconds through the frame grid. An empty result is valid.
    """
    if spec.values.size and spec.values.max() > 1e-3:
        raise ValueError("spectrogram must be normalised (max = 0) before segmentation")

    sr = spec.sample_rate_hz
    hop = spec.hop_length
    envelope = amplitude_envelope(spec)
    if envelope.size == 0 or envelope.max() == envelope.min():
        # zero dynamic range: silence (or constant input) has no units to
        # stand out above a threshold that is relative to the maximum
        return UnitSegmentation(
            onsets_s=np.zeros(0),
            offsets_s=np.zeros(0),
            unit_durations_s=np.zeros(0),
            silence_durations_s=np.zeros(0),
            flags=[],
        )
    active = envelope >= p.silence_threshold_db
    candidates = _active_runs(active)

    # merge candidates separated by a too-short gap
    merged: list[tuple[int, int]] = []
    for a, b in candidates:
        if merged:
            gap_s = (a - merged[-1][1] - 1) * hop / sr
            if gap_s < p.min_silence_duration_s:
                merged[-1] = (merged[-1][0], b)
                continue
        merged.append((a, b))

    kept = [
        (a, b) for a, b in merged if (b - a + 1) * hop / sr >= p.min_unit_duration_s
    ]

    # each frame owns a hop-wide slot centred on its window centre
    half_hop_s = hop / (2.0 * sr)
    onsets = np.array([spec.frame_times[a] - half_hop_s for a, _ in kept])
    offsets = np.array([spec.frame_times[b] + half_hop_s for _, b in kept])
    durations = offsets - onsets
    silences = onsets[1:] - offsets[:-1] if len(kept) > 1 else np.zeros(0)
    flags = [
        "exceeds_max_unit_duration" if d > p.max_unit_duration_s else ""
        for d in durations
    ]
    return UnitSegmentation(
        onsets_s=onsets,
        offsets_s=offsets,
        unit_durations_s=durations,
        silence_durations_s=silences,
        flags=flags,
    )


def segmentation_violations(seg: UnitSegmentation, p: Parameters) -> list[str]:
    """Re-checkable invariants for a segmentation (e.g. after deserialisation)."""
    v: list[str] = []
    n = seg.num_units
    if not (len(seg.offsets_s) == len(seg.unit_durations_s) == len(seg.flags) == n):
        v.append("onsets/offsets/durations/flags lengths disagree")
        return v
    if len(seg.silence_durations_s) != max(0, n - 1):
        v.append("silence_durations length must be max(0, units - 1)")
    tol = 1e-9
    if n and np.any(np.diff(seg.onsets_s) <= 0):
        v.append("onsets must be strictly increasing")
    if n and np.any(seg.offsets_s <= seg.onsets_s):
        v.append("each offset must exceed its onset")
    if n > 1 and np.any(seg.onsets_s[1:] < seg.offsets_s[:-1] - tol):
        v.append("units must not overlap")
    if n and np.any(
        np.abs(seg.unit_durations_s - (seg.offsets_s - seg.onsets_s)) > tol
    ):
        v.append("unit_durations must equal offsets - onsets")
    if n and np.any(seg.unit_durations_s < p.min_unit_duration_s - tol):
        v.append(f"unit shorter than min_unit_duration_s ({p.min_unit_duration_s})")
    if n > 1:
        gaps = seg.onsets_s[1:] - seg.offsets_s[:-1]
        if np.any(np.abs(gaps - seg.silence_durations_s) > tol):
            v.append("silence_durations must equal the inter-unit gaps")
        if np.any(gaps < p.min_silence_duration_s - tol):
            v.append(
                f"silence shorter than min_silence_duration_s ({p.min_silence_duration_s})"
            )
    return v


def _frame_index(spec: Spectrogram, t_s: float) -> int:
    half_window = spec.window_length / 2.0
    half_hop = spec.hop_length / 2.0
    return int(round((t_s * spec.sample_rate_hz - half_window + half_hop) / spec.hop_length))


def extract_unit_spectrograms(spec: Spectrogram, seg: UnitSegmentation) -> list[Spectrogram]:
    """Cut one column-slice per unit, [onset_frame, offset_frame), metadata copied."""
    slices: list[Spectrogram] = []
    for i in range(seg.num_units):
        a = _frame_index(spec, float(seg.onsets_s[i]))
        b = _frame_index(spec, float(seg.offsets_s[i]))
        if a < 0 or b > spec.num_frames or a >= b:
            raise IndexError(
                f"unit {i} spans frames [{a}, {b}) outside spectrogram "
                f"with {spec.num_frames} frames"
            )
        slices.append(
            replace(
                spec,
                values=spec.values[:, a:b].copy(),
                frame_times=spec.frame_times[a:b].copy(),
            )
        )
    return slices
