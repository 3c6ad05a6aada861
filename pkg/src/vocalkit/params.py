"""Tunable settings for spectrograms, segmentation, embedding and clustering."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class Parameters:
    """All knobs for the pipeline, in one immutable record.

    Frequencies are in Hz, durations in seconds, window/hop/fft sizes in
    samples. ``silence_threshold_db`` is relative to the spectrogram maximum
    (always negative); ``top_db`` is the dynamic-range floor below that
    maximum.
    """

    sample_rate_hz: int = 22050
    window_length: int = 1024
    hop_length: int = 128
    fft_size: int = 1024
    num_mel_bands: int = 224
    lowcut_hz: float = 0.0
    highcut_hz: float = 11025.0
    top_db: float = 65.0
    silence_threshold_db: float = -25.0
    min_unit_duration_s: float = 0.02
    max_unit_duration_s: float = 0.4
    min_silence_duration_s: float = 0.02
    dereverb_strength: float = 0.0
    dereverb_history_frames: int = 0
    song_level: bool = False
    embed_dim: int = 10
    min_cluster_size: int | None = None  # None: max(5, 1% of the group's rows)

    def replace(self, **changes) -> "Parameters":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Parameters":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown parameter keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: Path | str) -> "Parameters":
        """Load parameters from a JSON key-value document. Unknown keys are rejected."""
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: parameters file must hold a JSON object")
        return cls.from_dict(data)

    def to_file(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def validate_parameters(p: Parameters) -> list[str]:
    """Check every invariant and return all violations (empty list means valid).

    Violations are data, not exceptions: callers decide whether to abort.
    """
    v: list[str] = []
    if p.sample_rate_hz <= 0:
        v.append(f"sample_rate_hz must be positive (got {p.sample_rate_hz})")
    if p.hop_length <= 0:
        v.append(f"hop_length must be positive (got {p.hop_length})")
    if p.hop_length > p.window_length:
        v.append(
            f"hop_length ({p.hop_length}) must not exceed window_length ({p.window_length})"
        )
    if p.window_length > p.fft_size:
        v.append(
            f"window_length ({p.window_length}) must not exceed fft_size ({p.fft_size})"
        )
    if p.num_mel_bands <= 0:
        v.append(f"num_mel_bands must be positive (got {p.num_mel_bands})")
    if p.lowcut_hz < 0:
        v.append(f"lowcut_hz must be >= 0 (got {p.lowcut_hz})")
    if p.lowcut_hz >= p.highcut_hz:
        v.append(
            f"lowcut_hz ({p.lowcut_hz}) must be below highcut_hz ({p.highcut_hz})"
        )
    if p.highcut_hz > p.sample_rate_hz / 2:
        v.append(
            f"highcut_hz ({p.highcut_hz}) must not exceed Nyquist "
            f"({p.sample_rate_hz / 2})"
        )
    if p.min_unit_duration_s <= 0:
        v.append(f"min_unit_duration_s must be > 0 (got {p.min_unit_duration_s})")
    if p.max_unit_duration_s <= p.min_unit_duration_s:
        v.append(
            f"max_unit_duration_s ({p.max_unit_duration_s}) must exceed "
            f"min_unit_duration_s ({p.min_unit_duration_s})"
        )
    if p.min_silence_duration_s < 0:
        v.append(
            f"min_silence_duration_s must be >= 0 (got {p.min_silence_duration_s})"
        )
    if p.silence_threshold_db >= 0:
        v.append(
            f"silence_threshold_db must be negative (got {p.silence_threshold_db})"
        )
    if p.top_db <= 0:
        v.append(f"top_db must be positive (got {p.top_db})")
    if not 0.0 <= p.dereverb_strength <= 1.0:
        v.append(f"dereverb_strength must lie in [0, 1] (got {p.dereverb_strength})")
    if p.dereverb_history_frames < 0:
        v.append(
            f"dereverb_history_frames must be >= 0 (got {p.dereverb_history_frames})"
        )
    if p.embed_dim <= 0:
        v.append(f"embed_dim must be positive (got {p.embed_dim})")
    if p.min_cluster_size is not None and p.min_cluster_size < 2:
        v.append(f"min_cluster_size must be >= 2 (got {p.min_cluster_size})")
    return v


def effective_min_cluster_size(p: Parameters, n_rows: int) -> int:
    """Cluster-size floor for a group of n_rows: explicit setting, else max(5, 1%)."""
    if p.min_cluster_size is not None:
        return p.min_cluster_size
    return max(5, int(round(0.01 * n_rows)))
