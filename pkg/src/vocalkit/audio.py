"""Minimal WAV reading/writing. PCM 16/32-bit and IEEE float are supported."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class WavError(Exception):
    """Raised when a WAV file cannot be parsed."""


def wav_header(path: Path | str) -> tuple[int, int, int]:
    """Return (sample_rate, n_frames, n_channels) from the RIFF header only.

    Cheap enough to run over a whole catalogue without touching sample data.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        riff = fh.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise WavError(f"{path}: not a RIFF/WAVE file")
        sample_rate = None
        block_align = None
        data_size = None
        while True:
            head = fh.read(8)
            if len(head) < 8:
                break
            chunk_id, size = struct.unpack("<4sI", head)
            if chunk_id == b"fmt ":
                fmt = fh.read(size)
                if len(fmt) < 16:
                    raise WavError(f"{path}: truncated fmt chunk")
                (_, n_channels, sample_rate, _, block_align, _) = struct.unpack(
                    "<HHIIHH", fmt[:16]
                )
            elif chunk_id == b"data":
                data_size = size
                fh.seek(size + (size & 1), 1)
            else:
                fh.seek(size + (size & 1), 1)
        if sample_rate is None or block_align is None or data_size is None:
            raise WavError(f"{path}: missing fmt or data chunk")
        n_frames = data_size // block_align if block_align else 0
        return sample_rate, n_frames, n_channels


def read_wav(path: Path | str) -> tuple[int, np.ndarray]:
    """Read a WAV file as (sample_rate, mono float32 samples in [-1, 1]).

    Multi-channel audio is averaged down to mono.
    """
    try:
        sr, data = wavfile.read(str(path))
    except Exception as exc:
        raise WavError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float32) - 128.0) / 128.0
    else:
        samples = data.astype(np.float32)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise WavError(f"{path}: non-finite samples")
    return int(sr), samples


def write_wav(path: Path | str, sample_rate: int, samples: np.ndarray) -> None:
    """Write mono float samples as 16-bit PCM."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(str(path), sample_rate, (clipped * 32767.0).astype(np.int16))
