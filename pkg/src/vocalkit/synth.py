"""Synthetic song and repertoire generators.

Used by the bench subcommand, the shipped 20-song demo corpus, and the test
suite, which needs corpora with exactly known unit boundaries and labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vocalkit.audio import write_wav
from vocalkit.params import Parameters
from vocalkit.signal import compute_spectrogram, segment_into_units

RAMP_S = 0.003  # raised-cosine edge inside each unit, keeps spectral splatter down


def tone_unit(sr: int, duration_s: float, freq_hz: float, amplitude: float) -> np.ndarray:
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    samples = amplitude * np.sin(2.0 * np.pi * freq_hz * t)
    ramp = min(int(RAMP_S * sr), n // 2)
    if ramp > 0:
        shape = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        samples[:ramp] *= shape
        samples[-ramp:] *= shape[::-1]
    return samples


def synth_song(
    units: list[tuple[float, float, float]],
    sr: int,
    length_s: float,
    noise_db: float = -40.0,
    seed: int = 0,
    amplitude: float = 0.5,
) -> tuple[np.ndarray, list[tuple[float, float]]]:
    """Render tones into a noisy track.

    units: (onset_s, duration_s, freq_hz) triples. Returns (samples, ground
    truth (onset_s, offset_s) pairs). noise_db is the white-noise floor
    relative to tone amplitude.
    """
    rng = np.random.default_rng(seed)
    n = int(round(length_s * sr))
    samples = rng.normal(0.0, amplitude * 10.0 ** (noise_db / 20.0), n)
    truth = []
    for onset_s, dur_s, freq in units:
        start = int(round(onset_s * sr))
        unit = tone_unit(sr, dur_s, freq, amplitude)
        end = min(start + len(unit), n)
        samples[start:end] += unit[: end - start]
        truth.append((onset_s, onset_s + dur_s))
    return samples.astype(np.float32), truth


def random_song_plan(
    rng: np.random.Generator,
    n_units: int,
    unit_dur: tuple[float, float] = (0.06, 0.15),
    gap: tuple[float, float] = (0.06, 0.18),
    freq: tuple[float, float] = (2000.0, 8000.0),
    lead_s: float = 0.15,
) -> tuple[list[tuple[float, float, float]], float]:
    """Random unit layout for one song; returns (units, total length)."""
    units = []
    t = lead_s
    for _ in range(n_units):
        dur = rng.uniform(*unit_dur)
        units.append((t, dur, rng.uniform(*freq)))
        t += dur + rng.uniform(*gap)
    return units, t + lead_s


# ---------------------------------------------------------------------------
# shipped demo corpus: 5 birds x 2 years x 2 song types, 20 songs total
# ---------------------------------------------------------------------------

SAMPLE_BIRDS = ("GT01", "GT02", "GT03", "GT04", "GT05")
SAMPLE_YEARS = (2020, 2021)


def _song_type_units(base_hz: float, song_type: int) -> list[tuple[float, float]]:
    """(duration_s, freq multiplier) motifs; the base frequency is per bird.

    Each type repeats one note so that a bird's units form groups big enough
    for the default cluster-size floor even in this small demo corpus.
    """
    if song_type == 0:
        motif = [(0.09, 1.0), (0.07, 1.0), (0.09, 1.0), (0.07, 1.0), (0.11, 1.0)]
    else:
        motif = [(0.12, 1.45), (0.06, 1.45), (0.12, 1.45), (0.06, 1.45)]
    return [(dur, base_hz * mult) for dur, mult in motif]


def make_sample_corpus(raw_dir: Path | str, sr: int = 22050) -> list[str]:
    """Write the deterministic 20-song demo set (WAV + JSON sidecars).

    Each bird keeps the same two song types in both years, so the demo also
    exercises the cross-year matching path. Returns the song ids written.
    """
    raw_dir = Path(raw_dir)
    raw_dir.mkdir(parents=True, exist_ok=True)
    ids = []
    for b, bird in enumerate(SAMPLE_BIRDS):
        base_hz = 2200.0 + 750.0 * b
        for year in SAMPLE_YEARS:
            for song_type in (0, 1):
                seed = b * 101 + (year - SAMPLE_YEARS[0]) * 17 + song_type
                rng = np.random.default_rng(seed)
                units = []
                t = 0.15
                for dur, freq in _song_type_units(base_hz, song_type):
                    jitter = 1.0 + rng.uniform(-0.01, 0.01)
                    units.append((t, dur, freq * jitter))
                    t += dur + rng.uniform(0.05, 0.09)
                length_s = t + 0.15
                samples, _ = synth_song(units, sr, length_s, noise_db=-42.0, seed=seed)
                song_id = f"{bird}_{year}_{song_type}"
                write_wav(raw_dir / f"{song_id}.wav", sr, samples)
                sidecar = {
                    "ID": song_id,
                    "individual": bird,
                    "datetime": f"{year}-04-{10 + b:02d}T05:30:00",
                    "sample_rate": sr,
                    "length_s": round(length_s, 6),
                    "song_type_truth": str(song_type),
                }
                with open(raw_dir / f"{song_id}.json", "w", encoding="utf-8") as fh:
                    json.dump(sidecar, fh, indent=2)
                ids.append(song_id)
    return ids


# ---------------------------------------------------------------------------
# spectral-template repertoires (feature-level, for clustering and re-id)
# ---------------------------------------------------------------------------

def repertoire_rows(
    rng: np.random.Generator,
    n_types: int,
    songs_per_type: int,
    dim: int = 384,
    noise_sd: float = 3.0,
    top_db: float = 65.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-perturbed spectral templates: rows in [-top_db, 0], true labels."""
    templates = rng.uniform(-60.0, -5.0, size=(n_types, dim))
    labels = np.repeat(np.arange(n_types), songs_per_type)
    rows = templates[labels] + rng.normal(0.0, noise_sd, size=(len(labels), dim))
    return np.clip(rows, -top_db, 0.0), labels


def reid_rows(
    rng: np.random.Generator,
    n_birds: int = 12,
    years: tuple[int, ...] = (2020, 2021),
    songs_per_year: int = 6,
    dim: int = 384,
    types_per_bird: int = 1,
    type_sd: float = 4.0,
    year_sd: float = 1.0,
    song_sd: float = 0.5,
    top_db: float = 65.0,
) -> tuple[np.ndarray, list[tuple[str, int, str, int]]]:
    """Persistent per-bird templates plus per-year and per-song noise.

    Each bird keeps a base signature across years; song types are smaller
    deviations from it, so cross-type pairs within a bird stay more similar
    than any cross-bird pair. meta holds (bird_id, year, song_id, type) per
    row. Noise sits far below the separation between random bird templates,
    so cross-year identity is recoverable by construction.
    """
    base = rng.uniform(-60.0, -5.0, size=(n_birds, dim))
    type_dev = rng.normal(0.0, type_sd, size=(n_birds, types_per_bird, dim))
    rows = []
    meta = []
    for b in range(n_birds):
        bird = f"B{b:02d}"
        for year in years:
            drift = rng.normal(0.0, year_sd, size=dim)
            for s in range(songs_per_year):
                song_type = s % types_per_bird
                row = (
                    base[b]
                    + type_dev[b, song_type]
                    + drift
                    + rng.normal(0.0, song_sd, size=dim)
                )
                rows.append(np.clip(row, -top_db, 0.0))
                meta.append((bird, year, f"{bird}_{year}_{s:02d}", song_type))
    return np.asarray(rows), meta


# ---------------------------------------------------------------------------
# throughput bench
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    sr: int = 22050
    units_per_song: int = 10
    noise_db: float = -40.0
    base_seed: int = 20_000
    params: Parameters = Parameters()


def bench_song_task(item: tuple[int, BenchConfig]) -> tuple[int, bytes]:
    """Synth one song, compute its spectrogram, segment it.

    Returns (units found, serialized boundaries) so the harness can count
    throughput and byte-compare runs at different worker counts.
    """
    index, cfg = item
    rng = np.random.default_rng(cfg.base_seed + index)
    plan, length_s = random_song_plan(rng, cfg.units_per_song)
    samples, _ = synth_song(
        plan, cfg.sr, length_s, noise_db=cfg.noise_db, seed=cfg.base_seed + index
    )
    spec = compute_spectrogram(samples, cfg.params)
    seg = segment_into_units(spec, cfg.params)
    payload = seg.onsets_s.astype("<f8").tobytes() + seg.offsets_s.astype("<f8").tobytes()
    return seg.num_units, payload
