"""Persistent vocalisation database: records, spectrogram store, export utilities.

A dataset lives under a project's directories: song and unit spectrograms as
.kspec files, the record table as JSON Lines, and a checksummed manifest that
chains a version stamp across pipeline stages.
"""

from __future__ import annotations

import hashlib
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from vocalkit.audio import WavError, read_wav
from vocalkit.params import Parameters, validate_parameters
from vocalkit.parallel import JobSpec, par_map
from vocalkit.project import AnnotationMeta, Catalogue, ProjectDirs
from vocalkit.signal import (
    Spectrogram,
    UnitSegmentation,
    compute_spectrogram,
    dereverberate,
    extract_unit_spectrograms,
    mel_filterbank,
    segment_into_units,
    segmentation_violations,
)
from vocalkit.storage import (
    MANIFEST_FORMAT_VERSION,
    StorageError,
    UnsupportedVersionError,
    build_checksums,
    read_json,
    read_jsonl,
    read_kspec,
    verify_checksums,
    write_json,
    write_jsonl,
    write_kspec,
)

STAGE_ORDER = ("built", "segmented", "embedded", "clustered")


class StageError(Exception):
    """A pipeline stage was invoked before its prerequisite completed."""


@dataclass
class VocalisationRecord:
    meta: AnnotationMeta
    segmentation: UnitSegmentation | None = None
    spectrogram_ref: str | None = None
    unit_spectrogram_refs: list[str] = field(default_factory=list)
    cluster_label: int | None = None
    label_source: str | None = None  # "auto" | "human"
    song_type: str | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self, base: Path | None = None) -> dict:
        return {
            "id": self.meta.id,
            "meta": self.meta.to_dict(base),
            "segmentation": self.segmentation.to_dict() if self.segmentation else None,
            "spectrogram": self.spectrogram_ref,
            "unit_spectrograms": list(self.unit_spectrogram_refs),
            "cluster_label": self.cluster_label,
            "label_source": self.label_source,
            "song_type": self.song_type,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VocalisationRecord":
        seg = d.get("segmentation")
        return cls(
            meta=AnnotationMeta.from_dict(d["meta"]),
            segmentation=UnitSegmentation.from_dict(seg) if seg else None,
            spectrogram_ref=d.get("spectrogram"),
            unit_spectrogram_refs=list(d.get("unit_spectrograms", [])),
            cluster_label=d.get("cluster_label"),
            label_source=d.get("label_source"),
            song_type=d.get("song_type"),
            flags=list(d.get("flags", [])),
        )


@dataclass
class Dataset:
    """Immutable snapshot of the pipeline state; stage methods return new instances."""

    dirs: ProjectDirs
    params: Parameters
    records: dict[str, VocalisationRecord]
    stages: list[str] = field(default_factory=lambda: ["built"])
    version: int = 1
    failures: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def has_stage(self, stage: str) -> bool:
        return stage in self.stages

    def require_stage(self, stage: str, before: str) -> None:
        if not self.has_stage(stage):
            raise StageError(f"run {stage_command(stage)} before {before}")

    def with_stage(self, stage: str) -> "Dataset":
        stages = list(self.stages)
        if stage not in stages:
            stages.append(stage)
        return replace(self, stages=stages, version=self.version + 1)

    def individuals(self) -> list[str]:
        return sorted({r.meta.individual_id for r in self.records.values()})

    # -- paths ------------------------------------------------------------

    def dataset_dir(self) -> Path:
        return self.dirs.output / "dataset"

    def rel(self, path: Path) -> str:
        return str(path.relative_to(self.dirs.root))

    def resolve(self, ref: str) -> Path:
        return self.dirs.root / ref


def stage_command(stage: str) -> str:
    return {"built": "ingest", "segmented": "segment", "embedded": "embed", "clustered": "cluster"}[stage]


def spectrogram_geometry(matrix: np.ndarray, p: Parameters, frame_offset: int = 0) -> Spectrogram:
    """Rebuild a Spectrogram around a stored matrix using the dataset parameters."""
    _, centers = mel_filterbank(
        matrix.shape[0], p.fft_size, p.sample_rate_hz, p.lowcut_hz, p.highcut_hz
    )
    frames = matrix.shape[1]
    frame_times = (
        (np.arange(frames, dtype=np.float64) + frame_offset) * p.hop_length
        + p.window_length / 2.0
    ) / p.sample_rate_hz
    return Spectrogram(
        values=matrix,
        sample_rate_hz=p.sample_rate_hz,
        hop_length=p.hop_length,
        window_length=p.window_length,
        top_db=p.top_db,
        mel_center_hz=centers,
        frame_times=frame_times,
    )


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

def build_dataset(dirs: ProjectDirs, catalogue: Catalogue, p: Parameters) -> Dataset:
    """One record per catalogue entry; unreadable WAVs are collected, not fatal."""
    violations = validate_parameters(p)
    if violations:
        raise ValueError("invalid parameters: " + "; ".join(violations))
    records: dict[str, VocalisationRecord] = {}
    failures: list[tuple[str, str]] = []
    for meta in catalogue.records:
        try:
            read_wav(meta.wav_path)
        except (WavError, OSError) as exc:
            failures.append((meta.id, str(exc)))
            continue
        records[meta.id] = VocalisationRecord(meta=meta)
    ds = Dataset(dirs=dirs, params=p, records=records, failures=failures)
    save(ds)
    return ds


# ---------------------------------------------------------------------------
# segmentation over the whole corpus
# ---------------------------------------------------------------------------

def _segment_record_task(item) -> dict:
    meta, params, spectro_dir = item
    sr, samples = read_wav(meta.wav_path)
    if sr != params.sample_rate_hz:
        raise WavError(
            f"{meta.wav_path}: sample rate {sr} does not match parameters "
            f"({params.sample_rate_hz})"
        )
    spec = compute_spectrogram(samples, params)
    if params.dereverb_strength > 0 and params.dereverb_history_frames > 0:
        spec = dereverberate(spec, params.dereverb_strength, params.dereverb_history_frames)
    seg = segment_into_units(spec, params)
    units = extract_unit_spectrograms(spec, seg)

    spectro_dir = Path(spectro_dir)
    song_path = spectro_dir / f"{meta.id}.kspec"
    write_kspec(song_path, spec.values)
    unit_dir = spectro_dir / "units"
    unit_dir.mkdir(parents=True, exist_ok=True)
    unit_paths = []
    for k, unit in enumerate(units):
        upath = unit_dir / f"{meta.id}_u{k:03d}.kspec"
        write_kspec(upath, unit.values)
        unit_paths.append(str(upath))
    return {
        "id": meta.id,
        "segmentation": seg.to_dict(),
        "spectrogram": str(song_path),
        "unit_spectrograms": unit_paths,
        "zero_units": seg.num_units == 0,
    }


def segment_all(ds: Dataset, p: Parameters, workers: int = 1) -> Dataset:
    """Segment every record; zero-unit records are kept and flagged.

    Output is independent of the worker count: items are processed as pure
    functions and reassembled in id order.
    """
    ds.require_stage("built", "segment")
    ids = sorted(ds.records)
    items = [(ds.records[i].meta, p, str(ds.dirs.spectrograms)) for i in ids]
    result = par_map(JobSpec(items=items, worker_count=workers), _segment_record_task)

    records = dict(ds.records)
    failures = list(ds.failures)
    for idx, out in enumerate(result.values):
        if out is None:
            continue
        rec = records[out["id"]]
        flags = [f for f in rec.flags if f != "zero_units"]
        if out["zero_units"]:
            flags.append("zero_units")
        records[out["id"]] = replace(
            rec,
            segmentation=UnitSegmentation.from_dict(out["segmentation"]),
            spectrogram_ref=str(Path(out["spectrogram"]).relative_to(ds.dirs.root)),
            unit_spectrogram_refs=[
                str(Path(u).relative_to(ds.dirs.root)) for u in out["unit_spectrograms"]
            ],
            flags=flags,
        )
    for idx, msg in result.failures:
        failures.append((ids[idx], msg))

    new = replace(ds, params=p, records=records, failures=failures).with_stage("segmented")
    save(new)
    return new


# ---------------------------------------------------------------------------
# unit feature table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureRowMeta:
    voc_id: str
    unit_index: int  # -1 for song-level rows
    individual_id: str
    year: int


@dataclass
class FeatureGroup:
    """Rows for one padding scope; all vectors share one length."""

    key: str
    rows: list[FeatureRowMeta]
    matrix: np.ndarray
    pad_frames: int


def get_units(ds: Dataset, p: Parameters, scope: str = "per_individual") -> list[FeatureGroup]:
    """Padded, flattened unit rows (or per-song means when song_level is set).

    scope "per_individual" pads within each individual (one group per
    individual); "global" pads everything to the corpus-wide maximum (one
    group). Raises StageError on an unsegmented dataset.
    """
    from vocalkit.embed import pad_and_flatten  # local import: avoids a module cycle

    ds.require_stage("segmented", "get_units")
    if scope not in ("per_individual", "global"):
        raise ValueError(f"unknown scope {scope!r}")

    per_record: dict[str, list[np.ndarray]] = {}
    for rec_id in sorted(ds.records):
        rec = ds.records[rec_id]
        if rec.segmentation is None:
            raise StageError(f"record {rec_id} has no segmentation; run segment first")
        per_record[rec_id] = [read_kspec(ds.resolve(u)) for u in rec.unit_spectrogram_refs]

    def group_key(rec: VocalisationRecord) -> str:
        return rec.meta.individual_id if scope == "per_individual" else "__global__"

    grouped: dict[str, list[tuple[FeatureRowMeta, np.ndarray]]] = {}
    for rec_id in sorted(ds.records):
        rec = ds.records[rec_id]
        units = per_record[rec_id]
        if not units:
            continue
        key = group_key(rec)
        entries = grouped.setdefault(key, [])
        if p.song_level:
            pad = max(u.shape[1] for u in units)
            padded = pad_and_flatten(units, pad, top_db=p.top_db)
            mean_row = padded.mean(axis=0).reshape(units[0].shape[0], pad)
            entries.append(
                (FeatureRowMeta(rec_id, -1, rec.meta.individual_id, rec.meta.year), mean_row)
            )
        else:
            for k, u in enumerate(units):
                entries.append(
                    (FeatureRowMeta(rec_id, k, rec.meta.individual_id, rec.meta.year), u)
                )

    groups: list[FeatureGroup] = []
    for key in sorted(grouped):
        entries = grouped[key]
        pad = max(m.shape[1] for _, m in entries)
        matrix = pad_and_flatten([m for _, m in entries], pad, top_db=p.top_db)
        groups.append(
            FeatureGroup(key=key, rows=[meta for meta, _ in entries], matrix=matrix, pad_frames=pad)
        )
    return groups


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _artifact_refs(ds: Dataset) -> list[str]:
    refs = []
    for rec in ds.records.values():
        if rec.spectrogram_ref:
            refs.append(rec.spectrogram_ref)
        refs.extend(rec.unit_spectrogram_refs)
    emb_dir = ds.dirs.output / "embeddings"
    if emb_dir.exists():
        refs.extend(ds.rel(f) for f in sorted(emb_dir.rglob("*")) if f.is_file())
    return refs


def save(ds: Dataset) -> Path:
    """Persist records + manifest; returns the manifest path."""
    out = ds.dataset_dir()
    out.mkdir(parents=True, exist_ok=True)
    records_path = out / "records.jsonl"
    write_jsonl(
        records_path,
        [ds.records[i].to_dict(base=ds.dirs.root) for i in sorted(ds.records)],
    )

    refs = _artifact_refs(ds) + [ds.rel(records_path)]
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "version": ds.version,
        "stages": list(ds.stages),
        "parameters": ds.params.to_dict(),
        "record_count": len(ds.records),
        "individuals": ds.individuals(),
        "failures": [[i, m] for i, m in ds.failures],
        "checksums": build_checksums(ds.dirs.root, refs),
    }
    manifest_path = out / "manifest.json"
    write_json(manifest_path, manifest)
    return manifest_path


def load(dirs: ProjectDirs, check: bool = True) -> Dataset:
    """Reload a saved dataset; checksum or version mismatches are fatal."""
    manifest_path = dirs.output / "dataset" / "manifest.json"
    if not manifest_path.exists():
        raise StorageError(f"no dataset manifest at {manifest_path}")
    manifest = read_json(manifest_path)
    if manifest.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"manifest format {manifest.get('format_version')} unsupported "
            f"(expected {MANIFEST_FORMAT_VERSION})"
        )
    if check:
        verify_checksums(dirs.root, manifest["checksums"])

    params = Parameters.from_dict(manifest["parameters"])
    rows = read_jsonl(dirs.output / "dataset" / "records.jsonl")
    records = {}
    for row in rows:
        rec = VocalisationRecord.from_dict(row)
        if not rec.meta.wav_path.is_absolute():
            rec = replace(
                rec, meta=replace(rec.meta, wav_path=dirs.root / rec.meta.wav_path)
            )
        if rec.segmentation is not None:
            problems = segmentation_violations(rec.segmentation, params)
            if problems:
                raise StorageError(
                    f"record {rec.meta.id}: segmentation invariants violated after "
                    f"load: {'; '.join(problems)}"
                )
        records[rec.meta.id] = rec
    if manifest["record_count"] != len(records):
        raise StorageError(
            f"manifest record_count {manifest['record_count']} != {len(records)} rows"
        )
    return Dataset(
        dirs=dirs,
        params=params,
        records=records,
        stages=list(manifest["stages"]),
        version=int(manifest["version"]),
        failures=[(i, m) for i, m in manifest.get("failures", [])],
    )


# ---------------------------------------------------------------------------
# training-set export
# ---------------------------------------------------------------------------

def export_training_set(ds: Dataset, split_fraction: float, seed: int) -> dict:
    """Stratified train/test export of labelled song spectrograms.

    Layout: output/{train,test}/<individual>_<label>/<id>.kspec. Noise
    records (label -1) are excluded; unlabelled records are a state error.
    """
    if not 0.0 < split_fraction < 1.0:
        raise ValueError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    unlabelled = [
        rid
        for rid, rec in sorted(ds.records.items())
        if rec.cluster_label is None and "zero_units" not in rec.flags
    ]
    if unlabelled:
        raise StageError(
            "records without a cluster label: " + ", ".join(unlabelled)
        )

    strata: dict[tuple[str, int], list[str]] = {}
    for rid in sorted(ds.records):
        rec = ds.records[rid]
        if rec.cluster_label is None or rec.cluster_label == -1:
            continue
        strata.setdefault((rec.meta.individual_id, rec.cluster_label), []).append(rid)

    for split in ("train", "test"):
        target = ds.dirs.output / split
        if target.exists():
            shutil.rmtree(target)

    counts = {"train": 0, "test": 0}
    for (individual, label), ids in sorted(strata.items()):
        stratum_tag = hashlib.sha256(f"{individual}\x00{label}".encode()).digest()
        rng = np.random.default_rng([seed, int.from_bytes(stratum_tag[:4], "little")])
        order = list(ids)
        rng.shuffle(order)
        n_train = int(round(split_fraction * len(order)))
        assignment = [("train", rid) for rid in order[:n_train]] + [
            ("test", rid) for rid in order[n_train:]
        ]
        for split, rid in assignment:
            rec = ds.records[rid]
            target_dir = ds.dirs.output / split / f"{individual}_{label}"
            target_dir.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(ds.resolve(rec.spectrogram_ref), target_dir / f"{rid}.kspec")
            counts[split] += 1
    return counts
