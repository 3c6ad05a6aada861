"""Project directory layout and ingestion of WAV + JSON annotated recordings."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from vocalkit.audio import WavError, wav_header

_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")

REQUIRED_SIDECAR_KEYS = ("ID", "individual", "datetime", "sample_rate", "length_s")


class IngestError(Exception):
    """A recording or its sidecar could not be ingested."""


@dataclass(frozen=True)
class ProjectDirs:
    """Standard project layout: root/{data/raw, data/segmented, data/spectrograms, output}."""

    root: Path
    raw_data: Path
    segmented: Path
    spectrograms: Path
    output: Path

    @classmethod
    def under(cls, root: Path | str) -> "ProjectDirs":
        root = Path(root)
        return cls(
            root=root,
            raw_data=root / "data" / "raw",
            segmented=root / "data" / "segmented",
            spectrograms=root / "data" / "spectrograms",
            output=root / "output",
        )

    def all_dirs(self) -> list[Path]:
        return [self.root, self.raw_data, self.segmented, self.spectrograms, self.output]


def init_project(root: Path | str) -> ProjectDirs:
    """Create the standard sub-directories under root. Idempotent.

    Raises PermissionError when root is not writable.
    """
    dirs = ProjectDirs.under(root)
    for d in dirs.all_dirs():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


@dataclass(frozen=True)
class AnnotationMeta:
    """One recording's annotation: identity, provenance and basic audio facts."""

    id: str
    wav_path: Path
    individual_id: str
    year: int
    recorded_at: str
    sample_rate_hz: int
    length_s: float
    extra: dict[str, str] = field(default_factory=dict)

    def to_dict(self, base: Path | None = None) -> dict:
        """Serialise; with base given, wav_path is stored relative so the
        on-disk form is identical regardless of where the project lives."""
        wav = self.wav_path
        if base is not None:
            try:
                wav = wav.relative_to(base)
            except ValueError:
                pass
        return {
            "id": self.id,
            "wav_path": str(wav),
            "individual_id": self.individual_id,
            "year": self.year,
            "recorded_at": self.recorded_at,
            "sample_rate_hz": self.sample_rate_hz,
            "length_s": self.length_s,
            "extra": dict(sorted(self.extra.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationMeta":
        return cls(
            id=d["id"],
            wav_path=Path(d["wav_path"]),
            individual_id=d["individual_id"],
            year=int(d["year"]),
            recorded_at=d["recorded_at"],
            sample_rate_hz=int(d["sample_rate_hz"]),
            length_s=float(d["length_s"]),
            extra=dict(d.get("extra", {})),
        )


@dataclass
class Catalogue:
    """Validated recordings, sorted by id, plus ingest warnings."""

    records: list[AnnotationMeta]
    missing_sidecar: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self, base: Path | None = None) -> str:
        lines = [json.dumps(r.to_dict(base), sort_keys=False) for r in self.records]
        return "".join(line + "\n" for line in lines)


def _parse_sidecar(json_path: Path, wav_path: Path) -> AnnotationMeta:
    try:
        with open(json_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise IngestError(f"{json_path}: malformed JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise IngestError(f"{json_path}: top-level value must be a JSON object")

    missing = [k for k in REQUIRED_SIDECAR_KEYS if k not in raw]
    if missing:
        raise IngestError(f"{json_path}: missing required keys: {', '.join(missing)}")

    rec_id = str(raw["ID"])
    if not _ID_RE.match(rec_id):
        raise IngestError(
            f"{json_path}: ID {rec_id!r} may only contain [A-Za-z0-9_.-]"
        )

    recorded_at = str(raw["datetime"])
    if "year" in raw:
        year = int(raw["year"])
    else:
        try:
            year = datetime.fromisoformat(recorded_at.replace("Z", "+00:00")).year
        except ValueError as exc:
            raise IngestError(
                f"{json_path}: cannot derive year from datetime {recorded_at!r}"
            ) from exc

    length_s = float(raw["length_s"])
    if length_s <= 0:
        raise IngestError(f"{json_path}: length_s must be > 0 (got {length_s})")

    declared_sr = int(raw["sample_rate"])
    try:
        header_sr, _, _ = wav_header(wav_path)
    except WavError as exc:
        raise IngestError(str(exc)) from exc
    if header_sr != declared_sr:
        raise IngestError(
            f"{json_path}: sample_rate {declared_sr} does not match WAV header "
            f"{header_sr} ({wav_path.name})"
        )

    known = set(REQUIRED_SIDECAR_KEYS) | {"year"}
    extra = {k: str(v) for k, v in raw.items() if k not in known}

    return AnnotationMeta(
        id=rec_id,
        wav_path=wav_path,
        individual_id=str(raw["individual"]),
        year=year,
        recorded_at=recorded_at,
        sample_rate_hz=declared_sr,
        length_s=length_s,
        extra=extra,
    )


def ingest(dirs: ProjectDirs) -> Catalogue:
    """Pair every raw_data WAV with its `<name>.json` sidecar into a catalogue.

    WAVs with no sidecar are reported in ``missing_sidecar`` rather than
    silently dropped. Raises IngestError on malformed sidecars, duplicate
    ids, or a sample-rate mismatch between sidecar and WAV header.
    """
    wavs = sorted(dirs.raw_data.glob("*.wav"))
    records: list[AnnotationMeta] = []
    missing: list[str] = []
    seen: dict[str, Path] = {}
    for wav_path in wavs:
        sidecar = wav_path.with_suffix(".json")
        if not sidecar.exists():
            missing.append(wav_path.name)
            continue
        meta = _parse_sidecar(sidecar, wav_path)
        if meta.id in seen:
            raise IngestError(
                f"duplicate id {meta.id!r} in {sidecar.name} "
                f"(first seen in {seen[meta.id].name})"
            )
        seen[meta.id] = sidecar
        records.append(meta)
    records.sort(key=lambda r: r.id)
    return Catalogue(records=records, missing_sidecar=missing)
