"""Pairwise song similarity and cross-year individual re-identification.

Song vectors are the per-song mean of unit embeddings from the shared
(global) embedding space, so scores are comparable across individuals. The
report states this feature source in its header.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURE_SOURCE_NOTE = (
    "song vectors are means of unit embeddings (global PCA of padded mel "
    "spectrograms); no trained classifier features are involved"
)

PARTITIONS = ("within_bird_within_year", "within_bird_across_year", "across_birds")


@dataclass(frozen=True)
class SongInfo:
    song_id: str
    individual_id: str
    year: int
    label: int | None


@dataclass
class SongVectorTable:
    songs: list[SongInfo]
    vectors: np.ndarray  # [n_songs, dim]
    excluded: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # [n, n], symmetric, diagonal 1
    songs: list[SongInfo]
    excluded: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class ReIdReport:
    predictions: list[dict]
    accuracy: float
    n_evaluated: int
    chance_level_birds: float | None
    chance_level_types: float | None
    n_birds: int
    n_song_types: int
    excluded: list[tuple[str, str]]
    partitions: dict[str, np.ndarray]
    feature_source: str = FEATURE_SOURCE_NOTE

    def to_dict(self) -> dict:
        return {
            "feature_source": self.feature_source,
            "accuracy": self.accuracy,
            "n_evaluated": self.n_evaluated,
            "chance_level_birds": self.chance_level_birds,
            "chance_level_types": self.chance_level_types,
            "n_birds": self.n_birds,
            "n_song_types": self.n_song_types,
            "predictions": self.predictions,
            "excluded": [[i, r] for i, r in self.excluded],
            "partition_sizes": {k: int(len(v)) for k, v in self.partitions.items()},
        }


def song_vectors(ds, table) -> SongVectorTable:
    """One vector per song: the mean of its unit embeddings (or the song-level
    embedding row when song_level was used). Zero-unit songs are excluded and
    reported."""
    by_song: dict[str, list[int]] = {}
    for i, (voc_id, _unit, _ind, _year) in enumerate(table.rows):
        by_song.setdefault(voc_id, []).append(i)

    songs: list[SongInfo] = []
    vectors = []
    excluded: list[tuple[str, str]] = []
    for rec_id in sorted(ds.records):
        rec = ds.records[rec_id]
        idx = by_song.get(rec_id)
        if not idx:
            excluded.append((rec_id, "no units"))
            continue
        songs.append(
            SongInfo(
                song_id=rec_id,
                individual_id=rec.meta.individual_id,
                year=rec.meta.year,
                label=rec.cluster_label,
            )
        )
        vectors.append(table.global_vectors[idx].mean(axis=0))
    matrix = np.asarray(vectors) if vectors else np.zeros((0, 0))
    return SongVectorTable(songs=songs, vectors=matrix, excluded=excluded)


def pairwise_similarity(table: SongVectorTable) -> SimilarityMatrix:
    """Full symmetric cosine matrix; zero vectors are excluded and reported."""
    norms = np.linalg.norm(table.vectors, axis=1)
    keep = norms > 0
    excluded = list(table.excluded) + [
        (table.songs[i].song_id, "zero vector") for i in np.where(~keep)[0]
    ]
    songs = [s for s, k in zip(table.songs, keep) if k]
    if len(songs) < 2:
        raise ValueError(f"need at least 2 non-zero song vectors, got {len(songs)}")
    unit = table.vectors[keep] / norms[keep][:, None]
    values = unit @ unit.T
    values = 0.5 * (values + values.T)
    np.clip(values, -1.0, 1.0, out=values)
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(values=values, songs=songs, excluded=excluded)


def partition_pairs(matrix: SimilarityMatrix) -> dict[str, np.ndarray]:
    """Split every off-diagonal unordered pair into exactly one of the three
    partitions: same bird same year / same bird across years / different birds."""
    songs = matrix.songs
    n = len(songs)
    values: dict[str, list[float]] = {k: [] for k in PARTITIONS}
    for i in range(n):
        for j in range(i + 1, n):
            s = float(matrix.values[i, j])
            if songs[i].individual_id == songs[j].individual_id:
                if songs[i].year == songs[j].year:
                    values["within_bird_within_year"].append(s)
                else:
                    values["within_bird_across_year"].append(s)
            else:
                values["across_birds"].append(s)
    return {k: np.asarray(v) for k, v in values.items()}


def cross_year_reid(matrix: SimilarityMatrix) -> ReIdReport:
    """For each bird with songs in year Y, find the most similar year-(Y+1)
    song by anyone; the prediction is that song's owner.

    Birds never observed in consecutive years are excluded and reported.
    Chance levels are reported both as 1/birds and 1/song-types, since either
    denominator is defensible.
    """
    songs = matrix.songs
    years = sorted({s.year for s in songs})
    if len(years) < 2:
        raise ValueError("re-identification needs songs from at least 2 distinct years")

    by_year: dict[int, list[int]] = {}
    for i, s in enumerate(songs):
        by_year.setdefault(s.year, []).append(i)

    birds = sorted({s.individual_id for s in songs})
    predictions: list[dict] = []
    excluded: list[tuple[str, str]] = []
    for bird in birds:
        evaluated = False
        for year in years:
            mine = [i for i in by_year.get(year, []) if songs[i].individual_id == bird]
            pool = by_year.get(year + 1, [])
            if not mine or not pool:
                continue
            sub = matrix.values[np.ix_(mine, pool)]
            flat = int(np.argmax(sub))
            src = mine[flat // len(pool)]
            dst = pool[flat % len(pool)]
            predictions.append(
                {
                    "bird": bird,
                    "year_from": year,
                    "year_to": year + 1,
                    "query_song": songs[src].song_id,
                    "matched_song": songs[dst].song_id,
                    "predicted_individual": songs[dst].individual_id,
                    "similarity": float(matrix.values[src, dst]),
                    "correct": songs[dst].individual_id == bird,
                }
            )
            evaluated = True
        if not evaluated:
            excluded.append((bird, "songs in only one year (no consecutive-year pair)"))

    n_eval = len(predictions)
    accuracy = (
        sum(1 for p in predictions if p["correct"]) / n_eval if n_eval else 0.0
    )
    types = {
        (s.individual_id, s.label)
        for s in songs
        if s.label is not None and s.label >= 0
    }
    n_birds = len(birds)
    return ReIdReport(
        predictions=predictions,
        accuracy=accuracy,
        n_evaluated=n_eval,
        chance_level_birds=1.0 / n_birds if n_birds else None,
        chance_level_types=1.0 / len(types) if types else None,
        n_birds=n_birds,
        n_song_types=len(types),
        excluded=excluded,
        partitions=partition_pairs(matrix),
    )


def density_estimate(values: np.ndarray, grid: np.ndarray) -> np.ndarray | None:
    """Gaussian KDE sampled on a grid; None when the sample is degenerate."""
    from scipy.stats import gaussian_kde

    if len(values) < 2 or float(np.var(values)) < 1e-18:
        return None
    return gaussian_kde(values)(grid)
