"""Low-dimensional embeddings of unit/song spectrograms.

PCA is the deterministic default used throughout the pipeline; a seeded
neighbor-graph embedding is available behind a flag for exploratory work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vocalkit.params import Parameters
from vocalkit.storage import read_jsonl, read_kspec, write_jsonl, write_kspec


class InsufficientDataError(ValueError):
    pass


@dataclass
class Embedding:
    """Vectors aligned 1:1 with the input rows."""

    vectors: np.ndarray  # [rows, dim]
    method: str  # "pca" | "neighbor"
    explained_variance: np.ndarray | None = None  # pca only, descending


def pad_and_flatten(units: list[np.ndarray], pad_frames: int, top_db: float) -> np.ndarray:
    """Right-pad each [bands, frames] slice with -top_db and flatten row-major.

    Raises when any unit is wider than pad_frames.
    """
    if not units:
        return np.zeros((0, 0), dtype=np.float32)
    bands = units[0].shape[0]
    out = np.full((len(units), bands * pad_frames), -top_db, dtype=np.float32)
    for i, u in enumerate(units):
        if u.shape[0] != bands:
            raise ValueError(
                f"unit {i} has {u.shape[0]} bands, expected {bands}"
            )
        if u.shape[1] > pad_frames:
            raise ValueError(
                f"unit {i} spans {u.shape[1]} frames > pad_frames ({pad_frames})"
            )
        padded = np.full((bands, pad_frames), -top_db, dtype=np.float32)
        padded[:, : u.shape[1]] = u
        out[i] = padded.reshape(-1)
    return out


def embed_pca(rows: np.ndarray, dim: int) -> Embedding:
    """Centre the rows and project onto the top principal directions.

    Components are ordered by descending eigenvalue, with signs fixed so each
    component's largest-magnitude loading is positive; fully deterministic.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n, d = rows.shape
    if n < 2:
        raise InsufficientDataError(f"need at least 2 rows, got {n}")
    if dim > min(n, d):
        raise InsufficientDataError(
            f"dim ({dim}) must not exceed min(rows, vector length) = {min(n, d)}"
        )
    centred = rows - rows.mean(axis=0)
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    components = vt[:dim]
    # sign convention: largest-|loading| entry of each component is positive
    flip = np.sign(components[np.arange(dim), np.argmax(np.abs(components), axis=1)])
    flip[flip == 0] = 1.0
    components = components * flip[:, None]
    eigenvalues = (s[:dim] ** 2) / (n - 1)
    return Embedding(
        vectors=centred @ components.T,
        method="pca",
        explained_variance=eigenvalues,
    )


# ---------------------------------------------------------------------------
# seeded neighbor-graph embedding (optional, behind a flag)
# ---------------------------------------------------------------------------

def _knn(rows: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    d2 = np.sum(rows**2, axis=1)[:, None] + np.sum(rows**2, axis=1)[None, :]
    d2 -= 2.0 * rows @ rows.T
    np.fill_diagonal(d2, np.inf)
    dist = np.sqrt(np.maximum(d2, 0.0))
    idx = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(dist, idx, axis=1)


def _fuzzy_weights(knn_dists: np.ndarray) -> np.ndarray:
    """Per-point exponential kernel calibrated so weights sum to log2(k)."""
    n, k = knn_dists.shape
    rho = knn_dists[:, 0]
    target = np.log2(k)
    sigmas = np.ones(n)
    for i in range(n):
        lo, hi = 1e-6, 1e6
        shifted = np.maximum(knn_dists[i] - rho[i], 0.0)
        if shifted.max() == 0.0:
            continue
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            total = np.exp(-shifted / mid).sum()
            if total > target:
                hi = mid
            else:
                lo = mid
        sigmas[i] = 0.5 * (lo + hi)
    return np.exp(-np.maximum(knn_dists - rho[:, None], 0.0) / sigmas[:, None])


def embed_neighbor(rows: np.ndarray, dim: int, n_neighbors: int, seed: int) -> Embedding:
    """Nonlinear layout of the k-NN graph: fuzzy edge weights, then a
    force-directed descent with negative sampling. Reproducible given the seed
    (single-threaded). Not used by the deterministic pipeline stages.
    """
    rows = np.asarray(rows, dtype=np.float64)
    total = rows.shape[0]
    if n_neighbors >= total:
        raise ValueError(f"n_neighbors ({n_neighbors}) must be < row count ({total})")
    if n_neighbors < 2:
        raise ValueError("n_neighbors must be >= 2")

    # identical inputs must land on identical outputs: embed unique rows only
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    if len(uniq) == 1:
        return Embedding(vectors=np.zeros((total, dim)), method="neighbor")
    rows = uniq
    n = rows.shape[0]
    n_neighbors = min(n_neighbors, n - 1)

    idx, dists = _knn(rows, n_neighbors)
    w = _fuzzy_weights(dists)

    # symmetrise: probabilistic union of directed edges
    graph = np.zeros((n, n))
    for i in range(n):
        graph[i, idx[i]] = w[i]
    graph = graph + graph.T - graph * graph.T

    heads, tails = np.nonzero(np.triu(graph, 1))
    weights = graph[heads, tails]

    rng = np.random.default_rng(seed)
    if min(n, rows.shape[1]) >= dim and n >= 2:
        init = embed_pca(rows, dim).vectors
        scale = np.abs(init).max()
        pos = init / scale * 10.0 if scale > 0 else rng.normal(0, 1e-4, (n, dim))
    else:
        pos = rng.normal(0, 1e-4, (n, dim))
    pos = pos + rng.normal(0, 1e-4, pos.shape)  # break exact ties

    epochs = 200
    neg_per_edge = 5
    for epoch in range(epochs):
        alpha = 1.0 * (1.0 - epoch / epochs)
        mask = rng.random(len(heads)) < weights
        for e in np.nonzero(mask)[0]:
            i, j = heads[e], tails[e]
            delta = pos[i] - pos[j]
            d2 = delta @ delta
            grad = (-2.0 / (1.0 + d2)) * delta
            pos[i] += alpha * np.clip(grad, -4, 4)
            pos[j] -= alpha * np.clip(grad, -4, 4)
            for _ in range(neg_per_edge):
                k = rng.integers(n)
                if k == i:
                    continue
                delta = pos[i] - pos[k]
                d2 = delta @ delta
                grad = (2.0 / ((0.001 + d2) * (1.0 + d2))) * delta
                pos[i] += alpha * np.clip(grad, -4, 4)
    return Embedding(vectors=pos[inverse], method="neighbor")


# ---------------------------------------------------------------------------
# dataset-level embedding stage
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingTable:
    """Row-aligned embeddings persisted under output/embeddings/.

    rows: (voc_id, unit_index, individual_id, year) in global row order.
    global_vectors: one PCA fitted over all rows (comparable across birds).
    indiv_vectors: per-individual PCA used for repertoire clustering.
    """

    rows: list[tuple[str, int, str, int]]
    global_vectors: np.ndarray
    indiv_vectors: dict[str, np.ndarray]

    def rows_of(self, individual: str) -> list[int]:
        return [i for i, r in enumerate(self.rows) if r[2] == individual]


def embed_dataset(
    ds, p: Parameters, method: str = "pca", n_neighbors: int = 15, seed: int = 0
) -> EmbeddingTable:
    """Per-individual embedding (clustering space) plus one shared embedding
    over globally padded rows (similarity space). PCA is the deterministic
    default; "neighbor" switches to the seeded graph layout."""
    from vocalkit.dataset import get_units

    def run(matrix: np.ndarray, dim: int) -> np.ndarray:
        if method == "pca":
            return embed_pca(matrix, dim).vectors
        k = min(n_neighbors, matrix.shape[0] - 1)
        return embed_neighbor(matrix, dim, max(2, k), seed).vectors

    indiv_groups = get_units(ds, p, scope="per_individual")
    global_group = get_units(ds, p, scope="global")[0]

    dim_global = min(p.embed_dim, *global_group.matrix.shape)
    global_vectors = run(global_group.matrix, dim_global)

    indiv_vectors: dict[str, np.ndarray] = {}
    for g in indiv_groups:
        dim = min(p.embed_dim, *g.matrix.shape)
        if g.matrix.shape[0] < 2:
            # too few rows to embed; clustering will mark these as noise
            indiv_vectors[g.key] = np.zeros((g.matrix.shape[0], 0))
            continue
        indiv_vectors[g.key] = run(g.matrix, dim)

    rows = [(m.voc_id, m.unit_index, m.individual_id, m.year) for m in global_group.rows]
    return EmbeddingTable(
        rows=rows, global_vectors=global_vectors, indiv_vectors=indiv_vectors
    )


def save_embeddings(ds, table: EmbeddingTable) -> None:
    out = ds.dirs.output / "embeddings"
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(
        out / "index.jsonl",
        [
            {"voc_id": v, "unit_index": u, "individual": ind, "year": y}
            for v, u, ind, y in table.rows
        ],
    )
    write_kspec(out / "global.kspec", table.global_vectors)
    by_indiv = out / "by_individual"
    by_indiv.mkdir(exist_ok=True)
    for ind, vecs in sorted(table.indiv_vectors.items()):
        write_kspec(by_indiv / f"{ind}.kspec", vecs.reshape(len(vecs), -1))


def load_embeddings(ds) -> EmbeddingTable:
    out = ds.dirs.output / "embeddings"
    index = read_jsonl(out / "index.jsonl")
    rows = [(r["voc_id"], r["unit_index"], r["individual"], r["year"]) for r in index]
    global_vectors = read_kspec(out / "global.kspec")
    indiv_vectors = {
        f.stem: read_kspec(f) for f in sorted((out / "by_individual").glob("*.kspec"))
    }
    return EmbeddingTable(
        rows=rows, global_vectors=global_vectors, indiv_vectors=indiv_vectors
    )
