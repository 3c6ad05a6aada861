"""Hierarchical density clustering of embedded units into repertoire classes.

The pipeline: core distances (k = min_cluster_size, the point itself counts),
mutual-reachability distances, a deterministic minimum spanning tree,
condensed cluster tree, excess-of-mass extraction. Points in no selected
cluster are labelled -1 (noise). Ties in MST edge weights break by
lexicographic point index, so the whole chain is reproducible.
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np

from vocalkit.params import Parameters, effective_min_cluster_size


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # int, -1 = noise, else 0..K-1
    membership_strength: np.ndarray  # [0, 1]
    individual_id: str | None = None

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max() + 1) if (self.labels >= 0).any() else 0


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    d2 = np.sum(points**2, axis=1)[:, None] + np.sum(points**2, axis=1)[None, :]
    d2 -= 2.0 * points @ points.T
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def core_distances(dist: np.ndarray, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbour, the point itself counting as the first."""
    return np.sort(dist, axis=1)[:, k - 1]


def mutual_reachability(dist: np.ndarray, core: np.ndarray) -> np.ndarray:
    return np.maximum(np.maximum(core[:, None], core[None, :]), dist)


def deterministic_mst(weights: np.ndarray) -> list[tuple[int, int, float]]:
    """Prim's algorithm; ties resolved toward the smallest vertex index."""
    n = weights.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.zeros(n, dtype=int)
    in_tree[0] = True
    best[:] = weights[0]
    best[0] = np.inf
    edges: list[tuple[int, int, float]] = []
    for _ in range(n - 1):
        candidates = np.where(~in_tree)[0]
        v = candidates[np.lexsort((candidates, best[candidates]))[0]]
        u = int(best_from[v])
        edges.append((min(u, v), max(u, v), float(best[v])))
        in_tree[v] = True
        improve = weights[v] < best
        improve &= ~in_tree
        best_from[improve] = v
        best = np.where(improve, weights[v], best)
        best[v] = np.inf
    return edges


def _single_linkage(edges: list[tuple[int, int, float]], n: int) -> list[tuple[int, int, float, int]]:
    """Union MST edges in (weight, u, v) order into dendrogram merges.

    Merge i creates node n+i = (left_node, right_node, distance, size).
    """
    edges = sorted(edges, key=lambda e: (e[2], e[0], e[1]))
    dsu = list(range(n))
    top = list(range(n))  # dsu root -> dendrogram node currently covering it
    size = [1] * n

    def find(x: int) -> int:
        while dsu[x] != x:
            dsu[x] = dsu[dsu[x]]
            x = dsu[x]
        return x

    merges: list[tuple[int, int, float, int]] = []
    next_id = n
    for u, v, w in edges:
        ru, rv = find(u), find(v)
        s = size[ru] + size[rv]
        merges.append((top[ru], top[rv], w, s))
        dsu[rv] = ru
        top[ru] = next_id
        size[ru] = s
        next_id += 1
    return merges


@dataclass
class CondensedTree:
    """Rows (parent, child, lambda, size): child < n is a point falling out,
    child >= n a cluster born at that lambda. Root cluster id = n."""

    rows: list[tuple[int, int, float, int]]
    n_points: int

    def cluster_ids(self) -> list[int]:
        ids = {self.n_points}
        for _, child, _, _ in self.rows:
            if child >= self.n_points:
                ids.add(child)
        return sorted(ids)


def condense_tree(merges: list[tuple[int, int, float, int]], n: int, min_cluster_size: int) -> CondensedTree:
    """Walk the dendrogram top-down; sub-mcs branches fall out of their cluster
    as points at the split's lambda, balanced splits spawn child clusters.

    Runs of equal merge distances are flattened into one multi-way split:
    mutual reachability produces exact ties routinely (max(core, .) repeats),
    and a component that exists only at a single threshold is not a cluster.
    """

    def node_size(node: int) -> int:
        return 1 if node < n else merges[node - n][3]

    def leaves(start: int) -> list[int]:
        out = []
        stack = [start]
        while stack:
            node = stack.pop()
            if node < n:
                out.append(node)
            else:
                stack.extend(merges[node - n][:2])
        return out

    def split_components(node: int, dist: float) -> list[int]:
        """Maximal subtrees below `node` whose merge distance is < dist."""
        comps = []
        stack = [merges[node - n][0], merges[node - n][1]]
        while stack:
            child = stack.pop()
            if child >= n and merges[child - n][2] == dist:
                stack.extend(merges[child - n][:2])
            else:
                comps.append(child)
        return comps

    root = n + len(merges) - 1
    rows: list[tuple[int, int, float, int]] = []
    next_label = n + 1
    work = [(root, n)]  # (dendrogram node, condensed cluster id it belongs to)
    while work:
        node, cluster = work.pop()
        dist = merges[node - n][2]
        lam = (1.0 / dist) if dist > 0.0 else math.inf
        comps = split_components(node, dist)
        big = [c for c in comps if node_size(c) >= min_cluster_size]
        for c in comps:
            if node_size(c) < min_cluster_size:
                for p in leaves(c):
                    rows.append((cluster, p, lam, 1))
        if len(big) >= 2:
            for c in big:
                rows.append((cluster, next_label, lam, node_size(c)))
                work.append((c, next_label))
                next_label += 1
        elif len(big) == 1:
            work.append((big[0], cluster))
    return CondensedTree(rows=rows, n_points=n)


def _stability(tree: CondensedTree) -> dict[int, float]:
    births: dict[int, float] = {tree.n_points: 0.0}
    for _, child, lam, _ in tree.rows:
        if child >= tree.n_points:
            births[child] = lam
    stab: dict[int, float] = {c: 0.0 for c in tree.cluster_ids()}
    for parent, _, lam, size in tree.rows:
        gap = lam - births[parent]
        if math.isnan(gap):  # inf - inf: cluster born and dissolved at zero distance
            gap = 0.0
        stab[parent] += gap * size
    return stab


def extract_excess_of_mass(tree: CondensedTree) -> list[int]:
    """Select the most persistent antichain of clusters; the root is not eligible."""
    root = tree.n_points
    stability = _stability(tree)
    children: dict[int, list[int]] = defaultdict(list)
    parents: dict[int, int] = {}
    for parent, child, _, _ in tree.rows:
        if child >= tree.n_points:
            children[parent].append(child)
            parents[child] = parent

    is_selected: dict[int, bool] = {}
    best: dict[int, float] = {}
    for node in sorted(tree.cluster_ids(), reverse=True):
        if node == root:
            is_selected[node] = False
            continue
        subtree = sum(best[c] for c in children[node])
        if children[node] and stability[node] < subtree:
            is_selected[node] = False
            best[node] = subtree
        else:
            is_selected[node] = True
            best[node] = stability[node]
            stack = list(children[node])
            while stack:
                d = stack.pop()
                is_selected[d] = False
                stack.extend(children[d])
    return sorted(c for c, sel in is_selected.items() if sel)


def _label_points(tree: CondensedTree, selected: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Assign each point to the selected cluster its fallout parent sits under."""
    n = tree.n_points
    selected_set = set(selected)
    parents: dict[int, int] = {}
    for parent, child, _, _ in tree.rows:
        if child >= n:
            parents[child] = parent

    owner: dict[int, int | None] = {}
    for c in tree.cluster_ids():
        if c in selected_set:
            owner[c] = c
        elif c == n:
            owner[c] = None
        else:
            owner[c] = owner[parents[c]]

    fallout_cluster = np.full(n, -1, dtype=int)
    fallout_lambda = np.zeros(n)
    for parent, child, lam, _ in tree.rows:
        if child < n:
            o = owner[parent]
            fallout_cluster[child] = o if o is not None else -1
            fallout_lambda[child] = lam

    labels = np.full(n, -1, dtype=int)
    strength = np.zeros(n)
    # stable numbering: clusters ordered by their smallest member point index
    members = {c: np.where(fallout_cluster == c)[0] for c in selected}
    order = sorted(selected, key=lambda c: members[c][0] if len(members[c]) else n)
    for new_label, c in enumerate(order):
        idx = members[c]
        labels[idx] = new_label
        lams = fallout_lambda[idx]
        finite = lams[np.isfinite(lams)]
        lam_max = finite.max() if len(finite) else 0.0
        if lam_max <= 0.0:
            strength[idx] = 1.0
        else:
            strength[idx] = np.minimum(lams, lam_max) / lam_max
    return labels, strength


def hdbscan_cluster(
    points: np.ndarray, min_cluster_size: int, individual_id: str | None = None
) -> ClusterAssignment:
    """Density-cluster embedded vectors; returns per-point labels and strengths.

    Fewer points than min_cluster_size yields an all-noise result with a
    warning rather than an error. A zero-diameter mass (all points identical
    under mutual reachability) is a single cluster: there is no density
    structure to split, and excess-of-mass has nothing else to select.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {points.shape}")
    if min_cluster_size < 2:
        raise ValueError(f"min_cluster_size must be >= 2, got {min_cluster_size}")
    n = points.shape[0]
    if n < min_cluster_size:
        warnings.warn(
            f"{n} points < min_cluster_size ({min_cluster_size}): all noise",
            stacklevel=2,
        )
        return ClusterAssignment(
            labels=np.full(n, -1, dtype=int),
            membership_strength=np.zeros(n),
            individual_id=individual_id,
        )

    dist = pairwise_distances(points)
    core = core_distances(dist, min_cluster_size)
    mreach = mutual_reachability(dist, core)
    edges = deterministic_mst(mreach)
    merges = _single_linkage(edges, n)
    tree = condense_tree(merges, n, min_cluster_size)
    selected = extract_excess_of_mass(tree)

    if not selected and max(e[2] for e in edges) == 0.0:
        # zero-diameter degenerate mass: one cluster containing everything
        return ClusterAssignment(
            labels=np.zeros(n, dtype=int),
            membership_strength=np.ones(n),
            individual_id=individual_id,
        )

    labels, strength = _label_points(tree, selected)
    return ClusterAssignment(
        labels=labels, membership_strength=strength, individual_id=individual_id
    )


# ---------------------------------------------------------------------------
# dataset-level clustering stage
# ---------------------------------------------------------------------------

def _majority_label(unit_labels: list[int]) -> int:
    counts: dict[int, int] = defaultdict(int)
    for lab in unit_labels:
        counts[lab] += 1
    # most common wins; ties prefer a real cluster over noise, then the smaller id
    return sorted(counts, key=lambda lab: (-counts[lab], lab == -1, lab))[0]


def cluster_ids(ds, p: Parameters, table=None, use_global: bool = False):
    """Label each individual's repertoire independently; human edits are kept.

    use_global clusters every individual's rows in the shared embedding space
    instead of the per-individual one (escape hatch; default per-individual).
    """
    from vocalkit.dataset import save
    from vocalkit.embed import load_embeddings

    ds.require_stage("embedded", "cluster")
    if table is None:
        table = load_embeddings(ds)

    new_records = dict(ds.records)
    for individual in ds.individuals():
        row_idx = table.rows_of(individual)
        if not row_idx:
            continue
        vectors = (
            table.global_vectors[row_idx]
            if use_global
            else table.indiv_vectors.get(individual)
        )
        mcs = effective_min_cluster_size(p, len(row_idx))
        if vectors is None or vectors.size == 0 or len(vectors) < 2:
            assignment = ClusterAssignment(
                labels=np.full(len(row_idx), -1, dtype=int),
                membership_strength=np.zeros(len(row_idx)),
                individual_id=individual,
            )
        else:
            assignment = hdbscan_cluster(vectors, mcs, individual_id=individual)

        by_record: dict[str, list[int]] = defaultdict(list)
        for pos, ridx in enumerate(row_idx):
            voc_id = table.rows[ridx][0]
            by_record[voc_id].append(int(assignment.labels[pos]))
        for voc_id, unit_labels in by_record.items():
            rec = new_records[voc_id]
            if rec.label_source == "human":
                continue  # never overwrite a human decision
            new_records[voc_id] = replace(
                rec,
                cluster_label=_majority_label(unit_labels),
                label_source="auto",
            )

    new = replace(ds, records=new_records).with_stage("clustered")
    save(new)
    return new
