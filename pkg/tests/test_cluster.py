import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from reference_hdbscan import canonical_labels, reference_hdbscan
from vocalkit.cluster import (
    cluster_ids,
    condense_tree,
    deterministic_mst,
    hdbscan_cluster,
)
from vocalkit.dataset import load
from vocalkit.embed import load_embeddings
from vocalkit.params import Parameters
from vocalkit.synth import repertoire_rows


def test_identical_points_single_cluster_no_noise():
    assignment = hdbscan_cluster(np.zeros((20, 3)), min_cluster_size=5)
    assert np.array_equal(assignment.labels, np.zeros(20, dtype=int))
    assert np.all(assignment.membership_strength == 1.0)


def test_two_separated_blobs_recover_construction_labels():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.1, (50, 3)), rng.normal(100, 0.1, (50, 3))])
    truth = np.array([0] * 50 + [1] * 50)
    assignment = hdbscan_cluster(X, min_cluster_size=5)
    assert adjusted_rand_score(truth, assignment.labels) == 1.0
    assert not np.any(assignment.labels == -1)


def test_uniform_cube_all_noise_matches_oracle():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1e6, size=(30, 4))
    assignment = hdbscan_cluster(X, min_cluster_size=15)
    oracle = reference_hdbscan(X, 15)
    assert np.array_equal(assignment.labels, oracle)
    assert np.all(assignment.labels == -1)


def test_fewer_points_than_mcs_warns_all_noise():
    with pytest.warns(UserWarning, match="min_cluster_size"):
        assignment = hdbscan_cluster(np.random.default_rng(0).normal(0, 1, (3, 2)), 5)
    assert np.all(assignment.labels == -1)
    assert np.all(assignment.membership_strength == 0.0)


def test_partition_matches_exhaustive_reference_on_small_instances():
    """Exact agreement with the threshold-sweep reference on <= 30 points."""
    rng = np.random.default_rng(123)
    checked = 0
    for trial in range(40):
        n = int(rng.integers(8, 31))
        d = int(rng.integers(2, 5))
        kind = trial % 3
        if kind == 0:
            X = rng.normal(0, 1, (n, d))
        elif kind == 1:
            centers = rng.normal(0, 20, (3, d))
            X = centers[rng.integers(0, 3, n)] + rng.normal(0, 0.5, (n, d))
        else:
            X = rng.uniform(0, 100, (n, d))
        for mcs in (2, 3, 5):
            ref = canonical_labels(reference_hdbscan(X, mcs))
            mine = canonical_labels(hdbscan_cluster(X, mcs).labels)
            assert np.array_equal(ref, mine), f"trial={trial} mcs={mcs}"
            checked += 1
    assert checked == 120


def test_permutation_invariance():
    rng = np.random.default_rng(8)
    X = np.vstack(
        [rng.normal(0, 0.5, (40, 4)), rng.normal(30, 0.5, (40, 4)), rng.normal(-30, 0.5, (30, 4))]
    )
    base = hdbscan_cluster(X, 8).labels
    perm = rng.permutation(len(X))
    shuffled = hdbscan_cluster(X[perm], 8).labels
    assert adjusted_rand_score(base[perm], shuffled) == 1.0
    assert np.array_equal(base[perm] == -1, shuffled == -1)


def test_scale_invariance_of_partition():
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(0, 0.3, (30, 3)), rng.normal(10, 0.3, (30, 3))])
    a = hdbscan_cluster(X, 6).labels
    b = hdbscan_cluster(X * 1000.0, 6).labels
    c = hdbscan_cluster(X * 1e-4, 6).labels
    assert np.array_equal(a, b)
    assert np.array_equal(a, c)


def test_noise_monotone_in_min_cluster_size():
    rng = np.random.default_rng(21)
    X = np.vstack(
        [
            rng.normal(0, 0.5, (35, 3)),
            rng.normal(20, 0.5, (25, 3)),
            rng.uniform(-40, 60, (15, 3)),
        ]
    )
    noise_counts = [
        int((hdbscan_cluster(X, mcs).labels == -1).sum()) for mcs in (3, 5, 8, 12, 20)
    ]
    assert noise_counts == sorted(noise_counts)


def test_membership_strength_range_and_noise_zero():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(0, 0.4, (40, 3)), rng.uniform(-50, 50, (8, 3))])
    a = hdbscan_cluster(X, 8)
    assert np.all((0.0 <= a.membership_strength) & (a.membership_strength <= 1.0))
    assert np.all(a.membership_strength[a.labels == -1] == 0.0)
    assert np.all(a.membership_strength[a.labels >= 0] > 0.0)


def test_cluster_sizes_at_least_mcs_and_contiguous():
    rng = np.random.default_rng(17)
    X = np.vstack([rng.normal(c, 0.4, (20 + 5 * c, 3)) for c in range(4)]) * 30
    for mcs in (5, 9):
        labels = hdbscan_cluster(X, mcs).labels
        present = sorted(set(labels[labels >= 0]))
        assert present == list(range(len(present)))
        for lab in present:
            assert (labels == lab).sum() >= mcs


def test_mst_deterministic_tie_breaking():
    # four points on a unit square: all nearest-neighbour ties
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    from vocalkit.cluster import mutual_reachability, pairwise_distances, core_distances

    d = pairwise_distances(X)
    mr = mutual_reachability(d, core_distances(d, 2))
    edges = deterministic_mst(mr)
    assert edges == [(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0)]


def test_condensed_tree_root_only_for_uniform():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1e6, size=(30, 4))
    from vocalkit.cluster import (
        _single_linkage,
        core_distances,
        mutual_reachability,
        pairwise_distances,
    )

    d = pairwise_distances(X)
    mr = mutual_reachability(d, core_distances(d, 15))
    merges = _single_linkage(deterministic_mst(mr), 30)
    tree = condense_tree(merges, 30, 15)
    assert tree.cluster_ids() == [30]  # just the root
    assert sum(1 for _, c, _, _ in tree.rows if c < 30) == 30  # every point falls out


# ---------------------------------------------------------------------------
# dataset-level cluster_ids
# ---------------------------------------------------------------------------

def test_cluster_ids_one_song_type_all_label_zero():
    """An individual whose songs repeat one template shares label 0."""
    vec = np.tile(np.array([[3.0, -1.0, 2.0]]), (12, 1))
    assignment = hdbscan_cluster(vec, 5, individual_id="B1")
    assert np.array_equal(assignment.labels, np.zeros(12, dtype=int))
    assert assignment.individual_id == "B1"


def test_cluster_ids_pipeline_demo(demo_project):
    _, _, ds = demo_project
    for ind in ds.individuals():
        labels = {
            r.cluster_label
            for r in ds.records.values()
            if r.meta.individual_id == ind and r.cluster_label is not None
        }
        assert labels == {0, 1}
    assert all(
        r.label_source == "auto" for r in ds.records.values() if r.cluster_label is not None
    )


def test_cluster_ids_per_individual_ari(tmp_path):
    """Synthetic repertoires: per-individual ARI >= 0.9 through the embedding
    plus clustering path."""
    from vocalkit.embed import embed_pca
    from vocalkit.params import effective_min_cluster_size

    rng = np.random.default_rng(99)
    for individual in range(3):
        n_types = int(rng.integers(3, 6))
        rows, truth = repertoire_rows(rng, n_types, songs_per_type=15)
        emb = embed_pca(rows, dim=10)
        mcs = effective_min_cluster_size(Parameters(), len(rows))
        labels = hdbscan_cluster(emb.vectors, mcs).labels
        assert adjusted_rand_score(truth, labels) >= 0.9


def test_cluster_ids_never_overwrites_human_labels(mutable_project):
    from dataclasses import replace

    dirs, p, ds = mutable_project
    target = sorted(ds.records)[0]
    records = dict(ds.records)
    records[target] = replace(records[target], cluster_label=77, label_source="human")
    ds = replace(ds, records=records)
    table = load_embeddings(ds)
    out = cluster_ids(ds, p, table=table)
    assert out.records[target].cluster_label == 77
    assert out.records[target].label_source == "human"
    other = sorted(ds.records)[1]
    assert out.records[other].label_source == "auto"
