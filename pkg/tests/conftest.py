import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # reference oracles

from vocalkit.cluster import cluster_ids
from vocalkit.dataset import build_dataset, load, save, segment_all
from vocalkit.embed import embed_dataset, save_embeddings
from vocalkit.params import Parameters
from vocalkit.project import ProjectDirs, ingest, init_project
from vocalkit.synth import make_sample_corpus


@pytest.fixture(scope="session")
def demo_project(tmp_path_factory):
    """Demo corpus taken through ingest + segment + embed + cluster once.

    Read-only: tests that mutate state should copy it via `mutable_project`.
    """
    root = tmp_path_factory.mktemp("demo_project")
    dirs = init_project(root)
    make_sample_corpus(dirs.raw_data)
    p = Parameters()
    catalogue = ingest(dirs)
    ds = build_dataset(dirs, catalogue, p)
    ds = segment_all(ds, p, workers=1)
    table = embed_dataset(ds, p)
    save_embeddings(ds, table)
    ds = ds.with_stage("embedded")
    save(ds)
    ds = cluster_ids(ds, p)
    return dirs, p, ds


@pytest.fixture
def mutable_project(demo_project, tmp_path):
    """Byte-copy of the demo project for tests that edit or re-save."""
    dirs, p, _ = demo_project
    root = tmp_path / "proj"
    shutil.copytree(dirs.root, root)
    new_dirs = ProjectDirs.under(root)
    return new_dirs, p, load(new_dirs)
