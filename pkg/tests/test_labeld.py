import json
import urllib.error
import urllib.request

import pytest

from vocalkit.dataset import load
from vocalkit.labeld import EditError, LabelEdit, LabelStore, serve


@pytest.fixture
def service(mutable_project):
    dirs, p, ds = mutable_project
    svc = serve(ds, port=0)
    svc.start()
    yield svc, ds
    svc.stop()


def _get(svc, path):
    with urllib.request.urlopen(f"http://127.0.0.1:{svc.port}{path}") as r:
        return json.load(r)


def _post(svc, path, payload):
    req = urllib.request.Request(
        f"http://127.0.0.1:{svc.port}{path}",
        data=json.dumps(payload).encode(),
        method="POST",
        headers={"Content-Type": "application/json"},
    )
    with urllib.request.urlopen(req) as r:
        return json.load(r)


def _edit(kind, targets, new_label=None, editor="tester"):
    return {"kind": kind, "targets": targets, "new_label": new_label, "editor": editor}


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------

def test_health_reports_version(service):
    svc, _ = service
    import vocalkit

    assert _get(svc, "/api/health") == {"version": vocalkit.__version__}


def test_individuals_view_shape(service):
    svc, ds = service
    view = _get(svc, "/api/individuals")
    assert [v["id"] for v in view] == ds.individuals()
    for v in view:
        assert set(v) == {"id", "song_count", "cluster_count", "noise_count"}
        assert v["song_count"] == 4


def test_items_pagination(service):
    svc, _ = service
    page1 = _get(svc, "/api/clusters/GT01/0/items?page=1&page_size=1")
    page2 = _get(svc, "/api/clusters/GT01/0/items?page=2&page_size=1")
    assert page1["total"] == page2["total"] == 2
    assert len(page1["items"]) == 1 and len(page2["items"]) == 1
    assert page1["items"][0]["song_id"] != page2["items"][0]["song_id"]
    assert set(page1["items"][0]) == {"song_id", "unit_count", "label_source"}


def test_spectrogram_png(service):
    svc, ds = service
    song = sorted(ds.records)[0]
    with urllib.request.urlopen(
        f"http://127.0.0.1:{svc.port}/api/spectrogram/{song}.png"
    ) as r:
        payload = r.read()
        assert r.headers["Content-Type"] == "image/png"
    assert payload[:8] == b"\x89PNG\r\n\x1a\n"


def test_unknown_routes_and_ids_are_structured_errors(service):
    svc, _ = service
    with pytest.raises(urllib.error.HTTPError) as err:
        _get(svc, "/api/spectrogram/nope.png")
    assert err.value.code == 404
    body = json.load(err.value)
    assert body["error"]["code"] == "unknown_song"

    with pytest.raises(urllib.error.HTTPError) as err:
        _get(svc, "/api/bogus")
    assert err.value.code == 404


def test_relabel_round_trip(service):
    svc, _ = service
    out = _post(svc, "/api/edits", _edit("relabel", ["GT01_2020_0"], new_label=5))
    assert out["applied"] is True
    items = _get(svc, "/api/clusters/GT01/5/items?page=1&page_size=10")
    assert [i["song_id"] for i in items["items"]] == ["GT01_2020_0"]
    assert items["items"][0]["label_source"] == "human"


def test_merge_decreases_distinct_labels_by_one(service):
    svc, _ = service
    before = _get(svc, "/api/individuals/GT02/clusters")
    labels_before = {c["label"] for c in before if c["label"] >= 0}
    _post(svc, "/api/edits", _edit("merge_clusters", [["GT02", 1]], new_label=0))
    after = _get(svc, "/api/individuals/GT02/clusters")
    labels_after = {c["label"] for c in after if c["label"] >= 0}
    assert len(labels_after) == len(labels_before) - 1
    sizes = {c["label"]: c["size"] for c in after}
    assert sizes[0] == 4  # destination absorbed the source

    view = _get(svc, "/api/individuals")
    gt02 = next(v for v in view if v["id"] == "GT02")
    assert gt02["cluster_count"] == 1


def test_mark_noise(service):
    svc, _ = service
    _post(svc, "/api/edits", _edit("mark_noise", ["GT03_2020_0", "GT03_2021_0"]))
    view = _get(svc, "/api/individuals")
    gt03 = next(v for v in view if v["id"] == "GT03")
    assert gt03["noise_count"] == 2


def test_unknown_song_edit_leaves_journal_untouched(service):
    svc, ds = service
    journal = ds.dirs.output / "label_journal.jsonl"
    with pytest.raises(urllib.error.HTTPError) as err:
        _post(svc, "/api/edits", _edit("relabel", ["missing-id"], new_label=1))
    assert err.value.code == 404
    assert not journal.exists() or journal.read_text() == ""


def test_invalid_merge_rejected(service):
    svc, _ = service
    with pytest.raises(urllib.error.HTTPError) as err:
        _post(svc, "/api/edits", _edit("merge_clusters", [["GT01", 0]], new_label=0))
    assert err.value.code == 400
    assert json.load(err.value)["error"]["code"] == "bad_merge"


def test_export_endpoint_and_idempotence(service):
    svc, ds = service
    _post(svc, "/api/edits", _edit("relabel", ["GT01_2020_0"], new_label=9))
    v1 = _post(svc, "/api/export", {})["snapshot_version"]
    records_1 = (ds.dirs.output / "dataset" / "records.jsonl").read_bytes()
    v2 = _post(svc, "/api/export", {})["snapshot_version"]
    records_2 = (ds.dirs.output / "dataset" / "records.jsonl").read_bytes()
    assert v1 == v2
    assert records_1 == records_2
    reloaded = load(ds.dirs)
    assert reloaded.records["GT01_2020_0"].cluster_label == 9
    assert reloaded.records["GT01_2020_0"].label_source == "human"


def test_port_busy_is_clean_error(mutable_project):
    dirs, p, ds = mutable_project
    svc = serve(ds, port=0)
    try:
        with pytest.raises(OSError, match="bind"):
            serve(ds, port=svc.port)
    finally:
        svc.stop()


# ---------------------------------------------------------------------------
# journal semantics (store level)
# ---------------------------------------------------------------------------

def _mk_edit(kind, targets, new_label=None):
    return LabelEdit.from_dict(
        {"kind": kind, "targets": targets, "new_label": new_label, "editor": "t"}
    )


def test_journal_replay_on_startup(mutable_project):
    dirs, p, ds = mutable_project
    store = LabelStore(ds)
    store.apply_edit(_mk_edit("relabel", ["GT01_2020_0"], 3))
    store.apply_edit(_mk_edit("mark_noise", ["GT01_2020_1"]))
    store.apply_edit(_mk_edit("relabel", ["GT01_2020_0"], 4))

    fresh = LabelStore(ds)  # replays the journal from disk
    assert fresh.labels["GT01_2020_0"] == 4
    assert fresh.labels["GT01_2020_1"] == -1
    assert fresh.sources["GT01_2020_0"] == "human"
    assert fresh.journal_len == 3


def test_crash_after_journal_write_loses_nothing(mutable_project):
    """Simulated crash: the entry hits the journal but the in-memory state and
    acknowledgement never happen. A restarted service must show the edit."""
    dirs, p, ds = mutable_project
    store = LabelStore(ds)
    edit = _mk_edit("relabel", ["GT02_2020_0"], 5)
    store._validate(edit)
    store._append_journal(edit)  # crash here: no state change, no ack

    restarted = LabelStore(ds)
    assert restarted.labels["GT02_2020_0"] == 5
    assert restarted.journal_len == 1


def test_final_labels_match_sequential_replay_oracle(mutable_project):
    dirs, p, ds = mutable_project
    edits = [
        _mk_edit("relabel", ["GT01_2020_0", "GT01_2020_1"], 2),
        _mk_edit("merge_clusters", [["GT02", 0]], 1),
        _mk_edit("mark_noise", ["GT03_2021_1"]),
        _mk_edit("split_assign", ["GT01_2020_1"], 6),
        _mk_edit("relabel", ["GT03_2021_0"], 0),
    ]
    store = LabelStore(ds)
    for e in edits:
        store.apply_edit(e)

    # oracle: fold the edits over a plain dict, in order
    labels = {rid: rec.cluster_label for rid, rec in ds.records.items()}
    individuals = {rid: rec.meta.individual_id for rid, rec in ds.records.items()}
    for e in edits:
        if e.kind in ("relabel", "split_assign"):
            for rid in e.targets:
                labels[rid] = e.new_label
        elif e.kind == "mark_noise":
            for rid in e.targets:
                labels[rid] = -1
        else:
            for ind, src in e.targets:
                for rid in labels:
                    if individuals[rid] == ind and labels[rid] == int(src):
                        labels[rid] = e.new_label

    assert store.labels == labels

    snapshot_version = store.export_reviewed()
    reloaded = load(ds.dirs)
    assert reloaded.version == snapshot_version
    assert {rid: rec.cluster_label for rid, rec in reloaded.records.items()} == labels


def test_export_without_edits_is_label_equal(mutable_project):
    dirs, p, ds = mutable_project
    store = LabelStore(ds)
    store.export_reviewed()
    reloaded = load(dirs)
    assert {r: rec.cluster_label for r, rec in reloaded.records.items()} == {
        r: rec.cluster_label for r, rec in ds.records.items()
    }


def test_edit_validation_kinds():
    with pytest.raises(EditError):
        LabelEdit.from_dict({"kind": "explode", "targets": ["x"], "editor": "t"})
    with pytest.raises(EditError):
        LabelEdit.from_dict({"kind": "relabel", "targets": [], "editor": "t"})
    with pytest.raises(EditError):
        LabelEdit.from_dict(
            {"kind": "relabel", "targets": ["x"], "new_label": -2, "editor": "t"}
        )
