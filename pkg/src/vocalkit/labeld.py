"""Local HTTP service for interactive label review.

Human decisions are an append-only JSON Lines journal, written (and fsynced)
before the edit is acknowledged; replaying the journal reconstructs the label
state after a crash. Edits are serialized through one lock, reads see
consistent snapshots, and exporting compacts the journal into a new persisted
dataset version.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import vocalkit
from vocalkit.dataset import Dataset, save
from vocalkit.plots import spectrogram_png_bytes
from vocalkit.storage import read_kspec

EDIT_KINDS = ("relabel", "merge_clusters", "mark_noise", "split_assign")


class EditError(Exception):
    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.status = status


@dataclass(frozen=True)
class LabelEdit:
    """One atomic human decision. targets are song ids, except for
    merge_clusters where they are [individual, source_label] pairs."""

    kind: str
    targets: tuple
    new_label: int | None
    editor: str
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "targets": [list(t) if isinstance(t, tuple) else t for t in self.targets],
            "new_label": self.new_label,
            "editor": self.editor,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelEdit":
        if d.get("kind") not in EDIT_KINDS:
            raise EditError("bad_kind", f"kind must be one of {EDIT_KINDS}")
        targets = d.get("targets") or []
        if not isinstance(targets, list) or not targets:
            raise EditError("bad_targets", "targets must be a non-empty list")
        new_label = d.get("new_label")
        if new_label is not None:
            new_label = int(new_label)
            if new_label < -1:
                raise EditError("bad_label", "new_label must be >= -1")
        return cls(
            kind=d["kind"],
            targets=tuple(tuple(t) if isinstance(t, list) else t for t in targets),
            new_label=new_label,
            editor=str(d.get("editor", "anonymous")),
            timestamp=str(
                d.get("timestamp") or datetime.now(timezone.utc).isoformat()
            ),
        )


class LabelStore:
    """Label state derived from the dataset plus the replayed edit journal."""

    def __init__(self, ds: Dataset, journal_path: Path | None = None):
        self.ds = ds
        self.journal_path = journal_path or (ds.dirs.output / "label_journal.jsonl")
        self.lock = threading.RLock()
        self.labels: dict[str, int | None] = {}
        self.sources: dict[str, str | None] = {}
        for rid, rec in ds.records.items():
            self.labels[rid] = rec.cluster_label
            self.sources[rid] = rec.label_source
        self.journal_len = 0
        if self.journal_path.exists():
            for line in self.journal_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._apply_state(LabelEdit.from_dict(json.loads(line)))
                    self.journal_len += 1

    # -- validation + state transition -------------------------------------

    def _validate(self, edit: LabelEdit) -> None:
        if edit.kind in ("relabel", "mark_noise", "split_assign"):
            unknown = [t for t in edit.targets if t not in self.labels]
            if unknown:
                raise EditError(
                    "unknown_song", f"unknown song ids: {', '.join(map(str, unknown))}", 404
                )
            if edit.kind != "mark_noise" and edit.new_label is None:
                raise EditError("bad_label", f"{edit.kind} requires new_label")
        elif edit.kind == "merge_clusters":
            if edit.new_label is None:
                raise EditError("bad_label", "merge_clusters requires new_label")
            for t in edit.targets:
                if not (isinstance(t, tuple) and len(t) == 2):
                    raise EditError(
                        "bad_targets", "merge targets are [individual, source_label] pairs"
                    )
                individual, source_label = t[0], int(t[1])
                if source_label == edit.new_label:
                    raise EditError(
                        "bad_merge", "merge source and destination labels are equal"
                    )
                members = self._cluster_members(individual, source_label)
                if not members:
                    raise EditError(
                        "unknown_cluster",
                        f"no songs with label {source_label} for {individual}",
                        404,
                    )

    def _cluster_members(self, individual: str, label: int) -> list[str]:
        return [
            rid
            for rid, rec in self.ds.records.items()
            if rec.meta.individual_id == individual and self.labels.get(rid) == label
        ]

    def _apply_state(self, edit: LabelEdit) -> None:
        if edit.kind in ("relabel", "split_assign"):
            for rid in edit.targets:
                self.labels[rid] = edit.new_label
                self.sources[rid] = "human"
        elif edit.kind == "mark_noise":
            for rid in edit.targets:
                self.labels[rid] = -1
                self.sources[rid] = "human"
        elif edit.kind == "merge_clusters":
            for individual, source_label in edit.targets:
                for rid in self._cluster_members(individual, int(source_label)):
                    self.labels[rid] = edit.new_label
                    self.sources[rid] = "human"

    def apply_edit(self, edit: LabelEdit) -> int:
        """Validate, journal (write-ahead), then mutate; returns journal index."""
        with self.lock:
            self._validate(edit)
            self._append_journal(edit)
            index = self.journal_len
            self.journal_len += 1
            self._apply_state(edit)
            return index

    def _append_journal(self, edit: LabelEdit) -> None:
        self.journal_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(edit.to_dict()) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # -- views --------------------------------------------------------------

    def individuals_view(self) -> list[dict]:
        with self.lock:
            out = []
            for individual in self.ds.individuals():
                ids = [
                    rid
                    for rid, rec in self.ds.records.items()
                    if rec.meta.individual_id == individual
                ]
                labels = [self.labels[rid] for rid in ids]
                out.append(
                    {
                        "id": individual,
                        "song_count": len(ids),
                        "cluster_count": len({l for l in labels if l is not None and l >= 0}),
                        "noise_count": sum(1 for l in labels if l == -1),
                    }
                )
            return out

    def clusters_view(self, individual: str) -> list[dict]:
        with self.lock:
            if individual not in self.ds.individuals():
                raise EditError("unknown_individual", f"unknown individual {individual}", 404)
            by_label: dict[int, list[str]] = {}
            for rid, rec in sorted(self.ds.records.items()):
                if rec.meta.individual_id != individual:
                    continue
                label = self.labels[rid]
                if label is None:
                    continue
                by_label.setdefault(label, []).append(rid)
            return [
                {"label": label, "size": len(ids), "exemplar_song_ids": ids[:4]}
                for label, ids in sorted(by_label.items())
            ]

    def items_view(self, individual: str, label: int, page: int, page_size: int) -> dict:
        with self.lock:
            if individual not in self.ds.individuals():
                raise EditError("unknown_individual", f"unknown individual {individual}", 404)
            ids = sorted(self._cluster_members(individual, label))
            start = (page - 1) * page_size
            items = [
                {
                    "song_id": rid,
                    "unit_count": len(self.ds.records[rid].unit_spectrogram_refs),
                    "label_source": self.sources[rid],
                }
                for rid in ids[start : start + page_size]
            ]
            return {"items": items, "page": page, "page_size": page_size, "total": len(ids)}

    def export_reviewed(self) -> int:
        """Compact the journal into the records and persist a new version.

        Deterministic for a given (dataset, journal) pair, so repeated exports
        write identical snapshots.
        """
        with self.lock:
            records = {
                rid: replace(
                    rec, cluster_label=self.labels[rid], label_source=self.sources[rid]
                )
                for rid, rec in self.ds.records.items()
            }
            snapshot = replace(
                self.ds, records=records, version=self.ds.version + 1
            )
            save(snapshot)
            return snapshot.version


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

_ROUTES = [
    ("GET", re.compile(r"^/api/health$"), "health"),
    ("GET", re.compile(r"^/api/individuals$"), "individuals"),
    ("GET", re.compile(r"^/api/individuals/(?P<individual>[^/]+)/clusters$"), "clusters"),
    (
        "GET",
        re.compile(r"^/api/clusters/(?P<individual>[^/]+)/(?P<label>-?\d+)/items$"),
        "items",
    ),
    ("GET", re.compile(r"^/api/spectrogram/(?P<song_id>[^/]+)\.png$"), "spectrogram"),
    ("POST", re.compile(r"^/api/edits$"), "edits"),
    ("POST", re.compile(r"^/api/export$"), "export"),
]


class _Handler(BaseHTTPRequestHandler):
    store: LabelStore
    ui_dir: Path | None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, obj, status: int = 200) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, code: str, message: str, status: int) -> None:
        self._send_json({"error": {"code": code, "message": message}}, status)

    def _dispatch(self, method: str) -> None:
        parsed = urlparse(self.path)
        for verb, pattern, name in _ROUTES:
            if verb != method:
                continue
            m = pattern.match(parsed.path)
            if m:
                try:
                    getattr(self, f"_route_{name}")(m, parse_qs(parsed.query))
                except EditError as exc:
                    self._send_error_json(exc.code, str(exc), exc.status)
                except Exception as exc:  # noqa: BLE001 - boundary of the service
                    self._send_error_json("internal", f"{type(exc).__name__}: {exc}", 500)
                return
        if method == "GET" and self._serve_static(parsed.path):
            return
        self._send_error_json("not_found", f"no route for {method} {parsed.path}", 404)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    # -- routes -------------------------------------------------------------

    def _route_health(self, m, q):
        self._send_json({"version": vocalkit.__version__})

    def _route_individuals(self, m, q):
        self._send_json(self.store.individuals_view())

    def _route_clusters(self, m, q):
        self._send_json(self.store.clusters_view(m.group("individual")))

    def _route_items(self, m, q):
        page = int(q.get("page", ["1"])[0])
        page_size = int(q.get("page_size", ["20"])[0])
        if page < 1 or page_size < 1:
            raise EditError("bad_paging", "page and page_size must be >= 1")
        self._send_json(
            self.store.items_view(m.group("individual"), int(m.group("label")), page, page_size)
        )

    def _route_spectrogram(self, m, q):
        song_id = m.group("song_id")
        rec = self.store.ds.records.get(song_id)
        if rec is None or not rec.spectrogram_ref:
            raise EditError("unknown_song", f"no spectrogram for {song_id}", 404)
        values = read_kspec(self.store.ds.resolve(rec.spectrogram_ref))
        png = spectrogram_png_bytes(values, self.store.ds.params.top_db)
        self.send_response(200)
        self.send_header("Content-Type", "image/png")
        self.send_header("Content-Length", str(len(png)))
        self.end_headers()
        self.wfile.write(png)

    def _route_edits(self, m, q):
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError as exc:
            raise EditError("bad_json", f"request body is not JSON: {exc}") from exc
        edit = LabelEdit.from_dict(payload)
        index = self.store.apply_edit(edit)
        self._send_json({"applied": True, "journal_index": index})

    def _route_export(self, m, q):
        self._send_json({"snapshot_version": self.store.export_reviewed()})

    # -- static UI bundle ----------------------------------------------------

    def _serve_static(self, path: str) -> bool:
        if self.ui_dir is None:
            if path in ("/", "/index.html"):
                body = (
                    b"<!doctype html><title>vocalkit labeld</title>"
                    b"<h1>vocalkit label service</h1>"
                    b"<p>No UI bundle configured; the JSON API lives under /api/.</p>"
                )
                self.send_response(200)
                self.send_header("Content-Type", "text/html; charset=utf-8")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
                return True
            return False
        rel = path.lstrip("/") or "index.html"
        target = (self.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            return False
        ctype = {
            ".html": "text/html; charset=utf-8",
            ".js": "text/javascript; charset=utf-8",
            ".css": "text/css; charset=utf-8",
            ".map": "application/json",
            ".svg": "image/svg+xml",
        }.get(target.suffix, "application/octet-stream")
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
        return True


class LabelService:
    """Owns the HTTP server; use serve() to construct one."""

    def __init__(self, store: LabelStore, port: int, ui_dir: Path | None = None):
        self.store = store
        handler = type("BoundHandler", (_Handler,), {"store": store, "ui_dir": ui_dir})
        try:
            self.httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
        except OSError as exc:
            raise OSError(
                f"cannot bind port {port}: {exc.strerror or exc}"
            ) from exc
        self.port = self.httpd.server_address[1]
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        # shutdown() blocks until a running serve_forever loop acknowledges,
        # so only call it when the loop was actually started
        if self._thread is not None:
            self.httpd.shutdown()
            self.httpd.server_close()
            self._thread.join(timeout=5)
        else:
            self.httpd.server_close()


def serve(
    ds: Dataset, port: int = 0, ui_dir: Path | None = None, journal_path: Path | None = None
) -> LabelService:
    """Construct the service: replays any existing journal, binds the port.

    port 0 picks a free port (useful in tests); the chosen port is on the
    returned service.
    """
    store = LabelStore(ds, journal_path=journal_path)
    return LabelService(store, port=port, ui_dir=ui_dir)
