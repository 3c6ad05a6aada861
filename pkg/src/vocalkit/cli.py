"""Command-line pipeline driver.

Subcommands mirror the pipeline stages; each one validates that the previous
stage ran (via the dataset manifest) and fails with "run X first" otherwise.
Every subcommand supports --json for machine-readable output. Exit codes:
0 success, 1 validation problem, 2 I/O problem, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

import vocalkit
from vocalkit import dataset as ds_mod
from vocalkit.audio import WavError
from vocalkit.cluster import cluster_ids
from vocalkit.dataset import StageError, build_dataset, export_training_set, load
from vocalkit.embed import embed_dataset, load_embeddings, save_embeddings
from vocalkit.labeld import serve
from vocalkit.params import Parameters, validate_parameters
from vocalkit.parallel import JobSpec, default_worker_count, par_map
from vocalkit.plots import save_partition_density_figure, save_similarity_heatmap
from vocalkit.project import IngestError, ProjectDirs, ingest, init_project
from vocalkit.similarity import (
    cross_year_reid,
    density_estimate,
    pairwise_similarity,
    song_vectors,
)
from vocalkit.storage import StorageError, write_json
from vocalkit.synth import BenchConfig, bench_song_task, make_sample_corpus

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERNAL = 3

LARGE_CORPUS_UNITS = 556_472  # compute-node-scale figure, extrapolated only


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--project", type=Path, default=Path("."), help="project root")
    sp.add_argument("--params", type=Path, default=None, help="parameters JSON file")
    sp.add_argument("--threads", type=int, default=None, help="worker count")
    sp.add_argument("--seed", type=int, default=0, help="seed for stochastic steps")
    sp.add_argument("--song-level", action="store_true", help="song-level analysis")
    sp.add_argument("--json", action="store_true", help="machine-readable output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vocalkit", description=__doc__)
    parser.add_argument("--version", action="version", version=vocalkit.__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("init", help="scaffold a project directory")
    _add_common(sp)
    sp.add_argument("--with-sample", action="store_true", help="write the 20-song demo corpus")

    sp = sub.add_parser("ingest", help="catalogue raw recordings and build the dataset")
    _add_common(sp)

    sp = sub.add_parser("segment", help="spectrograms + unit segmentation for every record")
    _add_common(sp)

    sp = sub.add_parser("embed", help="embed unit spectrograms (per individual and globally)")
    _add_common(sp)
    sp.add_argument("--method", choices=("pca", "neighbor"), default="pca",
                    help="pca (deterministic default) or the seeded neighbor-graph layout")
    sp.add_argument("--neighbors", type=int, default=15, help="k for --method neighbor")

    sp = sub.add_parser("cluster", help="density-cluster each individual's repertoire")
    _add_common(sp)
    sp.add_argument("--global", dest="use_global", action="store_true",
                    help="cluster in the shared embedding space instead of per individual")

    sp = sub.add_parser("app", help="serve the label-review app")
    _add_common(sp)
    sp.add_argument("--port", type=int, default=7766)
    sp.add_argument("--ui-dir", type=Path, default=None, help="static UI bundle directory")

    sp = sub.add_parser("export", help="write the labelled train/test spectrogram tree")
    _add_common(sp)
    sp.add_argument("--split", type=float, default=0.8, help="train fraction")

    sp = sub.add_parser("similarity", help="song similarity matrix + cross-year re-identification")
    _add_common(sp)

    sp = sub.add_parser("bench", help="synthetic segmentation throughput suite")
    _add_common(sp)
    sp.add_argument("--units", type=int, default=20_000)
    return parser


def _load_params(args) -> Parameters:
    path = args.params
    if path is None:
        candidate = args.project / "params.json"
        path = candidate if candidate.exists() else None
    p = Parameters.from_file(path) if path else Parameters()
    if args.song_level:
        p = p.replace(song_level=True)
    violations = validate_parameters(p)
    if violations:
        raise ValueError("invalid parameters: " + "; ".join(violations))
    return p


def _threads(args) -> int:
    return args.threads if args.threads else default_worker_count()


def _emit(args, result: dict, human_lines: list[str]) -> None:
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        for line in human_lines:
            print(line)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_init(args) -> None:
    dirs = init_project(args.project)
    params_path = args.project / "params.json"
    if not params_path.exists():
        Parameters().to_file(params_path)
    sample_ids: list[str] = []
    if args.with_sample:
        sample_ids = make_sample_corpus(dirs.raw_data)
    _emit(
        args,
        {"root": str(dirs.root), "sample_songs": len(sample_ids)},
        [f"initialised project at {dirs.root}"]
        + ([f"wrote {len(sample_ids)} demo songs"] if sample_ids else []),
    )


def cmd_ingest(args) -> None:
    dirs = ProjectDirs.under(args.project)
    if not dirs.raw_data.is_dir():
        raise FileNotFoundError(f"{dirs.raw_data} does not exist; run init first")
    p = _load_params(args)
    catalogue = ingest(dirs)
    (dirs.output / "dataset").mkdir(parents=True, exist_ok=True)
    (dirs.output / "dataset" / "catalogue.jsonl").write_text(
        catalogue.to_jsonl(base=dirs.root), encoding="utf-8"
    )
    ds = build_dataset(dirs, catalogue, p)
    lines = [f"ingested {len(catalogue)} recordings ({len(ds)} records)"]
    for name in catalogue.missing_sidecar:
        lines.append(f"warning: {name} has no JSON sidecar, skipped")
    for rid, msg in ds.failures:
        lines.append(f"warning: {rid}: {msg}")
    _emit(
        args,
        {
            "records": len(ds),
            "missing_sidecar": catalogue.missing_sidecar,
            "failures": [[i, m] for i, m in ds.failures],
        },
        lines,
    )


def cmd_segment(args) -> None:
    dirs = ProjectDirs.under(args.project)
    p = _load_params(args)
    ds = load(dirs)
    t0 = time.perf_counter()
    ds = ds_mod.segment_all(ds, p, workers=_threads(args))
    elapsed = time.perf_counter() - t0
    total_units = sum(
        r.segmentation.num_units for r in ds.records.values() if r.segmentation
    )
    zero = sum(1 for r in ds.records.values() if "zero_units" in r.flags)
    _emit(
        args,
        {
            "records": len(ds),
            "units": total_units,
            "zero_unit_records": zero,
            "seconds": round(elapsed, 3),
            "failures": [[i, m] for i, m in ds.failures],
        },
        [f"segmented {len(ds)} records into {total_units} units in {elapsed:.1f}s"],
    )


def cmd_embed(args) -> None:
    dirs = ProjectDirs.under(args.project)
    ds = load(dirs)
    ds.require_stage("segmented", "embed")
    p = _load_params(args)
    table = embed_dataset(
        ds, p, method=args.method, n_neighbors=args.neighbors, seed=args.seed
    )
    save_embeddings(ds, table)
    new = ds.with_stage("embedded")
    ds_mod.save(new)
    _emit(
        args,
        {
            "rows": len(table.rows),
            "global_dim": int(table.global_vectors.shape[1]),
            "individuals": len(table.indiv_vectors),
        },
        [f"embedded {len(table.rows)} rows for {len(table.indiv_vectors)} individuals"],
    )


def cmd_cluster(args) -> None:
    dirs = ProjectDirs.under(args.project)
    ds = load(dirs)
    p = _load_params(args)
    ds = cluster_ids(ds, p, use_global=args.use_global)
    per_ind = {
        ind: len(
            {
                r.cluster_label
                for r in ds.records.values()
                if r.meta.individual_id == ind
                and r.cluster_label is not None
                and r.cluster_label >= 0
            }
        )
        for ind in ds.individuals()
    }
    noise = sum(1 for r in ds.records.values() if r.cluster_label == -1)
    _emit(
        args,
        {"clusters_per_individual": per_ind, "noise_records": noise},
        [f"{ind}: {k} clusters" for ind, k in sorted(per_ind.items())]
        + [f"noise records: {noise}"],
    )


def cmd_app(args) -> None:
    dirs = ProjectDirs.under(args.project)
    ds = load(dirs)
    ds.require_stage("clustered", "app")
    service = serve(ds, port=args.port, ui_dir=args.ui_dir)
    print(f"label service on http://127.0.0.1:{service.port}/ (Ctrl-C to stop)", flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        service.stop()


def cmd_export(args) -> None:
    dirs = ProjectDirs.under(args.project)
    ds = load(dirs)
    ds.require_stage("clustered", "export")
    counts = export_training_set(ds, split_fraction=args.split, seed=args.seed)
    _emit(
        args,
        counts,
        [f"exported {counts['train']} train / {counts['test']} test spectrograms"],
    )


def cmd_similarity(args) -> None:
    dirs = ProjectDirs.under(args.project)
    ds = load(dirs)
    ds.require_stage("embedded", "similarity")
    table = load_embeddings(ds)
    vectors = song_vectors(ds, table)
    matrix = pairwise_similarity(vectors)
    report = cross_year_reid(matrix)

    out = dirs.output / "reports" / "similarity"
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "reid_report.json", report.to_dict())

    with open(out / "partition_values.csv", "w", encoding="utf-8") as fh:
        fh.write("partition,similarity\n")
        for name, values in report.partitions.items():
            for v in values:
                fh.write(f"{name},{v!r}\n")

    grid = np.linspace(-1.0, 1.0, 256)
    densities = {}
    with open(out / "partition_density.csv", "w", encoding="utf-8") as fh:
        fh.write("partition,x,density\n")
        for name, values in report.partitions.items():
            d = density_estimate(values, grid)
            if d is None:
                continue
            densities[name] = (grid, d)
            for x, y in zip(grid, d):
                fh.write(f"{name},{x!r},{y!r}\n")
    if densities:
        save_partition_density_figure(densities, out / "partition_density.png")
    save_similarity_heatmap(
        matrix.values, [s.song_id for s in matrix.songs], out / "similarity_matrix.png"
    )

    _emit(
        args,
        {
            "report": str(out / "reid_report.json"),
            "accuracy": report.accuracy,
            "n_evaluated": report.n_evaluated,
            "chance_level_birds": report.chance_level_birds,
            "chance_level_types": report.chance_level_types,
        },
        [
            f"re-identification accuracy: {report.accuracy:.3f} "
            f"over {report.n_evaluated} bird-year pairs",
            f"chance level: {report.chance_level_birds} (birds), "
            f"{report.chance_level_types} (song types)",
            f"report written to {out}",
        ],
    )


def run_bench(total_units: int, workers: int, cfg: BenchConfig | None = None) -> dict:
    """Segment a synthetic corpus at 1 and `workers` workers; verify identical output."""
    cfg = cfg or BenchConfig()
    n_songs = total_units // cfg.units_per_song
    items = [(i, cfg) for i in range(n_songs)]

    measurements = {}
    digests = {}
    counts = {}
    for w in sorted({1, workers}):
        t0 = time.perf_counter()
        result = par_map(JobSpec(items=items, worker_count=w), bench_song_task)
        elapsed = time.perf_counter() - t0
        if result.failures:
            raise RuntimeError(f"bench items failed: {result.failures[:3]}")
        h = hashlib.sha256()
        units = 0
        for n_units, payload in result.values:
            units += n_units
            h.update(payload)
        measurements[w] = elapsed
        digests[w] = h.hexdigest()
        counts[w] = units

    units_found = counts[workers]
    speedup = measurements[1] / measurements[workers] if workers != 1 else 1.0
    rate_1 = counts[1] / measurements[1]
    return {
        "songs": n_songs,
        "units_found": units_found,
        "seconds_by_workers": {str(w): round(t, 3) for w, t in measurements.items()},
        "units_per_second_by_workers": {
            str(w): round(counts[w] / t, 1) for w, t in measurements.items()
        },
        "speedup": round(speedup, 3),
        "identical_outputs": len(set(digests.values())) == 1,
        "large_corpus_extrapolation_s": round(LARGE_CORPUS_UNITS / rate_1, 1),
    }


def cmd_bench(args) -> None:
    workers = _threads(args)
    report = run_bench(args.units, workers)
    lines = [
        f"{report['songs']} songs, {report['units_found']} units found",
    ]
    for w, t in report["seconds_by_workers"].items():
        rate = report["units_per_second_by_workers"][w]
        lines.append(f"workers={w}: {t}s ({rate} units/s)")
    lines.append(
        f"speedup 1 -> {workers}: {report['speedup']}x; "
        f"identical outputs: {report['identical_outputs']}"
    )
    lines.append(
        f"extrapolated single-worker time for {LARGE_CORPUS_UNITS} units: "
        f"{report['large_corpus_extrapolation_s']}s (informational)"
    )
    _emit(args, report, lines)


COMMANDS = {
    "init": cmd_init,
    "ingest": cmd_ingest,
    "segment": cmd_segment,
    "embed": cmd_embed,
    "cluster": cmd_cluster,
    "app": cmd_app,
    "export": cmd_export,
    "similarity": cmd_similarity,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
        return EXIT_OK
    except (ValueError, IngestError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, WavError, StorageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
