"""Command-line entry point.

Subcommands cover the full workflow: warp aerial tiles (polar), build
feature stores from manifests (extract), generate synthetic scenes with
known ground truth (synth), inspect stores (index), match single pairs
(match), rank candidates (query), score query sets (evaluate), time the
correlation paths (bench), and fit the toy embedder (train-toy).

Every run can write a flat JSON report echoing its resolved config.
Exit codes: 0 success, 1 validation error, 2 IO or format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dsm, loss, retrieval
from .errors import (
    CacheError,
    ConfigurationError,
    CrossViewError,
    DegenerateInputError,
    DimensionError,
    ManifestError,
    StoreFormatError,
    TrainingError,
)
from .featex import ExtractorConfig, FeatureVolume, extract_features, l2_normalize
from .geometry import PolarConfig, polar_transform
from .ingest import (
    ManifestRow,
    QuerySpec,
    load_image,
    make_query,
    parse_manifest,
    read_store,
    save_image,
    synth_scene,
    write_manifest,
    write_store,
)

log = logging.getLogger("crossview")

_VALIDATION_ERRORS = (
    ConfigurationError,
    DimensionError,
    DegenerateInputError,
    CacheError,
    TrainingError,
    ValueError,
)
_IO_ERRORS = (StoreFormatError, ManifestError, OSError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_tie(text: str, default_seed: int):
    if text == "first":
        return "first", 0
    if text == "random":
        return "random", default_seed
    if text.startswith("random:"):
        return "random", int(text.split(":", 1)[1])
    raise ConfigurationError(f"tie policy must be 'first' or 'random[:<seed>]', got {text!r}")


def _parse_path(text: str) -> str:
    if text in ("spatial",):
        return "spatial"
    if text in ("fft", "spectral"):
        return "spectral"
    raise ConfigurationError(f"path must be 'spatial' or 'fft', got {text!r}")


def _parse_store_ref(text: str):
    if ":" not in text:
        raise ConfigurationError(f"expected <store>:<id>, got {text!r}")
    path, _, rec_id = text.rpartition(":")
    return path, int(rec_id)


def _load_record(path: str, rec_id: int) -> FeatureVolume:
    for candidate_id, volume in read_store(path):
        if candidate_id == rec_id:
            return volume
    raise ConfigurationError(f"{path}: no record with id {rec_id}")


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _int_id(pair_id: str) -> int:
    try:
        value = int(pair_id)
    except ValueError:
        raise ConfigurationError(f"pair_id {pair_id!r} is not an integer store id") from None
    if value < 0 or value > 0xFFFFFFFF:
        raise ConfigurationError(f"pair_id {value} out of u32 range")
    return value


def _write_report(args, entries: dict):
    report = {f"config.{key}": _jsonable(value) for key, value in vars(args).items()
              if key not in ("func", "report") and not key.startswith("_")}
    report.update(entries)
    if not args.no_timestamp:
        report["timestamp"] = time.time()
    if getattr(args, "report", None):
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def cmd_polar(args):
    aerial = load_image(args.input)
    cfg = PolarConfig(aerial_size=args.sa, target_height=args.hg, target_width=args.wg)
    save_image(polar_transform(aerial, cfg), args.output)
    _write_report(args, {"rows": args.hg, "cols": args.wg})
    print(f"wrote {args.output}")
    return 0


def cmd_extract(args):
    manifest = parse_manifest(args.manifest)
    base = Path(args.manifest).parent
    feat_width = args.wg
    if args.view == "ground" and args.fov is not None and args.fov < 360.0:
        feat_width = int(math.floor(args.wg * args.fov / 360.0 + 0.5))
    cfg = ExtractorConfig(height=args.hg, width=feat_width, channels=args.c, mode=args.mode)

    azimuth = 0.0  # no extra shift unless asked; "random" maps to a seeded draw
    if args.azimuth is not None:
        azimuth = None if args.azimuth == "random" else float(args.azimuth)
    build_query = args.view == "ground" and (args.fov is not None or args.azimuth is not None)
    spec = None
    if build_query:
        spec = QuerySpec(fov=args.fov if args.fov is not None else 360.0, azimuth=azimuth, seed=args.seed)

    records = []
    gt_rows = []
    for row in manifest.rows:
        rec_id = _int_id(row.pair_id)
        img = load_image(_resolve(base, row.ground if args.view == "ground" else row.aerial))
        total_azimuth = row.azimuth
        if args.view == "aerial" and args.polar is not None:
            ph, pw = args.polar
            img = polar_transform(img, PolarConfig(aerial_size=img.shape[0], target_height=ph, target_width=pw))
        if spec is not None:
            img, applied = make_query(img, spec, pair_id=row.pair_id)
            total_azimuth = ((row.azimuth or 0.0) + applied) % 360.0
        records.append((rec_id, extract_features(img, cfg)))
        gt_rows.append(ManifestRow(row.pair_id, row.ground, row.aerial, row.latlon, total_azimuth))

    write_store(records, args.out)
    if args.gt_out:
        write_manifest(gt_rows, args.gt_out)
    _write_report(args, {"n": len(records), "h": args.hg, "w": feat_width, "c": args.c})
    print(f"extracted {len(records)} volumes ({args.hg}x{feat_width}x{args.c}) -> {args.out}")
    return 0


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PolarConfig(aerial_size=args.sa, target_height=args.hg, target_width=args.wg)
    rows = []
    for i in range(args.n):
        scene = synth_scene(seed=args.seed + i, cfg=cfg, noise_sigma=args.noise)
        aerial_name = f"aerial_{i:04d}.png"
        ground_name = f"ground_{i:04d}.png"
        save_image(scene.aerial, out / aerial_name)
        save_image(scene.ground, out / ground_name)
        # Synthetic geo layout: scenes on a north-south line, ~55 m apart.
        rows.append(ManifestRow(str(i), ground_name, aerial_name,
                                latlon=(i * 0.0005, 0.0), azimuth=scene.gt_azimuth))
    write_manifest(rows, out / "manifest.csv")
    _write_report(args, {"n": args.n, "sa": args.sa, "hg": args.hg, "wg": args.wg, "noise": args.noise})
    print(f"wrote {args.n} scenes to {out}")
    return 0


def cmd_index(args):
    records = read_store(args.store)
    idx = retrieval.build_index(records, use_fft_cache=args.fft_cache)
    data_bytes = len(idx) * idx.height * idx.width * idx.channels * 4
    cache_bytes = len(idx) * idx.height * (idx.width // 2 + 1) * idx.channels * 16 if args.fft_cache else 0
    _write_report(args, {
        "n": len(idx), "h": idx.height, "w": idx.width, "c": idx.channels,
        "data_bytes": data_bytes, "cache_bytes": cache_bytes,
    })
    print(f"index ok: {len(idx)} entries, {idx.height}x{idx.width}x{idx.channels}, "
          f"{data_bytes / 1e6:.1f} MB data + {cache_bytes / 1e6:.1f} MB cache")
    return 0


def cmd_match(args):
    aerial_path, aerial_id = _parse_store_ref(args.aerial)
    ground_path, ground_id = _parse_store_ref(args.ground)
    f_a = l2_normalize(_load_record(aerial_path, aerial_id))
    f_g = l2_normalize(_load_record(ground_path, ground_id))
    path = _parse_path(args.path)
    tie, tie_seed = _parse_tie(args.tie, args.seed)
    matcher = dsm.match_panorama if f_g.width == f_a.width else dsm.match_limited_fov
    result = matcher(f_a, f_g, path=path, tie=tie, seed=tie_seed)
    est = result.orientation
    print(f"distance={result.distance:.6f} shift={est.shift} "
          f"azimuth_deg={est.azimuth_deg:.4f} tie_count={est.tie_count}")
    _write_report(args, {
        "distance": result.distance, "shift": est.shift,
        "azimuth_deg": est.azimuth_deg, "tie_count": est.tie_count,
    })
    return 0


def cmd_query(args):
    idx = retrieval.build_index(read_store(args.index), use_fft_cache=True)
    ground = l2_normalize(_load_record(args.queries, args.id))
    tie, tie_seed = _parse_tie(args.tie, args.seed)
    result = retrieval.query(idx, ground, k=args.k, path=_parse_path(args.path),
                             tie=tie, seed=tie_seed, query_id=args.id)
    entries = {}
    for rank, (rid, distance, est) in enumerate(result.ranked, start=1):
        print(f"rank={rank} id={rid} distance={distance:.6f} azimuth_deg={est.azimuth_deg:.4f}")
        entries[f"rank_{rank}.id"] = rid
        entries[f"rank_{rank}.distance"] = distance
    _write_report(args, entries)
    return 0


def cmd_evaluate(args):
    idx_records = read_store(args.index)
    query_records = read_store(args.queries)
    gt_manifest = parse_manifest(args.gt)
    path = _parse_path(args.path)
    tie, tie_seed = _parse_tie(args.tie, args.seed)

    gt = {}
    gt_azimuth = {}
    gt_pos = {}
    for row in gt_manifest.rows:
        rec_id = _int_id(row.pair_id)
        gt[rec_id] = rec_id  # queries pair with the same-id aerial tile
        if row.azimuth is not None:
            gt_azimuth[rec_id] = row.azimuth
        if row.latlon is not None:
            gt_pos[rec_id] = row.latlon

    geo = None
    if args.geo:
        geo = {}
        with open(args.geo, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["id", "lat", "lon"]:
                raise ManifestError(f"{args.geo}: expected header id,lat,lon")
            for cells in reader:
                geo[int(cells[0])] = (float(cells[1]), float(cells[2]))
    elif gt_pos:
        geo = dict(gt_pos)

    idx = retrieval.build_index(idx_records, use_fft_cache=(path == "spectral"))
    ks = tuple(int(k) for k in args.k.split(","))
    k_need = max(max(ks), math.ceil(len(idx) * args.pct / 100.0))

    def run_one(record):
        rec_id, volume = record
        return retrieval.query(idx, l2_normalize(volume), k=k_need, path=path,
                               tie=tie, seed=tie_seed, query_id=rec_id)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(run_one, query_records))
    else:
        results = [run_one(record) for record in query_records]

    report = retrieval.evaluate(
        results, gt, n_database=len(idx), ks=ks, pct=args.pct,
        gt_azimuth=gt_azimuth or None, fov=args.fov,
        geo=geo if (geo and gt_pos) else None, gt_pos=gt_pos or None,
        radius_m=args.radius,
    )
    entries = {f"r_at_{k}": v for k, v in report.recall_at.items()}
    entries["r_at_pct"] = report.recall_at_1pct
    entries["orien_acc"] = report.orien_acc
    entries["median_error_deg"] = report.median_error_deg
    entries["dist_recall_m"] = report.dist_recall_5m
    entries["n_queries"] = report.n
    _write_report(args, entries)
    for key, value in entries.items():
        print(f"{key}={value}")
    return 0


def cmd_bench(args):
    if args.store:
        records = read_store(args.store)
    else:
        rng = np.random.default_rng(args.seed)
        records = [
            (i, FeatureVolume(data=rng.standard_normal((args.hf, args.wf, args.cf)).astype(np.float32)))
            for i in range(args.n)
        ]
    idx = retrieval.build_index(records, use_fft_cache=True)
    rng = np.random.default_rng(args.seed + 1)
    queries = [
        l2_normalize(FeatureVolume(data=rng.standard_normal((idx.height, idx.width, idx.channels)).astype(np.float32)))
        for _ in range(args.n_queries)
    ]
    report = retrieval.benchmark(idx, queries)
    spatial = report.seconds_per_query["spatial"]
    spectral = report.seconds_per_query["spectral"]
    entries = {
        "n": len(idx),
        "spatial_s_per_query": spatial,
        "spectral_s_per_query": spectral,
        "speedup": spatial / spectral,
        "flops_spatial": report.flops.spatial,
        "flops_spectral": report.flops.spectral,
        "flop_ratio": report.flops.ratio,
    }
    _write_report(args, entries)
    for key, value in entries.items():
        print(f"{key}={value}")
    return 0


def cmd_train_toy(args):
    records = read_store(args.pairs)
    if len(records) < 4 or len(records) % 2 != 0:
        raise ConfigurationError(
            f"pairs store must hold an even number (>= 4) of records "
            f"(2i = ground_i, 2i+1 = aerial_i), got {len(records)}"
        )
    by_id = dict(records)
    n_pairs = len(records) // 2
    try:
        pairs = [
            (by_id[2 * i].data.astype(np.float64), by_id[2 * i + 1].data.astype(np.float64))
            for i in range(n_pairs)
        ]
    except KeyError as exc:
        raise ConfigurationError(f"pairs store is missing record id {exc}") from None

    d_in = pairs[0][0].shape[2]
    rng = np.random.default_rng(args.seed)
    embedder = loss.LinearEmbedder(rng.standard_normal((d_in, args.dout)) * 0.5)
    trained, trace = loss.train_toy(
        embedder, pairs, epochs=args.epochs, step_size=args.step, seed=args.seed,
        cfg=loss.LossConfig(alpha=args.alpha),
    )
    loss.save_weights(trained, args.out)
    _write_report(args, {
        "pairs": n_pairs, "initial_loss": trace[0], "final_loss": trace[-1],
        "epochs_run": len(trace) - 1,
    })
    print(f"loss {trace[0]:.6f} -> {trace[-1]:.6f} over {len(trace) - 1} epochs; wrote {args.out}")
    return 0


def _add_globals(parser, suppress: bool):
    # The same flags are registered on the root parser (with real defaults)
    # and on every subparser (defaults suppressed), so they are accepted on
    # either side of the subcommand and the subcommand position wins.
    d = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--threads", type=int, help="worker threads for query fan-out (default 1)",
                        **({"default": 1} if not suppress else d))
    parser.add_argument("--seed", type=int, help="base seed for all randomness (default 0)",
                        **({"default": 0} if not suppress else d))
    parser.add_argument("--log-level", help="logging level (default warning)",
                        **({"default": "warning"} if not suppress else d))
    parser.add_argument("--no-timestamp", action="store_true",
                        help="omit the timestamp from reports",
                        **({} if not suppress else d))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossview", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_globals(parser, suppress=False)
    common = _Parser(add_help=False)
    _add_globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("polar", help="polar-warp an aerial image")
    p.add_argument("--input", required=True)
    p.add_argument("--sa", type=int, required=True, help="aerial side length in pixels")
    p.add_argument("--hg", type=int, required=True, help="output height")
    p.add_argument("--wg", type=int, required=True, help="output width")
    p.add_argument("--output", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_polar)

    p = add_parser("extract", help="extract feature volumes for one manifest column")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--view", choices=("ground", "aerial"), required=True)
    p.add_argument("--hg", type=int, default=4, help="feature rows (default 4)")
    p.add_argument("--wg", type=int, default=64, help="feature columns at 360 deg FoV (default 64)")
    p.add_argument("--c", type=int, default=16, help="feature channels (default 16)")
    p.add_argument("--mode", default="block-mean",
                   choices=("block-mean", "gradient-orientation-histogram"))
    p.add_argument("--polar", type=_hw, metavar="HxW",
                   help="aerial view: polar-warp to this size before extraction")
    p.add_argument("--fov", type=float, help="ground view: crop to this field of view")
    p.add_argument("--azimuth", help="ground view: shift by degrees, or 'random'")
    p.add_argument("--gt-out", help="write the updated ground-truth manifest here")
    p.add_argument("--report")
    p.set_defaults(func=cmd_extract)

    p = add_parser("synth", help="generate synthetic scenes with known ground truth")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--sa", type=int, default=128)
    p.add_argument("--hg", type=int, default=16)
    p.add_argument("--wg", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.0, help="ground-pixel noise sigma in gray levels")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_synth)

    p = add_parser("index", help="validate a store and report index stats")
    p.add_argument("--store", required=True)
    p.add_argument("--fft-cache", action="store_true")
    p.add_argument("--report")
    p.set_defaults(func=cmd_index)

    p = add_parser("match", help="match one ground record against one aerial record")
    p.add_argument("--aerial", required=True, metavar="STORE:ID")
    p.add_argument("--ground", required=True, metavar="STORE:ID")
    p.add_argument("--path", default="fft", help="spatial or fft (default fft)")
    p.add_argument("--tie", default="first", help="first or random[:<seed>] (default first)")
    p.add_argument("--report")
    p.set_defaults(func=cmd_match)

    p = add_parser("query", help="rank index entries for one query record")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--path", default="fft")
    p.add_argument("--tie", default="first")
    p.add_argument("--report")
    p.set_defaults(func=cmd_query)

    p = add_parser("evaluate", help="score a query store against an index store")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt", required=True, help="manifest CSV with azimuth/lat/lon ground truth")
    p.add_argument("--fov", type=float, default=360.0)
    p.add_argument("--k", default="1,5,10", help="comma-separated recall cutoffs")
    p.add_argument("--pct", type=float, default=1.0)
    p.add_argument("--geo", help="optional id,lat,lon CSV overriding aerial coordinates")
    p.add_argument("--radius", type=float, default=5.0, help="distance-recall radius in meters")
    p.add_argument("--path", default="fft")
    p.add_argument("--tie", default="first")
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = add_parser("bench", help="time both correlation paths over an index")
    p.add_argument("--store", help="use this store instead of generating volumes")
    p.add_argument("--n", type=int, default=8884)
    p.add_argument("--hf", type=int, default=4)
    p.add_argument("--wf", type=int, default=64)
    p.add_argument("--cf", type=int, default=16)
    p.add_argument("--n-queries", type=int, default=3)
    p.add_argument("--report")
    p.set_defaults(func=cmd_bench)

    p = add_parser("train-toy", help="fit the toy linear embedder on a pairs store")
    p.add_argument("--pairs", required=True,
                   help="store holding 2N records: id 2i = ground_i, 2i+1 = aerial_i")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--step", type=float, default=0.3)
    p.add_argument("--dout", type=int, default=4)
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_train_toy)

    return parser


def _hw(text: str):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse --help exits 0, parse errors exit 1
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        return args.func(args)
    except _IO_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CrossViewError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    raise SystemExit(run())


if __name__ == "__main__":
    main()
