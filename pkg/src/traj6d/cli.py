"""Command-line surface: extract, tokenize, detokenize, evaluate, synth,
curate.

Exit codes: 0 success, 1 usage, 2 data error, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from .codec import BinSpec, TokenizedTrajectory, discretize, fit_bins, undiscretize
from .config import PipelineConfig
from .errors import (
    CurationReject,
    DecodeError,
    DegenerateGeometryError,
    InputError,
    RegistrationFailure,
)
from .extraction import curate
from .metrics import TrajectoryPair, evaluate_batch
from .pipeline import TrajectoryRecord, extract_clip
from .synth import SceneScript, generate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PIPELINE = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we reserve 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="traj6d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract trajectories from clip manifests")
    p.add_argument("manifests", nargs="*", help="clip manifest JSON paths")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel clip workers")
    p.add_argument("--output", required=True, help="trajectory records JSONL")
    p.add_argument("--log", help="curation log JSON (default <output>.curation.json)")

    p = sub.add_parser("tokenize", help="discretize records into token grids")
    p.add_argument("--records", required=True)
    p.add_argument("--binspec", help="existing bin-bounds JSON")
    p.add_argument("--fit", action="store_true", help="fit bounds on the records")
    p.add_argument("--binspec-out", help="where to write fitted bounds")
    p.add_argument("--base-id", type=int, default=0)
    p.add_argument("--output", required=True, help="token rows JSONL")

    p = sub.add_parser("detokenize", help="token grids back to pose records")
    p.add_argument("--tokens", required=True)
    p.add_argument("--binspec", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("evaluate", help="compare predicted records to references")
    p.add_argument("--predicted", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--best-of", type=int, default=1,
                   help="predictions per clip; best ADE(3D) is scored")
    p.add_argument("--output", help="write the JSON report here")

    p = sub.add_parser("synth", help="render a scripted synthetic clip")
    p.add_argument("--script", required=True, help="scene script JSON")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--width", type=int, default=224)
    p.add_argument("--height", type=int, default=168)
    p.add_argument("--focal", type=float, default=190.0)

    p = sub.add_parser("curate", help="re-run frustum curation on records")
    p.add_argument("--records", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--log", help="curation log JSON (default <output>.curation.json)")
    return parser


# -------------------------------------------------------------------- extract


def _process_manifest(job) -> dict:
    """Worker: load one clip and extract. Returns a JSON-ready outcome."""
    index, manifest_path, config_dict = job
    config = PipelineConfig.from_dict(config_dict)
    entry = {"clip_id": None, "manifest": str(manifest_path)}
    try:
        manifest = formats.ClipManifest.load(manifest_path)
        entry["clip_id"] = manifest.clip_id
        bundle = formats.load_clip(manifest)
        record = extract_clip(bundle, config, clip_index=index)
        entry.update(status="accepted")
        entry["record"] = record.to_dict()
    except CurationReject as err:
        entry.update(status="rejected", reason=err.reason, detail=err.detail)
    except (InputError, OSError) as err:
        entry.update(status="error", error=str(err))
    except (RegistrationFailure, DegenerateGeometryError) as err:
        # belt and braces: extract_clip maps these, but a raw escape is
        # still a per-clip failure rather than a batch abort
        entry.update(status="error", error=str(err))
    return entry


def _cmd_extract(args) -> int:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.jobs < 1:
        raise _UsageError("--jobs must be at least 1")
    jobs = [(i, m, config.to_dict()) for i, m in enumerate(args.manifests)]
    if args.jobs == 1 or len(jobs) <= 1:
        outcomes = [_process_manifest(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            # map preserves submission order: records come out in manifest order
            outcomes = list(pool.map(_process_manifest, jobs))

    records = [o["record"] for o in outcomes if o["status"] == "accepted"]
    formats.write_records(args.output, records)
    log_path = args.log or f"{args.output}.curation.json"
    log_entries = [
        {k: v for k, v in o.items() if k != "record"} for o in outcomes
    ]
    with open(log_path, "w") as fh:
        json.dump(log_entries, fh, indent=2)
        fh.write("\n")
    accepted = len(records)
    rejected = sum(1 for o in outcomes if o["status"] == "rejected")
    errored = sum(1 for o in outcomes if o["status"] == "error")
    print(f"extract: {accepted} accepted, {rejected} rejected, {errored} errors "
          f"-> {args.output}")
    return EXIT_OK


# ------------------------------------------------------- tokenize / detokenize


def _cmd_tokenize(args) -> int:
    if not args.fit and not args.binspec:
        raise _UsageError("need --binspec or --fit")
    records = formats.read_records(args.records)
    if args.fit:
        if not records:
            raise InputError("cannot fit bins: no records")
        bins = fit_bins(records)
        out = args.binspec_out or f"{args.output}.binspec.json"
        bins.save(out)
        print(f"tokenize: fitted bounds -> {out}")
    else:
        bins = BinSpec.load(args.binspec)
    rows = []
    for record in records:
        tok = discretize(record.poses, bins, base_id=args.base_id)
        rows.append(
            {
                "clip_id": record.clip_id,
                "grid": tok.grid.tolist(),
                "token_stream": tok.token_stream.tolist(),
                "base_id": tok.base_id,
                "clamp_count": tok.clamp_count,
            }
        )
    formats.write_token_rows(args.output, rows)
    print(f"tokenize: {len(rows)} trajectories -> {args.output}")
    return EXIT_OK


def _cmd_detokenize(args) -> int:
    bins = BinSpec.load(args.binspec)
    rows = formats.read_token_rows(args.tokens)
    out = []
    for row in rows:
        try:
            grid = np.asarray(row["grid"], dtype=np.int64)
        except (KeyError, ValueError) as err:
            raise InputError(f"{args.tokens}: malformed token row ({err})") from err
        poses = undiscretize(grid, bins)
        out.append({"clip_id": row.get("clip_id", ""), "poses": poses.tolist()})
    formats.write_records(args.output, out)
    print(f"detokenize: {len(out)} trajectories -> {args.output}")
    return EXIT_OK


# ------------------------------------------------------------------- evaluate


def _cmd_evaluate(args) -> int:
    predicted = formats.read_records(args.predicted)
    reference = formats.read_records(args.reference)
    if args.best_of < 1:
        raise _UsageError("--best-of must be at least 1")
    refs = {}
    for r in reference:
        if r.clip_id in refs:
            raise InputError(f"duplicate reference clip_id {r.clip_id!r}")
        refs[r.clip_id] = r
    groups: dict = {r.clip_id: [] for r in reference}
    unmatched = [p.clip_id for p in predicted if p.clip_id not in refs]
    if unmatched:
        raise InputError(f"predicted clip_ids without a reference: {sorted(set(unmatched))}")
    for p in predicted:
        groups[p.clip_id].append(p)
    missing = [cid for cid, g in groups.items() if len(g) != args.best_of]
    if missing:
        raise InputError(
            f"expected {args.best_of} prediction(s) per clip; mismatched ids: "
            f"{sorted(missing)}"
        )
    pairs, ids = [], []
    for cid, group in groups.items():
        ref = refs[cid]
        for p in group:
            pairs.append(
                TrajectoryPair(
                    predicted=p.poses,
                    reference=ref.poses,
                    intrinsics=ref.intrinsics or p.intrinsics,
                )
            )
            ids.append(cid)
    report = evaluate_batch(pairs, instance_ids=ids)
    print(report.to_text())
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(report.to_json())
            fh.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------- synth


def _cmd_synth(args) -> int:
    from .geometry import CameraIntrinsics

    script = SceneScript.load(args.script)
    intrinsics = CameraIntrinsics(
        fx=args.focal, fy=args.focal,
        cx=args.width / 2.0, cy=args.height / 2.0,
        width=args.width, height=args.height,
    )
    clip = generate(script, intrinsics)
    manifest_path = formats.write_synth_clip(clip, args.output_dir)
    print(f"synth: clip {script.clip_id} -> {manifest_path}")
    return EXIT_OK


# --------------------------------------------------------------------- curate


def _cmd_curate(args) -> int:
    records = formats.read_records(args.records)
    kept, log_entries = [], []
    for record in records:
        if record.intrinsics is None:
            raise InputError(
                f"record {record.clip_id!r} has no intrinsics; cannot curate"
            )
        verdict = curate(record.poses, record.intrinsics)
        if verdict.accepted:
            kept.append(record)
            log_entries.append({"clip_id": record.clip_id, "status": "accepted"})
        else:
            log_entries.append(
                {
                    "clip_id": record.clip_id,
                    "status": "rejected",
                    "reason": verdict.reason,
                    "detail": verdict.detail,
                }
            )
    formats.write_records(args.output, kept)
    log_path = args.log or f"{args.output}.curation.json"
    with open(log_path, "w") as fh:
        json.dump(log_entries, fh, indent=2)
        fh.write("\n")
    print(f"curate: kept {len(kept)} of {len(records)} -> {args.output}")
    return EXIT_OK


_COMMANDS = {
    "extract": _cmd_extract,
    "tokenize": _cmd_tokenize,
    "detokenize": _cmd_detokenize,
    "evaluate": _cmd_evaluate,
    "synth": _cmd_synth,
    "curate": _cmd_curate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, DecodeError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (RegistrationFailure, DegenerateGeometryError, CurationReject) as err:
        print(f"pipeline failure: {err}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
