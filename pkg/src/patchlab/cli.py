"""Command-line entry point.

Subcommands mirror the campaign protocol: gen-scenario produces a synthetic
scenario, baseline / optimize / transfer run the phases, matrix rebuilds
tables from persisted logs, and report emits the CSV/SVG/JSON bundle.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import campaign as camp
from .errors import PatchlabError
from .imaging import patch_to_png
from .manifest import generate_scenario, load_frames, load_manifest
from .nes import ObjectiveSpec, optimize, write_trace_jsonl
from .report import render_report


def _load_config(args) -> camp.CampaignConfig:
    if not args.config:
        raise PatchlabError("--config is required for this subcommand")
    config = camp.load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, output_dir=Path(args.out))
    return config


def _cmd_gen_scenario(args) -> int:
    path = generate_scenario(
        args.out or "scenario",
        kind=args.kind,
        frame_width=args.frame_width,
        frame_height=args.frame_height,
        seed=args.seed or 0,
        patch_width=args.patch_width,
        patch_height=args.patch_height,
    )
    print(f"wrote {path}")
    return 0


def _cmd_baseline(args) -> int:
    config = _load_config(args)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    ctx = camp.CampaignContext(config)
    camp._write_run_metadata(ctx)
    result = camp.run_baseline_phase(ctx)
    ctx.ledger.write_jsonl(config.output_dir / "queries.jsonl")
    for (oracle_id, scenario_id), rate in sorted(result.rates.items()):
        print(f"baseline {oracle_id} / {scenario_id}: {rate:.4f}")
    return 0


def _cmd_optimize(args) -> int:
    config = _load_config(args)
    manifest = load_manifest(args.scenario)
    clients = {o.id: camp.OracleClient(o) for o in config.oracles}
    unknown = [oid for oid in args.oracle if oid not in clients]
    if unknown:
        raise PatchlabError(f"unknown oracle ids {unknown}; config defines {sorted(clients)}")
    seed = camp.child_seed(config.master_seed, "optimize", *args.oracle, manifest.scenario_id)
    spec = ObjectiveSpec(
        oracles=[clients[oid] for oid in args.oracle],
        target_text=manifest.target_text,
        frames=load_frames(manifest),
        eot=dataclasses.replace(config.eot, seed=seed),
        embedding=camp.EmbeddingClient(config.embedding),
        aggregation=args.aggregation,
        patch_width=manifest.patch_width,
        patch_height=manifest.patch_height,
    )
    nes_cfg = dataclasses.replace(config.nes, seed=seed)
    out_path = Path(args.patch_out)
    ckpt = out_path.with_suffix(".ckpt.npz")
    patch, trace = optimize(
        spec, nes_cfg, checkpoint_path=ckpt, resume_from=ckpt if ckpt.exists() else None
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(patch_to_png(patch))
    if args.trace:
        write_trace_jsonl(trace, args.trace)
    meta = {
        "oracles": list(args.oracle),
        "scenario": manifest.scenario_id,
        "aggregation": args.aggregation,
        "seed": seed,
        "nes": dataclasses.asdict(nes_cfg),
        "eot": dataclasses.asdict(spec.eot),
        "eot_resampling": "fresh subseed per antithetic pair, shared within the pair",
        "iterations_run": len(trace),
    }
    with open(out_path.with_suffix(".meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    queries = sum(c.ledger.count() for c in {id(x.ledger): x for x in spec.oracles}.values())
    print(f"wrote {out_path} after {len(trace)} iterations, {queries} oracle queries")
    if ckpt.exists():
        ckpt.unlink()
    return 0


def _cmd_transfer(args) -> int:
    config = _load_config(args)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    ctx = camp.CampaignContext(config)
    camp._write_run_metadata(ctx)
    baseline = camp.run_baseline_phase(ctx)
    selfatk = camp.run_self_attack_phase(ctx)
    transfer = camp.run_transfer_phase(ctx, selfatk.patches, selfatk.logs, baseline)
    ctx.ledger.write_jsonl(config.output_dir / "queries.jsonl")
    for scenario_id, matrix in sorted(transfer.matrices.items()):
        print(f"{scenario_id}: mean TR = {matrix.mean_tr:.3f}")
    return 0


def _cmd_matrix(args) -> int:
    from .metrics import build_transfer_matrix, read_asr_csv

    table = read_asr_csv(args.asr_csv)
    matrix = build_transfer_matrix(table)
    print(json.dumps(
        {
            "mean_tr": matrix.mean_tr,
            "vs": matrix.vs,
            "rs": matrix.rs,
            "to": matrix.to,
        },
        indent=2,
        sort_keys=True,
    ))
    if args.tr_out:
        from .metrics import write_transfer_csv

        write_transfer_csv(matrix, args.tr_out)
    return 0


def _cmd_report(args) -> int:
    report_dir = render_report(args.results or args.out or "out")
    print(f"wrote {report_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="patchlab", description=__doc__)
    parser.add_argument("--config", help="campaign config JSON")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenario", help="emit a synthetic scenario + manifest")
    p.add_argument("--kind", choices=["crosswalk", "highway"], default="crosswalk")
    p.add_argument("--frame-width", type=int, default=320)
    p.add_argument("--frame-height", type=int, default=180)
    p.add_argument("--patch-width", type=int, default=None)
    p.add_argument("--patch-height", type=int, default=None)
    p.set_defaults(func=_cmd_gen_scenario)

    p = sub.add_parser("baseline", help="phase 1: benign trials per oracle/scenario")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("optimize", help="optimize one patch against one or more oracles")
    p.add_argument("--oracle", action="append", required=True, help="oracle id (repeatable)")
    p.add_argument("--scenario", required=True, help="scenario manifest path")
    p.add_argument("--out", dest="patch_out", default="patch.png", help="output patch PNG")
    p.add_argument("--trace", help="optimization trace JSONL path")
    p.add_argument("--aggregation", choices=["mean", "max"], default="mean")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("transfer", help="phases 1-3 end to end")
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("matrix", help="transfer matrix + derived metrics from an ASR CSV")
    p.add_argument("asr_csv")
    p.add_argument("--tr-out", help="also write the TR matrix CSV here")
    p.set_defaults(func=_cmd_matrix)

    p = sub.add_parser("report", help="render the report bundle from campaign outputs")
    p.add_argument("--results", help="campaign output directory (defaults to --out)")
    p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PatchlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
