"""Three-phase campaign protocol: baseline, self-attack, transfer.

Phase 1 measures each oracle's inappropriate-action rate on benign frames.
Phase 2 optimizes one patch per (oracle, scenario) and scores it on its
source oracle. Phase 3 evaluates every patch on every other oracle,
assembles the ASR table, normalizes it into the transfer matrix, and runs
the clustered significance test against baseline.

Every cell of every phase draws its own child seed from the master seed,
derived by hashing the phase/oracle/scenario/trial labels, so no randomness
is shared or reused across cells and a fixed master seed reproduces every
artifact byte for byte (wall-clock fields aside).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .eot import EotConfig
from .errors import ConfigError, InvalidInputError, OracleError, ProtocolError, TransportError
from .imaging import Patch, composite, patch_from_png, patch_to_png
from .manifest import ScenarioManifest, load_frames, load_manifest
from .metrics import (
    AsrTable,
    FrameOutcome,
    TrialLog,
    build_transfer_matrix,
    frame_asr,
    write_asr_csv,
    write_transfer_csv,
    write_trial_log,
)
from .nes import NesConfig, ObjectiveSpec, optimize, write_trace_jsonl
from .oracle import EmbeddingClient, EmbeddingRef, OracleClient, OracleRef, QueryLedger, normalize_action
from .stats import ClusteredSample, cluster_permutation_test

BASELINE_PATCH_ID = "none"


def child_seed(master_seed: int, *labels) -> int:
    """Distinct 63-bit seed per (master, labels...) tuple."""
    tag = "|".join([str(master_seed), *[str(l) for l in labels]])
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass(frozen=True)
class CampaignConfig:
    oracles: tuple[OracleRef, ...]
    embedding: EmbeddingRef
    scenarios: tuple[Path, ...]
    nes: NesConfig = NesConfig()
    eot: EotConfig = EotConfig()
    trials_per_cell: int = 5
    output_dir: Path = Path("out")
    master_seed: int = 0
    stats_n_perm: int = 1999

    def __post_init__(self):
        if self.trials_per_cell < 1:
            raise InvalidInputError(f"trials_per_cell must be >= 1, got {self.trials_per_cell}")
        ids = [o.id for o in self.oracles]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"oracle ids must be unique, got {ids}")
        if not self.oracles:
            raise ConfigError("campaign needs at least one oracle")
        if not self.scenarios:
            raise ConfigError("campaign needs at least one scenario manifest")


_TOP_KEYS = {
    "oracles",
    "embedding",
    "scenarios",
    "nes",
    "eot",
    "trials_per_cell",
    "output_dir",
    "master_seed",
    "stats_n_perm",
}
_ORACLE_KEYS = {"id", "endpoint", "prompt", "timeout", "max_in_flight", "params"}
_EMBED_KEYS = {"endpoint", "dimension", "seed"}
_NES_KEYS = {"n_directions", "sigma", "alpha", "iterations", "lambda_tv", "seed"}
_EOT_KEYS = {"k_samples", "jitter", "brightness_range", "contrast_range", "seed"}


def _check_keys(doc: dict, allowed: set, where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def config_from_dict(doc: dict, base_dir: Path | str = ".") -> CampaignConfig:
    """Parse a campaign config document. Unknown keys are rejected."""
    base_dir = Path(base_dir)
    _check_keys(doc, _TOP_KEYS, "campaign config")
    oracles = []
    for od in doc.get("oracles", []):
        _check_keys(od, _ORACLE_KEYS, f"oracle {od.get('id', '?')!r}")
        params = od.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("oracle params must be an object")
        oracles.append(
            OracleRef(
                id=od["id"],
                endpoint=od["endpoint"],
                prompt=od.get("prompt", OracleRef.__dataclass_fields__["prompt"].default),
                timeout=float(od.get("timeout", 10.0)),
                max_in_flight=int(od.get("max_in_flight", 1)),
                params=params,
            )
        )
    ed = doc.get("embedding", {})
    _check_keys(ed, _EMBED_KEYS, "embedding")
    embedding = EmbeddingRef(
        endpoint=ed.get("endpoint", "scripted:bow"),
        dimension=int(ed.get("dimension", EmbeddingRef.__dataclass_fields__["dimension"].default)),
        seed=int(ed.get("seed", EmbeddingRef.__dataclass_fields__["seed"].default)),
    )
    nd = doc.get("nes", {})
    _check_keys(nd, _NES_KEYS, "nes")
    ndd = {k: nd[k] for k in nd}
    eot_doc = doc.get("eot", {})
    _check_keys(eot_doc, _EOT_KEYS, "eot")
    eot_kwargs = dict(eot_doc)
    for key in ("brightness_range", "contrast_range"):
        if key in eot_kwargs:
            eot_kwargs[key] = tuple(eot_kwargs[key])
    return CampaignConfig(
        oracles=tuple(oracles),
        embedding=embedding,
        scenarios=tuple(base_dir / s for s in doc.get("scenarios", [])),
        nes=NesConfig(**ndd),
        eot=EotConfig(**eot_kwargs),
        trials_per_cell=int(doc.get("trials_per_cell", 5)),
        output_dir=base_dir / doc.get("output_dir", "out"),
        master_seed=int(doc.get("master_seed", 0)),
        stats_n_perm=int(doc.get("stats_n_perm", 1999)),
    )


def load_config(path) -> CampaignConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return config_from_dict(doc, base_dir=path.parent)


@dataclass
class CampaignContext:
    """Shared clients, ledger, and loaded manifests for one campaign run."""

    config: CampaignConfig
    ledger: QueryLedger = field(default_factory=QueryLedger)

    def __post_init__(self):
        self.clients = {o.id: OracleClient(o, self.ledger) for o in self.config.oracles}
        self.embedder = EmbeddingClient(self.config.embedding)
        self.manifests: dict[str, ScenarioManifest] = {}
        self.frames: dict[str, list] = {}
        for path in self.config.scenarios:
            m = load_manifest(path)
            if m.scenario_id in self.manifests:
                raise ConfigError(f"duplicate scenario id {m.scenario_id!r}")
            self.manifests[m.scenario_id] = m
            self.frames[m.scenario_id] = load_frames(m, visible_only=True)

    def check_health(self) -> None:
        for client in self.clients.values():
            client.health()


def _run_trial(
    ctx: CampaignContext,
    oracle_id: str,
    scenario_id: str,
    trial_idx: int,
    patch: Patch | None,
    patch_id: str,
) -> TrialLog:
    """Query every visible frame (optionally with the patch composited)."""
    m = ctx.manifests[scenario_id]
    client = ctx.clients[oracle_id]
    outcomes = []
    for frame, placement in ctx.frames[scenario_id]:
        shown = frame if patch is None else composite(frame, patch, placement)
        response = client.query(shown)
        action = normalize_action(response, ctx.config.embedding, ctx.embedder)
        outcomes.append(
            FrameOutcome(
                timestamp=frame.timestamp,
                distance=frame.distance,
                action=action,
                matched_target=action == m.target_action,
            )
        )
    return TrialLog(
        trial_id=f"{oracle_id}__{scenario_id}__{patch_id}__t{trial_idx:02d}",
        oracle_id=oracle_id,
        patch_id=patch_id,
        scenario_id=scenario_id,
        target_action=m.target_action,
        frames=tuple(outcomes),
    )


def _run_cell(
    ctx: CampaignContext,
    oracle_id: str,
    scenario_id: str,
    patch: Patch | None,
    patch_id: str,
    out_subdir: str,
) -> tuple[list[TrialLog], list[str]]:
    """trials_per_cell trials; oracle failures exclude the trial with a warning."""
    out_dir = ctx.config.output_dir / out_subdir
    out_dir.mkdir(parents=True, exist_ok=True)
    logs: list[TrialLog] = []
    warnings: list[str] = []
    for t in range(ctx.config.trials_per_cell):
        try:
            log = _run_trial(ctx, oracle_id, scenario_id, t, patch, patch_id)
        except (TransportError, ProtocolError, OracleError) as exc:
            warnings.append(
                f"excluded incomplete trial {t} of ({oracle_id}, {patch_id}, {scenario_id}): {exc}"
            )
            continue
        write_trial_log(log, out_dir / f"{patch_id}__{oracle_id}__{scenario_id}__t{t:02d}.jsonl")
        logs.append(log)
    return logs, warnings


@dataclass
class BaselineResult:
    rates: dict  # (oracle_id, scenario_id) -> float
    logs: dict  # (oracle_id, scenario_id) -> list[TrialLog]
    warnings: list[str]


def run_baseline_phase(ctx: CampaignContext) -> BaselineResult:
    """Phase 1: patch-free trials; the inappropriate-action reference rates."""
    ctx.check_health()
    rates: dict = {}
    logs: dict = {}
    warnings: list[str] = []
    for oracle_id in ctx.clients:
        for scenario_id in ctx.manifests:
            cell_logs, warns = _run_cell(
                ctx, oracle_id, scenario_id, None, BASELINE_PATCH_ID, "baseline"
            )
            warnings.extend(warns)
            logs[(oracle_id, scenario_id)] = cell_logs
            rates[(oracle_id, scenario_id)] = frame_asr(cell_logs) if cell_logs else float("nan")
    out = ctx.config.output_dir / "baseline_rates.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(
            {f"{o}::{s}": r for (o, s), r in sorted(rates.items())},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    if warnings:
        _append_warnings(ctx, warnings)
    return BaselineResult(rates=rates, logs=logs, warnings=warnings)


def _append_warnings(ctx: CampaignContext, warnings: list[str]) -> None:
    path = ctx.config.output_dir / "warnings.log"
    with open(path, "a", encoding="utf-8") as fh:
        for w in warnings:
            fh.write(w + "\n")


@dataclass
class SelfAttackResult:
    patches: dict  # (oracle_id, scenario_id) -> Patch
    self_asr: dict  # (oracle_id, scenario_id) -> float
    logs: dict
    warnings: list[str]


def _patch_path(ctx: CampaignContext, oracle_id: str, scenario_id: str) -> Path:
    return ctx.config.output_dir / "patches" / f"{oracle_id}__{scenario_id}.png"


def run_self_attack_phase(ctx: CampaignContext) -> SelfAttackResult:
    """Phase 2: optimize a patch per (oracle, scenario), score it on-source.

    A finished patch PNG short-circuits re-optimization, and an aborted
    optimization leaves a checkpoint next to it, so the phase is resumable.
    """
    patches_dir = ctx.config.output_dir / "patches"
    patches_dir.mkdir(parents=True, exist_ok=True)
    patches: dict = {}
    self_asr: dict = {}
    logs: dict = {}
    warnings: list[str] = []
    for oracle_id in ctx.clients:
        for scenario_id, m in ctx.manifests.items():
            png_path = _patch_path(ctx, oracle_id, scenario_id)
            ckpt_path = png_path.with_suffix(".ckpt.npz")
            if png_path.exists():
                patch = patch_from_png(png_path.read_bytes())
            else:
                seed = child_seed(ctx.config.master_seed, "optimize", oracle_id, scenario_id)
                spec = ObjectiveSpec(
                    oracles=[ctx.clients[oracle_id]],
                    target_text=m.target_text,
                    frames=ctx.frames[scenario_id],
                    eot=dataclasses.replace(ctx.config.eot, seed=seed),
                    embedding=ctx.embedder,
                    patch_width=m.patch_width,
                    patch_height=m.patch_height,
                )
                nes_cfg = dataclasses.replace(ctx.config.nes, seed=seed)
                resume = ckpt_path if ckpt_path.exists() else None
                patch, trace = optimize(
                    spec, nes_cfg, checkpoint_path=ckpt_path, resume_from=resume
                )
                png_path.write_bytes(patch_to_png(patch))
                write_trace_jsonl(trace, png_path.with_suffix(".trace.jsonl"))
                if ckpt_path.exists():
                    ckpt_path.unlink()
                # evaluate the 8-bit artifact of record, not the float iterate,
                # so reruns from persisted patches replay identical frames
                patch = patch_from_png(png_path.read_bytes())
            patches[(oracle_id, scenario_id)] = patch
            cell_logs, warns = _run_cell(
                ctx, oracle_id, scenario_id, patch, f"P_{oracle_id}", "selfattack"
            )
            warnings.extend(warns)
            logs[(oracle_id, scenario_id)] = cell_logs
            self_asr[(oracle_id, scenario_id)] = (
                frame_asr(cell_logs) if cell_logs else float("nan")
            )
    if warnings:
        _append_warnings(ctx, warnings)
    return SelfAttackResult(patches=patches, self_asr=self_asr, logs=logs, warnings=warnings)


@dataclass
class TransferResult:
    asr_tables: dict  # scenario_id -> AsrTable
    matrices: dict  # scenario_id -> TransferMatrix
    p_values: dict  # (scenario_id, source, target) -> PermutationResult
    logs: dict  # (source, target, scenario) -> list[TrialLog]
    warnings: list[str]


def _to_clusters(logs: list[TrialLog], label: str) -> ClusteredSample:
    return ClusteredSample(
        clusters=tuple(
            tuple(1 if f.matched_target else 0 for f in log.frames) for log in logs
        ),
        label=label,
    )


def run_transfer_phase(
    ctx: CampaignContext,
    patches: dict,
    self_logs: dict,
    baseline: BaselineResult,
) -> TransferResult:
    """Phase 3: every patch against every other oracle; matrix + stats."""
    arch = list(ctx.clients)
    asr_tables: dict = {}
    matrices: dict = {}
    p_values: dict = {}
    all_logs: dict = {}
    warnings: list[str] = []
    matrices_dir = ctx.config.output_dir / "matrices"
    matrices_dir.mkdir(parents=True, exist_ok=True)
    for scenario_id in ctx.manifests:
        n = len(arch)
        values = np.zeros((n, n), dtype=np.float64)
        for i, src in enumerate(arch):
            patch = patches[(src, scenario_id)]
            for j, tgt in enumerate(arch):
                if src == tgt:
                    cell_logs = self_logs[(src, scenario_id)]
                else:
                    cell_logs, warns = _run_cell(
                        ctx, tgt, scenario_id, patch, f"P_{src}", "transfer"
                    )
                    warnings.extend(warns)
                all_logs[(src, tgt, scenario_id)] = cell_logs
                values[i, j] = frame_asr(cell_logs) if cell_logs else float("nan")
                base_logs = baseline.logs.get((tgt, scenario_id), [])
                if cell_logs and base_logs:
                    p_values[(scenario_id, src, tgt)] = cluster_permutation_test(
                        _to_clusters(base_logs, "baseline"),
                        _to_clusters(cell_logs, "attack"),
                        n_perm=ctx.config.stats_n_perm,
                        seed=child_seed(
                            ctx.config.master_seed, "stats", scenario_id, src, tgt
                        ),
                    )
        table = AsrTable(tuple(arch), values)
        asr_tables[scenario_id] = table
        matrices[scenario_id] = build_transfer_matrix(table)
        write_asr_csv(table, matrices_dir / f"{scenario_id}_asr.csv")
        write_transfer_csv(matrices[scenario_id], matrices_dir / f"{scenario_id}_tr.csv")

        # a pre-placed universal patch (patches/universal__<scenario>.png,
        # e.g. from `optimize` with several --oracle flags) is scored on
        # every oracle so the report can derive universal-attack efficiency
        universal_png = ctx.config.output_dir / "patches" / f"universal__{scenario_id}.png"
        if universal_png.exists():
            universal = patch_from_png(universal_png.read_bytes())
            for tgt in arch:
                cell_logs, warns = _run_cell(
                    ctx, tgt, scenario_id, universal, "P_universal", "transfer"
                )
                warnings.extend(warns)
                all_logs[("universal", tgt, scenario_id)] = cell_logs
    stats_doc = {
        f"{sid}::P_{src}->{tgt}": res.to_json()
        for (sid, src, tgt), res in sorted(p_values.items())
    }
    with open(ctx.config.output_dir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if warnings:
        _append_warnings(ctx, warnings)
    return TransferResult(
        asr_tables=asr_tables,
        matrices=matrices,
        p_values=p_values,
        logs=all_logs,
        warnings=warnings,
    )


def run_campaign(config: CampaignConfig) -> tuple[BaselineResult, SelfAttackResult, TransferResult]:
    """All three phases in order, persisting artifacts under output_dir."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
    ctx = CampaignContext(config)
    _write_run_metadata(ctx)
    baseline = run_baseline_phase(ctx)
    selfatk = run_self_attack_phase(ctx)
    transfer = run_transfer_phase(ctx, selfatk.patches, selfatk.logs, baseline)
    ctx.ledger.write_jsonl(config.output_dir / "queries.jsonl")
    return baseline, selfatk, transfer


def _write_run_metadata(ctx: CampaignContext) -> None:
    meta = {
        "master_seed": ctx.config.master_seed,
        "oracle_ids": list(ctx.clients),
        "scenario_ids": list(ctx.manifests),
        "trials_per_cell": ctx.config.trials_per_cell,
        "nes": dataclasses.asdict(ctx.config.nes),
        "eot": dataclasses.asdict(ctx.config.eot),
        "eot_resampling": "fresh subseed per antithetic pair, shared within the pair",
        "prompts": {o.id: o.prompt for o in ctx.config.oracles},
    }
    path = ctx.config.output_dir / "run_metadata.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
