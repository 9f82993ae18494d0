"""Acceptance gate: one test per campaign-level criterion, each printing a
PASS line with its measured numbers and enforcing its stated runtime budget.
"""

import json
import time
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

from patchlab.campaign import (
    CampaignConfig,
    CampaignContext,
    run_baseline_phase,
    run_campaign,
    run_self_attack_phase,
    run_transfer_phase,
)
from patchlab.eot import EotConfig, expected_loss
from patchlab.imaging import Frame, Patch, Placement, composite, patch_to_png
from patchlab.manifest import generate_scenario
from patchlab.metrics import (
    AsrTable,
    TransferMatrix,
    TrialLog,
    FrameOutcome,
    build_transfer_matrix,
    frame_asr,
    mean_transfer_rate,
    transfer_out_rate,
    vulnerability_score,
)
from patchlab.nes import NesConfig, ObjectiveSpec, evaluate_objective, nes_gradient, optimize
from patchlab.oracle import ActionLabel, EmbeddingRef, OracleClient, OracleRef, QueryLedger
from patchlab.report import mean_cross_frame_success
from patchlab.stats import ClusteredSample, cluster_permutation_test

from test_campaign import flat_manifest, quick_config

ARCHS = ("dolphins", "omnidrive", "leapvad")

CROSSWALK_ASR = np.array(
    [[0.760, 0.583, 0.621], [0.617, 0.844, 0.685], [0.652, 0.721, 0.717]]
)
HIGHWAY_ASR = np.array(
    [[0.783, 0.617, 0.654], [0.642, 0.857, 0.708], [0.681, 0.743, 0.739]]
)
CROSSWALK_TR_PRINTED = np.array([[1.0, 0.77, 0.82], [0.73, 1.0, 0.81], [0.91, 0.85, 1.0]])
HIGHWAY_TR_PRINTED = np.array([[1.0, 0.79, 0.84], [0.75, 1.0, 0.83], [0.92, 0.87, 1.0]])
FRAME_SUCCESS_PCT = np.array(
    [[82.3, 64.7, 68.9], [69.2, 89.1, 75.3], [73.8, 79.4, 78.5]]
)


def test_metrics_golden_suite():
    """Reference-campaign numbers reproduce from the printed tables."""
    t0 = time.perf_counter()

    cross_printed = TransferMatrix.from_tr_values(ARCHS, CROSSWALK_TR_PRINTED)
    high_printed = TransferMatrix.from_tr_values(ARCHS, HIGHWAY_TR_PRINTED)

    mean_cross = mean_transfer_rate(cross_printed)
    mean_high = mean_transfer_rate(high_printed)
    assert mean_cross == pytest.approx(0.815, abs=0.005)
    assert mean_high == pytest.approx(0.833, abs=0.005)

    vs_cross = [vulnerability_score(cross_printed, a) for a in ARCHS]
    vs_high = [vulnerability_score(high_printed, a) for a in ARCHS]
    for got, want in zip(vs_cross, (0.820, 0.810, 0.814)):
        assert got == pytest.approx(want, abs=0.005)
    for got, want in zip(vs_high, (0.835, 0.828, 0.831)):
        assert got == pytest.approx(want, abs=0.005)

    cross_eq = build_transfer_matrix(AsrTable(ARCHS, CROSSWALK_ASR))
    to_d = transfer_out_rate(cross_eq, "dolphins")
    to_o = transfer_out_rate(cross_eq, "omnidrive")
    assert to_d == pytest.approx(0.792, abs=0.005)
    assert to_o == pytest.approx(0.772, abs=0.005)

    means = mean_cross_frame_success(FRAME_SUCCESS_PCT)
    for got, want in zip(means, (66.8, 72.3, 76.6)):
        assert got == pytest.approx(want, abs=0.1)

    # the two printed cells inconsistent with source normalization, asserted
    # at source-normalized semantics; printed values (0.85, 0.87) are the
    # known divergences
    high_eq = build_transfer_matrix(AsrTable(ARCHS, HIGHWAY_ASR))
    assert cross_eq.values[2, 1] == pytest.approx(1.006, abs=0.0005)
    assert high_eq.values[2, 1] == pytest.approx(1.005, abs=0.0005)

    # the five consistent crosswalk cells agree with print within 0.005
    for (i, j), want in (((0, 1), 0.77), ((0, 2), 0.82), ((1, 0), 0.73), ((1, 2), 0.81), ((2, 0), 0.91)):
        assert cross_eq.values[i, j] == pytest.approx(want, abs=0.005)

    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    print(
        f"\nPASS metrics-golden: meanTR {mean_cross:.3f}/{mean_high:.3f}, "
        f"VS {['%.3f' % v for v in vs_cross]}, TO ({to_d:.3f}, {to_o:.3f}), "
        f"frame-success {[f'{m:.2f}' for m in means]} in {elapsed:.2f}s"
    )


def test_nes_estimator_suite():
    """Zero/linear/quadratic analytics of the antithetic estimator."""
    t0 = time.perf_counter()

    rng = np.random.default_rng(0)
    theta = rng.uniform(0, 255, size=(2, 2, 3))
    grad = nes_gradient(lambda t: 1.0, theta, 20, 0.1, rng)
    assert np.all(grad == 0.0)

    dim = 8
    c = np.ones(dim)
    rng = np.random.default_rng(424242)
    acc = np.zeros(dim)
    for _ in range(500):
        acc += nes_gradient(lambda t: float(c @ t), np.zeros(dim), 100, 0.1, rng)
    max_rel_err = float(np.max(np.abs(acc / 500 - c)))
    assert max_rel_err < 0.05

    target = np.linspace(10, 240, 48)
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        theta = rng.uniform(0, 255, size=48)
        analytic = 2.0 * (theta - target)
        ghat = nes_gradient(lambda t: float(np.sum((t - target) ** 2)), theta, 40, 0.1, rng)
        cos = float(ghat @ analytic / (np.linalg.norm(ghat) * np.linalg.norm(analytic)))
        wins += cos > 0.5
    assert wins >= 95

    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print(
        f"\nPASS nes-estimator: zero exact, linear max rel err {max_rel_err:.4f}, "
        f"quadratic cosine wins {wins}/100 in {elapsed:.1f}s"
    )


def test_nes_end_to_end():
    """Hidden-target toy at default config: 9/10 seeds reach <10% of the
    initial loss on exactly the closed-form query budget."""
    t0 = time.perf_counter()
    frame = Frame(np.full((16, 16, 3), 120, dtype=np.uint8))
    placement = Placement(4, 4, 8, 8)
    eot = EotConfig(k_samples=1, jitter=0, brightness_range=(1, 1), contrast_range=(0, 0))
    cfg_defaults = NesConfig()
    assert (cfg_defaults.iterations, cfg_defaults.n_directions) == (150, 20)
    assert (cfg_defaults.sigma, cfg_defaults.alpha) == (0.1, 0.02)

    ratios = []
    budgets_ok = True
    for seed in range(10):
        ledger = QueryLedger()
        client = OracleClient(
            OracleRef(
                id="hidden",
                endpoint="scripted:hidden-target",
                params={"width": 8, "height": 8, "x": 4, "y": 4, "seed": 17},
            ),
            ledger,
        )
        spec = ObjectiveSpec(
            oracles=[client],
            target_text="calibration",
            frames=[(frame, placement)],
            eot=eot,
            loss_mode="numeric",
            patch_width=8,
            patch_height=8,
        )
        patch, trace = optimize(spec, NesConfig(seed=seed))
        budgets_ok &= ledger.count() == 150 * 2 * 20
        budgets_ok &= trace[-1].objective_evals == 150 * 2 * 20

        probe = ObjectiveSpec(
            oracles=[OracleClient(client.ref)],
            target_text="calibration",
            frames=[(frame, placement)],
            eot=eot,
            loss_mode="numeric",
            patch_width=8,
            patch_height=8,
        )
        init_patch = Patch(np.random.default_rng(seed).uniform(0, 255, (8, 8, 3)))
        ratios.append(evaluate_objective(probe, patch) / evaluate_objective(probe, init_patch))

    passed = sum(r < 0.10 for r in ratios)
    assert budgets_ok, "query ledger must show exactly 150 x 2 x 20 evaluations"
    assert passed >= 9, f"only {passed}/10 seeds reached <10% of initial loss: {ratios}"

    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(
        f"\nPASS nes-end-to-end: {passed}/10 seeds < 10% (worst {max(ratios):.3f}), "
        f"6000 queries per run, in {elapsed:.1f}s"
    )


def test_transfer_fidelity_fixture(tmp_path):
    """Two oracles sharing the patch-trigger rule transfer near-perfectly;
    transfer to the insensitive oracle stays at its base rate."""
    t0 = time.perf_counter()
    scen = flat_manifest(tmp_path, n_frames=40, placement=(4, 4, 12, 12))
    oracles = [
        OracleRef(id="clip_a", endpoint="scripted:patch-sensitive"),
        OracleRef(id="clip_b", endpoint="scripted:patch-sensitive"),
        OracleRef(id="indep", endpoint="scripted:probabilistic", params={"rate": 0.3, "seed": 2}),
    ]
    cfg = quick_config(tmp_path, oracles, [scen], trials=2, seed=7)
    ctx = CampaignContext(cfg)
    baseline = run_baseline_phase(ctx)

    # fixture patches standing in for converged optimization: the trigger
    # rule's analytic optimum is a saturated red patch
    patches_dir = cfg.output_dir / "patches"
    patches_dir.mkdir(parents=True, exist_ok=True)
    red = Patch(np.dstack([np.full((8, 8), 255.0), np.zeros((8, 8)), np.zeros((8, 8))]))
    gray = Patch(np.full((8, 8, 3), 128.0))
    for oracle_id, patch in (("clip_a", red), ("clip_b", red), ("indep", gray)):
        (patches_dir / f"{oracle_id}__flat.png").write_bytes(patch_to_png(patch))

    selfatk = run_self_attack_phase(ctx)  # loads the pre-made patches
    transfer = run_transfer_phase(ctx, selfatk.patches, selfatk.logs, baseline)
    m = transfer.matrices["flat"]
    table = transfer.asr_tables["flat"]
    ia, ib, ic = (table.index(a) for a in ("clip_a", "clip_b", "indep"))

    assert m.values[ia, ib] >= 0.9
    assert m.values[ib, ia] >= 0.9
    base_ratio = baseline.rates[("indep", "flat")] / table.values[ia, ia]
    assert m.values[ia, ic] <= base_ratio + 0.05
    assert m.values[ib, ic] <= base_ratio + 0.05

    elapsed = time.perf_counter() - t0
    print(
        f"\nPASS transfer-fidelity: sharer TR {m.values[ia, ib]:.3f}/{m.values[ib, ia]:.3f}, "
        f"TR to insensitive {m.values[ia, ic]:.3f} <= {base_ratio + 0.05:.3f} in {elapsed:.1f}s"
    )


# --- criterion 5: protocol & determinism -----------------------------------

def _campaign_config(base: Path, out_name: str) -> CampaignConfig:
    scen = base / "scen" / "manifest.json"
    if not scen.exists():
        generate_scenario(base / "scen", kind="crosswalk", frame_width=96, frame_height=54,
                          patch_width=8, patch_height=8)
    return CampaignConfig(
        oracles=(
            OracleRef(id="trig", endpoint="scripted:patch-sensitive",
                      params={"threshold": 110.0, "min_pixels": 4}),
            OracleRef(id="noisy", endpoint="scripted:probabilistic",
                      params={"rate": 0.5, "seed": 1}),
            OracleRef(id="calm", endpoint="scripted:probabilistic",
                      params={"rate": 0.3, "seed": 9}),
        ),
        embedding=EmbeddingRef(),
        scenarios=(scen,),
        nes=NesConfig(iterations=2, n_directions=2, seed=0),
        eot=EotConfig(k_samples=2, jitter=1, brightness_range=(0.95, 1.05),
                      contrast_range=(-0.01, 0.01)),
        trials_per_cell=2,
        output_dir=base / out_name,
        master_seed=424,
    )


_TIMING_KEYS = {"latency", "wall_time"}


def _normalized_file(path: Path) -> bytes:
    if path.suffix == ".jsonl" and path.name != "queries.jsonl" and not path.name.endswith(".trace.jsonl"):
        return path.read_bytes()
    if path.name == "queries.jsonl" or path.name.endswith(".trace.jsonl"):
        lines = []
        for line in path.read_text().splitlines():
            doc = json.loads(line)
            for key in _TIMING_KEYS:
                doc.pop(key, None)
            lines.append(json.dumps(doc, sort_keys=True))
        return "\n".join(lines).encode()
    return path.read_bytes()


def test_protocol_and_determinism(tmp_path):
    t0 = time.perf_counter()

    # (a) full scripted campaign twice: byte-identical artifacts modulo timing
    cfg1 = _campaign_config(tmp_path, "run1")
    cfg2 = _campaign_config(tmp_path, "run2")
    run_campaign(cfg1)
    run_campaign(cfg2)
    from patchlab.report import render_report

    render_report(cfg1.output_dir)
    render_report(cfg2.output_dir)

    files1 = sorted(p.relative_to(cfg1.output_dir) for p in cfg1.output_dir.rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(cfg2.output_dir) for p in cfg2.output_dir.rglob("*") if p.is_file())
    assert files1 == files2
    diverged = [
        str(rel)
        for rel in files1
        if _normalized_file(cfg1.output_dir / rel) != _normalized_file(cfg2.output_dir / rel)
    ]
    assert not diverged, f"artifacts differ between identically-seeded runs: {diverged}"

    # (b) EoT collapsed-range identity within 1e-9
    collapsed = EotConfig(k_samples=1, jitter=0, brightness_range=(1, 1), contrast_range=(0, 0))
    frame = Frame(np.full((16, 16, 3), 120, dtype=np.uint8))
    placement = Placement(4, 4, 8, 8)
    for seed in range(20):
        patch = Patch(np.random.default_rng(seed).uniform(0, 255, (8, 8, 3)))

        def loss_fn(f):
            return float(f.pixels[4:12, 4:12].mean())

        via_eot = expected_loss(loss_fn, frame, placement, patch, collapsed)
        direct = loss_fn(composite(frame, patch, placement))
        assert abs(via_eot - direct) < 1e-9

    # (c) frame_asr equals a brute-force recount on 1,000 random log sets
    rng = np.random.default_rng(77)
    for _ in range(1000):
        n_trials = int(rng.integers(1, 5))
        logs = []
        for k in range(n_trials):
            matches = rng.integers(0, 2, int(rng.integers(1, 12)))
            frames = tuple(
                FrameOutcome(
                    timestamp=0.5 * i,
                    distance=40.0 - i,
                    action=ActionLabel.ACCELERATE if m else ActionLabel.BRAKE,
                    matched_target=bool(m),
                )
                for i, m in enumerate(matches)
            )
            logs.append(
                TrialLog(f"t{k}", "m", "P_m", "s", ActionLabel.ACCELERATE, frames)
            )
        brute = sum(f.matched_target for l in logs for f in l.frames) / sum(
            len(l.frames) for l in logs
        )
        assert frame_asr(logs) == brute

    # (d) permutation test matches exhaustive enumeration at 5+5 clusters
    base = ClusteredSample(tuple(tuple([0] * 8) for _ in range(5)), "baseline")
    attack = ClusteredSample(tuple(tuple([1] * 8) for _ in range(5)), "attack")
    res = cluster_permutation_test(base, attack, exact=True)
    n_extreme = 0
    pooled = list(base.clusters) + list(attack.clusters)
    for idx in combinations(range(10), 5):
        chosen = set(idx)
        ra = np.mean([v for i in chosen for v in pooled[i]])
        rb = np.mean([v for i in range(10) if i not in chosen for v in pooled[i]])
        if abs(ra - rb) >= abs(res.statistic) - 1e-12:
            n_extreme += 1
    assert res.p_value == n_extreme / 252
    assert res.p_value == pytest.approx(2 / 252)

    elapsed = time.perf_counter() - t0
    print(
        f"\nPASS protocol-determinism: {len(files1)} artifacts byte-identical, "
        f"EoT identity <1e-9, 1000 ASR recounts exact, permutation p = {res.p_value:.5f} "
        f"== 2/252, in {elapsed:.1f}s"
    )
