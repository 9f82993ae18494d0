import numpy as np
import pytest

from patchlab.errors import (
    InvalidInputError,
    UndefinedBaselineError,
    UnknownArchitectureError,
)
from patchlab.metrics import (
    AsrTable,
    FrameOutcome,
    TransferMatrix,
    TrialLog,
    build_transfer_matrix,
    ensemble_asr,
    frame_asr,
    mean_transfer_rate,
    read_asr_csv,
    read_trial_log,
    read_transfer_csv,
    robustness_score,
    transfer_out_rate,
    transfer_rate,
    universal_efficiency,
    vulnerability_score,
    write_asr_csv,
    write_transfer_csv,
    write_trial_log,
)
from patchlab.oracle import ActionLabel

ARCHS = ("dolphins", "omnidrive", "leapvad")

# Reference-campaign ASR fractions (crosswalk / highway), rows = source patch.
CROSSWALK_ASR = np.array(
    [[0.760, 0.583, 0.621], [0.617, 0.844, 0.685], [0.652, 0.721, 0.717]]
)
HIGHWAY_ASR = np.array(
    [[0.783, 0.617, 0.654], [0.642, 0.857, 0.708], [0.681, 0.743, 0.739]]
)
# TR cells as printed in the reference campaign's tables.
CROSSWALK_TR_PRINTED = np.array([[1.0, 0.77, 0.82], [0.73, 1.0, 0.81], [0.91, 0.85, 1.0]])
HIGHWAY_TR_PRINTED = np.array([[1.0, 0.79, 0.84], [0.75, 1.0, 0.83], [0.92, 0.87, 1.0]])


def make_log(matches, trial_id="t0", oracle="m1", patch="P_m1", scenario="s",
             target=ActionLabel.ACCELERATE):
    frames = tuple(
        FrameOutcome(
            timestamp=0.5 * i,
            distance=30.0 - i,
            action=target if m else ActionLabel.BRAKE,
            matched_target=bool(m),
        )
        for i, m in enumerate(matches)
    )
    return TrialLog(
        trial_id=trial_id,
        oracle_id=oracle,
        patch_id=patch,
        scenario_id=scenario,
        target_action=target,
        frames=frames,
    )


class TestFrameAsr:
    def test_all_matched(self):
        assert frame_asr([make_log([1, 1, 1, 1])]) == 1.0

    def test_none_matched(self):
        assert frame_asr([make_log([0, 0, 0])]) == 0.0

    def test_micro_average_two_trials(self):
        # 1/3 and 2/5 matched -> 3/8
        logs = [make_log([1, 0, 0], trial_id="a"), make_log([1, 1, 0, 0, 0], trial_id="b")]
        assert frame_asr(logs) == pytest.approx(0.375)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            frame_asr([])

    def test_mixed_cells_rejected(self):
        with pytest.raises(InvalidInputError):
            frame_asr([make_log([1], oracle="m1"), make_log([1], oracle="m2")])

    def test_brute_force_recount_equivalence(self):
        rng = np.random.default_rng(1000)
        for _ in range(1000):
            n_trials = int(rng.integers(1, 5))
            logs = [
                make_log(rng.integers(0, 2, size=int(rng.integers(1, 12))).tolist(),
                         trial_id=f"t{k}")
                for k in range(n_trials)
            ]
            total = sum(len(l.frames) for l in logs)
            matched = sum(f.matched_target for l in logs for f in l.frames)
            assert frame_asr(logs) == matched / total


class TestTrialLogInvariants:
    def test_timestamps_must_increase(self):
        frames = (
            FrameOutcome(1.0, 20.0, ActionLabel.BRAKE, False),
            FrameOutcome(1.0, 19.0, ActionLabel.BRAKE, False),
        )
        with pytest.raises(InvalidInputError):
            TrialLog("t", "m", "p", "s", ActionLabel.ACCELERATE, frames)

    def test_match_flag_consistency_enforced(self):
        frames = (FrameOutcome(0.0, 20.0, ActionLabel.BRAKE, True),)
        with pytest.raises(InvalidInputError):
            TrialLog("t", "m", "p", "s", ActionLabel.ACCELERATE, frames)

    def test_empty_frames_rejected(self):
        with pytest.raises(InvalidInputError):
            TrialLog("t", "m", "p", "s", ActionLabel.ACCELERATE, ())


class TestTransferRate:
    def test_reference_cell(self):
        assert transfer_rate(0.583, 0.760) == pytest.approx(0.767, abs=0.0005)

    def test_self_attack_is_one(self):
        for x in (0.1, 0.5, 0.99):
            assert transfer_rate(x, x) == 1.0

    def test_unclamped_above_one(self):
        # the reference table prints 0.85 here; source-normalized semantics
        # give 1.006 and are kept unclamped
        assert transfer_rate(0.721, 0.717) == pytest.approx(1.006, abs=0.0005)

    def test_zero_baseline_rejected(self):
        with pytest.raises(UndefinedBaselineError):
            transfer_rate(0.4, 0.0)


class TestBuildTransferMatrix:
    def test_identity_table(self):
        table = AsrTable(ARCHS, np.full((3, 3), 0.6))
        m = build_transfer_matrix(table)
        assert np.allclose(m.values, 1.0)
        assert m.mean_tr == pytest.approx(1.0)
        for a in ARCHS:
            assert vulnerability_score(m, a) == pytest.approx(1.0)
            assert transfer_out_rate(m, a) == pytest.approx(1.0)

    def test_crosswalk_consistent_cells(self):
        m = build_transfer_matrix(AsrTable(ARCHS, CROSSWALK_ASR))
        expected = {
            (0, 1): 0.767,
            (0, 2): 0.817,
            (1, 0): 0.731,
            (1, 2): 0.812,
            (2, 0): 0.909,
        }
        for (i, j), tr in expected.items():
            assert m.values[i, j] == pytest.approx(tr, abs=0.005)
        # divergent cell under source-normalized semantics
        assert m.values[2, 1] == pytest.approx(1.006, abs=0.0005)

    def test_2x2_derived_example(self):
        table = AsrTable(("a", "b"), np.array([[0.8, 0.4], [0.2, 0.5]]))
        m = build_transfer_matrix(table)
        assert np.allclose(m.values, [[1.0, 0.5], [0.4, 1.0]])
        assert vulnerability_score(m, "a") == pytest.approx(0.4)
        assert vulnerability_score(m, "b") == pytest.approx(0.5)
        assert transfer_out_rate(m, "a") == pytest.approx(0.5)
        assert transfer_out_rate(m, "b") == pytest.approx(0.4)

    def test_zero_diagonal_names_architecture(self):
        table = AsrTable(ARCHS, np.array([[0.5, 0.1, 0.1], [0.1, 0.0, 0.1], [0.1, 0.1, 0.5]]))
        with pytest.raises(UndefinedBaselineError, match="omnidrive"):
            build_transfer_matrix(table)

    def test_diagonal_exactly_one(self):
        m = build_transfer_matrix(AsrTable(ARCHS, CROSSWALK_ASR))
        assert np.all(np.diag(m.values) == 1.0)


class TestMeanTransferRate:
    def test_crosswalk_printed_cells(self):
        m = TransferMatrix.from_tr_values(ARCHS, CROSSWALK_TR_PRINTED)
        assert mean_transfer_rate(m) == pytest.approx(0.815, abs=0.005)

    def test_highway_printed_cells(self):
        m = TransferMatrix.from_tr_values(ARCHS, HIGHWAY_TR_PRINTED)
        assert mean_transfer_rate(m) == pytest.approx(0.833, abs=0.005)

    def test_all_ones(self):
        m = TransferMatrix.from_tr_values(("a", "b"), np.ones((2, 2)))
        assert mean_transfer_rate(m) == 1.0

    def test_single_architecture_rejected(self):
        m = TransferMatrix.from_tr_values(("a",), np.ones((1, 1)))
        with pytest.raises(InvalidInputError):
            mean_transfer_rate(m)


class TestVulnerabilityScore:
    def test_dolphins_column_printed(self):
        m = TransferMatrix.from_tr_values(ARCHS, CROSSWALK_TR_PRINTED)
        assert vulnerability_score(m, "dolphins") == pytest.approx(0.82, abs=0.005)

    def test_leapvad_column_unrounded(self):
        m = build_transfer_matrix(AsrTable(ARCHS, CROSSWALK_ASR))
        assert vulnerability_score(m, "leapvad") == pytest.approx(0.814, abs=0.0005)

    def test_zero_column(self):
        vals = np.array([[1.0, 0.0], [0.0, 1.0]])
        m = TransferMatrix.from_tr_values(("a", "b"), vals)
        assert vulnerability_score(m, "a") == 0.0
        assert robustness_score(m, "a") == 1.0

    def test_unknown_architecture(self):
        m = TransferMatrix.from_tr_values(ARCHS, CROSSWALK_TR_PRINTED)
        with pytest.raises(UnknownArchitectureError):
            vulnerability_score(m, "mystery")

    def test_vs_plus_rs_is_one(self):
        m = build_transfer_matrix(AsrTable(ARCHS, HIGHWAY_ASR))
        for a in ARCHS:
            assert vulnerability_score(m, a) + robustness_score(m, a) == pytest.approx(1.0)


class TestTransferOutRate:
    def test_dolphins_row_unrounded(self):
        m = build_transfer_matrix(AsrTable(ARCHS, CROSSWALK_ASR))
        assert transfer_out_rate(m, "dolphins") == pytest.approx(0.792, abs=0.005)

    def test_omnidrive_row_unrounded(self):
        m = build_transfer_matrix(AsrTable(ARCHS, CROSSWALK_ASR))
        assert transfer_out_rate(m, "omnidrive") == pytest.approx(0.772, abs=0.005)

    def test_all_ones_row(self):
        m = TransferMatrix.from_tr_values(("a", "b"), np.ones((2, 2)))
        assert transfer_out_rate(m, "a") == 1.0


class TestUniversalEfficiency:
    def test_equal_gives_ones(self):
        per, mean = universal_efficiency({"a": 0.5, "b": 0.7}, {"a": 0.5, "b": 0.7})
        assert per == {"a": 1.0, "b": 1.0} and mean == 1.0

    def test_reference_campaign_values(self):
        per, mean = universal_efficiency(
            {"dolphins": 0.643, "omnidrive": 0.698, "leapvad": 0.635},
            {"dolphins": 0.760, "omnidrive": 0.844, "leapvad": 0.717},
        )
        assert per["dolphins"] == pytest.approx(0.846, abs=0.0005)
        assert per["omnidrive"] == pytest.approx(0.827, abs=0.0005)
        assert per["leapvad"] == pytest.approx(0.886, abs=0.0005)
        assert mean == pytest.approx(0.853, abs=0.0005)

    def test_zero_universal(self):
        per, mean = universal_efficiency({"a": 0.0}, {"a": 0.4})
        assert per == {"a": 0.0} and mean == 0.0

    def test_zero_self_rejected(self):
        with pytest.raises(UndefinedBaselineError):
            universal_efficiency({"a": 0.2}, {"a": 0.0})


class TestEnsembleAsr:
    def test_all_matched(self):
        logs = [[make_log([1, 1, 1], oracle=f"m{k}")] for k in range(3)]
        assert ensemble_asr(logs) == 1.0

    def test_one_vote_never_majority(self):
        logs = [
            [make_log([1, 0, 0], oracle="m0")],
            [make_log([0, 1, 0], oracle="m1")],
            [make_log([0, 0, 1], oracle="m2")],
        ]
        assert ensemble_asr(logs) == 0.0

    def test_hand_counted_majorities(self):
        # per-frame votes {2,1,3,0} of 3 oracles -> strict majority on 2/4
        votes = [
            [1, 1, 1, 0],
            [1, 0, 1, 0],
            [0, 0, 1, 0],
        ]
        logs = [[make_log(v, oracle=f"m{k}")] for k, v in enumerate(votes)]
        assert ensemble_asr(logs) == 0.5

    def test_misaligned_rejected(self):
        logs = [
            [make_log([1, 0], oracle="m0", trial_id="a")],
            [make_log([1, 0, 1], oracle="m1", trial_id="a")],
        ]
        with pytest.raises(InvalidInputError):
            ensemble_asr(logs)

    def test_vote_count_bound(self):
        # the fused rate can exceed the best member (members can share the
        # load of majority frames), but never the Markov vote bound:
        # fused <= sum(member rates) / strict-majority threshold
        rng = np.random.default_rng(7)
        threshold = 2  # strict majority of 3
        for _ in range(50):
            n_frames = int(rng.integers(2, 10))
            per_oracle = [
                [make_log(rng.integers(0, 2, n_frames).tolist(), oracle=f"m{k}")]
                for k in range(3)
            ]
            fused = ensemble_asr(per_oracle)
            assert fused <= sum(frame_asr(logs) for logs in per_oracle) / threshold + 1e-12
            assert 0.0 <= fused <= 1.0

    def test_majority_can_exceed_best_member(self):
        # counterexample to the naive "never beats the best member" claim
        votes = [[1, 1, 0], [0, 1, 1], [1, 0, 1]]
        logs = [[make_log(v, oracle=f"m{k}")] for k, v in enumerate(votes)]
        assert all(frame_asr(l) == pytest.approx(2 / 3) for l in logs)
        assert ensemble_asr(logs) == 1.0


class TestPermutationInvariance:
    def test_simultaneous_row_col_permutation(self):
        m = build_transfer_matrix(AsrTable(ARCHS, CROSSWALK_ASR))
        perm = [2, 0, 1]
        permuted_asr = CROSSWALK_ASR[np.ix_(perm, perm)]
        pm = build_transfer_matrix(AsrTable(tuple(ARCHS[i] for i in perm), permuted_asr))
        assert mean_transfer_rate(pm) == pytest.approx(mean_transfer_rate(m))
        for a in ARCHS:
            assert vulnerability_score(pm, a) == pytest.approx(vulnerability_score(m, a))
            assert transfer_out_rate(pm, a) == pytest.approx(transfer_out_rate(m, a))


class TestPersistence:
    def test_trial_log_round_trip(self, tmp_path):
        log = make_log([1, 0, 1, 1, 0])
        path = tmp_path / "trial.jsonl"
        write_trial_log(log, path)
        back = read_trial_log(path)
        assert back == log
        assert frame_asr([back]) == frame_asr([log])

    def test_round_trip_recompute_determinism(self, tmp_path):
        rng = np.random.default_rng(5)
        logs = [make_log(rng.integers(0, 2, 6).tolist(), trial_id=f"t{k}") for k in range(4)]
        paths = []
        for k, log in enumerate(logs):
            p = tmp_path / f"{k}.jsonl"
            write_trial_log(log, p)
            paths.append(p)
        reread = [read_trial_log(p) for p in paths]
        assert frame_asr(reread) == frame_asr(logs)

    def test_asr_csv_round_trip(self, tmp_path):
        table = AsrTable(ARCHS, CROSSWALK_ASR)
        path = tmp_path / "asr.csv"
        write_asr_csv(table, path)
        back = read_asr_csv(path)
        assert back.architectures == ARCHS
        assert np.allclose(back.values, table.values, atol=1e-6)

    def test_transfer_csv_round_trip(self, tmp_path):
        m = build_transfer_matrix(AsrTable(ARCHS, HIGHWAY_ASR))
        path = tmp_path / "tr.csv"
        write_transfer_csv(m, path)
        back = read_transfer_csv(path)
        assert np.allclose(back.values, m.values, atol=1e-6)
        assert back.mean_tr == pytest.approx(m.mean_tr, abs=1e-6)
