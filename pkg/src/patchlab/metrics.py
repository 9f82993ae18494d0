"""Frame-wise attack success, the transfer matrix, and derived summaries.

Conventions
-----------
* ASR is micro-averaged: total matched frames / total frames across trials.
  With equal frames per trial this equals the per-trial average.
* Transfer rate is source-normalized, TR_ij = ASR_ij / ASR_ii, and never
  clamped: a value above 1 means the patch works better off-source, which
  is real information.
* The transfer-matrix diagonal is exactly 1.0 by definition.
* Vulnerability score VS_j = mean incoming TR of column j (diagonal
  excluded); robustness score RS_j = 1 - VS_j; transfer-out rate TO_i =
  mean outgoing TR of row i.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, UndefinedBaselineError, UnknownArchitectureError
from .oracle import ActionLabel


@dataclass(frozen=True)
class FrameOutcome:
    timestamp: float
    distance: float
    action: ActionLabel
    matched_target: bool


@dataclass(frozen=True)
class TrialLog:
    """Per-trial sequence of normalized frame outcomes.

    patch_id is "none" for baseline (patch-free) trials. matched_target must
    equal (action == target_action) frame by frame; the constructor checks.
    """

    trial_id: str
    oracle_id: str
    patch_id: str
    scenario_id: str
    target_action: ActionLabel
    frames: tuple[FrameOutcome, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) < 1:
            raise InvalidInputError(f"trial {self.trial_id!r} has no frames")
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidInputError(f"trial {self.trial_id!r} timestamps not strictly increasing")
        for f in self.frames:
            if f.matched_target != (f.action == self.target_action):
                raise InvalidInputError(
                    f"trial {self.trial_id!r}: matched_target inconsistent at t={f.timestamp}"
                )

    @property
    def cell(self) -> tuple[str, str, str]:
        return (self.oracle_id, self.patch_id, self.scenario_id)

    def matched_count(self) -> int:
        return sum(1 for f in self.frames if f.matched_target)


def frame_asr(logs: list[TrialLog]) -> float:
    """Micro-averaged fraction of frames on which the target action won."""
    if not logs:
        raise InvalidInputError("frame_asr needs at least one trial log")
    cells = {log.cell for log in logs}
    if len(cells) != 1:
        raise InvalidInputError(f"frame_asr requires one (oracle, patch, scenario) cell, got {cells}")
    total = sum(len(log.frames) for log in logs)
    matched = sum(log.matched_count() for log in logs)
    return matched / total


def transfer_rate(asr_ij: float, asr_ii: float) -> float:
    """Source-normalized transfer rate ASR_ij / ASR_ii, unclamped."""
    if asr_ii <= 0.0:
        raise UndefinedBaselineError(f"self-attack ASR must be > 0, got {asr_ii}")
    return asr_ij / asr_ii


@dataclass(frozen=True)
class AsrTable:
    """Square ASR array: rows are source patches, columns target oracles."""

    architectures: tuple[str, ...]
    values: np.ndarray  # (n, n) float64 in [0, 1]

    def __post_init__(self):
        object.__setattr__(self, "architectures", tuple(self.architectures))
        vals = np.asarray(self.values, dtype=np.float64)
        n = len(self.architectures)
        if vals.shape != (n, n):
            raise InvalidInputError(f"ASR table must be {n}x{n}, got {vals.shape}")
        if np.any(vals < 0.0) or np.any(vals > 1.0):
            raise InvalidInputError("ASR values must lie in [0, 1]")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def index(self, architecture: str) -> int:
        try:
            return self.architectures.index(architecture)
        except ValueError:
            raise UnknownArchitectureError(architecture) from None


def offdiag_row_means(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    mask = ~np.eye(n, dtype=bool)
    return np.array([values[i][mask[i]].mean() for i in range(n)])


def offdiag_col_means(values: np.ndarray) -> np.ndarray:
    return offdiag_row_means(values.T)


@dataclass(frozen=True)
class TransferMatrix:
    """TR values with diagonal 1.0 plus the derived per-architecture scores."""

    architectures: tuple[str, ...]
    values: np.ndarray
    mean_tr: float | None = field(default=None, compare=False)
    vs: dict = field(default_factory=dict, compare=False)
    rs: dict = field(default_factory=dict, compare=False)
    to: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "architectures", tuple(self.architectures))
        vals = np.asarray(self.values, dtype=np.float64)
        n = len(self.architectures)
        if vals.shape != (n, n):
            raise InvalidInputError(f"transfer matrix must be {n}x{n}, got {vals.shape}")
        if not np.all(np.diag(vals) == 1.0):
            raise InvalidInputError("transfer matrix diagonal must be exactly 1.0")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if n >= 2:
            object.__setattr__(self, "mean_tr", float(offdiag_row_means(vals).mean()))
            vs = {a: float(v) for a, v in zip(self.architectures, offdiag_col_means(vals))}
            to = {a: float(v) for a, v in zip(self.architectures, offdiag_row_means(vals))}
            object.__setattr__(self, "vs", vs)
            object.__setattr__(self, "rs", {a: 1.0 - v for a, v in vs.items()})
            object.__setattr__(self, "to", to)

    @classmethod
    def from_tr_values(cls, architectures, tr_values) -> "TransferMatrix":
        """Build from known TR cells (diagonal forced to 1.0)."""
        vals = np.asarray(tr_values, dtype=np.float64).copy()
        np.fill_diagonal(vals, 1.0)
        return cls(tuple(architectures), vals)

    def index(self, architecture: str) -> int:
        try:
            return self.architectures.index(architecture)
        except ValueError:
            raise UnknownArchitectureError(architecture) from None


def build_transfer_matrix(asr: AsrTable) -> TransferMatrix:
    """Source-normalize an ASR table into a TransferMatrix (TR_ij = ASR_ij / ASR_ii)."""
    n = len(asr.architectures)
    diag = np.diag(asr.values)
    for arch, d in zip(asr.architectures, diag):
        if d <= 0.0:
            raise UndefinedBaselineError(f"self-attack ASR is zero for architecture {arch!r}")
    tr = asr.values / diag[:, None]
    np.fill_diagonal(tr, 1.0)
    return TransferMatrix(asr.architectures, tr)


def mean_transfer_rate(m: TransferMatrix) -> float:
    """Mean off-diagonal TR (self-attacks excluded)."""
    if len(m.architectures) < 2:
        raise InvalidInputError("mean transfer rate needs at least 2 architectures")
    return float(offdiag_row_means(m.values).mean())


def vulnerability_score(m: TransferMatrix, target: str) -> float:
    """Mean incoming TR of the target's column, diagonal excluded."""
    if len(m.architectures) < 2:
        raise InvalidInputError("vulnerability score needs at least 2 architectures")
    j = m.index(target)
    return float(offdiag_col_means(m.values)[j])


def robustness_score(m: TransferMatrix, target: str) -> float:
    return 1.0 - vulnerability_score(m, target)


def transfer_out_rate(m: TransferMatrix, source: str) -> float:
    """Mean outgoing TR of the source's row, diagonal excluded."""
    if len(m.architectures) < 2:
        raise InvalidInputError("transfer-out rate needs at least 2 architectures")
    i = m.index(source)
    return float(offdiag_row_means(m.values)[i])


def universal_efficiency(
    universal_asr: dict[str, float], self_asr: dict[str, float]
) -> tuple[dict[str, float], float]:
    """Per-architecture ratio of universal-patch ASR to self-attack ASR.

    Measures how much of the targeted attack's effectiveness a single
    universal patch retains on each architecture.
    """
    if set(universal_asr) != set(self_asr):
        raise InvalidInputError("universal and self ASR architecture sets differ")
    out = {}
    for arch, s in self_asr.items():
        if s <= 0.0:
            raise UndefinedBaselineError(f"self-attack ASR is zero for architecture {arch!r}")
        out[arch] = universal_asr[arch] / s
    return out, float(np.mean(list(out.values())))


def ensemble_asr(logs_per_oracle: list[list[TrialLog]], rule: str = "majority") -> float:
    """ASR of a defense that fuses member oracles by strict majority.

    A frame counts as attacked only if a strict majority of oracles matched
    the target on that frame. Logs must be frame-aligned across oracles:
    same trial ids in the same order, same frame counts.
    """
    if rule != "majority":
        raise InvalidInputError(f"unknown ensemble rule {rule!r}")
    if not logs_per_oracle or not logs_per_oracle[0]:
        raise InvalidInputError("ensemble needs at least one oracle's logs")
    n_oracles = len(logs_per_oracle)
    ref = logs_per_oracle[0]
    for logs in logs_per_oracle[1:]:
        if [l.trial_id for l in logs] != [l.trial_id for l in ref]:
            raise InvalidInputError("ensemble logs misaligned: trial ids differ")
        if [len(l.frames) for l in logs] != [len(l.frames) for l in ref]:
            raise InvalidInputError("ensemble logs misaligned: frame counts differ")
    total = 0
    attacked = 0
    for ti in range(len(ref)):
        for fi in range(len(ref[ti].frames)):
            votes = sum(1 for logs in logs_per_oracle if logs[ti].frames[fi].matched_target)
            total += 1
            if votes * 2 > n_oracles:
                attacked += 1
    return attacked / total


# ---------------------------------------------------------------------------
# Persistence: JSONL trial logs, CSV tables
# ---------------------------------------------------------------------------

def write_trial_log(log: TrialLog, path) -> None:
    """One JSONL file per trial: a metadata header line, then frame lines."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "trial_id": log.trial_id,
            "oracle_id": log.oracle_id,
            "patch_id": log.patch_id,
            "scenario_id": log.scenario_id,
            "target_action": log.target_action.value,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for f in log.frames:
            fh.write(
                json.dumps(
                    {
                        "timestamp": f.timestamp,
                        "distance": f.distance,
                        "action": f.action.value,
                        "matched_target": f.matched_target,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_trial_log(path) -> TrialLog:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines:
        raise InvalidInputError(f"empty trial log: {path}")
    header, frame_lines = lines[0], lines[1:]
    frames = tuple(
        FrameOutcome(
            timestamp=f["timestamp"],
            distance=f["distance"],
            action=ActionLabel(f["action"]),
            matched_target=f["matched_target"],
        )
        for f in frame_lines
    )
    return TrialLog(
        trial_id=header["trial_id"],
        oracle_id=header["oracle_id"],
        patch_id=header["patch_id"],
        scenario_id=header["scenario_id"],
        target_action=ActionLabel(header["target_action"]),
        frames=frames,
    )


def _write_square_csv(architectures, values, path, corner: str) -> None:
    # shortest round-trip float form, so recomputation checks can be exact
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([corner, *architectures])
        for arch, row in zip(architectures, values):
            writer.writerow([f"P_{arch}", *[repr(float(v)) for v in row]])


def write_asr_csv(table: AsrTable, path) -> None:
    _write_square_csv(table.architectures, table.values, path, "source\\target ASR")


def write_transfer_csv(m: TransferMatrix, path) -> None:
    _write_square_csv(m.architectures, m.values, path, "source\\target TR")


def _read_square_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    archs = tuple(rows[0][1:])
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)
    return archs, values


def read_asr_csv(path) -> AsrTable:
    archs, values = _read_square_csv(path)
    return AsrTable(archs, values)


def read_transfer_csv(path) -> TransferMatrix:
    archs, values = _read_square_csv(path)
    return TransferMatrix(archs, values)
