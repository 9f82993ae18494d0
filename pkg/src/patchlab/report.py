"""Report bundle: ASR/TR tables, heatmaps, frame-efficacy charts, summary.

Everything is recomputed from the raw JSONL trial logs and cross-checked
against the matrices persisted by the transfer phase; a mismatch means the
results directory is corrupt and raises. SVG output is hand-rolled so the
bundle stays dependency-free and byte-deterministic.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, MissingInputError
from .metrics import (
    AsrTable,
    TransferMatrix,
    build_transfer_matrix,
    frame_asr,
    offdiag_row_means,
    read_asr_csv,
    read_transfer_csv,
    read_trial_log,
    universal_efficiency,
)

# paper-figure palette: light -> dark with rising transfer rate, gray diagonal
_COLOR_LOW = (237, 248, 251)
_COLOR_MID = (123, 204, 196)
_COLOR_HIGH = (43, 140, 190)
_COLOR_DIAG = (230, 230, 230)

UNIVERSAL_SOURCE = "universal"


def mean_cross_frame_success(values_pct: np.ndarray) -> np.ndarray:
    """Per-source mean frame-success %, excluding self-attack cells."""
    return offdiag_row_means(np.asarray(values_pct, dtype=np.float64))


def _tr_color(tr: float) -> str:
    t = min(max(tr, 0.0), 1.0)
    if t < 0.5:
        a, b, u = _COLOR_LOW, _COLOR_MID, t * 2.0
    else:
        a, b, u = _COLOR_MID, _COLOR_HIGH, (t - 0.5) * 2.0
    rgb = tuple(round(x + (y - x) * u) for x, y in zip(a, b))
    return f"rgb({rgb[0]},{rgb[1]},{rgb[2]})"


def heatmap_svg(matrix: TransferMatrix, title: str) -> str:
    """n x n transfer-rate heat map; self-attack diagonal in neutral gray."""
    n = len(matrix.architectures)
    cell_w, cell_h = 110, 56
    left, top = 130, 70
    width = left + n * cell_w + 20
    height = top + n * cell_h + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif">',
        f'<text x="{left + n * cell_w / 2}" y="24" text-anchor="middle" '
        f'font-size="15" font-weight="bold">{title}</text>',
    ]
    for j, arch in enumerate(matrix.architectures):
        parts.append(
            f'<text x="{left + j * cell_w + cell_w / 2}" y="{top - 10}" '
            f'text-anchor="middle" font-size="12">{arch}</text>'
        )
    for i, src in enumerate(matrix.architectures):
        parts.append(
            f'<text x="{left - 8}" y="{top + i * cell_h + cell_h / 2 + 4}" '
            f'text-anchor="end" font-size="12">P_{src}</text>'
        )
        for j in range(n):
            tr = float(matrix.values[i, j])
            fill = f"rgb{_COLOR_DIAG}".replace(" ", "") if i == j else _tr_color(tr)
            x, y = left + j * cell_w, top + i * cell_h
            weight = "bold" if i == j else "normal"
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" '
                f'fill="{fill}" stroke="white" stroke-width="2"/>'
            )
            parts.append(
                f'<text x="{x + cell_w / 2}" y="{y + cell_h / 2 + 4}" text-anchor="middle" '
                f'font-size="13" font-weight="{weight}">{tr:.2f}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


_BAR_FILLS = ("#4878d0", "#d65f5f", "#6acc64", "#956cb4", "#dc8932", "#82c6e2")


def frame_efficacy_svg(table: AsrTable, title: str) -> str:
    """Grouped bars: frame success % per target architecture, one bar per source."""
    n = len(table.architectures)
    group_w, bar_w = 40 + n * 26, 24
    left, top, plot_h = 70, 70, 260
    width = left + n * group_w + 40
    height = top + plot_h + 60
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif">',
        f'<text x="{left + n * group_w / 2}" y="24" text-anchor="middle" '
        f'font-size="15" font-weight="bold">{title}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + plot_h * (1 - frac)
        parts.append(
            f'<line x1="{left}" y1="{y}" x2="{left + n * group_w}" y2="{y}" '
            f'stroke="#cccccc" stroke-dasharray="4,3"/>'
        )
        parts.append(
            f'<text x="{left - 6}" y="{y + 4}" text-anchor="end" font-size="11">'
            f"{frac * 100:.0f}%</text>"
        )
    for j, tgt in enumerate(table.architectures):
        gx = left + j * group_w
        parts.append(
            f'<text x="{gx + group_w / 2}" y="{top + plot_h + 20}" text-anchor="middle" '
            f'font-size="12">{tgt}</text>'
        )
        for i, src in enumerate(table.architectures):
            pct = float(table.values[i, j]) * 100.0
            bh = plot_h * pct / 100.0
            x = gx + 20 + i * bar_w
            parts.append(
                f'<rect x="{x}" y="{top + plot_h - bh}" width="{bar_w - 4}" height="{bh}" '
                f'fill="{_BAR_FILLS[i % len(_BAR_FILLS)]}"><title>P_{src} on {tgt}: '
                f"{pct:.1f}%</title></rect>"
            )
    for i, src in enumerate(table.architectures):
        lx = left + n * group_w + 8
        ly = top + 16 * i
        parts.append(
            f'<rect x="{lx - 70}" y="{ly + 30}" width="10" height="10" '
            f'fill="{_BAR_FILLS[i % len(_BAR_FILLS)]}"/>'
        )
        parts.append(
            f'<text x="{lx - 56}" y="{ly + 39}" font-size="11">P_{src}</text>'
        )
    parts.append(f'<text x="{left + n * group_w / 2}" y="{top + plot_h + 44}" '
                 f'text-anchor="middle" font-size="12">Target architecture</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_asr_tr_csv(table: AsrTable, matrix: TransferMatrix, path) -> None:
    """Publication-shaped table: cells "ASR% (TR)", diagonal ASR% only."""
    archs = table.architectures
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Source Patch", *archs, "Mean TR"])
        for i, src in enumerate(archs):
            row = [f"P_{src}"]
            for j in range(len(archs)):
                asr_pct = table.values[i, j] * 100.0
                if i == j:
                    row.append(f"{asr_pct:.1f}")
                else:
                    row.append(f"{asr_pct:.1f} ({matrix.values[i, j]:.2f})")
            row.append(f"{offdiag_row_means(matrix.values)[i]:.3f}")
            writer.writerow(row)
        writer.writerow(
            ["Vulnerability Score", *[f"{matrix.vs[a]:.3f}" for a in archs], ""]
        )


def _load_logs(results_dir: Path, subdir: str) -> list:
    return [read_trial_log(p) for p in sorted((results_dir / subdir).glob("*.jsonl"))]


def _group_cells(logs) -> dict:
    cells = defaultdict(list)
    for log in logs:
        cells[(log.patch_id, log.oracle_id, log.scenario_id)].append(log)
    return cells


def render_report(results_dir) -> Path:
    """Build the report bundle from a completed campaign directory.

    Emits report/: one "ASR (TR)" CSV, one heatmap SVG, and one
    frame-efficacy SVG per scenario, plus summary.json. Raises
    MissingInputError listing whatever phase outputs are absent.
    """
    results_dir = Path(results_dir)
    required = {
        "baseline logs": results_dir / "baseline",
        "self-attack logs": results_dir / "selfattack",
        "transfer logs": results_dir / "transfer",
        "matrices": results_dir / "matrices",
        "baseline rates": results_dir / "baseline_rates.json",
    }
    missing = [f"{name}: {path}" for name, path in required.items() if not path.exists()]
    if missing:
        raise MissingInputError(
            "cannot render report, missing phase outputs:\n  " + "\n  ".join(missing)
        )

    baseline_logs = _load_logs(results_dir, "baseline")
    attack_logs = _load_logs(results_dir, "selfattack") + _load_logs(results_dir, "transfer")
    if not baseline_logs or not attack_logs:
        raise MissingInputError("phase directories exist but contain no trial logs")

    meta_path = results_dir / "run_metadata.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    scenario_ids = meta.get("scenario_ids") or sorted({l.scenario_id for l in baseline_logs})
    arch_order = meta.get("oracle_ids")
    if not arch_order:
        # fall back to the campaign order preserved in a persisted matrix
        for sid in scenario_ids:
            csv_path = results_dir / "matrices" / f"{sid}_asr.csv"
            if csv_path.exists():
                arch_order = list(read_asr_csv(csv_path).architectures)
                break
    if not arch_order:
        arch_order = sorted({l.oracle_id for l in baseline_logs})

    cells = _group_cells(attack_logs)
    report_dir = results_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    summary: dict = {
        "master_seed": meta.get("master_seed"),
        "scenarios": {},
        "excluded_trials": _count_warnings(results_dir),
    }
    for scenario_id in scenario_ids:
        n = len(arch_order)
        values = np.zeros((n, n), dtype=np.float64)
        for i, src in enumerate(arch_order):
            for j, tgt in enumerate(arch_order):
                logs = cells.get((f"P_{src}", tgt, scenario_id))
                if not logs:
                    raise MissingInputError(
                        f"no trial logs for patch P_{src} on {tgt} in scenario {scenario_id}"
                    )
                values[i, j] = frame_asr(logs)
        table = AsrTable(tuple(arch_order), values)
        matrix = build_transfer_matrix(table)
        _check_persisted(results_dir, scenario_id, table, matrix)

        base_rates = {
            a: frame_asr([l for l in baseline_logs if l.oracle_id == a and l.scenario_id == scenario_id])
            for a in arch_order
        }
        scen_summary = {
            "mean_tr": matrix.mean_tr,
            "vs": matrix.vs,
            "rs": matrix.rs,
            "to": matrix.to,
            "self_asr": {a: float(values[i, i]) for i, a in enumerate(arch_order)},
            "baseline_rates": base_rates,
            "mean_cross_frame_success_pct": {
                a: float(v)
                for a, v in zip(arch_order, mean_cross_frame_success(values * 100.0))
            },
            "uae": _universal_block(cells, arch_order, scenario_id, values),
        }
        summary["scenarios"][scenario_id] = scen_summary

        write_asr_tr_csv(table, matrix, report_dir / f"asr_tr_{scenario_id}.csv")
        (report_dir / f"heatmap_{scenario_id}.svg").write_text(
            heatmap_svg(matrix, f"Transfer Rate Heat Map - {scenario_id}"), encoding="utf-8"
        )
        (report_dir / f"frame_efficacy_{scenario_id}.svg").write_text(
            frame_efficacy_svg(table, f"Frame-level attack efficacy - {scenario_id}"),
            encoding="utf-8",
        )

    stats_path = results_dir / "stats.json"
    if stats_path.exists():
        summary["p_values"] = json.loads(stats_path.read_text())
    queries_path = results_dir / "queries.jsonl"
    if queries_path.exists():
        counts: dict = defaultdict(int)
        with open(queries_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    counts[json.loads(line)["oracle_id"]] += 1
        summary["query_counts"] = dict(sorted(counts.items()))

    with open(report_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report_dir


def _universal_block(cells, arch_order, scenario_id, self_values) -> dict | None:
    """UAE per target when universal-patch logs are present, else None."""
    universal_asr = {}
    for j, tgt in enumerate(arch_order):
        logs = cells.get((f"P_{UNIVERSAL_SOURCE}", tgt, scenario_id))
        if not logs:
            return None
        universal_asr[tgt] = frame_asr(logs)
    self_asr = {a: float(self_values[i, i]) for i, a in enumerate(arch_order)}
    per_arch, mean = universal_efficiency(universal_asr, self_asr)
    return {"per_architecture": per_arch, "mean": mean, "universal_asr": universal_asr}


def _check_persisted(results_dir: Path, scenario_id: str, table: AsrTable, matrix: TransferMatrix):
    asr_path = results_dir / "matrices" / f"{scenario_id}_asr.csv"
    tr_path = results_dir / "matrices" / f"{scenario_id}_tr.csv"
    if asr_path.exists():
        persisted = read_asr_csv(asr_path)
        if not np.allclose(persisted.values, table.values, atol=1e-9):
            raise InvalidInputError(
                f"recomputed ASR table for {scenario_id!r} disagrees with {asr_path}"
            )
    if tr_path.exists():
        persisted_tr = read_transfer_csv(tr_path)
        if not np.allclose(persisted_tr.values, matrix.values, atol=1e-9):
            raise InvalidInputError(
                f"recomputed transfer matrix for {scenario_id!r} disagrees with {tr_path}"
            )


def _count_warnings(results_dir: Path) -> int:
    path = results_dir / "warnings.log"
    if not path.exists():
        return 0
    return sum(1 for line in path.read_text().splitlines() if line.strip())
