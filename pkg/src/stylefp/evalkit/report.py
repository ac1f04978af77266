"""Machine-readable results file and fixed-width summary table."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from ..errors import SpecError

RESULTS_SCHEMA_VERSION = 1
ROW_KEYS = ("setting", "status", "auc", "tpr_at_fpr", "n_pos", "n_neg")


@dataclass(frozen=True)
class ResultRow:
    setting: str
    status: str = "ok"
    auc: float | None = None
    tpr_at_fpr: float | None = None
    n_pos: int = 0
    n_neg: int = 0

    @classmethod
    def from_battery(cls, row: Any) -> "ResultRow":
        return cls(row.setting, row.status, row.auc, row.tpr_at_fpr, row.n_pos, row.n_neg)

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in ROW_KEYS}


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.3f}"


def summary_table(rows: list[ResultRow], fpr_target: float = 1e-2, title: str = "") -> str:
    metric = f"AUC / T@{fpr_target:g}F"
    width = max([len("Setting")] + [len(r.setting) for r in rows]) + 2
    lines = []
    if title:
        lines.append(title)
    rule = "=" * (width + 42)
    lines += [rule, f"{'Setting':<{width}}{metric:<20}{'n_pos':>7}{'n_neg':>7}  status", "-" * len(rule)]
    for r in rows:
        cell = f"{_fmt(r.auc)} / {_fmt(r.tpr_at_fpr)}"
        lines.append(f"{r.setting:<{width}}{cell:<20}{r.n_pos:>7}{r.n_neg:>7}  {r.status}")
    lines.append(rule)
    return "\n".join(lines) + "\n"


def emit_report(
    rows: Iterable[Any],
    out_dir: str | Path,
    header: dict[str, Any] | None = None,
    calibration: dict[str, Any] | None = None,
    fpr_target: float = 1e-2,
    stem: str = "results",
) -> tuple[Path, Path]:
    """Write ``<stem>.json`` and ``<stem>.txt`` under ``out_dir``; returns both paths."""
    rows = [r if isinstance(r, ResultRow) else ResultRow.from_battery(r) for r in rows]
    if not rows:
        raise SpecError("refusing to write a report with no result rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "fpr_target": fpr_target,
        "header": header or {},
        "rows": [r.to_dict() for r in rows],
        "calibration": calibration,
    }
    json_path = out_dir / f"{stem}.json"
    txt_path = out_dir / f"{stem}.txt"
    json_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    title_lines = [f"{k}: {v}" for k, v in (header or {}).items()]
    txt_path.write_text(summary_table(rows, fpr_target, "\n".join(title_lines)), encoding="utf-8")
    return json_path, txt_path


def load_results(path: str | Path) -> dict[str, Any]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema_version") != RESULTS_SCHEMA_VERSION:
        raise SpecError(f"unsupported results schema {data.get('schema_version')!r}")
    data["rows"] = [ResultRow(**{k: row[k] for k in ROW_KEYS}) for row in data["rows"]]
    return data
