"""
Result files: trace CSV, comparison tables (text and CSV) and SVG plots.
"""
import logging
import os
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .core import TRACE_COLUMNS, SpaaceError, Trace, format_number  # noqa: E402
from .scenario import ComparisonRow  # noqa: E402

ROW_COLUMNS = ["case", "mode", "overshoot_pct", "undershoot_pct", "settling_ms", "rise_ms"]
METRIC_COLUMNS = ROW_COLUMNS[2:]
MISSING = "-"


class ArtifactError(SpaaceError):
    """An output directory or file could not be written."""


def ensure_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ArtifactError(f"cannot create output directory '{path}': {e.strerror or e}") from None
    if not os.access(path, os.W_OK):
        raise ArtifactError(f"output directory '{path}' is not writable")
    return path


def _cell(value: Optional[float]) -> str:
    return MISSING if value is None else f"{value:.2f}"


def row_records(rows: Sequence[ComparisonRow]) -> List[Dict[str, str]]:
    """
    Flattens comparison rows into string cells keyed by ROW_COLUMNS.

    Failed rows carry ``ERR(<reason>)`` in every metric cell.
    """
    records = []
    for row in rows:
        record = {"case": row.case, "mode": row.mode.value}
        if row.error is not None:
            record.update({col: f"ERR({row.error})" for col in METRIC_COLUMNS})
        else:
            m = row.metrics
            record.update({
                "overshoot_pct": _cell(m.overshoot_pct),
                "undershoot_pct": _cell(m.undershoot_pct),
                "settling_ms": _cell(m.settling_ms),
                "rise_ms": _cell(m.rise_ms),
            })
        records.append(record)
    return records


def format_table(records: List[Dict[str, str]], title: Optional[str] = None) -> str:
    """Aligned plain-text table; column widths follow the widest cell."""
    columns = ROW_COLUMNS
    lines = [title] if title else []
    col_widths = {col: max(len(col), max((len(r.get(col, "")) for r in records), default=0))
                  for col in columns}
    header = " | ".join(f"{col:{col_widths[col]}}" for col in columns)
    lines.append(header)
    lines.append("-" * len(header))
    for record in records:
        lines.append(" | ".join(f"{record.get(col, ''):<{col_widths[col]}}" for col in columns))
    return "\n".join(lines)


def write_text(text: str, path: str) -> str:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    except OSError as e:
        raise ArtifactError(f"cannot write '{path}': {e.strerror or e}") from None
    logging.info(f"Wrote {path}")
    return path


def write_rows_csv(rows: Sequence[ComparisonRow], path: str) -> str:
    frame = pd.DataFrame(row_records(rows), columns=ROW_COLUMNS)
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise ArtifactError(f"cannot write '{path}': {e.strerror or e}") from None
    logging.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_trace_csv(trace: Trace, path: str) -> str:
    """One row per fine step; every number in shortest round-trip form."""
    frame = trace.to_frame()
    for col in TRACE_COLUMNS:
        frame[col] = [format_number(v) for v in frame[col]]
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise ArtifactError(f"cannot write '{path}': {e.strerror or e}") from None
    logging.info(f"Wrote trace ({len(frame)} samples) to {path}")
    return path


def read_trace_csv(path: str, dt: float, t_sample: float) -> Trace:
    frame = pd.read_csv(path, float_precision="round_trip")
    return Trace.from_frame(frame, dt=dt, t_sample=t_sample)


def plot_trace(trace: Trace, path: str, title: Optional[str] = None) -> str:
    """
    Static SVG of the reference, the modulated reference and the measurement.

    The modulated reference is drawn as a held (post) step signal.
    """
    t_ms = trace.t * 1e3
    fig, ax = plt.subplots(figsize=(10, 5))
    ax.plot(t_ms, trace.x_ref, color="black", linestyle="--", linewidth=1.0, label="x_ref")
    ax.step(t_ms, trace.x_ref_mod, where="post", color="tab:orange", linewidth=1.0, label="x_ref_mod")
    ax.plot(t_ms, trace.x, color="tab:blue", linewidth=1.4, label="x")
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("current (pu)")
    if title is None and trace.meta:
        title = f"{trace.meta.get('case', '')} ({trace.meta.get('mode', '')})"
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg")
    except OSError as e:
        raise ArtifactError(f"cannot write '{path}': {e.strerror or e}") from None
    finally:
        plt.close(fig)
    logging.info(f"Wrote plot to {path}")
    return path
