"""Deterministic CSV / JSON / SVG artifact emitters.

Byte-for-byte reproducibility contract: fixed config and seed produce
identical CSV and JSON on one platform.  Floats are rendered with ``repr``
(shortest round-trip), JSON keys are sorted, and no timestamps are written.
Every file carries a metadata block echoing the config hash and parameters.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def render_value(x) -> str:
    """Canonical text for one CSV cell."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(x)


def write_csv(path: str | Path, columns: list[str], rows: list[tuple],
              meta: dict | None = None) -> Path:
    """Comma-separated table with '#'-prefixed metadata lines, '.' decimals."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, val in (meta or {}).items():
        lines.append(f"# {key} = {render_value(val)}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(render_value(x) for x in row))
    p.write_text("\n".join(lines) + "\n")
    return p


def _sanitize(obj):
    """Make numpy and path objects JSON-serializable; keep key order stable."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: str | Path, obj: dict, meta: dict | None = None) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(obj)
    if meta:
        payload["_meta"] = meta
    p.write_text(json.dumps(_sanitize(payload), sort_keys=True, indent=2) + "\n")
    return p


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def write_svg_lines(path: str | Path, x, series: list[tuple[str, list]],
                    title: str, xlabel: str, ylabel: str,
                    logy: bool = False, logx: bool = False,
                    description: str = "") -> Path:
    """Self-contained SVG line plot (no external assets)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, ys in series:
        ax.plot(x, ys, marker="o", markersize=3, linewidth=1.2, label=label)
    if logy:
        ax.set_yscale("log")
    if logx:
        ax.set_xscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(p, format="svg",
                metadata={"Date": None, "Description": description})
    plt.close(fig)
    return p
