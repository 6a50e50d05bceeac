"""CSV metric files, text summaries and portable-pixmap verdict heatmaps."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from .engine import IterationRecord, RunReport, VerdictSets
from .mdp import Mdp

ITERATION_COLUMNS = ["num_queries", "proven_failure", "undecided_states", "proven_good",
                     "pessimistic_avg", "optimistic_avg"]
CLUSTER_COLUMNS = ["implied_safe", "implied_failure"]

COLORS = {"safe": (0, 255, 0), "failure": (255, 0, 0), "undetermined": (0, 0, 255)}
WALL = (0, 0, 0)


class RenderError(ValueError):
    pass


def write_atomic(path: str | Path, data: str | bytes) -> None:
    """Write to a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def iteration_columns(report: RunReport) -> list[str]:
    return ITERATION_COLUMNS + (CLUSTER_COLUMNS if report.mode == "imtc" else [])


def iteration_csv(report: RunReport) -> str:
    cols = iteration_columns(report)
    return _csv_text(cols, ([_num(getattr(r, c)) for c in cols] for r in report.records))


def emit_iteration_csv(report: RunReport, path: str | Path) -> None:
    write_atomic(path, iteration_csv(report))


def parse_iteration_csv(text: str) -> list[dict[str, float | int]]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append({k: (float(v) if k.endswith("_avg") else int(v)) for k, v in row.items()})
    return rows


def records_as_dicts(records: list[IterationRecord], columns: list[str]) -> list[dict[str, Any]]:
    return [{c: getattr(r, c) for c in columns} for r in records]


def verdicts_csv(report: RunReport, mdp: Mdp) -> str:
    v = report.verdicts
    implied = report.implied_safe | report.implied_failure
    rows = ([s, mdp.state_names[s], v.verdict_of(s), int(s in implied)] for s in range(mdp.num_states))
    return _csv_text(["state", "name", "verdict", "implied"], rows)


def estimates_csv(report: RunReport, mdp: Mdp) -> str:
    est = report.estimates
    rows = ([s, mdp.state_names[s], _num(float(est.e_opt[s])), _num(float(est.e_pes[s]))]
            for s in range(mdp.num_states))
    return _csv_text(["state", "name", "e_opt", "e_pes"], rows)


def rt_csv(results: list[tuple[int, bool]], mdp: Mdp) -> str:
    rows = ([i, s, mdp.state_names[s], int(v)] for i, (s, v) in enumerate(results))
    return _csv_text(["episode", "start_state", "name", "violated"], rows)


def summary_text(report: RunReport, settings: Mapping[str, Any]) -> str:
    lines = [f"mode: {report.mode}"]
    lines += [f"{k}: {v}" for k, v in settings.items()]
    lines.append(f"termination: {report.termination}")
    lines.append(f"iterations: {report.iterations}")
    lines.append(f"policy queries: {report.total_queries}")
    if report.verdicts is not None:
        safe, fail, und = report.verdicts.counts()
        lines.append(f"safe states: {safe}")
        lines.append(f"failure states: {fail}")
        lines.append(f"undetermined states: {und}")
    if report.mode == "imtc":
        lines.append(f"implied safe (cluster verdicts): {len(report.implied_safe)}")
        lines.append(f"implied failure (cluster verdicts): {len(report.implied_failure)}")
    return "\n".join(lines) + "\n"


def rt_summary(results: list[tuple[int, bool]], settings: Mapping[str, Any]) -> str:
    violations = sum(v for _, v in results)
    lines = ["mode: rt", *(f"{k}: {v}" for k, v in settings.items()),
             f"episodes: {len(results)}", f"violations: {violations}",
             f"distinct violating start states: {len({s for s, v in results if v})}"]
    return "\n".join(lines) + "\n"


# -- heatmaps ---------------------------------------------------------------------------


def _grid_metadata(render):
    if not render or render.get("kind") != "grid":
        raise RenderError("model has no grid render metadata; heatmaps need a gridworld")
    return render


def heatmap_layers(verdicts: VerdictSets, render: Mapping[str, Any], scale: int = 8) -> list[bytes]:
    """One binary PPM (P6) image per orientation; walls black."""
    meta = _grid_metadata(render)
    w, h = meta["width"], meta["height"]
    pos = meta["positions"]
    layers = []
    for o in range(4):
        grid = [[WALL] * w for _ in range(h)]
        for s, (x, y, so) in enumerate(pos):
            if so == o:
                grid[y][x] = COLORS[verdicts.verdict_of(s)]
        body = bytearray()
        for row in grid:
            line = b"".join(bytes(c) * scale for c in row)
            body += line * scale
        layers.append(f"P6\n{w * scale} {h * scale}\n255\n".encode() + bytes(body))
    return layers


def render_heatmap(verdicts: VerdictSets, render: Mapping[str, Any], path: str | Path, scale: int = 8) -> list[Path]:
    """Write ``<stem>_o<k>.ppm`` for every orientation ``k``; returns the paths."""
    path = Path(path)
    out = []
    for o, data in enumerate(heatmap_layers(verdicts, render, scale)):
        p = path.with_name(f"{path.stem}_o{o}.ppm")
        write_atomic(p, data)
        out.append(p)
    return out
