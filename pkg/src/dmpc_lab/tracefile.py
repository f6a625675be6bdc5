"""CSV trace files and the long-format plot tables derived from them."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .engine import SimulationTrace
from .errors import MalformedTrace

FIXED_TAIL = ["c_norm", "V", "D", "dist_C", "t_prime", "status"]


def header(n: int, m: int) -> list[str]:
    return ["t", "agent", *[f"x{k}" for k in range(n)], *[f"u{r}" for r in range(m)], *FIXED_TAIL]


def _f(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _step_status(statuses) -> str:
    s = set(statuses)
    for key in ("infeasible", "feasible_fallback", "optimal", "baseline"):
        if key in s:
            return key
    return ""


def trace_rows(trace: SimulationTrace) -> list[list[str]]:
    T_done = trace.steps_completed
    M, n = trace.states.shape[1], trace.states.shape[2]
    m = trace.inputs.shape[2]
    rows = []
    for t in range(T_done + 1):
        active = t < T_done
        for i in range(M):
            row = [str(t), str(i)] + [_f(v) for v in trace.states[t, i]]
            if active:
                row += [_f(v) for v in trace.inputs[t, i]]
                row += [_f(np.linalg.norm(trace.c0[t, i])), _f(trace.V[t, i])]
            else:
                row += [""] * (m + 2)
            row += [_f(trace.D[t]), _f(trace.dist_C[t])]
            row += [str(int(trace.t_prime[t, i])) if active else "", str(trace.status[t, i]) if active else ""]
            rows.append(row)
        summary = [str(t), "-1"] + [""] * (n + m)
        if active:
            summary += [_f(np.max(np.linalg.norm(trace.c0[t], axis=1))), _f(np.nansum(trace.V[t]))]
        else:
            summary += ["", ""]
        summary += [_f(trace.D[t]), _f(trace.dist_C[t])]
        summary += [str(int(np.min(trace.t_prime[t]))) if active else "", _step_status(trace.status[t]) if active else ""]
        rows.append(summary)
    return rows


def trace_to_csv(trace: SimulationTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header(trace.states.shape[2], trace.inputs.shape[2]))
    w.writerows(trace_rows(trace))
    return buf.getvalue()


def write_trace(trace: SimulationTrace, path: str | Path) -> None:
    Path(path).write_text(trace_to_csv(trace))


class TraceTable:
    """Parsed trace CSV: agent rows and step-summary rows."""

    def __init__(self, n: int, m: int, agent_rows: list[dict], summary_rows: list[dict]):
        self.n, self.m = n, m
        self.agent_rows = agent_rows
        self.summary_rows = summary_rows


def read_trace(path: str | Path) -> TraceTable:
    """Parse and validate a trace CSV.

    Raises:
        MalformedTrace: unreadable, empty, wrong header or non-numeric fields.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedTrace(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        head = next(reader)
    except StopIteration:
        raise MalformedTrace(f"{path}: empty trace") from None
    xs = [h for h in head if h.startswith("x") and h[1:].isdigit()]
    us = [h for h in head if h.startswith("u") and h[1:].isdigit()]
    if head != header(len(xs), len(us)) or not xs:
        raise MalformedTrace(f"{path}: unexpected header {head}")
    agent_rows, summary_rows = [], []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(head):
            raise MalformedTrace(f"{path}:{lineno}: expected {len(head)} fields, got {len(row)}")
        rec = dict(zip(head, row))
        try:
            rec["t"] = int(rec["t"])
            rec["agent"] = int(rec["agent"])
            for key in head[2:-2]:
                rec[key] = float(rec[key]) if rec[key] != "" else math.nan
        except ValueError as exc:
            raise MalformedTrace(f"{path}:{lineno}: {exc}") from exc
        (summary_rows if rec["agent"] < 0 else agent_rows).append(rec)
    if not agent_rows or not summary_rows:
        raise MalformedTrace(f"{path}: no data rows")
    return TraceTable(len(xs), len(us), agent_rows, summary_rows)


def _write_csv(path: Path, head: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        w.writerows(rows)


def emit_plot_data(trace_paths: list[str | Path], out_dir: str | Path) -> list[Path]:
    """Write ``states.csv``, ``inputs.csv`` (first trace) and ``disagreement.csv`` (all traces).

    ``states.csv`` and ``inputs.csv`` are long format with columns
    ``trace, t, agent, component, value``. ``disagreement.csv`` has one ``D``
    column per trace, named after the file stem.
    """
    if not trace_paths:
        raise MalformedTrace("no trace files given")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = [(Path(p).stem, read_trace(p)) for p in trace_paths]

    state_rows, input_rows = [], []
    for stem, tab in tables:
        for rec in tab.agent_rows:
            for k in range(tab.n):
                state_rows.append([stem, rec["t"], rec["agent"], k, _f(rec[f"x{k}"])])
            for r in range(tab.m):
                if not math.isnan(rec[f"u{r}"]):
                    input_rows.append([stem, rec["t"], rec["agent"], r, _f(rec[f"u{r}"])])
    head = ["trace", "t", "agent", "component", "value"]
    written = [out / "states.csv", out / "inputs.csv", out / "disagreement.csv"]
    _write_csv(written[0], head, state_rows)
    _write_csv(written[1], head, input_rows)

    stems = [s for s, _ in tables]
    series = [{rec["t"]: rec["D"] for rec in tab.summary_rows} for _, tab in tables]
    times = sorted(set().union(*[s.keys() for s in series]))
    rows = [[t] + [_f(s[t]) if t in s else "" for s in series] for t in times]
    _write_csv(written[2], ["t", *stems], rows)
    return written
