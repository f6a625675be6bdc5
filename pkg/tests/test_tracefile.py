from __future__ import annotations

import csv

import numpy as np
import pytest

from dmpc_lab.errors import MalformedTrace
from dmpc_lab.tracefile import emit_plot_data, header, read_trace, trace_to_csv, write_trace

from conftest import cached_run


def test_header_layout():
    assert header(2, 1) == ["t", "agent", "x0", "x1", "u0", "c_norm", "V", "D", "dist_C", "t_prime", "status"]


def test_rows_round_trip_exactly(tmp_path):
    cfg, trace = cached_run("ex2", T=12)
    path = tmp_path / "t.csv"
    write_trace(trace, path)
    tab = read_trace(path)
    assert len(tab.agent_rows) == (12 + 1) * 4
    assert len(tab.summary_rows) == 13
    rec = [r for r in tab.agent_rows if r["t"] == 5 and r["agent"] == 2][0]
    assert rec["x0"] == trace.states[5, 2, 0] and rec["x1"] == trace.states[5, 2, 1]
    assert rec["u0"] == trace.inputs[5, 2, 0]
    assert rec["D"] == trace.D[5]
    assert rec["status"] == trace.status[5, 2]
    last = [r for r in tab.agent_rows if r["t"] == 12]
    assert all(np.isnan(r["u0"]) for r in last)


def test_serialization_is_stable():
    _, trace = cached_run("ex2", T=12)
    assert trace_to_csv(trace) == trace_to_csv(trace)


def test_malformed_traces(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(MalformedTrace):
        read_trace(empty)
    wrong = tmp_path / "wrong.csv"
    wrong.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(MalformedTrace):
        read_trace(wrong)
    header_only = tmp_path / "h.csv"
    header_only.write_text(",".join(header(2, 1)) + "\n")
    with pytest.raises(MalformedTrace):
        read_trace(header_only)
    with pytest.raises(MalformedTrace):
        read_trace(tmp_path / "absent.csv")
    with pytest.raises(MalformedTrace):
        emit_plot_data([], tmp_path)


def test_emit_plot_data(tmp_path):
    cfg1, tr1 = cached_run("ex1", T=10)
    _, tr2 = cached_run("ex1", T=10, controller="saturated_linear")
    a, b = tmp_path / "robust.csv", tmp_path / "saturated.csv"
    write_trace(tr1, a)
    write_trace(tr2, b)
    states, inputs, dis = emit_plot_data([a, b], tmp_path / "plots")
    with states.open() as fh:
        rows = list(csv.DictReader(fh))
    robust = [r for r in rows if r["trace"] == "robust"]
    series = {(r["agent"], r["component"]) for r in robust}
    assert len(series) == 5 * 5
    with inputs.open() as fh:
        inp = [r for r in csv.DictReader(fh) if r["trace"] == "robust"]
    assert len(inp) == 10 * 5 * 2
    with dis.open() as fh:
        d_rows = list(csv.DictReader(fh))
    assert list(d_rows[0]) == ["t", "robust", "saturated"]
    assert float(d_rows[0]["robust"]) == tr1.D[0]
    assert len(d_rows) == 11
