"""Trace files, re-certification and the command-line front end.

One small evolution run is shared module-wide; everything here audits
its serialized forms, so the tests double as a check that a rerun of the
same scenario is reproducible down to the last byte.
"""

import dataclasses
import json

import numpy as np
import pytest

from smasim import cli
from smasim.config import ScenarioConfig
from smasim.errors import TraceError
from smasim.evolution import EvolutionTrace, run_evolution
from smasim.fields import read_field
from smasim.trace import (certify_records, certify_trace, read_trace,
                          write_state_snapshots, write_summary_csv,
                          write_trace)

DOC = {
    "schema_version": 1,
    "label": "unit",
    "seed": 5,
    "grid": {"shape": [4, 4, 4]},
    "material": {"martensite_depth": -0.02},
    "loading": {
        "body_force": [0.0, 0.0, -0.04],
        "body_profile": {"kind": "ramp", "horizon": 1.0},
        "dirichlet_faces": ["z0", "z1"],
        "dirichlet_matrix": [[0.0, 0.0, 0.08], [0.0] * 3, [0.0] * 3],
        "dirichlet_profile": {"kind": "ramp", "horizon": 1.0},
    },
    "time": {"steps": 2},
    "solver": {"gradient_tolerance": 1e-4, "max_iterations": 200,
               "restarts": 0},
    "certificates": {"injectivity_stride": 1, "voxels_per_cell": 3},
}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    cfg = ScenarioConfig.from_dict(DOC)
    trace = run_evolution(cfg.to_scenario())
    path = tmp_path_factory.mktemp("trace") / "run.jsonl"
    write_trace(trace, path, config=cfg)
    return cfg, trace, path


def test_trace_round_trips_records_exactly(run):
    cfg, trace, path = run
    tf = read_trace(path)
    assert tf.header["steps"] == 2 and tf.label == "unit"
    assert ScenarioConfig.from_dict(tf.header["config"]) == cfg
    for a, b in zip(trace.records, tf.records):
        assert dataclasses.asdict(a) == dataclasses.asdict(b)


def test_rerun_is_byte_identical(run, tmp_path):
    cfg, _, path = run
    again = run_evolution(cfg.to_scenario())
    other = tmp_path / "again.jsonl"
    write_trace(again, other, config=cfg)
    assert other.read_bytes() == path.read_bytes()


def test_certify_passes_on_honest_trace(run):
    _, _, path = run
    tf, report = certify_trace(path)
    assert report.ok, "\n".join(report.lines())
    assert report.checks > 20
    # unconverged steps are reported but are not failures
    assert all(k in range(0, 3) for k in report.unconverged_steps)


def test_certify_catches_tampered_numbers(run):
    _, trace, _ = run
    records = [dataclasses.replace(r) for r in trace.records]
    records[1].min_det = -0.25
    records[2].dissipation_increment = -1e-3
    report = certify_records(records)
    assert not report.ok
    text = "\n".join(report.failures)
    assert "min nodal determinant" in text
    assert "negative dissipation" in text


def test_certify_catches_broken_bracket_and_telescoping(run):
    _, trace, _ = run
    records = [dataclasses.replace(r) for r in trace.records]
    two = records[1].two_sided
    records[1].two_sided = dataclasses.replace(
        two, middle=two.lower_bound - 10 * two.tolerance)
    records[2].balance_cumulative += 1e-6
    report = certify_records(records)
    text = "\n".join(report.failures)
    assert "lower energy bound" in text
    assert "telescope" in text


def test_read_trace_rejects_corruption(run, tmp_path):
    _, _, path = run
    lines = path.read_text().splitlines()

    clipped = tmp_path / "clipped.jsonl"
    clipped.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(TraceError, match="promises"):
        read_trace(clipped)

    garbled = tmp_path / "garbled.jsonl"
    garbled.write_text("\n".join(lines[:2] + ["{not json"] + lines[3:]))
    with pytest.raises(TraceError, match="not valid JSON"):
        read_trace(garbled)

    headerless = tmp_path / "headerless.jsonl"
    headerless.write_text("\n".join(lines[1:]))
    with pytest.raises(TraceError, match="header"):
        read_trace(headerless)

    shuffled = tmp_path / "shuffled.jsonl"
    shuffled.write_text("\n".join([lines[0], lines[2], lines[1], lines[3]]))
    with pytest.raises(TraceError, match="out of order"):
        read_trace(shuffled)

    dropped = tmp_path / "dropped.jsonl"
    record = json.loads(lines[1])
    del record["min_det"]
    dropped.write_text("\n".join([lines[0], json.dumps(record)] + lines[2:]))
    with pytest.raises(TraceError, match="malformed step record"):
        read_trace(dropped)

    with pytest.raises(TraceError, match="empty"):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        read_trace(empty)


def test_summary_csv_shape_and_values(run, tmp_path):
    _, trace, _ = run
    path = tmp_path / "summary.csv"
    write_summary_csv(trace.records, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("step,time,energy_well")
    assert len(lines) == 1 + len(trace.records)
    row1 = lines[2].split(",")
    assert float(row1[1]) == trace.records[1].time  # repr round-trip
    # the initial record has no bracket, so its slack cells are empty
    header = lines[0].split(",")
    row0 = lines[1].split(",")
    assert row0[header.index("lower_slack")] == ""
    assert row0[header.index("converged")] == "1"


def test_state_snapshots_round_trip(run, tmp_path):
    cfg, trace, _ = run
    written = write_state_snapshots(trace, cfg.build_grid(), tmp_path / "s",
                                    stride=2)
    names = sorted(p.name for p in written)
    assert names == ["deformation_0000.field", "deformation_0002.field",
                     "fractions_0000.field", "fractions_0002.field"]
    y, grid = read_field(tmp_path / "s" / "deformation_0002.field")
    np.testing.assert_array_equal(y, trace.states[2][0])
    assert grid == cfg.build_grid()
    bare = EvolutionTrace(label="", time_grid=trace.time_grid,
                          records=trace.records, states=[])
    with pytest.raises(TraceError):
        write_state_snapshots(bare, cfg.build_grid(), tmp_path / "t")
    with pytest.raises(ValueError):
        write_state_snapshots(trace, cfg.build_grid(), tmp_path / "u",
                              stride=0)


# ---- command line -------------------------------------------------------------


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "unit.yaml"
    ScenarioConfig.from_dict(DOC).save(path)
    return path


def test_cli_validate_config(config_file, capsys, tmp_path):
    assert cli.main(["validate-config", str(config_file)]) == 0
    assert "configuration valid" in capsys.readouterr().out

    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\ngrid: {shape: [4, 4]}\n")
    assert cli.main(["validate-config", str(bad)]) == 1
    assert "grid.shape" in capsys.readouterr().err

    assert cli.main(["validate-config", str(tmp_path / "niente.yaml")]) == 2


def test_cli_run_certify_cycle(config_file, capsys, tmp_path):
    trace_path = tmp_path / "run.jsonl"
    code = cli.main(["run", str(config_file), "--trace", str(trace_path),
                     "--csv", str(tmp_path / "run.csv"), "--quiet"])
    out = capsys.readouterr().out
    assert code == 0
    assert "failures: 0" in out
    assert trace_path.exists()

    assert cli.main(["certify", str(trace_path)]) == 0
    assert "failures: 0" in capsys.readouterr().out

    # flip one stored determinant and the audit must fail
    lines = trace_path.read_text().splitlines()
    record = json.loads(lines[2])
    record["min_det"] = -record["min_det"]
    lines[2] = json.dumps(record, sort_keys=True)
    trace_path.write_text("\n".join(lines))
    assert cli.main(["certify", str(trace_path)]) == 1
    assert "min nodal determinant" in capsys.readouterr().out

    trace_path.write_text("\n".join(lines[:-1]))
    assert cli.main(["certify", str(trace_path)]) == 1
    assert "rejected" in capsys.readouterr().err

    assert cli.main(["certify", str(tmp_path / "missing.jsonl")]) == 2


def test_cli_run_rejects_unusable_config(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 3\n")
    assert cli.main(["run", str(bad)]) == 2
    assert "schema_version" in capsys.readouterr().err


def test_cli_oracle_passes(capsys):
    code = cli.main(["oracle", "--identity-points", "20000",
                     "--epsilon", "0.3", "--grids", "8,16,24"])
    out = capsys.readouterr().out
    assert code == 0
    assert "oracle verdict: pass" in out
    assert "MISMATCH" not in out and "LOW" not in out


def test_cli_usage_errors_exit_with_two():
    with pytest.raises(SystemExit) as err:
        cli.main(["oracle", "--grids", "8"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        cli.main(["no-such-command"])
    assert err.value.code == 2
