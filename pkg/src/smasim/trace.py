"""Run traces on disk: JSONL step records, summary CSV, re-certification.

A trace file is one JSON object per line: a header identifying the format
and the scenario, then one record per time step in order.  Keys are
sorted and floats go through Python's shortest round-trip repr, so a
rerun of the same scenario produces a byte-identical file.  certify
re-evaluates every certificate inequality from the stored numbers alone,
which is what makes the trace auditable after the fact: the verdicts are
recomputed, not trusted.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .energy import EnergyBreakdown
from .errors import TraceError
from .evolution import StepRecord, TwoSidedReport
from .fields import write_field

TRACE_KIND = "smasim-trace"
TRACE_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_trace(trace, path, config=None):
    """Write an evolution trace as JSONL; optionally embed its config."""
    header = {
        "kind": TRACE_KIND,
        "version": TRACE_VERSION,
        "label": trace.label,
        "horizon": trace.time_grid.horizon,
        "steps": trace.time_grid.steps,
        "config": None if config is None else config.to_dict(),
    }
    lines = [json.dumps(header, sort_keys=True, default=_jsonable)]
    lines.extend(json.dumps(asdict(rec), sort_keys=True, default=_jsonable)
                 for rec in trace.records)
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class TraceFile:
    header: dict
    records: list

    @property
    def label(self):
        return self.header.get("label", "")


def _record_from_dict(data, lineno):
    try:
        energy = EnergyBreakdown(**data.pop("energy"))
        two = data.pop("two_sided")
        if two is not None:
            two = TwoSidedReport(**two)
        return StepRecord(energy=energy, two_sided=two, **data)
    except (KeyError, TypeError) as exc:
        raise TraceError(f"line {lineno}: malformed step record: {exc}") \
            from exc


def read_trace(path):
    """Parse and structurally validate a JSONL trace file."""
    text = Path(path).read_text()
    records = []
    header = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"line {lineno}: not valid JSON: {exc}") from exc
        if header is None:
            if (not isinstance(data, dict)
                    or data.get("kind") != TRACE_KIND
                    or data.get("version") != TRACE_VERSION):
                raise TraceError(
                    f"{path}: missing or unsupported trace header")
            header = data
            continue
        records.append(_record_from_dict(data, lineno))
    if header is None:
        raise TraceError(f"{path}: empty file")
    for k, rec in enumerate(records):
        if rec.index != k:
            raise TraceError(
                f"step records out of order: found index {rec.index} "
                f"at position {k}")
    if len(records) != header["steps"] + 1:
        raise TraceError(
            f"header promises {header['steps'] + 1} records, "
            f"file has {len(records)}")
    return TraceFile(header=header, records=records)


# ---- summary CSV -------------------------------------------------------------

_CSV_COLUMNS = (
    "step", "time", "energy_well", "energy_regularizer", "energy_load",
    "energy_total", "dissipation_increment", "dissipation_cumulative",
    "objective", "gradient_norm", "iterations", "converged", "min_det",
    "stability_margin", "lower_slack", "upper_slack", "balance_residual",
    "balance_cumulative", "ciarlet_necas_residual", "ciarlet_necas_bound",
    "overlap_count", "distortion",
)


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return ""
    if isinstance(value, bool):
        return int(value)
    return repr(value) if isinstance(value, float) else value


def write_summary_csv(records, path):
    """One row per step with the quantities a plot or audit needs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for rec in records:
            two = rec.two_sided
            writer.writerow([_cell(v) for v in (
                rec.index, rec.time, rec.energy.well, rec.energy.regularizer,
                rec.energy.load, rec.energy.total, rec.dissipation_increment,
                rec.dissipation_cumulative, rec.objective, rec.gradient_norm,
                rec.iterations, rec.converged, rec.min_det,
                rec.stability_margin,
                None if two is None else two.lower_slack,
                None if two is None else two.upper_slack,
                rec.balance_residual, rec.balance_cumulative,
                rec.ciarlet_necas_residual, rec.ciarlet_necas_bound,
                rec.overlap_count, rec.distortion,
            )])


def write_state_snapshots(trace, grid, directory, stride=1):
    """Dump deformation and volume-fraction fields every stride steps."""
    if not trace.states:
        raise TraceError("trace carries no states to snapshot")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    last = len(trace.states) - 1
    written = []
    for k, (y, z) in enumerate(trace.states):
        if k % stride and k != last:
            continue
        ypath = directory / f"deformation_{k:04d}.field"
        zpath = directory / f"fractions_{k:04d}.field"
        write_field(ypath, y, grid)
        write_field(zpath, z, grid)
        written.extend([ypath, zpath])
    return written


# ---- re-certification --------------------------------------------------------

@dataclass(frozen=True)
class CertificateReport:
    """Outcome of re-checking every stored certificate inequality."""

    checks: int
    failures: tuple
    unconverged_steps: tuple

    @property
    def ok(self):
        return not self.failures

    def lines(self):
        out = [f"certificate checks: {self.checks}, "
               f"failures: {len(self.failures)}"]
        out.extend(f"  FAIL {f}" for f in self.failures)
        if self.unconverged_steps:
            out.append(
                "  note: solver hit its iteration cap on steps "
                f"{list(self.unconverged_steps)}; the certificates above "
                "use the gradient level actually reached")
        return out


def _margin_tolerance(rec, records):
    """Stability slack allowed at this step: the bracket tolerance there.

    The initial record has no bracket of its own, so it borrows the first
    step's (same gradient scale); a bare single-record trace falls back
    to an absolute 1e-10.
    """
    if rec.two_sided is not None:
        return rec.two_sided.tolerance
    if len(records) > 1 and records[1].two_sided is not None:
        return records[1].two_sided.tolerance
    return 1e-10


def certify_records(records, telescope_tolerance=1e-10):
    """Re-evaluate the per-step certificates from stored numbers.

    Checks: orientation (min nodal determinant positive), dissipation
    increments nonnegative and correctly accumulated, both sides of the
    energy-increment bracket, stability margins not below the bracket
    tolerance, the energy-balance telescoping identity, uniform step
    times, and zero cell-image overlaps wherever injectivity ran.
    """
    failures = []
    checks = 0
    if not records:
        return CertificateReport(0, ("trace has no records",), ())
    times = [r.time for r in records]
    if len(records) > 1:
        dt = (times[-1] - times[0]) / (len(records) - 1)
        checks += 1
        if any(abs(t - (times[0] + k * dt)) > 1e-12 * max(1.0, abs(t))
               for k, t in enumerate(times)):
            failures.append("time grid is not uniform")

    diss = 0.0
    balance = 0.0
    for rec in records:
        tag = f"step {rec.index}"
        checks += 1
        if not rec.min_det > 0.0:
            failures.append(f"{tag}: min nodal determinant {rec.min_det}")
        two = rec.two_sided
        if rec.index > 0:
            checks += 3
            if two is None:
                failures.append(f"{tag}: missing two-sided bracket")
            else:
                if not two.lower_ok:
                    failures.append(
                        f"{tag}: lower energy bound violated by "
                        f"{-two.lower_slack:.3e} "
                        f"(tolerance {two.tolerance:.3e})")
                if not two.upper_ok:
                    failures.append(
                        f"{tag}: upper energy bound violated by "
                        f"{-two.upper_slack:.3e} "
                        f"(tolerance {two.tolerance:.3e})")
                if two.lower_margin < -two.tolerance:
                    failures.append(
                        f"{tag}: previous state beaten by back-transported "
                        f"competitor by {-two.lower_margin:.3e}")
            checks += 2
            if rec.dissipation_increment < 0.0:
                failures.append(f"{tag}: negative dissipation increment "
                                f"{rec.dissipation_increment:.3e}")
            diss += rec.dissipation_increment
            if abs(rec.dissipation_cumulative - diss) > 1e-12 * max(1.0, diss):
                failures.append(f"{tag}: cumulative dissipation mismatch")
            checks += 1
            balance += rec.balance_residual
            if abs(rec.balance_cumulative - balance) > telescope_tolerance:
                failures.append(
                    f"{tag}: balance residual does not telescope "
                    f"({rec.balance_cumulative} vs {balance})")
        if not math.isnan(rec.stability_margin):
            checks += 1
            margin_tol = _margin_tolerance(rec, records)
            if rec.stability_margin < -margin_tol:
                failures.append(
                    f"{tag}: sampled stability margin "
                    f"{rec.stability_margin:.3e} below -{margin_tol:.3e} "
                    f"(competitor {rec.stability_competitor})")
        if rec.overlap_count >= 0:
            checks += 1
            if rec.overlap_count > 0:
                failures.append(
                    f"{tag}: {rec.overlap_count} overlapping cell images")
        if not math.isnan(rec.ciarlet_necas_residual):
            checks += 1
            if rec.ciarlet_necas_residual > rec.ciarlet_necas_bound:
                failures.append(
                    f"{tag}: volume comparison residual "
                    f"{rec.ciarlet_necas_residual:.3e} exceeds its "
                    f"resolution bound {rec.ciarlet_necas_bound:.3e}")

    unconverged = tuple(r.index for r in records if not r.converged)
    return CertificateReport(checks=checks, failures=tuple(failures),
                             unconverged_steps=unconverged)


def certify_trace(path, telescope_tolerance=1e-10):
    """Read a trace file and re-check it; returns (TraceFile, report)."""
    tf = read_trace(path)
    return tf, certify_records(tf.records, telescope_tolerance)
