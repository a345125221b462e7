"""File formats: matrix CSV, trace JSON, reports, scans, and config files.

Matrix CSV: header row of 0-based flat column indices, one data row per
machine, empty fields for unobserved entries. Values are written in
shortest round-trip decimal form so files are byte-stable and reload to
the exact same floats.

Config files: flat "key = value" lines, '#' comments, blank lines
ignored. Grid axes use numbered keys (axis1.name, axis1.unit,
axis1.values with comma-separated values, then axis2.*, ...).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .campaign import CampaignTrace
from .errors import ValidationError
from .grid import ParameterAxis, ParameterGrid, build_grid
from .matrix import MaskedMatrix
from .utility import ScanProfile, assemble_fleet_matrix, build_measurements

SCAN_HEADER = ("machine_id", "condition_index", "surface_id", "sample_ordinal", "displacement_mm")
TIMES_HEADER = ("machine_id", "condition_index", "seconds")


def _fmt(value: float) -> str:
    return repr(float(value))


def save_matrix(m: MaskedMatrix, path) -> None:
    """Write a masked matrix as CSV with empty fields for missing entries."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([str(j) for j in range(m.cols)])
        for k in range(m.rows):
            writer.writerow(
                [_fmt(m.values[k, j]) if m.mask[k, j] else "" for j in range(m.cols)]
            )


def load_matrix(path) -> MaskedMatrix:
    """Inverse of save_matrix; validates the header and rejects ragged rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty matrix file")
    header = rows[0]
    try:
        indices = [int(c) for c in header]
    except ValueError as exc:
        raise ValidationError(f"{path}: header must hold flat indices") from exc
    if indices != list(range(len(indices))) or not indices:
        raise ValidationError(f"{path}: header must be 0..{max(len(indices) - 1, 0)}")
    if len(rows) == 1:
        raise ValidationError(f"{path}: no machine rows")
    cols = len(indices)
    values = np.full((len(rows) - 1, cols), np.nan)
    mask = np.zeros((len(rows) - 1, cols), dtype=bool)
    for k, row in enumerate(rows[1:]):
        if len(row) != cols:
            raise ValidationError(
                f"{path}: row {k + 1} has {len(row)} fields, expected {cols}"
            )
        for j, cell in enumerate(row):
            if cell == "":
                continue
            try:
                values[k, j] = float(cell)
            except ValueError as exc:
                raise ValidationError(
                    f"{path}: row {k + 1} column {j}: not a number: {cell!r}"
                ) from exc
            mask[k, j] = True
    return MaskedMatrix(values, mask)


def save_trace(trace: CampaignTrace, path) -> None:
    with open(path, "w") as fh:
        json.dump(trace.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trace(path) -> CampaignTrace:
    with open(path) as fh:
        data = json.load(fh)
    try:
        return CampaignTrace.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed trace: {exc}") from exc


def save_report_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_report_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)


def parse_config_file(path) -> dict:
    """Read a flat key = value file into a string-to-string dict."""
    options = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        options[key.strip()] = value.strip()
    return options


def axes_from_config(options: dict):
    """Build grid axes from numbered axisN.* keys; None when absent."""
    axes = []
    n = 1
    while f"axis{n}.values" in options:
        values = [float(v) for v in options[f"axis{n}.values"].split(",") if v.strip()]
        axes.append(
            ParameterAxis(
                name=options.get(f"axis{n}.name", f"axis{n}"),
                unit=options.get(f"axis{n}.unit", ""),
                values=tuple(values),
            )
        )
        n += 1
    return axes or None


def _read_csv_with_header(path, expected) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != expected:
        raise ValidationError(f"{path}: header must be {','.join(expected)}")
    return rows[1:]


def read_scans_csv(path) -> dict:
    """Scan samples keyed by (machine, condition, surface).

    One row per sample; samples are ordered by their sample_ordinal.
    """
    raw = {}
    for row in _read_csv_with_header(path, SCAN_HEADER):
        if len(row) != len(SCAN_HEADER):
            raise ValidationError(f"{path}: ragged scan row {row!r}")
        machine, condition = int(row[0]), int(row[1])
        surface = row[2].strip()
        ordinal, value = int(row[3]), float(row[4])
        raw.setdefault((machine, condition, surface), []).append((ordinal, value))
    profiles = {}
    for (machine, condition, surface), samples in raw.items():
        samples.sort()
        profiles[(machine, condition, surface)] = ScanProfile(
            samples=np.asarray([v for _, v in samples]),
            surface_id=surface,
            machine_id=machine,
            condition_index=condition,
        )
    return profiles


def read_times_csv(path) -> dict:
    """Print durations keyed by (machine, condition)."""
    times = {}
    for row in _read_csv_with_header(path, TIMES_HEADER):
        if len(row) != len(TIMES_HEADER):
            raise ValidationError(f"{path}: ragged time row {row!r}")
        key = (int(row[0]), int(row[1]))
        if key in times:
            raise ValidationError(f"{path}: duplicate time for machine/condition {key}")
        times[key] = float(row[2])
    return times


def build_utility_from_files(
    scans: dict, times: dict, grid: ParameterGrid, constant_weight: float = None
):
    """Assemble the fleet utility matrix from parsed scans and times.

    Every (machine, condition) that appears anywhere must come with both
    surface scans and a print time; offenders are listed in the error.

    Returns the utility matrix plus the normalized quality and time
    matrices (all sharing one mask).
    """
    from .utility import combine_surfaces, normalize_max, surface_rms

    cells = {(m, c) for (m, c, _) in scans} | set(times)
    if not cells:
        raise ValidationError("no measurements found")
    problems = []
    for machine, condition in sorted(cells):
        missing = [
            surface
            for surface in ("x", "y")
            if (machine, condition, surface) not in scans
        ]
        if missing:
            problems.append(
                f"machine {machine} condition {condition}: no {'/'.join(missing)} scan"
            )
        if (machine, condition) not in times:
            problems.append(f"machine {machine} condition {condition}: no print time")
    if problems:
        raise ValidationError("incomplete measurements: " + "; ".join(problems))
    machines = max(m for m, _ in cells) + 1
    cols = grid.flat_size
    bad = [(m, c) for m, c in cells if not 0 <= c < cols]
    if bad:
        raise ValidationError(f"condition indices outside the grid: {bad}")
    quality = np.full((machines, cols), np.nan)
    duration = np.full((machines, cols), np.nan)
    for machine, condition in cells:
        qx = surface_rms(scans[(machine, condition, "x")])
        qy = surface_rms(scans[(machine, condition, "y")])
        quality[machine, condition] = combine_surfaces(qx, qy)
        duration[machine, condition] = times[(machine, condition)]
    measurements = [
        build_measurements(k, quality[k], duration[k], constant_weight=constant_weight)
        for k in range(machines)
    ]
    fleet = assemble_fleet_matrix(measurements)
    quality_norm = np.vstack([m.quality_norm for m in measurements])
    time_norm = np.vstack([m.time_norm for m in measurements])
    return (
        fleet,
        MaskedMatrix(quality_norm, fleet.mask.copy()),
        MaskedMatrix(time_norm, fleet.mask.copy()),
    )


def grid_from_options(options: dict, fallback: ParameterGrid = None) -> ParameterGrid:
    axes = axes_from_config(options) if options else None
    if axes is not None:
        return build_grid(axes)
    return fallback
