"""
Report and plot-data files.

JSON files carry ``schema_version``; CSV files have a header row, ``.`` decimals and LF line
endings. Plotting itself is left to the reader of these files.
"""
import csv
import math
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from convex_cam.batch import SCHEMA_VERSION, RunEntry, RunReport
from convex_cam.exceptions import catch_io_error
from convex_cam.logging import get_logger
from convex_cam.schema import serialize_object
from convex_cam.scvx import SweepPoint
from convex_cam.studies import StudyPoint

__all__ = [
    "ALL_FORMATS",
    "contour_points",
    "emit_reports",
    "histogram_rows",
    "write_csv",
    "write_study",
    "write_sweep",
]

logger = get_logger(__name__)

ALL_FORMATS = frozenset({"json", "csv"})
CONTOUR_POINTS = 181
HISTOGRAM_BINS = 20
SUMMARY_HEADER = [
    "id",
    "status",
    "constraint",
    "branch",
    "total_dv_mps",
    "active_impulses",
    "major_iterations",
    "achieved_d2",
    "achieved_pc_max",
    "miss_distance_km",
    "tca_shift_s",
    "verified",
    "elapsed_s",
]
TRACE_HEADER = ["major", "minor", "xi_km", "zeta_km", "z_xi_km", "z_zeta_km", "total_dv_mps", "tca_shift_s"]


def _write_text(path: Path, text: str) -> Path:
    with catch_io_error(f"cannot write {path}"):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    with catch_io_error(f"cannot write {path}"):
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    return path


def _safe_name(event_id: str) -> str:
    return "".join(char if char.isalnum() or char in "-_." else "_" for char in event_id)


def contour_points(C_eff: Any, d2_bar: float, count: int = CONTOUR_POINTS) -> np.ndarray:
    """Closed polyline of the keep-out ellipse ``zᵀ C_eff⁻¹ z = d2_bar`` [km]."""
    lower = np.linalg.cholesky(np.asarray(C_eff, dtype=float))
    angles = np.linspace(0.0, 2.0 * math.pi, count)
    return math.sqrt(d2_bar) * (lower @ np.vstack([np.cos(angles), np.sin(angles)])).T  # type: ignore[no-any-return]


def histogram_rows(name: str, values: Sequence[float], bins: int = HISTOGRAM_BINS) -> list[list[Any]]:
    """Histogram of the values between their 5th and 95th percentiles."""
    data = np.asarray([value for value in values if value is not None and math.isfinite(value)], dtype=float)
    if data.size == 0:
        return []
    low, high = np.percentile(data, [5.0, 95.0])
    clipped = data[(data >= low) & (data <= high)]
    if high <= low:
        return [[name, float(low), float(high), int(clipped.size)]]
    counts, edges = np.histogram(clipped, bins=bins, range=(low, high))
    return [[name, float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(counts.size)]


def _entry_files(entry: RunEntry, out_dir: Path) -> list[Path]:
    stem = _safe_name(entry.id)
    written = [
        write_csv(
            out_dir / f"impulses_{stem}.csv",
            ["node", "time_to_ca_s", "r_mps", "t_mps", "n_mps", "x_mps", "y_mps", "z_mps", "magnitude_mps"],
            (
                [row.node, row.time_to_ca_s, *row.rtn_mps, *row.eci_mps, row.magnitude_mps]
                for row in entry.impulses
            ),
        ),
        write_csv(
            out_dir / f"trace_{stem}.csv",
            TRACE_HEADER,
            ([getattr(row, name) for name in TRACE_HEADER] for row in entry.trace),
        ),
    ]
    contour_rows = []
    for zone in entry.keep_out:
        for index, (xi, zeta) in enumerate(contour_points(zone.C_eff, zone.d2_bar)):
            contour_rows.append([zone.major, index, float(xi), float(zeta)])
    written.append(write_csv(out_dir / f"keep_out_{stem}.csv", ["major", "point", "xi_km", "zeta_km"], contour_rows))
    return written


def emit_reports(
    report: RunReport, out_dir: Union[str, Path], formats: Optional[Iterable[str]] = None
) -> list[Path]:
    """
    Writes the run report.

    ``json``: ``report.json`` (everything) and ``aggregates.json`` (no timing fields).
    ``csv``: ``summary.csv``, per-event impulse schedules, b-plane traces and keep-out contours,
    and ``histograms.csv``.

    Raises
    ------
    ReportError
        A file could not be written.
    """
    selected = set(formats or ALL_FORMATS)
    unknown = selected - ALL_FORMATS
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    out_dir = Path(out_dir)
    written: list[Path] = []
    if "json" in selected:
        written.append(_write_text(out_dir / "report.json", serialize_object(report.dict(), indent=True) + "\n"))
        aggregates = {"schema_version": SCHEMA_VERSION, **report.aggregates.dict()}
        written.append(_write_text(out_dir / "aggregates.json", serialize_object(aggregates, indent=True) + "\n"))
    if "csv" in selected:
        written.append(
            write_csv(
                out_dir / "summary.csv",
                SUMMARY_HEADER,
                (
                    [
                        entry.id,
                        entry.status,
                        entry.constraint,
                        entry.branch or "",
                        entry.total_dv_mps,
                        entry.active_impulses,
                        entry.major_iterations,
                        entry.achieved.d2 if entry.achieved else "",
                        entry.achieved.pc_max if entry.achieved and entry.achieved.pc_max is not None else "",
                        entry.achieved.miss_distance_km if entry.achieved else "",
                        entry.achieved.tca_shift_s if entry.achieved else "",
                        entry.verified,
                        entry.elapsed_s,
                    ]
                    for entry in report.entries
                ),
            )
        )
        for entry in report.entries:
            if entry.impulses:
                written.extend(_entry_files(entry, out_dir))
        converged = [entry for entry in report.entries if entry.status == "Converged"]
        histogram = (
            histogram_rows("total_dv_mps", [entry.total_dv_mps or 0.0 for entry in converged])
            + histogram_rows("active_impulses", [entry.active_impulses for entry in converged])
            + histogram_rows("major_iterations", [entry.major_iterations for entry in converged])
        )
        histogram_header = ["quantity", "bin_left", "bin_right", "count"]
        written.append(write_csv(out_dir / "histograms.csv", histogram_header, histogram))
    logger.info("wrote %d report files to %s", len(written), out_dir)
    return written


def write_study(points: Sequence[StudyPoint], out_dir: Union[str, Path], name: str) -> list[Path]:
    out_dir = Path(out_dir)
    payload = {"schema_version": SCHEMA_VERSION, "study": name, "points": [point.dict() for point in points]}
    return [
        _write_text(out_dir / f"{name}.json", serialize_object(payload, indent=True) + "\n"),
        write_csv(
            out_dir / f"{name}.csv",
            ["label", "value", "status", "total_dv_mps", "active_impulses", "major_iterations", "verified"],
            (
                [p.label, p.value, p.status, p.total_dv_mps, p.active_impulses, p.major_iterations, p.verified]
                for p in points
            ),
        ),
    ]


def write_sweep(points: Sequence[SweepPoint], minima: Sequence[int], out_dir: Union[str, Path]) -> list[Path]:
    out_dir = Path(out_dir)
    rows = [
        [
            point.index,
            point.angle,
            float(point.boundary_point[0]),
            float(point.boundary_point[1]),
            point.total_dv * 1e3 if math.isfinite(point.total_dv) else "",
            point.active_count,
            point.status.value,
            point.index in minima,
        ]
        for point in points
    ]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "points": len(points),
        "local_minima": [
            {"index": points[i].index, "angle": points[i].angle, "total_dv_mps": points[i].total_dv * 1e3}
            for i in minima
        ],
    }
    return [
        write_csv(
            out_dir / "boundary_sweep.csv",
            ["index", "angle_rad", "xi_km", "zeta_km", "total_dv_mps", "active_impulses", "status", "local_minimum"],
            rows,
        ),
        _write_text(out_dir / "boundary_sweep.json", serialize_object(payload, indent=True) + "\n"),
    ]
