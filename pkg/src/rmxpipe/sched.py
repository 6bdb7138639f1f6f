"""Work partitioning, worker fan-out and scaling reports.

Speed-up factors are relative to the *smallest* measured worker count,
not to a serial run, the same convention as a strong-scaling table whose
first row starts at 1024 cores.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import EnergyMesh, InvalidInput, RmxError, CaseDefinition


class ScalingMismatch(RmxError):
    """Spectra differed between worker counts; timings are not reported."""


def enumerate_blocks(nchan: int) -> list[tuple[int, int]]:
    """Upper-triangle channel pairs (i <= j), row-major: nchan*(nchan+1)/2 blocks."""
    if nchan < 1:
        raise InvalidInput("nchan must be >= 1")
    return [(i, j) for i in range(nchan) for j in range(i, nchan)]


def partition_energies(n_points: int, n_workers: int) -> list[range]:
    """Contiguous balanced ranges; the first ``n_points % n_workers`` get one extra."""
    if n_workers < 1:
        raise InvalidInput("n_workers must be >= 1")
    if n_points < 0:
        raise InvalidInput("n_points must be >= 0")
    base, extra = divmod(n_points, n_workers)
    ranges, lo = [], 0
    for r in range(n_workers):
        hi = lo + base + (1 if r < extra else 0)
        ranges.append(range(lo, hi))
        lo = hi
    return ranges


def map_ranges(func: Callable, ranges: Sequence[range], args: tuple, n_workers: int) -> list:
    """Apply ``func(lo, hi, *args)`` to every range; results come back in range order.

    With more than one worker the ranges run in separate processes, since
    the per-energy kernels are too small to escape the GIL.
    """
    if n_workers <= 1 or len(ranges) <= 1:
        return [func(r.start, r.stop, *args) for r in ranges]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(func, r.start, r.stop, *args) for r in ranges]
        return [f.result() for f in futures]


# -- timing reports -----------------------------------------------------------


@dataclass(frozen=True)
class TimingRow:
    worker_count: int
    wall_seconds: float
    speedup: float
    core_hours: float


@dataclass(frozen=True)
class TimingReport:
    rows: tuple[TimingRow, ...]

    @classmethod
    def from_timings(cls, worker_counts: Sequence[int], wall_seconds: Sequence[float]) -> "TimingReport":
        if len(worker_counts) != len(wall_seconds) or not worker_counts:
            raise InvalidInput("need one wall time per worker count")
        if any(c < 1 for c in worker_counts):
            raise InvalidInput("worker counts must be positive")
        pairs = sorted(zip(worker_counts, wall_seconds))
        base = pairs[0][1]
        rows = tuple(
            TimingRow(
                worker_count=int(c),
                wall_seconds=float(t),
                speedup=1.0 if i == 0 else base / t,
                core_hours=c * t / 3600.0,
            )
            for i, (c, t) in enumerate(pairs)
        )
        return cls(rows)

    @property
    def worker_counts(self) -> list[int]:
        return [r.worker_count for r in self.rows]


_COLUMNS = ("CPU cores", "Absolute timing (s)", "Speed Up Factor", "Total Core hours")
_CSV_COLUMNS = ("workers", "wall_seconds", "speedup", "core_hours")


def render_report(report: TimingReport, fmt: str = "text-table") -> bytes:
    if not report.rows:
        raise InvalidInput("empty report")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for r in report.rows:
            writer.writerow(
                [r.worker_count, f"{r.wall_seconds:.4f}", f"{r.speedup:.4f}", f"{r.core_hours:.4f}"]
            )
        return buf.getvalue().encode()
    if fmt in ("text-table", "text"):
        widths = [max(len(c), 12) for c in _COLUMNS]
        lines = ["  ".join(c.rjust(w) for c, w in zip(_COLUMNS, widths))]
        lines.append("  ".join("-" * w for w in widths))
        for r in report.rows:
            cells = (
                str(r.worker_count),
                f"{r.wall_seconds:.4f}",
                f"{r.speedup:.4f}",
                f"{r.core_hours:.4f}",
            )
            lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
        return ("\n".join(lines) + "\n").encode()
    raise InvalidInput(f"unknown report format {fmt!r}")


def parse_report_csv(data: bytes | str) -> TimingReport:
    text = data.decode() if isinstance(data, bytes) else data
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise InvalidInput("report CSV has no rows")
    return TimingReport(
        tuple(
            TimingRow(
                int(r["workers"]),
                float(r["wall_seconds"]),
                float(r["speedup"]),
                float(r["core_hours"]),
            )
            for r in rows
        )
    )


def run_scaling_bench(
    case: CaseDefinition,
    mesh: EnergyMesh,
    worker_counts: Sequence[int],
    variant="gemm",
    repeats: int = 3,
) -> TimingReport:
    """Time ``sweep_response`` at each worker count (warm-up + median of ``repeats``).

    Raises :class:`ScalingMismatch` if any worker count produces a spectrum
    that is not bitwise identical to the first.
    """
    from .eigen import solve_case
    from .spectrum import sweep_response

    counts = list(worker_counts)
    if not counts or counts != sorted(counts) or counts[0] < 1:
        raise InvalidInput("worker_counts must be ascending positive integers")
    es, amps = solve_case(case)
    reference = None
    medians = []
    for n in counts:
        spec = sweep_response(amps, es.eigenvalues, mesh, variant, n_workers=n)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            spec = sweep_response(amps, es.eigenvalues, mesh, variant, n_workers=n)
            times.append(time.perf_counter() - t0)
        if reference is None:
            reference = spec.values
        elif not np.array_equal(reference, spec.values):
            raise ScalingMismatch(f"spectrum at {n} workers differs from {counts[0]} workers")
        medians.append(statistics.median(times))
    return TimingReport.from_timings(counts, medians)


def bench_read_modes(path, n_workers: int, repeats: int = 3) -> dict[str, float]:
    """Median wall time of each H-file distribution mode; data equality asserted first."""
    from .rmxio import READ_MODES, read_hfile

    results = {m: read_hfile(path, m, n_workers) for m in READ_MODES}
    first = results[READ_MODES[0]][0]
    for per_worker in results.values():
        for d in per_worker:
            if not d.bit_equal(first):
                raise ScalingMismatch("read modes disagree on H-file contents")
    timings = {}
    for mode in READ_MODES:
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            read_hfile(path, mode, n_workers)
            times.append(time.perf_counter() - t0)
        timings[mode] = statistics.median(times)
    return timings
