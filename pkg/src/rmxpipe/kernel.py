"""R-matrix formation from eigenpairs.

The pole sum ``R_ij(E) = sum_k w_ik w_jk / (E - E_k)`` is evaluated either
term by term (``naive``) or as the product ``X @ Y`` with
``X_ik = w_ik / (E - E_k)`` and ``Y = w^T`` (``gemm`` and its tiled form).
Only ``X`` depends on the energy, so ``Y`` is built once per batch.
"""

from __future__ import annotations

import csv
import io
import re
import statistics
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import POLE_GUARD, EnergyMesh, InvalidInput, PoleProximity, RMatrix, SurfaceAmplitudes
from .sched import map_ranges, partition_energies

# upper bound on elements materialized per sub-batch of the naive path
_NAIVE_BUDGET = 1 << 22
_GEMM_BATCH = 256


@dataclass(frozen=True)
class KernelVariant:
    tag: str
    tile: int | None = None

    def __post_init__(self):
        if self.tag not in ("naive", "gemm", "gemm_blocked"):
            raise InvalidInput(f"unknown kernel variant {self.tag!r}")
        if self.tag == "gemm_blocked":
            if self.tile is None or int(self.tile) < 8:
                raise InvalidInput("gemm_blocked needs tile >= 8")
        elif self.tile is not None:
            raise InvalidInput(f"variant {self.tag!r} takes no tile")

    def __str__(self):
        return self.tag if self.tile is None else f"{self.tag}({self.tile})"

    @classmethod
    def parse(cls, spec: "str | KernelVariant") -> "KernelVariant":
        """Accepts ``naive``, ``gemm``, ``gemm_blocked(16)`` or ``gemm_blocked:16``."""
        if isinstance(spec, KernelVariant):
            return spec
        m = re.fullmatch(r"\s*(\w+)\s*(?:[:(]\s*(\d+)\s*\)?)?\s*", str(spec))
        if not m:
            raise InvalidInput(f"cannot parse kernel variant {spec!r}")
        tile = int(m.group(2)) if m.group(2) else None
        return cls(m.group(1), tile)


NAIVE = KernelVariant("naive")
GEMM = KernelVariant("gemm")


def _as_arrays(w, poles) -> tuple[np.ndarray, np.ndarray]:
    wm = w.w if isinstance(w, SurfaceAmplitudes) else np.asarray(w, dtype=np.float64)
    p = np.asarray(poles, dtype=np.float64)
    if wm.ndim != 2 or p.ndim != 1 or wm.shape[1] != p.size:
        raise InvalidInput(f"amplitudes {wm.shape} do not match {p.size} poles")
    return wm, p


def check_pole_guard(energies: np.ndarray, poles: np.ndarray, offset: int = 0) -> None:
    """Raise :class:`PoleProximity` for the first energy within the guard of a pole."""
    if poles.size == 0 or energies.size == 0:
        return
    order = np.argsort(poles, kind="stable")
    sp = poles[order]
    pos = np.searchsorted(sp, energies)
    left = np.clip(pos - 1, 0, sp.size - 1)
    right = np.clip(pos, 0, sp.size - 1)
    dl = np.abs(energies - sp[left])
    dr = np.abs(energies - sp[right])
    nearest = np.where(dl <= dr, left, right)
    dist = np.minimum(dl, dr)
    bad = np.flatnonzero(dist < POLE_GUARD)
    if bad.size:
        i = int(bad[0])
        raise PoleProximity(int(order[nearest[i]]), float(dist[i]), mesh_index=offset + i)


def _naive_stack(wm: np.ndarray, poles: np.ndarray, energies: np.ndarray) -> np.ndarray:
    nchan, npole = wm.shape
    iu, ju = np.triu_indices(nchan)
    products = wm[iu] * wm[ju]  # (pairs, N)
    out = np.empty((energies.size, nchan, nchan))
    step = max(1, _NAIVE_BUDGET // max(1, products.size))
    for lo in range(0, energies.size, step):
        e = energies[lo : lo + step]
        terms = products[None, :, :] / (e[:, None, None] - poles[None, None, :])
        # cumsum accumulates strictly in ascending k
        sums = np.cumsum(terms, axis=2)[:, :, -1]
        out[lo : lo + step, iu, ju] = sums
        out[lo : lo + step, ju, iu] = sums
    return out


def _gemm_stack(wm, poles, energies, tile: int | None) -> np.ndarray:
    nchan, npole = wm.shape
    y = np.ascontiguousarray(wm.T)
    out = np.empty((energies.size, nchan, nchan))
    for lo in range(0, energies.size, _GEMM_BATCH):
        e = energies[lo : lo + _GEMM_BATCH]
        x = wm[None, :, :] / (e[:, None, None] - poles[None, None, :])
        if tile is None:
            r = x @ y
        else:
            r = np.zeros((e.size, nchan, nchan))
            for i0 in range(0, nchan, tile):
                for k0 in range(0, npole, tile):
                    r[:, i0 : i0 + tile, :] += x[:, i0 : i0 + tile, k0 : k0 + tile] @ y[k0 : k0 + tile, :]
        out[lo : lo + _GEMM_BATCH] = (r + r.transpose(0, 2, 1)) * 0.5
    return out


def rmatrix_stack(w, poles, energies, variant="gemm", check: bool = True, offset: int = 0) -> np.ndarray:
    """R-matrices at each energy as an ``(n_energies, nchan, nchan)`` array."""
    v = KernelVariant.parse(variant)
    wm, p = _as_arrays(w, poles)
    e = np.atleast_1d(np.asarray(energies, dtype=np.float64))
    if check:
        check_pole_guard(e, p, offset)
    if v.tag == "naive":
        return _naive_stack(wm, p, e)
    return _gemm_stack(wm, p, e, v.tile)


def form_rmatrix_naive(w, poles, e: float) -> RMatrix:
    return RMatrix(rmatrix_stack(w, poles, [e], NAIVE)[0], e)


def form_rmatrix_gemm(w, poles, e: float, variant="gemm") -> RMatrix:
    return RMatrix(rmatrix_stack(w, poles, [e], variant)[0], e)


def _mesh_chunk(lo, hi, wm, poles, mesh, variant):
    return rmatrix_stack(wm, poles, mesh.energies(lo, hi), variant, offset=lo)


def form_rmatrix_batch(w, poles, mesh: EnergyMesh, variant="gemm", n_workers: int = 1) -> list[RMatrix]:
    """One R-matrix per mesh point, in mesh order, independent of ``n_workers``."""
    wm, p = _as_arrays(w, poles)
    v = KernelVariant.parse(variant)
    check_pole_guard(mesh.energies(), p)
    chunks = map_ranges(_mesh_chunk, partition_energies(mesh.n_points, n_workers), (wm, p, mesh, v), n_workers)
    stack = np.concatenate(chunks)
    return [RMatrix(r, e) for r, e in zip(stack, mesh.energies())]


def relative_frobenius(a: np.ndarray, ref: np.ndarray) -> float:
    denom = np.linalg.norm(ref)
    diff = np.linalg.norm(np.asarray(a, dtype=np.float64) - ref)
    return float(diff / denom) if denom > 0 else float(diff)


# -- kernel benchmark ---------------------------------------------------------

EQUIVALENCE_TOL = 1e-12


@dataclass(frozen=True)
class KernelBenchRow:
    shape: tuple[int, int]
    variant: str
    median_seconds: float
    ratio_vs_naive: float
    flagged: bool = False


def _bench_inputs(n_channels: int, n_poles: int, seed: int):
    rng = np.random.default_rng([seed, n_channels, n_poles])
    w = rng.standard_normal((n_channels, n_poles)) / np.sqrt(n_poles)
    poles = np.sort(rng.uniform(-2.0, 8.0, n_poles))
    # evaluate midway between the two most widely separated neighbouring poles
    gaps = np.diff(poles)
    k = int(np.argmax(gaps)) if gaps.size else 0
    e = 0.5 * (poles[k] + poles[k + 1]) if gaps.size else poles[0] + 1.0
    return w, poles, float(e)


def _median_time(fn, repeats: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_kernels(
    shapes: Iterable[tuple[int, int]],
    variants: Sequence = ("naive", "gemm"),
    repeats: int = 3,
    seed: int = 0,
) -> list[KernelBenchRow]:
    """Median single-energy formation time per (shape, variant).

    Every variant is checked against the naive sum before anything is timed.
    ``ratio_vs_naive`` is variant time over naive time, so values below 1
    mean faster than the naive sum. Rows whose median is under 100 clock
    ticks are flagged as unresolved.
    """
    vs = [KernelVariant.parse(v) for v in variants]
    if repeats < 1:
        raise InvalidInput("repeats must be >= 1")
    tick = time.get_clock_info("perf_counter").resolution
    rows = []
    for n, m in shapes:
        w, poles, e = _bench_inputs(int(n), int(m), seed)
        ref = form_rmatrix_naive(w, poles, e).entries
        for v in vs:
            err = relative_frobenius(form_rmatrix_gemm(w, poles, e, v).entries, ref)
            if err > EQUIVALENCE_TOL:
                raise AssertionError(f"{v} disagrees with naive on {n}x{m}: {err:.2e}")
        t_naive = _median_time(lambda: form_rmatrix_naive(w, poles, e), repeats)
        for v in vs:
            t = t_naive if v == NAIVE else _median_time(lambda: form_rmatrix_gemm(w, poles, e, v), repeats)
            rows.append(
                KernelBenchRow((int(n), int(m)), str(v), t, t / t_naive, flagged=t < 100 * tick)
            )
    return rows


def kernel_table_csv(rows: Sequence[KernelBenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["shape", "variant", "median_seconds", "ratio_vs_naive"])
    for r in rows:
        writer.writerow(
            [f"{r.shape[0]}x{r.shape[1]}", r.variant, f"{r.median_seconds:.6e}", f"{r.ratio_vs_naive:.4f}"]
        )
    return buf.getvalue()
