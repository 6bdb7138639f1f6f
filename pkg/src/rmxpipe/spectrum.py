"""Energy meshes, response sweeps and spectral post-processing.

The swept observable is a surrogate: the squared Frobenius norm of the
R-matrix, ``sum_ij R_ij(E)^2``. It is non-negative and keeps the pole
structure that dense meshes, Gaussian broadening and width fitting exist
to handle, but it is not a physical photoionization cross section.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .core import (
    EnergyMesh,
    InvalidInput,
    RmxError,
    Spectrum,
    ev_to_ry,
    ry_to_ev,
)
from .kernel import KernelVariant, _as_arrays, check_pole_guard, rmatrix_stack
from .sched import map_ranges, partition_energies

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
TRUNCATE_SIGMAS = 5.0
_SWEEP_BATCH = 4096


class MeshCollision(RmxError):
    pass


class UnderResolvedKernel(RmxError):
    pass


class AmbiguousWindow(RmxError):
    pass


class FitDiverged(RmxError):
    def __init__(self, message: str, best: "ResonanceFit | None" = None):
        super().__init__(message)
        self.best = best


def _collides(mesh: EnergyMesh, poles: np.ndarray) -> bool:
    try:
        check_pole_guard(mesh.energies(), poles)
    except RmxError:
        return True
    return False


def mesh_avoiding_poles(start: float, stop: float, n_points: int, poles=()) -> EnergyMesh:
    """Uniform mesh, shifted once by half a spacing if any point sits on a pole."""
    mesh = EnergyMesh(start, stop, n_points)
    p = np.asarray(poles, dtype=np.float64).ravel()
    if not _collides(mesh, p):
        return mesh
    shifted = mesh.shifted(mesh.spacing / 2)
    if _collides(shifted, p):
        raise MeshCollision(
            f"mesh ({start}, {stop}, {n_points}) hits a pole even after a half-spacing shift; "
            "choose a different n_points"
        )
    return shifted


# -- sweep ----------------------------------------------------------------------


def _response_chunk(lo, hi, wm, poles, mesh, variant):
    out = np.empty(hi - lo)
    for a in range(lo, hi, _SWEEP_BATCH):
        b = min(hi, a + _SWEEP_BATCH)
        r = rmatrix_stack(wm, poles, mesh.energies(a, b), variant, offset=a)
        flat = r.reshape(b - a, -1)
        out[a - lo : b - lo] = (flat * flat).sum(axis=1)
    return out


def sweep_response(w, poles, mesh: EnergyMesh, variant="gemm", n_workers: int = 1, label: str = "") -> Spectrum:
    """Squared Frobenius norm of R at every mesh point; bitwise independent of ``n_workers``."""
    wm, p = _as_arrays(w, poles)
    v = KernelVariant.parse(variant)
    check_pole_guard(mesh.energies(), p)
    ranges = partition_energies(mesh.n_points, n_workers)
    chunks = map_ranges(_response_chunk, ranges, (wm, p, mesh, v), n_workers)
    return Spectrum(mesh, np.concatenate(chunks), label or f"response[{v}]")


# -- broadening and mixing --------------------------------------------------------


def gaussian_kernel(fwhm: float, spacing: float) -> np.ndarray:
    """Normalized Gaussian weights on the mesh, truncated at +-5 sigma."""
    sigma = fwhm * FWHM_TO_SIGMA
    half = int(math.floor(TRUNCATE_SIGMAS * sigma / spacing))
    x = np.arange(-half, half + 1) * spacing
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def convolve_gaussian(s: Spectrum, fwhm: float) -> Spectrum:
    """Gaussian broadening with FWHM ``fwhm`` (Ry); partial kernels renormalized at the edges."""
    h = s.mesh.spacing
    if not fwhm >= 2 * h:
        raise UnderResolvedKernel(f"FWHM {fwhm:g} Ry is below two mesh spacings ({2 * h:g} Ry)")
    g = gaussian_kernel(fwhm, h)
    half = g.size // 2
    n = s.mesh.n_points
    num = np.convolve(s.values, g)[half : half + n]
    den = np.convolve(np.ones(n), g)[half : half + n]
    return s.with_values(num / den, f"{s.label} * gauss({fwhm:g} Ry)".strip())


def admix(spectra: Sequence[Spectrum], weights: Sequence[float]) -> Spectrum:
    """Weighted average of spectra on a shared mesh; weights are normalized first."""
    if not spectra or len(spectra) != len(weights):
        raise InvalidInput("need one weight per spectrum")
    wts = np.asarray(weights, dtype=np.float64)
    if np.any(wts < 0) or not np.all(np.isfinite(wts)) or wts.sum() <= 0:
        raise InvalidInput(f"weights must be non-negative with positive sum, got {list(weights)}")
    mesh = spectra[0].mesh
    for sp in spectra[1:]:
        if sp.mesh != mesh:
            raise InvalidInput("spectra must share one energy mesh")
    wts = wts / wts.sum()
    out = wts[0] * spectra[0].values
    for wt, sp in zip(wts[1:], spectra[1:]):
        out = out + wt * sp.values
    return Spectrum(mesh, out, "admix(" + ", ".join(f"{w:.4g}" for w in wts) + ")")


# -- Rydberg series -----------------------------------------------------------------


def rydberg_series(threshold: float, quantum_defect: float, z_eff: float, n_range) -> np.ndarray:
    """E_n = threshold - z_eff^2 / (n - mu)^2 (Ry) for n in ``n_range`` (inclusive pair or iterable)."""
    if isinstance(n_range, tuple) and len(n_range) == 2:
        ns = np.arange(n_range[0], n_range[1] + 1)
    else:
        ns = np.asarray(list(n_range))
    if ns.size == 0:
        raise InvalidInput("empty n range")
    if not math.isfinite(threshold) or not z_eff > 0:
        raise InvalidInput("threshold must be finite and z_eff positive")
    if ns.min() <= quantum_defect:
        raise InvalidInput(f"n must exceed the quantum defect {quantum_defect}")
    ns = np.sort(ns).astype(np.float64)
    return threshold - z_eff**2 / (ns - quantum_defect) ** 2


# -- resonance fitting ----------------------------------------------------------------


@dataclass(frozen=True)
class ResonanceFit:
    center: float
    gamma: float
    peak: float
    background: float
    rms_residual: float


def lorentzian(e, center, gamma, peak, background):
    hw2 = (0.5 * gamma) ** 2
    return background + peak * hw2 / ((e - center) ** 2 + hw2)


def _interior_maxima(y: np.ndarray) -> list[int]:
    """Indices of strict local maxima, counting a flat-topped plateau once."""
    peaks = []
    i = 1
    while i < y.size - 1:
        if y[i] > y[i - 1]:
            j = i
            while j + 1 < y.size and y[j + 1] == y[i]:
                j += 1
            if j + 1 < y.size and y[j + 1] < y[i]:
                peaks.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    return peaks


def _initial_guess(e: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    background = 0.5 * (y[0] + y[-1])
    peak = y[k] - background
    half = background + 0.5 * peak
    left = k
    while left > 0 and y[left] > half:
        left -= 1
    right = k
    while right < y.size - 1 and y[right] > half:
        right += 1
    gamma = max(e[right] - e[left], 2 * (e[1] - e[0]))
    return np.array([e[k], gamma, peak, background])


def fit_resonance(s: Spectrum, window, max_iterations: int = 2000) -> ResonanceFit:
    """Least-squares Lorentzian + constant background over ``window = (lo, hi)`` in Ry."""
    lo, hi = window
    e_all = s.energies
    sel = (e_all >= lo) & (e_all <= hi)
    e, y = e_all[sel], s.values[sel]
    if e.size < 7:
        raise InvalidInput(f"window ({lo}, {hi}) holds {e.size} mesh points; need >= 7")
    peaks = _interior_maxima(y)
    if len(peaks) != 1:
        raise AmbiguousWindow(f"window ({lo}, {hi}) has {len(peaks)} interior maxima; need exactly 1")
    x0 = _initial_guess(e, y, peaks[0])
    # centre on the window and scale to O(1) so tolerances are meaningful
    e0, de = x0[0], x0[1]
    ys = max(abs(x0[2]), abs(x0[3]), np.max(np.abs(y)), 1e-300)
    t = (e - e0) / de
    yy = y / ys

    def resid(p):
        c, g, a, b = p
        hw2 = (0.5 * g) ** 2
        return b + a * hw2 / ((t - c) ** 2 + hw2) - yy

    def jac(p):
        c, g, a, b = p
        hw2 = (0.5 * g) ** 2
        d = (t - c) ** 2 + hw2
        prof = hw2 / d
        dc = a * hw2 * 2 * (t - c) / d**2
        dg = a * (0.5 * g) * (t - c) ** 2 / d**2
        return np.column_stack([dc, dg, prof, np.ones_like(t)])

    p0 = np.array([0.0, 1.0, x0[2] / ys, x0[3] / ys])
    lower = [-np.inf, 1e-12, -np.inf, -np.inf]
    sol = least_squares(
        resid, p0, jac=jac, bounds=(lower, np.inf), method="trf",
        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_iterations, x_scale="jac",
    )
    c, g, a, b = sol.x
    fit = ResonanceFit(
        center=float(e0 + c * de),
        gamma=float(g * de),
        peak=float(a * ys),
        background=float(b * ys),
        rms_residual=float(np.sqrt(np.mean(sol.fun**2)) * ys),
    )
    if sol.status <= 0 or not np.all(np.isfinite(sol.x)):
        raise FitDiverged(f"Lorentzian fit did not converge: {sol.message}", best=fit)
    return fit


# -- CSV ------------------------------------------------------------------------------


def format_spectrum_csv(s: Spectrum) -> str:
    m = s.mesh
    lines = [
        f"# label={s.label}",
        f"# mesh start={m.start!r} stop={m.stop!r} n_points={m.n_points}",
        "energy_ry,energy_ev,value",
    ]
    for e, v in zip(s.energies.tolist(), s.values.tolist()):
        lines.append(f"{e!r},{ry_to_ev(e)!r},{v!r}")
    return "\n".join(lines) + "\n"


def parse_spectrum_csv(text: str) -> Spectrum:
    label, mesh_fields = "", {}
    rows = []
    for line in text.splitlines():
        if line.startswith("# label="):
            label = line[len("# label="):]
        elif line.startswith("# mesh "):
            mesh_fields = dict(kv.split("=", 1) for kv in line[len("# mesh "):].split())
        elif line.startswith("#") or not line.strip() or line.startswith("energy_ry"):
            continue
        else:
            rows.append([float(x) for x in line.split(",")])
    if not rows:
        raise InvalidInput("spectrum CSV holds no data rows")
    data = np.asarray(rows)
    if mesh_fields:
        mesh = EnergyMesh(float(mesh_fields["start"]), float(mesh_fields["stop"]), int(mesh_fields["n_points"]))
    else:
        mesh = EnergyMesh(data[0, 0], data[-1, 0], data.shape[0])
    if mesh.n_points != data.shape[0]:
        raise InvalidInput(f"mesh header says {mesh.n_points} points, CSV has {data.shape[0]}")
    return Spectrum(mesh, data[:, 2], label)


def write_spectrum_csv(path, s: Spectrum) -> None:
    Path(path).write_text(format_spectrum_csv(s))


def read_spectrum_csv(path) -> Spectrum:
    return parse_spectrum_csv(Path(path).read_text())


def mev_to_ry(mev: float) -> float:
    return ev_to_ry(mev * 1e-3)

