"""Shared domain types, unit conventions and errors.

All energies are carried in Rydberg. Electron-volts only appear at I/O
boundaries (CSV columns, CLI flags) via :func:`ry_to_ev` / :func:`ev_to_ry`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RYDBERG_EV = 13.605693
POLE_GUARD = 1e-10  # Ry; evaluations closer than this to a pole are rejected

ORTHO_TOL = 1e-10
SYMMETRY_TOL = 1e-12


def ry_to_ev(e):
    return np.multiply(e, RYDBERG_EV) if isinstance(e, np.ndarray) else e * RYDBERG_EV


def ev_to_ry(e):
    return np.divide(e, RYDBERG_EV) if isinstance(e, np.ndarray) else e / RYDBERG_EV


class RmxError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(RmxError, ValueError):
    pass


class PoleProximity(RmxError):
    """An energy lies within the pole guard of an eigenvalue."""

    def __init__(self, pole_index: int, distance: float, mesh_index: int | None = None):
        self.pole_index = pole_index
        self.distance = distance
        self.mesh_index = mesh_index
        where = "" if mesh_index is None else f" at mesh index {mesh_index}"
        super().__init__(
            f"energy{where} is {distance:.3e} Ry from pole {pole_index} "
            f"(guard {POLE_GUARD:g} Ry)"
        )


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CaseDefinition:
    """Synthetic coupled-channel case: sizes, pole window and RNG seeds."""

    n_channels: int
    n_poles: int
    pole_energy_range: tuple[float, float] = (-2.0, 8.0)
    boundary_seed: int = 0
    hamiltonian_seed: int = 0

    def __post_init__(self):
        low, high = (float(x) for x in self.pole_energy_range)
        object.__setattr__(self, "pole_energy_range", (low, high))
        if int(self.n_channels) < 1 or int(self.n_poles) < 1:
            raise InvalidInput("n_channels and n_poles must be positive")
        if self.n_poles < self.n_channels:
            raise InvalidInput(
                f"n_poles ({self.n_poles}) must be >= n_channels ({self.n_channels})"
            )
        # low == high is tolerated: it pins every pole to one energy
        if not (np.isfinite(low) and np.isfinite(high)) or low > high:
            raise InvalidInput(f"bad pole_energy_range {self.pole_energy_range}")
        for name in ("boundary_seed", "hamiltonian_seed"):
            s = getattr(self, name)
            if not 0 <= int(s) < 2**64:
                raise InvalidInput(f"{name} must fit in an unsigned 64-bit integer")

    @classmethod
    def desk_default(cls, seed: int = 0) -> "CaseDefinition":
        return cls(20, 200, (-2.0, 8.0), boundary_seed=seed, hamiltonian_seed=seed)


@dataclass(frozen=True)
class EnergyMesh:
    start: float
    stop: float
    n_points: int

    def __post_init__(self):
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "stop", float(self.stop))
        if int(self.n_points) < 2:
            raise InvalidInput("an energy mesh needs at least 2 points")
        if not self.start < self.stop:
            raise InvalidInput(f"mesh start {self.start} must be below stop {self.stop}")

    @property
    def spacing(self) -> float:
        return (self.stop - self.start) / (self.n_points - 1)

    def energies(self, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """Mesh points ``lo..hi-1``; point i is ``start + i*spacing``."""
        hi = self.n_points if hi is None else hi
        return self.start + np.arange(lo, hi, dtype=np.float64) * self.spacing

    def shifted(self, delta: float) -> "EnergyMesh":
        return EnergyMesh(self.start + delta, self.stop + delta, self.n_points)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Eigenvalues in ascending order; column k of ``eigenvectors`` pairs with them."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        vals = _readonly(self.eigenvalues)
        vecs = _readonly(self.eigenvectors)
        if vals.ndim != 1 or vecs.shape != (vals.size, vals.size):
            raise InvalidInput("eigenvectors must be N x N for N eigenvalues")
        if np.any(np.diff(vals) < 0):
            raise InvalidInput("eigenvalues must be ascending")
        object.__setattr__(self, "eigenvalues", vals)
        object.__setattr__(self, "eigenvectors", vecs)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def orthogonality_error(self) -> float:
        v = self.eigenvectors
        return float(np.max(np.abs(v.T @ v - np.eye(self.size))))


@dataclass(frozen=True, eq=False)
class SurfaceAmplitudes:
    w: np.ndarray

    def __post_init__(self):
        w = _readonly(self.w)
        if w.ndim != 2:
            raise InvalidInput("surface amplitudes must be a 2-D array")
        if not np.all(np.isfinite(w)):
            raise InvalidInput("surface amplitudes must be finite")
        object.__setattr__(self, "w", w)

    @property
    def n_channels(self) -> int:
        return self.w.shape[0]

    @property
    def n_poles(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True, eq=False)
class RMatrix:
    entries: np.ndarray
    energy: float

    def __post_init__(self):
        r = _readonly(self.entries)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise InvalidInput("R-matrix must be square")
        object.__setattr__(self, "entries", r)
        object.__setattr__(self, "energy", float(self.energy))

    def asymmetry(self) -> float:
        r = self.entries
        return float(np.max(np.abs(r - r.T), initial=0.0))

    def is_symmetric(self) -> bool:
        scale = 1.0 + float(np.max(np.abs(self.entries), initial=0.0))
        return self.asymmetry() <= SYMMETRY_TOL * scale


@dataclass(frozen=True, eq=False)
class Spectrum:
    mesh: EnergyMesh
    values: np.ndarray
    label: str = field(default="")

    def __post_init__(self):
        v = _readonly(self.values)
        if v.shape != (self.mesh.n_points,):
            raise InvalidInput(
                f"spectrum has {v.size} values for a {self.mesh.n_points}-point mesh"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidInput("spectrum values must be finite")
        if np.any(v < 0):
            raise InvalidInput("spectrum values must be non-negative")
        object.__setattr__(self, "values", v)

    @property
    def energies(self) -> np.ndarray:
        return self.mesh.energies()

    def with_values(self, values: np.ndarray, label: str | None = None) -> "Spectrum":
        return Spectrum(self.mesh, values, self.label if label is None else label)
