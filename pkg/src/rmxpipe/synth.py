"""Seeded synthetic Hamiltonians, boundary projectors and dipole blocks.

Everything here is a pure function of a :class:`CaseDefinition`; the
Hamiltonian is built as ``Q^T diag(d) Q`` so its spectrum is known before
any eigensolve runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ORTHO_TOL, CaseDefinition, InvalidInput


@dataclass(frozen=True, eq=False)
class BoundaryProjector:
    b: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=np.float64, copy=True)
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    def gram_error(self) -> float:
        return float(np.max(np.abs(self.b @ self.b.T - np.eye(self.b.shape[0]))))


def _random_orthogonal(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    """n x m matrix with orthonormal columns (n >= m), sign-fixed via diag(R) > 0."""
    q, r = np.linalg.qr(rng.standard_normal((n, m)))
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def pole_draws(case: CaseDefinition) -> np.ndarray:
    """The diagonal values the Hamiltonian is conjugated from, in draw order."""
    rng = np.random.default_rng(case.hamiltonian_seed)
    low, high = case.pole_energy_range
    return rng.uniform(low, high, size=case.n_poles)


def build_hamiltonian(case: CaseDefinition) -> np.ndarray:
    rng = np.random.default_rng(case.hamiltonian_seed)
    low, high = case.pole_energy_range
    d = rng.uniform(low, high, size=case.n_poles)
    q = _random_orthogonal(rng, case.n_poles, case.n_poles)
    h = (q.T * d) @ q
    # mirror the upper triangle so H == H.T holds bitwise
    upper = np.triu(h)
    return upper + np.triu(h, 1).T


def build_boundary_projector(case: CaseDefinition) -> BoundaryProjector:
    if case.n_channels > case.n_poles:
        raise InvalidInput("cannot build orthonormal rows with n_channels > n_poles")
    rng = np.random.default_rng(case.boundary_seed)
    q = _random_orthogonal(rng, case.n_poles, case.n_channels)
    proj = BoundaryProjector(q.T)
    if proj.gram_error() > ORTHO_TOL:
        raise InvalidInput(f"projector rows not orthonormal: {proj.gram_error():.2e}")
    return proj


def build_dipole_blocks(case: CaseDefinition, n_states: int) -> list[np.ndarray]:
    """Synthetic per-initial-state amplitude blocks for a dipole file.

    State ``s`` holds ``1 + s % n_channels`` rows of length ``n_poles``, so
    records differ in size the way real per-state dipole data does.
    """
    if n_states < 1:
        raise InvalidInput("need at least one initial state")
    rng = np.random.default_rng([case.boundary_seed, case.hamiltonian_seed, n_states])
    return [
        rng.standard_normal((1 + s % case.n_channels, case.n_poles)) for s in range(n_states)
    ]


# -- case files: one ``key=value`` per line, '#' starts a comment --------------

_CASE_KEYS = ("n_channels", "n_poles", "pole_low", "pole_high", "boundary_seed", "hamiltonian_seed")


def format_case(case: CaseDefinition) -> str:
    low, high = case.pole_energy_range
    return (
        "# synthetic R-matrix case (energies in Rydberg)\n"
        f"n_channels={case.n_channels}\n"
        f"n_poles={case.n_poles}\n"
        f"pole_low={low!r}\n"
        f"pole_high={high!r}\n"
        f"boundary_seed={case.boundary_seed}\n"
        f"hamiltonian_seed={case.hamiltonian_seed}\n"
    )


def parse_case(text: str) -> CaseDefinition:
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CASE_KEYS:
            raise InvalidInput(f"case file line {lineno}: cannot parse {raw!r}")
        fields[key] = value.strip()
    missing = [k for k in ("n_channels", "n_poles") if k not in fields]
    if missing:
        raise InvalidInput(f"case file missing {', '.join(missing)}")
    try:
        return CaseDefinition(
            n_channels=int(fields["n_channels"]),
            n_poles=int(fields["n_poles"]),
            pole_energy_range=(
                float(fields.get("pole_low", -2.0)),
                float(fields.get("pole_high", 8.0)),
            ),
            boundary_seed=int(fields.get("boundary_seed", 0)),
            hamiltonian_seed=int(fields.get("hamiltonian_seed", 0)),
        )
    except ValueError as exc:
        raise InvalidInput(f"case file: {exc}") from exc


def write_case(path, case: CaseDefinition) -> None:
    Path(path).write_text(format_case(case))


def read_case(path) -> CaseDefinition:
    return parse_case(Path(path).read_text())
