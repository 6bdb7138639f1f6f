"""Full dense diagonalization of Hamiltonian blocks.

Only all-eigenpair divide-and-conquer solves are used (LAPACK ``dsyevd``):
the outer region needs every eigenvalue and every eigenvector, and
orthogonality of the eigenvector set is checked as a hard postcondition.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import ORTHO_TOL, CaseDefinition, EigenSystem, InvalidInput, RmxError, SurfaceAmplitudes
from .synth import BoundaryProjector, build_boundary_projector, build_hamiltonian

RESIDUAL_TOL = 1e-9


class EigenConvergenceError(RmxError):
    pass


def _fix_signs(v: np.ndarray) -> np.ndarray:
    # largest-magnitude component of each column positive; argmax picks lowest index on ties
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.where(v[idx, np.arange(v.shape[1])] < 0, -1.0, 1.0)
    return v * signs


def diagonalize_block(h: np.ndarray, name: str = "block") -> EigenSystem:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InvalidInput(f"{name}: Hamiltonian must be square, got {h.shape}")
    scale = 1.0 + float(np.max(np.abs(h), initial=0.0))
    if np.max(np.abs(h - h.T), initial=0.0) > 1e-12 * scale:
        raise InvalidInput(f"{name}: Hamiltonian is not symmetric")
    if not np.all(np.isfinite(h)):
        raise InvalidInput(f"{name}: Hamiltonian has non-finite entries")

    try:
        vals, vecs = scipy.linalg.eigh(h, driver="evd", check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(f"{name}: eigensolver failed to converge ({exc})") from exc
    vecs = _fix_signs(vecs)

    es = EigenSystem(vals, vecs)
    ortho = es.orthogonality_error()
    if ortho > ORTHO_TOL:
        raise EigenConvergenceError(f"{name}: eigenvectors lost orthogonality ({ortho:.2e})")
    resid = residual(h, es)
    if resid > RESIDUAL_TOL:
        raise EigenConvergenceError(f"{name}: eigenpair residual {resid:.2e} too large")
    return es


def residual(h: np.ndarray, es: EigenSystem) -> float:
    """max_k ||H v_k - E_k v_k|| / (1 + |E_k|)."""
    v, e = es.eigenvectors, es.eigenvalues
    r = np.linalg.norm(h @ v - v * e, axis=0) / (1.0 + np.abs(e))
    return float(np.max(r, initial=0.0))


def diagonalize_blocks(blocks: Sequence[np.ndarray], n_workers: int = 1) -> list[EigenSystem]:
    """One block per worker, results in input order."""
    names = [f"block {i}" for i in range(len(blocks))]
    if n_workers <= 1:
        return [diagonalize_block(h, n) for h, n in zip(blocks, names)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(diagonalize_block, blocks, names))


def surface_amplitudes(b: BoundaryProjector, es: EigenSystem) -> SurfaceAmplitudes:
    bm = b.b if isinstance(b, BoundaryProjector) else np.asarray(b, dtype=np.float64)
    if bm.ndim != 2 or bm.shape[1] != es.size:
        raise InvalidInput(
            f"projector shape {bm.shape} does not conform to {es.size} eigenvectors"
        )
    return SurfaceAmplitudes(bm @ es.eigenvectors)


def solve_case(case: CaseDefinition) -> tuple[EigenSystem, SurfaceAmplitudes]:
    """Hamiltonian -> eigensystem -> surface amplitudes for one synthetic case."""
    es = diagonalize_block(build_hamiltonian(case), name=f"case(seed={case.hamiltonian_seed})")
    return es, surface_amplitudes(build_boundary_projector(case), es)
