"""Desk-scale outer-region R-matrix pipeline.

Synthetic Hamiltonian blocks are fully diagonalized, turned into surface
amplitudes, and used to form R-matrices over dense energy meshes. Spectra
are then broadened, mixed and fitted; binary H/D files, striping policy and
scaling reports cover the I/O and performance side.
"""

from .core import (
    RYDBERG_EV,
    CaseDefinition,
    EigenSystem,
    EnergyMesh,
    InvalidInput,
    PoleProximity,
    RMatrix,
    RmxError,
    Spectrum,
    SurfaceAmplitudes,
    ev_to_ry,
    ry_to_ev,
)
from .eigen import diagonalize_block, solve_case, surface_amplitudes
from .kernel import KernelVariant, form_rmatrix_batch, form_rmatrix_gemm, form_rmatrix_naive
from .spectrum import admix, convolve_gaussian, fit_resonance, mesh_avoiding_poles, rydberg_series, sweep_response
from .synth import build_boundary_projector, build_hamiltonian

__version__ = "0.1.0"
