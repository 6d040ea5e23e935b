"""Microwave near-field imaging through NV-center Rabi oscillations.

Pipeline: scene geometry -> FDTD field solve -> spin-frame Rabi
response -> synthetic camera frames -> FFT Rabi-frequency map ->
enhancement and linearity analysis.
"""

from .analytic import CurrentLoop, HertzianDipole, Uniform
from .fdtd import ComplexFieldMap, SolverConfig, check_cfl, run_harmonic
from .imaging import CameraConfig, RabiMap, build_rabi_map, extract_frequency
from .nv import NVConfig, effective_rabi, rabi_frequency, resonance_frequencies
from .scene import (
    DipolePair,
    GridSpec,
    LayerStack,
    PatternMask,
    UniformField,
    build_scene,
    load_pattern_mask,
    voxelize,
)

__version__ = "0.1.0"

__all__ = [
    "CameraConfig",
    "ComplexFieldMap",
    "CurrentLoop",
    "DipolePair",
    "GridSpec",
    "HertzianDipole",
    "LayerStack",
    "NVConfig",
    "PatternMask",
    "RabiMap",
    "SolverConfig",
    "Uniform",
    "UniformField",
    "build_rabi_map",
    "build_scene",
    "check_cfl",
    "effective_rabi",
    "extract_frequency",
    "load_pattern_mask",
    "rabi_frequency",
    "resonance_frequencies",
    "run_harmonic",
    "voxelize",
    "__version__",
]
