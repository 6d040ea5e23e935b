"""Run configuration: YAML schema, validation and provenance hashing.

One structured config file drives the whole chain, with one section per
stage::

    scene:                       # geometry and drive
      mask: masks/pattern.pbm    # raster path (sidecar supplies pitch), or
      # mask: {builtin: crossed_loop, size_px: 40, pitch_m: 1.0e-6}
      stack:
        layers: [[silicon, 2.0e-6], [gold, 1.1e-7], [air, 3.4e-6], [diamond, 3.0e-6]]
        gap_m: 3.4e-6
        conductor_model: sheet   # sheet | slab
      grid:
        cell_m: 5.0e-7           # or {dx_m, dy_m, dz_m}
        margin_cells: 8
        z_margin_cells: 4
        pml_layers: 8
        boundary: [pml, pml, pml]
      source:
        kind: uniform            # uniform | dipole_pair
        frequency_hz: 3.010e9
        amplitude_t: 1.0e-4      # omit when calibrating from the bulk value
        polarization: [0, 0, 1]
        height_m: 3.0e-2         # dipole_pair only
        separation_m: 2.0e-2
    solver:                      # SolverConfig fields (ramp_periods, ...)
    nv:                          # NVConfig fields; f_mw: center|line_low|line_high|<Hz>
    camera:                      # CameraConfig fields
    pipeline:
      tau_span_s: 2.0e-6         # tau_k = k * span / points
      tau_points: 100
      t_dec_s: 2.0e-6
      zero_fill: 10
      guard_bins: 2
      seed: 1234
      noise: true
      simulate: true             # allow the pipeline to run the solve itself
      power_dbm: 29.3
      amplitude_scale: 1.0
      calibration: {bulk_rabi_hz: 1.22e6, power_dbm: 29.3}
    sweep:
      powers_dbm: [17.3, 23.3, 29.3, 37.3]
      mode: pipeline             # pipeline | injected
      injected_slope_hz_per_sqrtw: 1.0e7
    output: {dir: out}

The provenance hash is the SHA-256 of the canonical JSON encoding of
the effective config (file content plus CLI overrides); every artifact
header embeds it.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import yaml

from . import scene as scene_mod
from .errors import ValidationError
from .fdtd import SolverConfig
from .imaging import CameraConfig
from .nv import NVConfig, resonance_frequencies


@dataclass(frozen=True)
class PipelineConfig:
    tau_span_s: float = 2.0e-6
    tau_points: int = 100
    t_dec_s: float = 2.0e-6
    zero_fill: int = 10
    guard_bins: int = 2
    seed: int = 1234
    noise: bool = True
    simulate: bool = True
    power_dbm: float = 29.3
    amplitude_scale: float = 1.0
    bulk_rabi_hz: float = 1.22e6
    calibration_power_dbm: float = 29.3

    def __post_init__(self):
        if self.tau_points < 8:
            raise ValidationError("tau grid needs at least 8 points")
        if self.tau_span_s <= 0 or self.t_dec_s <= 0:
            raise ValidationError("tau span and decay constant must be > 0")
        if self.zero_fill < 1:
            raise ValidationError("zero_fill must be >= 1")

    def tau_grid(self):
        import numpy as np

        dt = self.tau_span_s / self.tau_points
        return np.arange(self.tau_points) * dt


@dataclass(frozen=True)
class SweepConfig:
    powers_dbm: tuple = (17.3, 23.3, 29.3, 37.3)
    mode: str = "pipeline"
    injected_slope_hz_per_sqrtw: float = 1.0e7

    def __post_init__(self):
        if self.mode not in ("pipeline", "injected"):
            raise ValidationError("sweep mode must be pipeline or injected")


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration for one reproduction run."""

    scene: scene_mod.Scene
    solver: SolverConfig
    nv: NVConfig
    camera: CameraConfig
    pipeline: PipelineConfig
    sweep: SweepConfig
    out_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def hash(self):
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


_BUILTIN_MASKS = {
    "cross": scene_mod.cross_mask,
    "ring": scene_mod.ring_mask,
    "crossed_loop": scene_mod.crossed_loop_mask,
}


def _build_mask(spec, base_dir):
    if isinstance(spec, str):
        path = spec if os.path.isabs(spec) else os.path.join(base_dir, spec)
        if not os.path.exists(path):
            raise ValidationError(f"mask file not found: {path}")
        return scene_mod.load_pattern_mask(path)
    if isinstance(spec, dict) and "builtin" in spec:
        kw = dict(spec)
        kind = kw.pop("builtin")
        pitch = kw.pop("pitch_m")
        if kind == "empty":
            import numpy as np

            size = int(kw.pop("size_px", 8))
            occ = np.zeros((size, size), dtype=bool)
        else:
            if kind not in _BUILTIN_MASKS:
                raise ValidationError(f"unknown builtin mask {kind!r}")
            occ = _BUILTIN_MASKS[kind](**kw)
        return scene_mod.PatternMask(occupancy=occ, pitch=float(pitch))
    raise ValidationError("scene.mask must be a path or a builtin spec")


def _build_stack(spec):
    if spec is None:
        return scene_mod.LayerStack()
    kw = {}
    if "layers" in spec:
        kw["layers"] = tuple((m, float(t)) for m, t in spec["layers"])
    if "gap_m" in spec:
        kw["gap"] = float(spec["gap_m"])
    if "conductor_model" in spec:
        kw["conductor_model"] = spec["conductor_model"]
    return scene_mod.LayerStack(**kw)


def _build_grid(spec):
    if spec is None:
        return scene_mod.GridSpec()
    kw = {}
    if "cell_m" in spec:
        kw["dx"] = kw["dy"] = kw["dz"] = float(spec["cell_m"])
    for key, name in (("dx_m", "dx"), ("dy_m", "dy"), ("dz_m", "dz")):
        if key in spec:
            val = spec[key]
            kw[name] = tuple(float(v) for v in val) if isinstance(val, (list, tuple)) else float(val)
    for key in ("margin_cells", "z_margin_cells", "pml_layers"):
        if key in spec:
            kw[key] = int(spec[key])
    if "boundary" in spec:
        b = spec["boundary"]
        kw["boundary"] = tuple(b) if isinstance(b, (list, tuple)) else b
    if "extent_m" in spec:
        kw["extent"] = tuple(float(v) for v in spec["extent_m"])
    return scene_mod.GridSpec(**kw)


def _build_source(spec, nv_cfg: NVConfig, pipeline: PipelineConfig):
    if spec is None:
        raise ValidationError("scene.source section is required")
    kind = spec.get("kind", "uniform")
    freq = spec.get("frequency_hz")
    if freq is None:
        raise ValidationError("scene.source.frequency_hz is required")
    amplitude = spec.get("amplitude_t")
    if amplitude is None:
        # calibrate against the measured bulk Rabi frequency
        from .imaging import calibrate_uniform_amplitude

        amplitude = calibrate_uniform_amplitude(nv_cfg, pipeline.bulk_rabi_hz)
    if kind == "uniform":
        kw = {}
        if "polarization" in spec:
            kw["polarization"] = tuple(float(v) for v in spec["polarization"])
        return scene_mod.UniformField(
            amplitude=float(amplitude), frequency=float(freq), **kw
        )
    if kind == "dipole_pair":
        kw = {}
        if "height_m" in spec:
            kw["height"] = float(spec["height_m"])
        if "separation_m" in spec:
            kw["separation"] = float(spec["separation_m"])
        return scene_mod.DipolePair(
            amplitude=float(amplitude), frequency=float(freq), **kw
        )
    raise ValidationError(f"unknown source kind {kind!r}")


def _build_nv(spec):
    if spec is None:
        return NVConfig()
    kw = {}
    for key in ("d_hz", "gamma_hz_per_t", "b0_t", "theta_deg", "a_par_hz"):
        if key in spec:
            kw[key] = float(spec[key])
    if "transition" in spec:
        kw["transition"] = int(spec["transition"])
    base = NVConfig(**kw)
    f_mw = spec.get("f_mw", "center")
    if isinstance(f_mw, str):
        f_minus, f_plus = resonance_frequencies(base)
        center = f_plus if base.transition == +1 else f_minus
        if f_mw == "center":
            val = None
        elif f_mw == "line_low":
            val = center - 0.5 * base.a_par_hz
        elif f_mw == "line_high":
            val = center + 0.5 * base.a_par_hz
        else:
            raise ValidationError(f"nv.f_mw must be center|line_low|line_high|Hz, got {f_mw!r}")
    else:
        val = float(f_mw)
    if val is None:
        return base
    return NVConfig(**{**kw, "f_mw_hz": val})


def _build_camera(spec):
    if spec is None:
        return CameraConfig()
    kw = {}
    if "sensor_px" in spec:
        kw["sensor_px"] = tuple(int(v) for v in spec["sensor_px"])
    if "fov_m" in spec:
        kw["fov_m"] = tuple(float(v) for v in spec["fov_m"])
    for key in ("bin_factor", "cycles", "repeats"):
        if key in spec:
            kw[key] = int(spec[key])
    if "psf_sigma_m" in spec:
        v = spec["psf_sigma_m"]
        kw["psf_sigma_m"] = None if v in (None, 0, "none") else float(v)
    if "noise_sigma0" in spec:
        kw["noise_sigma0"] = float(spec["noise_sigma0"])
    if "origin_m" in spec and spec["origin_m"] is not None:
        kw["origin_m"] = tuple(float(v) for v in spec["origin_m"])
    return CameraConfig(**kw)


def _build_solver(spec):
    if spec is None:
        return SolverConfig()
    kw = {}
    for key in (
        "ramp_periods", "ctol", "subwavelength_ratio",
        "pml_m", "pml_r0", "pml_kappa_max", "pml_alpha_scale", "max_periods",
    ):
        if key in spec:
            kw[key] = float(spec[key])
    for key in ("dft_periods", "threads"):
        if key in spec:
            kw[key] = int(spec[key])
    for key in ("skip_empty", "use_dielectrics"):
        if key in spec:
            kw[key] = bool(spec[key])
    if "dtype" in spec:
        kw["dtype"] = str(spec["dtype"])
    return SolverConfig(**kw)


def _build_pipeline(spec):
    if spec is None:
        return PipelineConfig()
    kw = {}
    for key in ("tau_span_s", "t_dec_s", "power_dbm", "amplitude_scale"):
        if key in spec:
            kw[key] = float(spec[key])
    for key in ("tau_points", "zero_fill", "guard_bins", "seed"):
        if key in spec:
            kw[key] = int(spec[key])
    for key in ("noise", "simulate"):
        if key in spec:
            kw[key] = bool(spec[key])
    calib = spec.get("calibration")
    if calib:
        if "bulk_rabi_hz" in calib:
            kw["bulk_rabi_hz"] = float(calib["bulk_rabi_hz"])
        if "power_dbm" in calib:
            kw["calibration_power_dbm"] = float(calib["power_dbm"])
    return PipelineConfig(**kw)


def _build_sweep(spec):
    if spec is None:
        return SweepConfig()
    kw = {}
    if "powers_dbm" in spec:
        kw["powers_dbm"] = tuple(float(v) for v in spec["powers_dbm"])
    if "mode" in spec:
        kw["mode"] = str(spec["mode"])
    if "injected_slope_hz_per_sqrtw" in spec:
        kw["injected_slope_hz_per_sqrtw"] = float(spec["injected_slope_hz_per_sqrtw"])
    return SweepConfig(**kw)


def load_run_config(path, overrides=None) -> RunConfig:
    """Parse, override and validate a YAML run config.

    ``overrides`` maps dotted keys (``solver.threads``) onto replacement
    values before validation, so CLI flags participate in the hash.
    """
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a mapping")
    if overrides:
        for dotted, value in overrides.items():
            node = raw
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node.setdefault(p, {})
            node[leaf] = value
    base_dir = os.path.dirname(os.path.abspath(path))
    return build_run_config(raw, base_dir)


def build_run_config(raw: dict, base_dir=".") -> RunConfig:
    pipeline = _build_pipeline(raw.get("pipeline"))
    nv_cfg = _build_nv(raw.get("nv"))
    scene_spec = raw.get("scene") or {}
    if "mask" not in scene_spec:
        raise ValidationError("scene.mask is required")
    mask = _build_mask(scene_spec["mask"], base_dir)
    stack = _build_stack(scene_spec.get("stack"))
    grid = _build_grid(scene_spec.get("grid"))
    source = _build_source(scene_spec.get("source"), nv_cfg, pipeline)
    scn = scene_mod.build_scene(mask, stack, source, grid)
    out_dir = (raw.get("output") or {}).get("dir", "out")
    if not os.path.isabs(out_dir):
        out_dir = os.path.join(base_dir, out_dir)
    return RunConfig(
        scene=scn,
        solver=_build_solver(raw.get("solver")),
        nv=nv_cfg,
        camera=_build_camera(raw.get("camera")),
        pipeline=pipeline,
        sweep=_build_sweep(raw.get("sweep")),
        out_dir=out_dir,
        raw=raw,
    )
