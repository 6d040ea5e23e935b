"""Command-line entry point.

Subcommands drive the stages end to end from one config file:

    rabimap validate --config cfg.yaml
    rabimap simulate --config cfg.yaml [--out DIR] [--threads N]
    rabimap pipeline --config cfg.yaml [--seed U64]
    rabimap sweep    --config cfg.yaml
    rabimap oracle   --kind loop --out table.csv [...]

Exit codes: 0 success, 2 validation failure, 3 solver non-convergence,
4 missing upstream artifact.  Identical config plus seed produces
bit-identical artifacts; wall-clock timing goes to stdout only.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import analytic, fdtd, fileio, imaging
from .config import RunConfig, load_run_config
from .errors import ConvergenceError, MissingArtifactError, ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_MISSING = 4

FIELD_MAP_NAME = "field_map.bfm"


def _power_scale(cfg: RunConfig, power_dbm=None):
    p = cfg.pipeline.power_dbm if power_dbm is None else power_dbm
    rel = 10.0 ** ((p - cfg.pipeline.calibration_power_dbm) / 20.0)
    return rel * cfg.pipeline.amplitude_scale


def run_simulate(cfg: RunConfig, probe_window=None):
    """Solve the scene and write the field-map artifacts."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    fmap = fdtd.run_harmonic(cfg.scene, probe_window=probe_window, config=cfg.solver)
    wall = time.perf_counter() - t0
    path = os.path.join(cfg.out_dir, FIELD_MAP_NAME)
    fileio.write_field_map(fmap, path, config_hash=cfg.hash)
    fileio.write_field_map_csv(fmap, path[:-4] + ".csv", config_hash=cfg.hash)
    print(f"convergence metric: {fmap.convergence:.3e}")
    print(f"wall time: {wall:.1f} s")
    print(f"field map: {path}")
    return fmap


def _field_map_for_pipeline(cfg: RunConfig):
    path = os.path.join(cfg.out_dir, FIELD_MAP_NAME)
    if os.path.exists(path):
        return fileio.read_field_map(path)
    if cfg.pipeline.simulate:
        return run_simulate(cfg)
    raise MissingArtifactError(
        f"field map {path} not found and pipeline.simulate is off", stage="simulate"
    )


def run_pipeline(cfg: RunConfig, power_dbm=None):
    """Field map -> frames -> binned traces -> Rabi map -> statistics."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    fmap = _field_map_for_pipeline(cfg)
    scale = _power_scale(cfg, power_dbm)
    fmap_p = fmap.scaled(scale)
    ideal = imaging.rabi_field_to_map(fmap_p, cfg.nv, camera=cfg.camera)
    tau = cfg.pipeline.tau_grid()
    seed = cfg.pipeline.seed if cfg.pipeline.noise else None
    camera = cfg.camera
    if not cfg.pipeline.noise:
        camera = imaging.CameraConfig(
            **{**camera.__dict__, "noise_sigma0": 0.0}
        )
    frames = imaging.render_frames(
        ideal, camera, tau, cfg.pipeline.t_dec_s, cfg.nv, seed=seed
    )
    binned = imaging.bin_and_normalize(frames)
    px, py = camera.pixel_pitch
    x0, y0 = camera.window()
    b = camera.bin_factor
    rmap = imaging.build_rabi_map(
        binned,
        zero_fill=cfg.pipeline.zero_fill,
        guard_bins=cfg.pipeline.guard_bins,
        pitch_m=(px * b, py * b),
        origin_m=(x0 + 0.5 * px * b, y0 + 0.5 * py * b),
    )
    bulk_hz = cfg.pipeline.bulk_rabi_hz * scale
    stats = imaging.enhancement_stats(rmap, bulk_hz)
    footprint = imaging.hotspot_footprint(rmap)

    h = cfg.hash
    fileio.write_rabi_map(rmap, os.path.join(cfg.out_dir, "rabi_map.brm"), h)
    fileio.write_rabi_map_csv(rmap, os.path.join(cfg.out_dir, "rabi_map.csv"), h)
    fileio.write_pgm(
        os.path.join(cfg.out_dir, "rabi_map.pgm"), rmap.freq_hz, h, invalid=rmap.flagged
    )
    fileio.write_pgm(
        os.path.join(cfg.out_dir, "hwhm_map.pgm"), rmap.hwhm_hz, h, invalid=rmap.flagged
    )
    jm, im = stats.peak_index
    fileio.write_trace_csv(
        os.path.join(cfg.out_dir, "hotspot_trace.csv"),
        binned.tau_s, binned.contrast[jm, im], h,
    )

    valid = rmap.freq_hz[~rmap.flagged]
    report = [
        f"config {h}",
        f"map size {rmap.shape[1]} x {rmap.shape[0]} px",
        f"max {stats.max_hz:.6g} Hz",
        f"top8_mean {stats.top8_mean_hz:.6g} Hz",
        f"bulk {bulk_hz:.6g} Hz",
        f"enhancement_ratio {stats.ratio:.4f}",
        f"uncertainty {stats.uncertainty_hz:.6g} Hz",
        f"hotspot_equiv_diameter {footprint['equiv_diameter_m']:.4g} m",
        f"map_mean {valid.mean():.6g} Hz",
        f"map_std {valid.std():.6g} Hz",
        f"flagged_pixels {int(rmap.flagged.sum())}",
    ]
    report_path = os.path.join(cfg.out_dir, "report.txt")
    with open(report_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(report) + "\n")
    print("\n".join(report))
    return rmap, stats


def run_sweep(cfg: RunConfig):
    """Hotspot frequency versus drive power, with the sqrt(P) fit."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    powers = cfg.sweep.powers_dbm
    if len(powers) < 3:
        raise ValidationError("sweep needs at least 3 powers")
    freqs = []
    failures = []
    if cfg.sweep.mode == "injected":
        # exact-linear synthetic injection: f = slope * sqrt(P)
        for p in powers:
            freqs.append(
                cfg.sweep.injected_slope_hz_per_sqrtw * float(np.sqrt(imaging.dbm_to_watt(p)))
            )
    else:
        fmap = _field_map_for_pipeline(cfg)
        tau = cfg.pipeline.tau_grid()
        for p in powers:
            try:
                scale = _power_scale(cfg, p)
                ideal = imaging.rabi_field_to_map(fmap.scaled(scale), cfg.nv, camera=cfg.camera)
                seed = cfg.pipeline.seed if cfg.pipeline.noise else None
                camera = cfg.camera
                if not cfg.pipeline.noise:
                    camera = imaging.CameraConfig(**{**camera.__dict__, "noise_sigma0": 0.0})
                frames = imaging.render_frames(
                    ideal, camera, tau, cfg.pipeline.t_dec_s, cfg.nv, seed=seed
                )
                binned = imaging.bin_and_normalize(frames)
                rmap = imaging.build_rabi_map(
                    binned, zero_fill=cfg.pipeline.zero_fill,
                    guard_bins=cfg.pipeline.guard_bins,
                )
                stats = imaging.enhancement_stats(rmap, cfg.pipeline.bulk_rabi_hz * scale)
                freqs.append(stats.top8_mean_hz)
            except Exception as exc:  # partial results + nonzero exit
                logger.error("power %s dBm failed: %s", p, exc)
                failures.append((p, str(exc)))
                freqs.append(float("nan"))

    good = [(p, f) for p, f in zip(powers, freqs) if np.isfinite(f)]
    h = cfg.hash
    csv_path = os.path.join(cfg.out_dir, "sweep.csv")
    with open(csv_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# power sweep config={h}\n")
        fh.write("power_dbm,sqrt_p_w,freq_hz\n")
        for p, f in zip(powers, freqs):
            fh.write(
                f"{p!r},{float(np.sqrt(imaging.dbm_to_watt(p)))!r},{f!r}\n"
            )

    fit = None
    if len(good) >= 3:
        fit = imaging.fit_linearity([p for p, _ in good], [f for _, f in good])
        lines = [
            f"config {h}",
            f"slope {fit.slope:.6g} Hz/sqrt(W)",
            f"intercept {fit.intercept:.6g} Hz",
            f"r_squared {fit.r_squared:.6f}",
        ]
        with open(os.path.join(cfg.out_dir, "sweep_fit.txt"), "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        print("\n".join(lines))
    if failures:
        raise ConvergenceError(f"{len(failures)} of {len(powers)} powers failed")
    return fit, list(zip(powers, freqs))


def run_oracle(args):
    """Tabulate an analytic source along a scan line."""
    n = args.points
    t = np.linspace(args.start, args.stop, n)
    pts = np.zeros((n, 3))
    pts[:, {"x": 0, "y": 1, "z": 2}[args.scan_axis]] = t

    fields = {}
    if args.kind == "dipole":
        src = analytic.HertzianDipole(
            moment=args.moment, position=(0.0, 0.0, 0.0),
            orientation=(0.0, 0.0, 1.0), frequency=args.frequency,
        )
        e, b = analytic.hertzian_dipole_field(src, pts)
        for i, c in enumerate("xyz"):
            fields[f"e{c}_re"] = e[:, i].real
            fields[f"e{c}_im"] = e[:, i].imag
        for i, c in enumerate("xyz"):
            fields[f"b{c}_re"] = b[:, i].real
            fields[f"b{c}_im"] = b[:, i].imag
    elif args.kind == "loop":
        src = analytic.CurrentLoop(
            radius=args.radius, center=(0.0, 0.0, 0.0),
            normal=(0.0, 0.0, 1.0), current=args.current,
        )
        b = analytic.loop_biot_savart(src, pts)
        for i, c in enumerate("xyz"):
            fields[f"b{c}"] = b[:, i]
    elif args.kind == "uniform":
        src = analytic.Uniform(b=tuple(args.b))
        b = analytic.uniform_field(src, pts)
        for i, c in enumerate("xyz"):
            fields[f"b{c}"] = b[:, i]
    else:
        raise ValidationError(f"unknown oracle kind {args.kind!r}")

    fileio.write_points_csv(args.out, pts, fields, config_hash="oracle")
    print(f"wrote {args.out} ({n} points)")


def run_validate(cfg: RunConfig):
    s = cfg.scene.summary
    print(f"config hash: {cfg.hash}")
    print(f"cells: {s['cells']}, conductor voxels: {s['conductor_voxels']}")
    print(f"extents: {tuple(f'{v:.3g}' for v in s['extents_m'])} m")
    print(f"probe plane: z = {s['z_probe_m']:.3g} m (k = {s['k_probe']})")
    for w in s["warnings"]:
        print(f"warning: {w}")
    print("config ok")


def _add_common(p):
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--threads", type=int, help="solver thread count override")
    p.add_argument("--seed", type=int, help="pipeline RNG seed override")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="rabimap",
        description="Microwave near-field imaging through NV Rabi oscillations",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptxt in (
        ("validate", "check a config and print the scene summary"),
        ("simulate", "run the field solve and write the probe map"),
        ("pipeline", "render, extract and analyze the Rabi map"),
        ("sweep", "hotspot frequency versus drive power"),
    ):
        p = sub.add_parser(name, help=helptxt)
        _add_common(p)

    p = sub.add_parser("oracle", help="tabulate an analytic reference field")
    p.add_argument("--kind", required=True, choices=["dipole", "loop", "uniform"])
    p.add_argument("--out", required=True)
    p.add_argument("--scan-axis", default="z", choices=["x", "y", "z"])
    p.add_argument("--start", type=float, default=1e-6)
    p.add_argument("--stop", type=float, default=1e-4)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--frequency", type=float, default=3.01e9)
    p.add_argument("--moment", type=float, default=1e-6)
    p.add_argument("--radius", type=float, default=1e-6)
    p.add_argument("--current", type=float, default=1e-3)
    p.add_argument("--b", type=float, nargs=3, default=(0.0, 0.0, 1e-3))
    return ap


def _load(args) -> RunConfig:
    overrides = {}
    if args.out:
        overrides["output.dir"] = args.out
    if args.threads is not None:
        overrides["solver.threads"] = args.threads
    if args.seed is not None:
        overrides["pipeline.seed"] = args.seed
    return load_run_config(args.config, overrides=overrides)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle":
            run_oracle(args)
            return EXIT_OK
        cfg = _load(args)
        if args.command == "validate":
            run_validate(cfg)
        elif args.command == "simulate":
            run_simulate(cfg)
        elif args.command == "pipeline":
            run_pipeline(cfg)
        elif args.command == "sweep":
            run_sweep(cfg)
        return EXIT_OK
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"solver error: {exc} (metric={exc.metric})", file=sys.stderr)
        return EXIT_SOLVER
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc} (stage={exc.stage})", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
