"""Camera forward model and Rabi-map reconstruction.

Forward: project a solved field map through the spin response into an
ideal Rabi-frequency grid, render contrast frames versus microwave
pulse duration (optics blur, shot-like noise, reference frames), bin
and normalize.  Inverse: per-binned-pixel FFT with zero filling, peak
pick with a DC guard, half-width error bars, map assembly, enhancement
statistics against the bulk drive, and the square-root-power linearity
fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from . import nv as nv_mod
from .errors import BoundsError, ValidationError


@dataclass(frozen=True)
class CameraConfig:
    """Sensor geometry and acquisition statistics.

    Defaults follow the reference acquisition: 528 x 512 pixels viewing
    34.9 x 33.9 um (66 nm pitch), 4 x 4 binning, 24000 cycles per frame
    repeated 200 times.  ``noise_sigma0`` is the single-cycle contrast
    noise; per-pixel frame noise is ``sigma0 / sqrt(cycles * repeats)``.
    ``origin`` places the lower-left corner of the field of view in lab
    coordinates (``None`` centers it on the lab origin).
    """

    sensor_px: tuple = (528, 512)
    fov_m: tuple = (34.9e-6, 33.9e-6)
    bin_factor: int = 4
    cycles: int = 24000
    repeats: int = 200
    psf_sigma_m: float | None = 0.25e-6
    noise_sigma0: float = 120.0
    origin_m: tuple | None = None

    def __post_init__(self):
        nx, ny = self.sensor_px
        if nx < 1 or ny < 1:
            raise ValidationError("sensor must have at least one pixel")
        if self.bin_factor < 1 or nx % self.bin_factor or ny % self.bin_factor:
            raise ValidationError("bin factor must divide both sensor dimensions")
        if self.fov_m[0] <= 0 or self.fov_m[1] <= 0:
            raise ValidationError("field of view must be positive")
        if self.cycles < 1 or self.repeats < 1:
            raise ValidationError("cycles and repeats must be >= 1")

    @property
    def pixel_pitch(self):
        return self.fov_m[0] / self.sensor_px[0], self.fov_m[1] / self.sensor_px[1]

    @property
    def binned_px(self):
        return self.sensor_px[0] // self.bin_factor, self.sensor_px[1] // self.bin_factor

    def window(self):
        """(x0, y0) of the field-of-view corner in lab coordinates."""
        if self.origin_m is not None:
            return float(self.origin_m[0]), float(self.origin_m[1])
        return -0.5 * self.fov_m[0], -0.5 * self.fov_m[1]

    @property
    def frame_noise_sigma(self):
        return self.noise_sigma0 / math.sqrt(self.cycles * self.repeats)


@dataclass(frozen=True, eq=False)
class FrameStack:
    """Rendered contrast frames (τ, y, x) plus microwave-off references."""

    tau_s: np.ndarray
    signal: np.ndarray
    reference: np.ndarray
    camera: CameraConfig

    def __post_init__(self):
        if self.signal.shape != self.reference.shape:
            raise ValidationError("signal and reference stacks must match")
        if self.signal.shape[0] != len(self.tau_s):
            raise ValidationError("frame count must match the tau grid")


@dataclass(frozen=True, eq=False)
class BinnedTraces:
    """Per-bin normalized contrast traces, (y, x, τ) indexed."""

    tau_s: np.ndarray
    contrast: np.ndarray
    flagged: np.ndarray


@dataclass(frozen=True, eq=False)
class RabiMap:
    """Extracted peak-frequency map with per-pixel half-width errors."""

    freq_hz: np.ndarray
    hwhm_hz: np.ndarray
    flagged: np.ndarray
    pitch_m: tuple
    origin_m: tuple
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self):
        return self.freq_hz.shape


class PeakResult(NamedTuple):
    freq_hz: float
    hwhm_hz: float
    ok: bool


# ---------------------------------------------------------------------------
# Forward model
# ---------------------------------------------------------------------------
def rabi_field_to_map(field_map, cfg: nv_mod.NVConfig, camera: CameraConfig | None = None):
    """Ideal Rabi-frequency grid (Hz) of a complex field map.

    Per cell: rotate the phasor into the defect frame, split into
    circular components and keep the one driving the configured
    transition.  With ``camera`` given, the complex components are first
    resampled bilinearly onto the sensor pixel grid (the two windows
    must overlap the sensor fully).
    """
    stack = field_map.stack()
    if camera is not None:
        stack = _resample_to_sensor(field_map, camera)
    drive = nv_mod.lab_to_nv(stack, cfg)
    b_plus, b_minus = nv_mod.circular_amplitudes(drive)
    b_sel = b_plus if cfg.transition == +1 else b_minus
    return nv_mod.rabi_frequency(b_sel, cfg)


def _resample_to_sensor(field_map, camera: CameraConfig):
    nx, ny = camera.sensor_px
    px, py = camera.pixel_pitch
    x0, y0 = camera.window()
    xs = x0 + (np.arange(nx) + 0.5) * px
    ys = y0 + (np.arange(ny) + 0.5) * py
    fx = (xs - field_map.x0) / field_map.pitch_x
    fy = (ys - field_map.y0) / field_map.pitch_y
    h, w = field_map.shape
    if fx.min() < -0.5 or fx.max() > w - 0.5 or fy.min() < -0.5 or fy.max() > h - 0.5:
        raise BoundsError("camera window extends beyond the solved field map")
    cols, rows = np.meshgrid(fx, fy)
    coords = np.stack([rows.ravel(), cols.ravel()])
    out = np.empty((ny, nx, 3), dtype=complex)
    for c, plane in enumerate((field_map.bx, field_map.by, field_map.bz)):
        re = ndimage.map_coordinates(plane.real, coords, order=1, mode="nearest")
        im = ndimage.map_coordinates(plane.imag, coords, order=1, mode="nearest")
        out[..., c] = (re + 1j * im).reshape(ny, nx)
    return out


def render_frames(
    ideal_hz,
    camera: CameraConfig,
    tau_s,
    t_dec_s,
    cfg: nv_mod.NVConfig,
    seed=None,
) -> FrameStack:
    """Render the acquisition: per-pixel Rabi traces, optional optical
    blur, and Gaussian noise scaled by the averaging statistics.

    Reference frames model the microwave-off acquisition: unity
    contrast plus the same noise level.
    """
    ideal = np.asarray(ideal_hz, dtype=float)
    ny, nx = ideal.shape
    tau = np.asarray(tau_s, dtype=float)
    steps = np.diff(tau)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ValidationError("tau grid must be uniform and increasing")
    detunings = nv_mod.hyperfine_detunings(cfg, nv_mod.transition_center(cfg))

    signal = np.empty((len(tau), ny, nx), dtype=np.float32)
    chunk = max(1, int(4e6 / (ny * nx)))
    for t0 in range(0, len(tau), chunk):
        t1 = min(t0 + chunk, len(tau))
        block = nv_mod.trace_model(ideal, detunings, tau[t0:t1], t_dec_s)
        signal[t0:t1] = np.moveaxis(block, -1, 0)

    if camera.psf_sigma_m:
        px, py = camera.pixel_pitch
        sig = (camera.psf_sigma_m / py, camera.psf_sigma_m / px)
        for i in range(len(tau)):
            signal[i] = ndimage.gaussian_filter(signal[i], sigma=sig, mode="nearest")

    reference = np.ones_like(signal)
    sigma = camera.frame_noise_sigma
    if sigma > 0.0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(signal.shape, dtype=np.float32)
        noise *= sigma
        signal += noise
        noise = rng.standard_normal(signal.shape, dtype=np.float32)
        noise *= sigma
        reference += noise
    return FrameStack(tau_s=tau, signal=signal, reference=reference, camera=camera)


def bin_and_normalize(stack: FrameStack, bin_factor=None) -> BinnedTraces:
    """Average bins of pixels and normalize by the microwave-off frames.

    Bins where the reference average vanishes (|mean| < 1e-6) are
    flagged and excluded from downstream maps.
    """
    b = bin_factor if bin_factor is not None else stack.camera.bin_factor
    nt, ny, nx = stack.signal.shape
    if ny % b or nx % b:
        raise ValidationError("bin factor must divide the frame dimensions")
    sig = stack.signal.reshape(nt, ny // b, b, nx // b, b).mean(axis=(2, 4))
    ref = stack.reference.reshape(nt, ny // b, b, nx // b, b).mean(axis=(2, 4))
    bad = np.abs(ref) < 1e-6
    ref = np.where(bad, 1.0, ref)
    contrast = sig / ref
    flagged = bad.any(axis=0)
    return BinnedTraces(
        tau_s=stack.tau_s,
        contrast=np.moveaxis(contrast, 0, -1).astype(np.float64),
        flagged=flagged,
    )


# ---------------------------------------------------------------------------
# Spectral inversion
# ---------------------------------------------------------------------------
def _peak_pick(traces, dtau, zero_fill, guard_bins=2):
    """Vectorized FFT peak search over (pixels, samples) traces.

    Mean subtraction, zero padding to ``zero_fill`` times the record,
    magnitude peak above a DC guard of ``guard_bins`` unpadded bins
    (the guard keeps decay-envelope leakage from outbidding the tone),
    and a linearly interpolated half-maximum half width.
    """
    traces = np.atleast_2d(np.asarray(traces, dtype=float))
    n_px, n = traces.shape
    if n < 8:
        raise ValidationError("need at least 8 samples for spectral extraction")
    if zero_fill < 1:
        raise ValidationError("zero_fill must be >= 1")
    m = n * int(zero_fill)
    x = traces - traces.mean(axis=1, keepdims=True)
    flat = np.ptp(traces, axis=1) == 0.0
    spec = np.abs(np.fft.rfft(x, n=m, axis=1))
    freqs = np.fft.rfftfreq(m, dtau)
    kmin = int(guard_bins) * int(zero_fill)
    if kmin >= spec.shape[1] - 1:
        raise ValidationError("guard band leaves no usable spectrum")

    kpk = kmin + np.argmax(spec[:, kmin:], axis=1)
    f_pk = freqs[kpk]
    hwhm = np.zeros(n_px)
    for p in range(n_px):
        if flat[p]:
            continue
        row = spec[p]
        k = kpk[p]
        half = 0.5 * row[k]
        # walk left
        kl = k
        while kl > 0 and row[kl] > half:
            kl -= 1
        if row[kl] > half:
            f_lo = freqs[0]
        else:
            frac = (half - row[kl]) / (row[kl + 1] - row[kl])
            f_lo = freqs[kl] + frac * (freqs[kl + 1] - freqs[kl])
        # walk right
        kr = k
        last = len(row) - 1
        while kr < last and row[kr] > half:
            kr += 1
        if row[kr] > half:
            f_hi = freqs[last]
        else:
            frac = (row[kr - 1] - half) / (row[kr - 1] - row[kr])
            f_hi = freqs[kr - 1] + frac * (freqs[kr] - freqs[kr - 1])
        hwhm[p] = 0.5 * (f_hi - f_lo)

    f_pk = np.where(flat, 0.0, f_pk)
    hwhm = np.where(flat, 0.0, hwhm)
    return f_pk, hwhm, flat


def extract_frequency(trace, zero_fill=10, guard_bins=2) -> PeakResult:
    """Peak frequency and half width of one contrast trace.

    Accepts a :class:`rabimap.nv.RabiTrace` or a ``(tau, contrast)``
    pair.  An all-constant trace yields ``(0, 0, ok=False)`` rather than
    an exception.
    """
    if isinstance(trace, nv_mod.RabiTrace):
        tau, contrast = trace.tau_s, trace.contrast
    else:
        tau, contrast = trace
    tau = np.asarray(tau, dtype=float)
    dtau = tau[1] - tau[0]
    f, w, flat = _peak_pick(contrast[None, :], dtau, zero_fill, guard_bins)
    return PeakResult(float(f[0]), float(w[0]), not bool(flat[0]))


def build_rabi_map(
    binned: BinnedTraces,
    zero_fill=10,
    guard_bins=2,
    pitch_m=(1.0, 1.0),
    origin_m=(0.0, 0.0),
) -> RabiMap:
    """Per-bin spectral extraction over a full trace grid."""
    ny, nx, n = binned.contrast.shape
    traces = binned.contrast.reshape(-1, n)
    dtau = binned.tau_s[1] - binned.tau_s[0]
    freq = np.zeros(ny * nx)
    hwhm = np.zeros(ny * nx)
    flat = np.zeros(ny * nx, dtype=bool)
    chunk = 4096
    for p0 in range(0, ny * nx, chunk):
        p1 = min(p0 + chunk, ny * nx)
        f, w, fl = _peak_pick(traces[p0:p1], dtau, zero_fill, guard_bins)
        freq[p0:p1] = f
        hwhm[p0:p1] = w
        flat[p0:p1] = fl
    flagged = flat.reshape(ny, nx) | binned.flagged
    return RabiMap(
        freq_hz=freq.reshape(ny, nx),
        hwhm_hz=hwhm.reshape(ny, nx),
        flagged=flagged,
        pitch_m=tuple(pitch_m),
        origin_m=tuple(origin_m),
        meta={"zero_fill": zero_fill, "guard_bins": guard_bins},
    )


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------
class EnhancementStats(NamedTuple):
    max_hz: float
    top8_mean_hz: float
    ratio: float
    uncertainty_hz: float
    n_averaged: int
    peak_index: tuple


def enhancement_stats(rabi_map: RabiMap, bulk_hz) -> EnhancementStats:
    """Hotspot statistics: map maximum, mean of the eight highest pixels
    adjacent to it, enhancement over the bulk frequency, and an error
    bar of their spread plus the mean spectral half width."""
    if bulk_hz <= 0:
        raise ValidationError("bulk frequency must be > 0")
    valid = ~rabi_map.flagged & np.isfinite(rabi_map.freq_hz)
    if not valid.any():
        raise ValidationError("no unflagged pixels in the map")
    freq = np.where(valid, rabi_map.freq_hz, -np.inf)
    jm, im = np.unravel_index(np.argmax(freq), freq.shape)
    ny, nx = freq.shape
    j0, j1 = max(jm - 1, 0), min(jm + 2, ny)
    i0, i1 = max(im - 1, 0), min(im + 2, nx)
    neigh = freq[j0:j1, i0:i1].ravel()
    neigh_w = rabi_map.hwhm_hz[j0:j1, i0:i1].ravel()
    good = np.isfinite(neigh)
    order = np.argsort(neigh[good])[::-1][:8]
    chosen = neigh[good][order]
    chosen_w = neigh_w[good][order]
    top_mean = float(chosen.mean())
    unc = float(chosen.std() + chosen_w.mean())
    return EnhancementStats(
        max_hz=float(freq[jm, im]),
        top8_mean_hz=top_mean,
        ratio=top_mean / float(bulk_hz),
        uncertainty_hz=unc,
        n_averaged=int(len(chosen)),
        peak_index=(int(jm), int(im)),
    )


class LinearityFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def dbm_to_watt(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def fit_linearity(powers_dbm, freqs_hz) -> LinearityFit:
    """Least-squares fit of frequency against the square root of power."""
    p = np.asarray(powers_dbm, dtype=float)
    f = np.asarray(freqs_hz, dtype=float)
    if p.size < 3 or p.size != f.size:
        raise ValidationError("linearity fit needs at least 3 matched points")
    x = np.sqrt(dbm_to_watt(p))
    slope, intercept = np.polyfit(x, f, 1)
    resid = f - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((f - f.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 and ss_res < 1e-30 else 1.0 - ss_res / ss_tot
    return LinearityFit(float(slope), float(intercept), float(r2))


def calibrate_uniform_amplitude(cfg: nv_mod.NVConfig, bulk_rabi_hz):
    """Incident amplitude (tesla, lab-z polarized) that produces the
    requested bulk Rabi frequency through the spin chain."""
    base = nv_mod.uniform_drive_rabi(1.0, cfg)
    return float(bulk_rabi_hz) / float(base)


def amplitude_for_power(b0_ref_t, p_dbm, p_ref_dbm):
    """Scale a reference amplitude to another drive power (B ~ sqrt(P))."""
    return float(b0_ref_t) * 10.0 ** ((float(p_dbm) - float(p_ref_dbm)) / 20.0)


def hotspot_footprint(rabi_map: RabiMap, fraction=0.5, background_hz=None):
    """Area of the half-maximum region connected to the hotspot.

    Background defaults to the map median; returns the area (m^2) and
    the equivalent circular diameter (m).
    """
    valid = ~rabi_map.flagged & np.isfinite(rabi_map.freq_hz)
    if not valid.any():
        raise ValidationError("no unflagged pixels in the map")
    freq = np.where(valid, rabi_map.freq_hz, np.nan)
    bg = float(np.nanmedian(freq)) if background_hz is None else float(background_hz)
    peak = float(np.nanmax(freq))
    thresh = bg + fraction * (peak - bg)
    above = np.nan_to_num(freq, nan=-np.inf) >= thresh
    labels, _ = ndimage.label(above)
    jm, im = np.unravel_index(np.nanargmax(np.nan_to_num(freq, nan=-np.inf)), freq.shape)
    region = labels == labels[jm, im]
    area = float(region.sum()) * rabi_map.pitch_m[0] * rabi_map.pitch_m[1]
    return {"area_m2": area, "equiv_diameter_m": 2.0 * math.sqrt(area / math.pi)}
