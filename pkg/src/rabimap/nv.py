"""NV-center spin response to a microwave drive field.

Ground-state physics of the nitrogen-vacancy spin used as a microwave
field probe:

- resonance frequencies ``f+- = D +- gamma B0`` for a bias field along
  the defect axis,
- the rotation from the laboratory frame into the defect frame (z'
  along the axis, tilted ``theta`` from lab z inside the xz-plane),
- decomposition of the transverse drive into circular components,
- on-resonance and detuned (effective) Rabi frequencies including the
  nitrogen-15 hyperfine doublet,
- synthesis of contrast-versus-pulse-duration traces.

Conventions
-----------
Phasors follow ``Re[F exp(-i w t)]``.  Under that choice a positive-
helicity (sigma+) drive about z' has ``By' = +i Bx'`` and the circular
amplitudes are

    B+ = |Bx' - i By'| / 2        (drives |0> -> |+1>)
    B- = |Bx' + i By'| / 2        (drives |0> -> |-1>)

so a linear transverse drive of amplitude B1 splits into equal halves
and gives the standard rotating-wave result ``f_rabi = gamma * B1 / 2``.
Rabi frequencies are quoted in Hz (cycles per second) throughout:
``f_rabi = gamma * B_pm`` with gamma in Hz/T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class NVConfig:
    """Physical constants and geometry of the probed NV transition.

    Defaults: zero-field splitting 2.87 GHz, electron gyromagnetic ratio
    28 GHz/T, bias field 4.6 mT along the axis, axis tilted 54.74 deg
    from lab z in the xz-plane, 3 MHz hyperfine splitting.

    ``f_mw`` is the applied microwave frequency; ``None`` means "at the
    center of the hyperfine doublet" of the selected transition, which
    makes the doublet detunings opposite and the Rabi trace beat-free.
    """

    d_hz: float = 2.87e9
    gamma_hz_per_t: float = 28e9
    b0_t: float = 4.6e-3
    theta_deg: float = 54.74
    a_par_hz: float = 3.0e6
    f_mw_hz: float | None = None
    transition: int = +1

    def __post_init__(self):
        if min(self.d_hz, self.gamma_hz_per_t, self.b0_t, self.a_par_hz) <= 0.0:
            raise ValidationError("D, gamma, B0 and A_par must all be > 0")
        if not 0.0 <= self.theta_deg < 90.0:
            raise ValidationError("axis angle must satisfy 0 <= theta < 90 deg")
        if self.transition not in (+1, -1):
            raise ValidationError("transition selector must be +1 or -1")


@dataclass(frozen=True, eq=False)
class DriveField:
    """Complex drive-field phasor expressed in the defect frame (tesla).

    Components may be scalars or equal-shaped arrays (one phasor per
    image pixel).
    """

    bx: np.ndarray
    by: np.ndarray
    bz: np.ndarray


@dataclass(frozen=True, eq=False)
class RabiTrace:
    """Contrast versus microwave pulse duration for one binned pixel."""

    tau_s: np.ndarray
    contrast: np.ndarray
    t_dec_s: float
    noise_sigma: float

    def __post_init__(self):
        tau = np.asarray(self.tau_s, dtype=float)
        if tau.ndim != 1 or tau.size < 2:
            raise ValidationError("a trace needs at least two samples")
        if np.any(np.diff(tau) <= 0.0):
            raise ValidationError("tau grid must be strictly increasing")


def resonance_frequencies(cfg: NVConfig):
    """(f_minus, f_plus) of the |0> -> |-1> and |0> -> |+1> transitions.

    For the bias field aligned with the defect axis the Zeeman shift is
    linear: ``f+- = D +- gamma B0``.
    """
    shift = cfg.gamma_hz_per_t * cfg.b0_t
    return cfg.d_hz - shift, cfg.d_hz + shift


def nv_rotation(cfg: NVConfig):
    """Rotation matrix taking lab-frame vectors to the defect frame.

    The defect axis (z') lies in the lab xz-plane at ``theta`` from z;
    x' is chosen in the same plane and y' = z' x x' (= lab y).  The
    matrix is orthonormal with determinant +1.
    """
    th = math.radians(cfg.theta_deg)
    ct, st = math.cos(th), math.sin(th)
    return np.array(
        [
            [ct, 0.0, -st],
            [0.0, 1.0, 0.0],
            [st, 0.0, ct],
        ]
    )


def lab_to_nv(v, cfg: NVConfig) -> DriveField:
    """Transform a (possibly complex) lab-frame vector into the defect frame.

    Parameters
    ----------
    v : array_like, shape (..., 3)
        Lab-frame vector or phasor.

    Returns
    -------
    DriveField with components of shape ``(...)``.
    """
    v = np.asarray(v)
    rot = nv_rotation(cfg)
    out = np.einsum("ij,...j->...i", rot, v)
    return DriveField(bx=out[..., 0], by=out[..., 1], bz=out[..., 2])


def circular_amplitudes(d: DriveField):
    """Split the transverse drive into circular components.

    Returns ``(B_plus, B_minus)`` with ``B+- = |Bx' -+ i By'|/2``.  The
    axial component drives no transition and is discarded.  The
    magnitudes are invariant under any rotation of the transverse basis
    about the defect axis.
    """
    bx = np.asarray(d.bx, dtype=complex)
    by = np.asarray(d.by, dtype=complex)
    b_plus = 0.5 * np.abs(bx - 1j * by)
    b_minus = 0.5 * np.abs(bx + 1j * by)
    return b_plus, b_minus


def rabi_frequency(b_pm, cfg: NVConfig):
    """On-resonance Rabi frequency (Hz) for a circular amplitude (T).

    ``f_rabi = gamma * B_pm``, with B+ feeding the |0> -> |+1>
    transition and B- the |0> -> |-1> transition.
    """
    b_pm = np.asarray(b_pm, dtype=float)
    if np.any(b_pm < 0.0):
        raise ValidationError("circular amplitude must be >= 0")
    return cfg.gamma_hz_per_t * b_pm


def hyperfine_detunings(cfg: NVConfig, f_center):
    """Detunings from the two nitrogen-15 hyperfine lines.

    The doublet sits at ``f_center +- A_par/2``; each detuning is
    ``f_mw - line``.  With the drive at the doublet center the result is
    ``(+A_par/2, -A_par/2)``.
    """
    f_mw = cfg.f_mw_hz if cfg.f_mw_hz is not None else f_center
    half = 0.5 * cfg.a_par_hz
    return f_mw - (f_center - half), f_mw - (f_center + half)


def effective_rabi(omega0_hz, delta_hz):
    """Detuned Rabi frequency ``sqrt(omega0^2 + delta^2)`` (Hz)."""
    return np.hypot(omega0_hz, delta_hz)


def transition_center(cfg: NVConfig):
    """Resonance frequency of the configured transition selector."""
    f_minus, f_plus = resonance_frequencies(cfg)
    return f_plus if cfg.transition == +1 else f_minus


def trace_model(omega0_hz, detunings_hz, tau_s, t_dec_s):
    """Noiseless doublet-averaged Rabi contrast model.

    contrast(tau) = 1/2 sum_i [ (d_i^2 + w0^2 cos(2 pi f_eff,i tau)) / f_eff,i^2 ]
                    * exp(-tau / t_dec)

    with ``f_eff,i = sqrt(w0^2 + d_i^2)``.  Vectorized: ``omega0_hz``
    may have any shape; the result gains a trailing tau axis.  The
    degenerate ``w0 = d_i = 0`` case takes its limit value 1.
    """
    w0 = np.asarray(omega0_hz, dtype=float)[..., None]
    tau = np.asarray(tau_s, dtype=float)
    acc = 0.0
    for d in detunings_hz:
        f_eff = np.hypot(w0, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = (d**2 + w0**2 * np.cos(2.0 * math.pi * f_eff * tau)) / f_eff**2
        term = np.where(f_eff > 0.0, term, 1.0)
        acc = acc + term
    env = np.exp(-tau / t_dec_s) if np.isfinite(t_dec_s) else 1.0
    return (acc / len(detunings_hz)) * env


def synthesize_trace(
    omega0_hz,
    cfg: NVConfig,
    tau_s,
    t_dec_s=2e-6,
    noise_sigma=0.0,
    seed=None,
) -> RabiTrace:
    """Generate a contrast trace for one pixel.

    The microwave is detuned from the two hyperfine lines according to
    ``cfg`` (doublet center by default, which keeps the trace free of
    beats).  Gaussian noise of standard deviation ``noise_sigma`` is
    added with an explicit seed, and the result is clipped to the
    physical contrast range [-1.5, 1.5].

    Raises
    ------
    ValidationError
        If the tau grid is not uniform.
    """
    tau = np.asarray(tau_s, dtype=float)
    if tau.ndim != 1 or tau.size < 2:
        raise ValidationError("tau grid needs at least two samples")
    steps = np.diff(tau)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ValidationError("tau grid must be uniform and increasing")

    detunings = hyperfine_detunings(cfg, transition_center(cfg))
    contrast = trace_model(float(omega0_hz), detunings, tau, t_dec_s)
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        contrast = contrast + rng.normal(0.0, noise_sigma, size=tau.shape)
        contrast = np.clip(contrast, -1.5, 1.5)
    return RabiTrace(tau_s=tau, contrast=contrast, t_dec_s=t_dec_s, noise_sigma=noise_sigma)


def uniform_drive_rabi(b0_t, cfg: NVConfig):
    """Rabi frequency of a uniform lab-z linearly polarized drive.

    Convenience for calibration: projects ``B0 z_hat`` into the defect
    frame and returns the Rabi frequency of the configured transition.
    """
    drive = lab_to_nv(np.array([0.0, 0.0, float(b0_t)], dtype=complex), cfg)
    b_plus, b_minus = circular_amplitudes(drive)
    return rabi_frequency(b_plus if cfg.transition == +1 else b_minus, cfg)
