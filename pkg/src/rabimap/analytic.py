"""Closed-form electromagnetic reference fields.

Three analytic sources used to validate the time-domain solver and to
tabulate reference data:

- the Hertzian (point) dipole, with all near- and far-zone terms,
- the magnetic field of a circular current loop, integrated by an
  adaptive Biot-Savart rule,
- the trivial uniform field.

Phasor convention: a complex amplitude ``F`` stands for the real field
``Re[F * exp(-i w t)]``.  With this sign the dipole radiates outgoing
waves with the factor ``exp(+i k r)``.

The dipole is parameterized by its current moment ``I*dl`` (A.m).  In
the static limit (k -> 0) its magnetic field reduces to the Biot-Savart
field of a current element,

    B -> mu0/(4 pi) * I*dl (n x r_hat) / r^2,

which is the cross-check used against the current-loop integrator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

from .errors import ValidationError

MU0 = constants.mu_0
EPS0 = constants.epsilon_0
C0 = constants.c


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValidationError("direction vector must be non-zero")
    return v / n


@dataclass(frozen=True)
class HertzianDipole:
    """Point current element oscillating at a fixed frequency.

    Parameters
    ----------
    moment : float
        Current moment ``I*dl`` in A.m.
    position : sequence of 3 floats
        Location of the element (m).
    orientation : sequence of 3 floats
        Direction of the current; normalized on construction.
    frequency : float
        Drive frequency (Hz), > 0.
    """

    moment: float
    position: tuple
    orientation: tuple
    frequency: float

    def __post_init__(self):
        if self.frequency <= 0.0:
            raise ValidationError("dipole frequency must be > 0")
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        object.__setattr__(self, "orientation", tuple(_unit(self.orientation)))

    @property
    def wavenumber(self):
        return 2.0 * math.pi * self.frequency / C0


@dataclass(frozen=True)
class CurrentLoop:
    """Circular loop of radius ``radius`` carrying a steady current."""

    radius: float
    center: tuple
    normal: tuple
    current: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValidationError("loop radius must be > 0")
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        object.__setattr__(self, "normal", tuple(_unit(self.normal)))

    def frame(self):
        """Orthonormal in-plane axes (u, v) completing the loop normal."""
        n = np.array(self.normal)
        ref = np.array([0.0, 0.0, 1.0])
        if abs(n @ ref) > 0.9:
            ref = np.array([1.0, 0.0, 0.0])
        u = _unit(np.cross(ref, n))
        v = np.cross(n, u)
        return u, v


@dataclass(frozen=True)
class Uniform:
    """Spatially constant magnetic field (tesla)."""

    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))


def hertzian_dipole_field(src: HertzianDipole, r):
    """Complex (E, B) phasors of a Hertzian dipole at points ``r``.

    Includes the full 1/r, 1/r^2 and 1/r^3 dependence, so it is valid
    from the quasistatic zone through the far field.

    Parameters
    ----------
    src : HertzianDipole
    r : array_like, shape (..., 3)
        Evaluation points (m); must not coincide with the source.

    Returns
    -------
    (E, B) : complex ndarrays, shape (..., 3)
        Electric field phasor (V/m) and magnetic field phasor (T).
    """
    r = np.asarray(r, dtype=float)
    rel = r - np.array(src.position)
    dist = np.linalg.norm(rel, axis=-1)
    if np.any(dist == 0.0):
        raise ValidationError("field requested at the dipole position")

    n = np.array(src.orientation)
    k = src.wavenumber
    omega = 2.0 * math.pi * src.frequency
    rhat = rel / dist[..., None]
    phase = np.exp(1j * k * dist)

    # B = mu0/(4 pi) I dl (n x rhat) (1 - i k r) e^{ikr} / r^2
    n_x_rhat = np.cross(np.broadcast_to(n, rhat.shape), rhat)
    b = (MU0 / (4.0 * math.pi) * src.moment) * n_x_rhat * (
        (1.0 - 1j * k * dist) * phase / dist**2
    )[..., None]

    # E from the standard dipole solution with p = I dl / (-i w):
    #   E = i I dl /(4 pi eps0 w) [ k^2 (rhat x n) x rhat / r
    #                               + (3 rhat (rhat.n) - n)(1/r^3 - ik/r^2) ] e^{ikr}
    rad = np.cross(np.cross(rhat, np.broadcast_to(n, rhat.shape)), rhat)
    ndotr = np.einsum("...i,i->...", rhat, n)
    near = 3.0 * rhat * ndotr[..., None] - n
    e = (1j * src.moment / (4.0 * math.pi * EPS0 * omega)) * phase[..., None] * (
        rad * (k**2 / dist)[..., None]
        + near * (1.0 / dist**3 - 1j * k / dist**2)[..., None]
    )
    return e, b


def loop_biot_savart(src: CurrentLoop, r, rel_tol=1e-9, max_segments=1 << 16):
    """Magnetic field of a circular current loop at points ``r``.

    Midpoint-rule Biot-Savart integration around the loop.  Because the
    integrand is periodic and smooth for any point off the wire, the
    rule converges spectrally; the segment count is doubled until the
    field changes by less than ``rel_tol`` relative.

    Parameters
    ----------
    src : CurrentLoop
    r : array_like, shape (..., 3)
        Evaluation points (m), none of them on the wire.

    Returns
    -------
    B : float ndarray, shape (..., 3)
        Static magnetic field (T).
    """
    pts = np.atleast_2d(np.asarray(r, dtype=float))
    shape = pts.shape
    pts = pts.reshape(-1, 3)

    center = np.array(src.center)
    nrm = np.array(src.normal)
    rel = pts - center
    z = rel @ nrm
    rho = np.linalg.norm(rel - z[:, None] * nrm, axis=-1)
    wire_dist = np.hypot(rho - src.radius, z)
    if np.any(wire_dist < 1e-9 * src.radius):
        raise ValidationError("field requested on the loop wire")

    u, v = src.frame()
    pref = MU0 * src.current / (4.0 * math.pi)
    out = np.empty_like(pts)
    for ip, p in enumerate(pts):
        nseg = 64
        prev = None
        while True:
            theta = (np.arange(nseg) + 0.5) * (2.0 * math.pi / nseg)
            ct, st = np.cos(theta), np.sin(theta)
            mid = center + src.radius * (ct[:, None] * u + st[:, None] * v)
            # dl = a dtheta * tangent
            dl = (src.radius * 2.0 * math.pi / nseg) * (-st[:, None] * u + ct[:, None] * v)
            sep = p - mid
            d3 = np.linalg.norm(sep, axis=-1) ** 3
            b = pref * np.sum(np.cross(dl, sep) / d3[:, None], axis=0)
            if prev is not None:
                scale = np.linalg.norm(b)
                if scale == 0.0 or np.linalg.norm(b - prev) <= rel_tol * scale:
                    break
            if nseg >= max_segments:
                raise ConvergenceWarningError(
                    f"Biot-Savart did not converge at {p} with {nseg} segments"
                )
            prev = b
            nseg *= 2
        out[ip] = b
    return out.reshape(shape)


class ConvergenceWarningError(RuntimeError):
    """Adaptive Biot-Savart hit its segment budget (point too close to
    the wire for the requested tolerance)."""


def loop_field_on_axis(src: CurrentLoop, z):
    """Closed form ``mu0 I a^2 / (2 (a^2+z^2)^{3/2})`` along the loop axis."""
    z = np.asarray(z, dtype=float)
    a = src.radius
    return MU0 * src.current * a**2 / (2.0 * (a**2 + z**2) ** 1.5)


def uniform_field(src: Uniform, r):
    """The constant vector of a uniform field, broadcast over ``r``."""
    r = np.asarray(r, dtype=float)
    out = np.empty(r.shape, dtype=float)
    out[...] = np.array(src.b)
    return out


def divergence_b(field_fn, r, h):
    """Central-difference divergence of a vector field at points ``r``.

    Used by the validation suite to confirm that every oracle field is
    solenoidal away from its source.
    """
    r = np.asarray(r, dtype=float)
    div = 0.0
    for ax in range(3):
        step = np.zeros(3)
        step[ax] = h
        fp = field_fn(r + step)
        fm = field_fn(r - step)
        div = div + (fp[..., ax] - fm[..., ax]) / (2.0 * h)
    return div
