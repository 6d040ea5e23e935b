"""Yee-grid FDTD engine with harmonic steady-state extraction.

Time-steps Maxwell's equations on a staggered grid and extracts the
complex magnetic-field phasor on a probe plane at the drive frequency.

Formulation
-----------
The solver advances the *scattered* field.  The incident field (uniform
magnetic drive or an anti-phased dipole pair) is known in closed form,
so conductor coupling reduces to forcing the tangential scattered E on
every conductor edge to ``-E_inc(t)``; the scattered wave is absorbed by
a convolutional PML (CPML per Roden & Gedney):

    psi  <- b psi + c (spatial difference)
    b    = exp(-(sigma/kappa + alpha) dt / eps0)
    c    = sigma (b - 1) / ((sigma + kappa alpha) kappa)

with sigma graded as (depth)^m toward the wall and the CFS alpha graded
from its maximum at the interface to zero at the wall.  An empty scene
therefore returns the incident phasor exactly.

Subwavelength operation
-----------------------
A micrometer domain at a GHz drive is ~1e-4 wavelengths across; stepping
a full period would take ~1e5 CFL steps.  In that magnetoquasistatic
regime the shape of the conductor response is frequency independent
(perfect-conductor flux exclusion is purely geometric), so the solve
runs at a rescaled frequency where the wavelength is
``subwavelength_ratio`` domain lengths, and external source positions
are rescaled with the wavelength to preserve the incident-field
structure.  The probe map records both the physical and the solver
frequency.

Phasors: ``Re[F exp(-i w t)]``; the probe phasor is obtained by an
on-the-fly discrete Fourier sum ``(2/N) sum f(t_n) exp(+i w t_n)`` over
an integer number of periods, which is exact for a periodic steady
state.  Field storage is single precision by default, accumulators are
double precision.

Time registration: within step ``n`` the magnetic field advances to
``(n + 1/2) dt`` (probe sampling happens here) and the electric field
to ``(n + 1) dt``, when soft sources and conductor forcing are applied.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from . import scene as scene_mod
from .analytic import HertzianDipole, hertzian_dipole_field
from .errors import ConvergenceError, PlacementError, ValidationError

logger = logging.getLogger(__name__)

MU0 = constants.mu_0
EPS0 = constants.epsilon_0
C0 = constants.c

_E_COMPONENTS = ("ex", "ey", "ez")
_H_COMPONENTS = ("hx", "hy", "hz")

# Axis parity of each component: position along axis is an integer node
# ("int") or a half-step center ("half").
_PARITY = {
    "ex": ("half", "int", "int"),
    "ey": ("int", "half", "int"),
    "ez": ("int", "int", "half"),
    "hx": ("int", "half", "half"),
    "hy": ("half", "int", "half"),
    "hz": ("half", "half", "int"),
}


def component_shape(comp, nx, ny, nz):
    n = (nx, ny, nz)
    return tuple(n[a] if _PARITY[comp][a] == "half" else n[a] + 1 for a in range(3))


@dataclass(frozen=True)
class SolverConfig:
    """Harmonic-run policy knobs.

    ``ramp_periods`` of raised-cosine source turn-on, then the running
    DFT is evaluated over successive windows of ``dft_periods`` until
    the probe map changes by less than ``ctol`` between windows.
    ``subwavelength_ratio`` sets the solver wavelength (in domain
    lengths) used when the physical drive is unresolvably subwavelength.
    """

    ramp_periods: float = 10.0
    dft_periods: int = 4
    max_periods: float = 40.0
    ctol: float = 1e-3
    dtype: str = "float32"
    threads: int = 1
    subwavelength_ratio: float = 12.0
    pml_m: float = 3.0
    pml_r0: float = 1e-8
    pml_kappa_max: float = 1.0
    pml_alpha_scale: float = 0.05
    skip_empty: bool = True
    use_dielectrics: bool = False

    def __post_init__(self):
        if self.dft_periods < 1 or self.ramp_periods < 0:
            raise ValidationError("period counts must be positive")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        if self.subwavelength_ratio < 2.0:
            raise ValidationError("subwavelength ratio below 2 is not quasistatic")


def check_cfl(grid, dt=None):
    """Largest stable time step for the smallest cells of ``grid``.

    ``dt_max = 1 / (c sqrt(1/dx^2 + 1/dy^2 + 1/dz_min^2))``.  A caller
    supplied ``dt`` is acceptable iff ``dt <= dt_max``.  Pure function;
    accepts anything with ``dx``, ``dy``, ``dz`` attributes.
    """
    dz = np.min(grid.dz) if not np.isscalar(grid.dz) else grid.dz
    dt_max = 1.0 / (C0 * math.sqrt(1.0 / grid.dx**2 + 1.0 / grid.dy**2 + 1.0 / dz**2))
    return dt_max


@dataclass(eq=False)
class FieldState:
    """Staggered field arrays plus simulation clock."""

    ex: np.ndarray
    ey: np.ndarray
    ez: np.ndarray
    hx: np.ndarray
    hy: np.ndarray
    hz: np.ndarray
    t: float
    dt: float
    step_index: int = 0

    def components(self):
        return {c: getattr(self, c) for c in _E_COMPONENTS + _H_COMPONENTS}


class FdtdNanError(RuntimeError):
    """A non-finite field value appeared; carries component and index."""

    def __init__(self, component, index):
        super().__init__(f"non-finite value in {component} at cell index {tuple(index)}")
        self.component = component
        self.index = tuple(index)


def assert_finite(state: FieldState):
    for name, arr in state.components().items():
        bad = ~np.isfinite(arr)
        if bad.any():
            raise FdtdNanError(name, np.argwhere(bad)[0])


def staggered_energy(e_prev_h, state: FieldState, cell_volume):
    """Discrete field energy conserved by the leapfrog in a lossless box.

    ``U = 1/2 [ eps0 |E^n|^2 + mu0 (H^{n-1/2} . H^{n+1/2}) ] dV`` with the
    magnetic part taken as the product of consecutive half-step values
    (``e_prev_h``: dict of the previous hx/hy/hz arrays).
    """
    u_e = sum(np.sum(getattr(state, c).astype(np.float64) ** 2) for c in _E_COMPONENTS)
    u_h = sum(
        np.sum(e_prev_h[c].astype(np.float64) * getattr(state, c).astype(np.float64))
        for c in _H_COMPONENTS
    )
    return 0.5 * (EPS0 * u_e + MU0 * u_h) * cell_volume


# ---------------------------------------------------------------------------
# Incident fields (closed form, evaluated wherever the solver needs them)
# ---------------------------------------------------------------------------
def incident_phasors(source, points, frequency, center, position_scale=1.0):
    """(E, B) phasors of the incident drive at ``points``.

    For the uniform variant the electric partner of a uniform oscillating
    B is the circulating field ``E = i (w B0 / 2) n x (r - r_c)``, exact
    to O((kr)^2) about the reference axis ``center``.  For the dipole
    pair, positions are scaled by ``position_scale`` about ``center``
    (wavelength rescaling preserves k*r) and the pair moment is
    normalized so that |B| at ``center`` equals the requested amplitude.
    """
    pts = np.asarray(points, dtype=float)
    omega = 2.0 * math.pi * frequency
    ctr = np.asarray(center, dtype=float)

    if isinstance(source, scene_mod.UniformField):
        n = np.array(source.polarization)
        b = np.empty(pts.shape, dtype=complex)
        b[...] = source.amplitude * n
        e = 1j * (omega * source.amplitude / 2.0) * np.cross(
            np.broadcast_to(n, pts.shape), pts - ctr
        )
        return e, b

    if isinstance(source, scene_mod.DipolePair):
        s = position_scale
        offs = np.array(
            [
                [0.0, +0.5 * source.separation, source.height],
                [0.0, -0.5 * source.separation, source.height],
            ]
        )
        moments = (+1.0, -1.0)
        dipoles = [
            HertzianDipole(
                moment=m,
                position=tuple(ctr + s * off),
                orientation=(1.0, 0.0, 0.0),
                frequency=frequency,
            )
            for m, off in zip(moments, offs)
        ]
        b_ctr = sum(hertzian_dipole_field(d, ctr[None, :])[1][0] for d in dipoles)
        norm = np.linalg.norm(b_ctr)
        if norm == 0.0:
            raise ValidationError("dipole pair produces zero field at the domain center")
        scale = source.amplitude / norm
        e = np.zeros(pts.shape, dtype=complex)
        b = np.zeros(pts.shape, dtype=complex)
        for d in dipoles:
            ed, bd = hertzian_dipole_field(d, pts)
            e += ed
            b += bd
        return e * scale, b * scale

    raise ValidationError(f"unknown source type {type(source).__name__}")


# ---------------------------------------------------------------------------
# PML profiles
# ---------------------------------------------------------------------------
class _PmlAxis:
    """Graded CPML coefficient profiles for one axis and both parities."""

    def __init__(self, n, npml, spacings, dt, params, omega):
        self.n = n
        self.npml = npml
        d_lo = float(np.sum(spacings[:npml]))
        d_hi = float(np.sum(spacings[-npml:]))
        m = params.pml_m
        sig_lo = -(m + 1.0) * EPS0 * C0 * math.log(params.pml_r0) / (2.0 * d_lo)
        sig_hi = -(m + 1.0) * EPS0 * C0 * math.log(params.pml_r0) / (2.0 * d_hi)
        alpha_max = params.pml_alpha_scale * EPS0 * omega
        kmax = params.pml_kappa_max

        def profiles(pos):
            xi_lo = np.clip((npml - pos) / npml, 0.0, None)
            xi_hi = np.clip((pos - (n - npml)) / npml, 0.0, None)
            xi = np.maximum(xi_lo, xi_hi)
            sigma = sig_lo * xi_lo**m + sig_hi * xi_hi**m
            kappa = 1.0 + (kmax - 1.0) * xi**m
            alpha = np.where(xi > 0.0, alpha_max * (1.0 - xi), 0.0)
            b = np.exp(-(sigma / kappa + alpha) * dt / EPS0)
            denom = (sigma + kappa * alpha) * kappa
            with np.errstate(divide="ignore", invalid="ignore"):
                c = sigma * (b - 1.0) / denom
            c = np.where(sigma > 0.0, c, 0.0)
            return b, c, 1.0 / kappa

        self.b_int, self.c_int, self.kinv_int = profiles(np.arange(n + 1, dtype=float))
        self.b_half, self.c_half, self.kinv_half = profiles(np.arange(n, dtype=float) + 0.5)

    def slabs(self, parity):
        """Index slices of the lo/hi PML regions for the given parity."""
        if parity == "int":
            return slice(1, self.npml + 1), slice(self.n - self.npml, self.n)
        return slice(0, self.npml), slice(self.n - self.npml, self.n)

    def coeff(self, parity, slab):
        b = self.b_int if parity == "int" else self.b_half
        c = self.c_int if parity == "int" else self.c_half
        return b[slab], c[slab]

    def kappa_inv(self, parity):
        return self.kinv_int if parity == "int" else self.kinv_half


def _reshape_axis(arr, axis):
    shape = [1, 1, 1]
    shape[axis] = len(arr)
    return np.asarray(arr).reshape(shape)


# ---------------------------------------------------------------------------
# Conductor edge sets
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class PecEdges:
    """Index arrays of forced E edges, with optional incident phasors.

    ``values`` maps a component name to ``(re, im)`` arrays of the
    incident E phasor at the edge positions; ``None`` pins the edges to
    zero (plain PEC for total-field runs).
    """

    indices: dict
    values: dict | None = None


def pec_edges_from_material(mat: scene_mod.MaterialGrid):
    """Derive forced-edge index sets from the voxelized conductor."""
    geom = mat.geom
    nx, ny, nz = geom.nx, geom.ny, geom.nz
    idx = {}
    if mat.conductor_mode == "sheet":
        m = mat.sheet_mask
        if m.any():
            k = mat.k_sheet
            pad_y = np.zeros((nx, ny + 1), dtype=bool)
            pad_y[:, :-1] |= m
            pad_y[:, 1:] |= m
            ii, jj = np.nonzero(pad_y)
            idx["ex"] = (ii, jj, np.full(ii.shape, k))
            pad_x = np.zeros((nx + 1, ny), dtype=bool)
            pad_x[:-1, :] |= m
            pad_x[1:, :] |= m
            ii, jj = np.nonzero(pad_x)
            idx["ey"] = (ii, jj, np.full(ii.shape, k))
    else:
        cond = mat.ids == scene_mod.MATERIAL_IDS[scene_mod.CONDUCTOR_MATERIAL]
        if cond.any():
            p = np.pad(cond, ((1, 1), (1, 1), (1, 1)))
            ex = p[1:-1, :-1, :-1] | p[1:-1, 1:, :-1] | p[1:-1, :-1, 1:] | p[1:-1, 1:, 1:]
            ey = p[:-1, 1:-1, :-1] | p[1:, 1:-1, :-1] | p[:-1, 1:-1, 1:] | p[1:, 1:-1, 1:]
            ez = p[:-1, :-1, 1:-1] | p[1:, :-1, 1:-1] | p[:-1, 1:, 1:-1] | p[1:, 1:, 1:-1]
            for name, mask in (("ex", ex), ("ey", ey), ("ez", ez)):
                if mask.any():
                    idx[name] = tuple(np.nonzero(mask))
    return PecEdges(indices=idx)


def edge_positions(comp, indices, geom: scene_mod.GridGeom):
    """Physical positions of E edges given their index arrays."""
    ii, jj, kk = (np.asarray(a) for a in indices)
    z_nodes = geom.z_nodes
    dzk = geom.dz
    half = {"int": 0.0, "half": 0.5}[_PARITY[comp][0]]
    x = geom.x0 + (ii + half) * geom.dx
    half = {"int": 0.0, "half": 0.5}[_PARITY[comp][1]]
    y = geom.y0 + (jj + half) * geom.dy
    if _PARITY[comp][2] == "int":
        z = z_nodes[kk]
    else:
        z = z_nodes[kk] + 0.5 * dzk[kk]
    return np.stack([x, y, z], axis=-1)


# ---------------------------------------------------------------------------
# The solver
# ---------------------------------------------------------------------------
class YeeSolver:
    """Leapfrog stepper for one grid, drive frequency and source set.

    Parameters
    ----------
    geom : GridGeom
    omega : float
        Angular drive frequency of the harmonic forcing (rad/s).
    dt : float or None
        Time step; defaults to 0.99 of the CFL bound and is validated
        against it.
    pec : PecEdges or None
        Forced tangential-E edge set (scattered-field conductor when
        ``values`` are set, plain PEC otherwise).
    soft_sources : sequence of callables ``f(state, t)``
        Additive injections applied after the E update.
    ramp_time : float
        Raised-cosine turn-on time for the harmonic forcing.
    eps_edges : dict or None
        Per-component relative-permittivity arrays for the E update.
    """

    def __init__(
        self,
        geom: scene_mod.GridGeom,
        *,
        omega,
        dt=None,
        dtype=np.float32,
        params: SolverConfig | None = None,
        pec: PecEdges | None = None,
        soft_sources=(),
        ramp_time=0.0,
        eps_edges=None,
        threads=1,
    ):
        self.geom = geom
        self.omega = float(omega)
        self.params = params or SolverConfig()
        dt_max = check_cfl(geom)
        if dt is None:
            dt = 0.99 * dt_max
        if dt > dt_max * (1.0 + 1e-12):
            raise ValidationError(
                f"dt={dt:.4g} s violates the CFL bound {dt_max:.4g} s"
            )
        self.dt = float(dt)
        self.dtype = np.dtype(dtype)
        self.pec = pec
        self.soft_sources = tuple(soft_sources)
        self.ramp_time = float(ramp_time)
        self.threads = int(threads)
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

        nx, ny, nz = geom.nx, geom.ny, geom.nz
        fields = {
            c: np.zeros(component_shape(c, nx, ny, nz), dtype=self.dtype)
            for c in _E_COMPONENTS + _H_COMPONENTS
        }
        self.state = FieldState(t=0.0, dt=self.dt, **fields)
        self._scratch = {
            c: [
                np.zeros(component_shape(c, nx, ny, nz), dtype=self.dtype)
                for _ in range(2)
            ]
            for c in _E_COMPONENTS + _H_COMPONENTS
        }

        self._inv = {
            0: 1.0 / geom.dx,
            1: 1.0 / geom.dy,
        }
        dz = geom.dz
        self._inv_dz_p = _reshape_axis(1.0 / dz, 2)
        dz_dual = np.zeros(nz + 1)
        dz_dual[1:nz] = 2.0 / (dz[:-1] + dz[1:])
        self._inv_dz_d = dz_dual
        self._inv_dz_wrap = 2.0 / (dz[0] + dz[-1])

        self._dte = self.dt / EPS0
        self._dtm = self.dt / MU0
        self._eps_coeff = None
        if eps_edges is not None:
            self._eps_coeff = {
                c: (self._dte / np.asarray(eps_edges[c])).astype(self.dtype)
                for c in _E_COMPONENTS
            }

        self._pml = {}
        for ax in range(3):
            if geom.boundary[ax] == "pml":
                n = (nx, ny, nz)[ax]
                if 2 * geom.npml >= n:
                    raise ValidationError("PML layers overlap; domain too small")
                spac = (
                    np.full(nx, geom.dx),
                    np.full(ny, geom.dy),
                    dz,
                )[ax]
                self._pml[ax] = _PmlAxis(
                    n, geom.npml, spac, self.dt, self.params, self.omega
                )

        self._build_pec_values()
        self._build_psi_terms()
        self._build_kappa_bake()

    # -- setup ------------------------------------------------------------
    def _build_pec_values(self):
        self._pec_items = []
        if self.pec is None:
            return
        for comp, indices in self.pec.indices.items():
            vals = None
            if self.pec.values is not None and comp in self.pec.values:
                vals = self.pec.values[comp]
            self._pec_items.append((comp, indices, vals))

    def _psi_spec(self):
        # (component, scratch slot, axis, sign); slot 0 holds the first
        # curl term of each component, slot 1 the second.
        return (
            ("ex", 0, 1, +1.0), ("ex", 1, 2, -1.0),
            ("ey", 0, 2, +1.0), ("ey", 1, 0, -1.0),
            ("ez", 0, 0, +1.0), ("ez", 1, 1, -1.0),
            ("hx", 0, 2, +1.0), ("hx", 1, 1, -1.0),
            ("hy", 0, 0, +1.0), ("hy", 1, 2, -1.0),
            ("hz", 0, 1, +1.0), ("hz", 1, 0, -1.0),
        )

    def _build_psi_terms(self):
        self._psi_terms = {"e": [], "h": []}
        for comp, slot, axis, sign in self._psi_spec():
            if axis not in self._pml:
                continue
            pml = self._pml[axis]
            parity = _PARITY[comp][axis]
            shape = getattr(self.state, comp).shape
            phase = "e" if comp in _E_COMPONENTS else "h"
            dtc = self._dte if phase == "e" else self._dtm
            for slab in pml.slabs(parity):
                b, c = pml.coeff(parity, slab)
                sl = [slice(None)] * 3
                sl[axis] = slab
                sl = tuple(sl)
                psi_shape = list(shape)
                psi_shape[axis] = len(b)
                self._psi_terms[phase].append(
                    {
                        "comp": comp,
                        "slot": slot,
                        "slice": sl,
                        "b": _reshape_axis(b, axis).astype(self.dtype),
                        "c": _reshape_axis(c, axis).astype(self.dtype),
                        "psi": np.zeros(psi_shape, dtype=self.dtype),
                        "sign_dtc": sign * dtc,
                    }
                )

    def _build_kappa_bake(self):
        # kappa stretching multiplies each curl-term scratch; identity
        # profiles are skipped entirely.
        self._bake = []
        if not self._pml or self.params.pml_kappa_max == 1.0:
            return
        for comp, slot, axis, _sign in self._psi_spec():
            if axis not in self._pml:
                continue
            kinv = self._pml[axis].kappa_inv(_PARITY[comp][axis])
            self._bake.append((comp, slot, _reshape_axis(kinv, axis).astype(self.dtype)))

    # -- execution helpers -------------------------------------------------
    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _run_wave(self, ops):
        """Execute (first_dim, fn) ops, split over first-axis chunks."""
        if self._pool is None:
            for n, fn in ops:
                fn(0, n)
            return
        futures = []
        for n, fn in ops:
            bounds = np.linspace(0, n, self.threads + 1).astype(int)
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                if hi > lo:
                    futures.append(self._pool.submit(fn, int(lo), int(hi)))
        done, _ = wait(futures)
        for f in done:
            f.result()

    # -- one leapfrog step --------------------------------------------------
    def step(self, sample_hook=None):
        """Advance H by one step (to t+dt/2) and E by one step (to t+dt).

        ``sample_hook(t_h)`` is invoked between the two half-updates,
        when the magnetic field sits at its natural sample time.
        """
        s = self.state
        geom = self.geom
        nx, ny, nz = geom.nx, geom.ny, geom.nz
        inv_dx, inv_dy = self._inv[0], self._inv[1]
        inv_dz_p = self._inv_dz_p
        scr = self._scratch

        ex, ey, ez, hx, hy, hz = s.ex, s.ey, s.ez, s.hx, s.hy, s.hz

        # ---- H phase: curl terms of E -----------------------------------
        def d_hx0(lo, hi):  # dEy/dz on Hx
            out = scr["hx"][0]
            np.subtract(ey[lo:hi, :, 1:], ey[lo:hi, :, :-1], out=out[lo:hi])
            out[lo:hi] *= inv_dz_p

        def d_hx1(lo, hi):  # dEz/dy on Hx
            out = scr["hx"][1]
            np.subtract(ez[lo:hi, 1:, :], ez[lo:hi, :-1, :], out=out[lo:hi])
            out[lo:hi] *= inv_dy

        def d_hy0(lo, hi):  # dEz/dx on Hy
            out = scr["hy"][0]
            np.subtract(ez[lo + 1 : hi + 1, :, :], ez[lo:hi, :, :], out=out[lo:hi])
            out[lo:hi] *= inv_dx

        def d_hy1(lo, hi):  # dEx/dz on Hy
            out = scr["hy"][1]
            np.subtract(ex[lo:hi, :, 1:], ex[lo:hi, :, :-1], out=out[lo:hi])
            out[lo:hi] *= inv_dz_p

        def d_hz0(lo, hi):  # dEx/dy on Hz
            out = scr["hz"][0]
            np.subtract(ex[lo:hi, 1:, :], ex[lo:hi, :-1, :], out=out[lo:hi])
            out[lo:hi] *= inv_dy

        def d_hz1(lo, hi):  # dEy/dx on Hz
            out = scr["hz"][1]
            np.subtract(ey[lo + 1 : hi + 1, :, :], ey[lo:hi, :, :], out=out[lo:hi])
            out[lo:hi] *= inv_dx

        self._run_wave(
            [
                (nx + 1, d_hx0), (nx + 1, d_hx1),
                (nx, d_hy0), (nx, d_hy1),
                (nx, d_hz0), (nx, d_hz1),
            ]
        )
        self._apply_psi("h")
        self._apply_bake(_H_COMPONENTS)

        dtm = self.dtype.type(self._dtm)

        def m_hx(lo, hi):
            a, b = scr["hx"]
            np.subtract(a[lo:hi], b[lo:hi], out=a[lo:hi])
            a[lo:hi] *= dtm
            hx[lo:hi] += a[lo:hi]

        def m_hy(lo, hi):
            a, b = scr["hy"]
            np.subtract(a[lo:hi], b[lo:hi], out=a[lo:hi])
            a[lo:hi] *= dtm
            hy[lo:hi] += a[lo:hi]

        def m_hz(lo, hi):
            a, b = scr["hz"]
            np.subtract(a[lo:hi], b[lo:hi], out=a[lo:hi])
            a[lo:hi] *= dtm
            hz[lo:hi] += a[lo:hi]

        self._run_wave([(nx + 1, m_hx), (nx, m_hy), (nx, m_hz)])

        t_h = s.t + 0.5 * self.dt
        if sample_hook is not None:
            sample_hook(t_h)

        # ---- E phase: curl terms of H -----------------------------------
        periodic = [geom.boundary[a] == "periodic" for a in range(3)]
        inv_dz_d_mid = _reshape_axis(self._inv_dz_d[1:nz], 2)

        def d_ex0(lo, hi):  # dHz/dy on Ex
            out = scr["ex"][0]
            np.subtract(hz[lo:hi, 1:, :], hz[lo:hi, :-1, :], out=out[lo:hi, 1:ny, :])
            out[lo:hi, 1:ny, :] *= inv_dy

        def d_ex1(lo, hi):  # dHy/dz on Ex
            out = scr["ex"][1]
            np.subtract(hy[lo:hi, :, 1:], hy[lo:hi, :, :-1], out=out[lo:hi, :, 1:nz])
            out[lo:hi, :, 1:nz] *= inv_dz_d_mid

        def d_ey0(lo, hi):  # dHx/dz on Ey
            out = scr["ey"][0]
            np.subtract(hx[lo:hi, :, 1:], hx[lo:hi, :, :-1], out=out[lo:hi, :, 1:nz])
            out[lo:hi, :, 1:nz] *= inv_dz_d_mid

        def d_ey1(lo, hi):  # dHz/dx on Ey
            out = scr["ey"][1]
            a = max(lo, 1)
            b = min(hi, nx)
            if b > a:
                np.subtract(hz[a:b, :, :], hz[a - 1 : b - 1, :, :], out=out[a:b])
                out[a:b] *= inv_dx

        def d_ez0(lo, hi):  # dHy/dx on Ez
            out = scr["ez"][0]
            a = max(lo, 1)
            b = min(hi, nx)
            if b > a:
                np.subtract(hy[a:b, :, :], hy[a - 1 : b - 1, :, :], out=out[a:b])
                out[a:b] *= inv_dx

        def d_ez1(lo, hi):  # dHx/dy on Ez
            out = scr["ez"][1]
            np.subtract(hx[lo:hi, 1:, :], hx[lo:hi, :-1, :], out=out[lo:hi, 1:ny, :])
            out[lo:hi, 1:ny, :] *= inv_dy

        self._run_wave(
            [
                (nx, d_ex0), (nx, d_ex1),
                (nx + 1, d_ey0), (nx + 1, d_ey1),
                (nx + 1, d_ez0), (nx + 1, d_ez1),
            ]
        )

        # periodic seams: wrap the boundary derivative and duplicate the
        # identified plane so both copies update identically
        if periodic[0]:
            w = scr["ey"][1]
            np.subtract(hz[0], hz[nx - 1], out=w[0])
            w[0] *= inv_dx
            w[nx] = w[0]
            w = scr["ez"][0]
            np.subtract(hy[0], hy[nx - 1], out=w[0])
            w[0] *= inv_dx
            w[nx] = w[0]
        if periodic[1]:
            w = scr["ex"][0]
            np.subtract(hz[:, 0, :], hz[:, ny - 1, :], out=w[:, 0, :])
            w[:, 0, :] *= inv_dy
            w[:, ny, :] = w[:, 0, :]
            w = scr["ez"][1]
            np.subtract(hx[:, 0, :], hx[:, ny - 1, :], out=w[:, 0, :])
            w[:, 0, :] *= inv_dy
            w[:, ny, :] = w[:, 0, :]
        if periodic[2]:
            w = scr["ex"][1]
            np.subtract(hy[:, :, 0], hy[:, :, nz - 1], out=w[:, :, 0])
            w[:, :, 0] *= self._inv_dz_wrap
            w[:, :, nz] = w[:, :, 0]
            w = scr["ey"][0]
            np.subtract(hx[:, :, 0], hx[:, :, nz - 1], out=w[:, :, 0])
            w[:, :, 0] *= self._inv_dz_wrap
            w[:, :, nz] = w[:, :, 0]

        self._apply_psi("e")
        self._apply_bake(_E_COMPONENTS)

        dte = self.dtype.type(self._dte)
        eps_c = self._eps_coeff

        def m_e(comp, arr):
            def fn(lo, hi):
                a, b = scr[comp]
                np.subtract(a[lo:hi], b[lo:hi], out=a[lo:hi])
                if eps_c is None:
                    a[lo:hi] *= dte
                else:
                    a[lo:hi] *= eps_c[comp][lo:hi]
                arr[lo:hi] += a[lo:hi]

            return fn

        self._run_wave(
            [(nx, m_e("ex", ex)), (nx + 1, m_e("ey", ey)), (nx + 1, m_e("ez", ez))]
        )

        t_e = s.t + self.dt
        for src in self.soft_sources:
            src(s, t_e)
        self._enforce_pec(t_e)

        s.t = t_e
        s.step_index += 1
        return s

    def _apply_psi(self, phase):
        for term in self._psi_terms[phase]:
            diff = self._scratch[term["comp"]][term["slot"]][term["slice"]]
            psi = term["psi"]
            psi *= term["b"]
            psi += term["c"] * diff
            fld = getattr(self.state, term["comp"])
            if self._eps_coeff is not None and phase == "e":
                fld[term["slice"]] += (
                    np.sign(term["sign_dtc"])
                    * self._eps_coeff[term["comp"]][term["slice"]]
                ) * psi
            else:
                fld[term["slice"]] += self.dtype.type(term["sign_dtc"]) * psi

    def _apply_bake(self, comps):
        for comp, slot, kinv in self._bake:
            if comp in comps:
                self._scratch[comp][slot] *= kinv

    def envelope(self, t):
        if self.ramp_time <= 0.0 or t >= self.ramp_time:
            return 1.0
        return 0.5 * (1.0 - math.cos(math.pi * t / self.ramp_time))

    def _enforce_pec(self, t):
        if not self._pec_items:
            return
        g = self.envelope(t)
        cwt = math.cos(self.omega * t)
        swt = math.sin(self.omega * t)
        for comp, (ii, jj, kk), vals in self._pec_items:
            arr = getattr(self.state, comp)
            if vals is None:
                arr[ii, jj, kk] = 0.0
            else:
                re, im = vals
                arr[ii, jj, kk] = -g * (re * cwt + im * swt)


def make_state(material: scene_mod.MaterialGrid, omega, **solver_opts) -> FieldState:
    """Build a solver for a voxelized scene and return its field state.

    The state keeps a reference to its solver so that :func:`step` can
    advance it; heavyweight users should hold the :class:`YeeSolver`
    directly.
    """
    pec = pec_edges_from_material(material)
    solver = YeeSolver(material.geom, omega=omega, pec=pec, **solver_opts)
    solver.state._solver = solver
    return solver.state


def step(state: FieldState, grid=None, source=None) -> FieldState:
    """One leapfrog update of a state created by :func:`make_state`."""
    solver = getattr(state, "_solver", None)
    if solver is None:
        raise ValidationError("state was not created by make_state()")
    return solver.step()


# ---------------------------------------------------------------------------
# Harmonic run: ramp, windowed DFT, convergence
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ComplexFieldMap:
    """Complex magnetic phasor (tesla) on the probe plane.

    Arrays are indexed ``[row=y, col=x]`` on cell centers with uniform
    pitch.  ``frequency`` is the physical drive; ``solver_frequency``
    the (possibly rescaled) frequency the solve actually ran at.
    """

    bx: np.ndarray
    by: np.ndarray
    bz: np.ndarray
    x0: float
    y0: float
    pitch_x: float
    pitch_y: float
    plane_z: float
    frequency: float
    solver_frequency: float
    convergence: float
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self):
        return self.bx.shape

    def stack(self):
        return np.stack([self.bx, self.by, self.bz], axis=-1)

    def magnitude(self):
        return np.sqrt(np.abs(self.bx) ** 2 + np.abs(self.by) ** 2 + np.abs(self.bz) ** 2)

    def x_centers(self):
        return self.x0 + np.arange(self.shape[1]) * self.pitch_x

    def y_centers(self):
        return self.y0 + np.arange(self.shape[0]) * self.pitch_y

    def scaled(self, factor):
        """Linearly rescaled copy (source linearity is exact)."""
        return ComplexFieldMap(
            bx=self.bx * factor, by=self.by * factor, bz=self.bz * factor,
            x0=self.x0, y0=self.y0, pitch_x=self.pitch_x, pitch_y=self.pitch_y,
            plane_z=self.plane_z, frequency=self.frequency,
            solver_frequency=self.solver_frequency,
            convergence=self.convergence, meta=dict(self.meta),
        )


class _ProbeDft:
    """Running DFT of the magnetic field over the probe window."""

    def __init__(self, geom, window, k_probe, omega):
        self.geom = geom
        self.i0, self.i1, self.j0, self.j1 = window
        self.k = k_probe
        self.omega = omega
        w = self.i1 - self.i0
        h = self.j1 - self.j0
        self.acc_hx = np.zeros((w + 1, h, 2), dtype=complex)
        self.acc_hy = np.zeros((w, h + 1, 2), dtype=complex)
        self.acc_hz = np.zeros((w, h), dtype=complex)
        self.n = 0

    def reset(self):
        self.acc_hx[:] = 0.0
        self.acc_hy[:] = 0.0
        self.acc_hz[:] = 0.0
        self.n = 0

    def sample(self, state: FieldState, t):
        w = complex(math.cos(self.omega * t), math.sin(self.omega * t))
        i0, i1, j0, j1, k = self.i0, self.i1, self.j0, self.j1, self.k
        self.acc_hx += state.hx[i0 : i1 + 1, j0:j1, k - 1 : k + 1] * w
        self.acc_hy += state.hy[i0:i1, j0 : j1 + 1, k - 1 : k + 1] * w
        self.acc_hz += state.hz[i0:i1, j0:j1, k] * w
        self.n += 1

    def phasors(self):
        """Co-located (Bx, By, Bz) scattered phasors, [i, j] indexed."""
        scale = 2.0 / self.n
        hx = self.acc_hx * scale
        hy = self.acc_hy * scale
        hz = self.acc_hz * scale
        bx = 0.25 * (hx[:-1, :, 0] + hx[:-1, :, 1] + hx[1:, :, 0] + hx[1:, :, 1])
        by = 0.25 * (hy[:, :-1, 0] + hy[:, :-1, 1] + hy[:, 1:, 0] + hy[:, 1:, 1])
        bz = hz
        return MU0 * bx, MU0 * by, MU0 * bz


def _window_indices(geom: scene_mod.GridGeom, probe_window):
    npx = geom.npml_axis(0)
    npy = geom.npml_axis(1)
    lo_i, hi_i = npx + 2, geom.nx - npx - 2
    lo_j, hi_j = npy + 2, geom.ny - npy - 2
    if probe_window is None:
        i0, i1, j0, j1 = lo_i, hi_i, lo_j, hi_j
    else:
        x0, x1, y0, y1 = (float(v) for v in probe_window)
        i0 = int(math.ceil((x0 - geom.x0) / geom.dx - 0.5))
        i1 = int(math.floor((x1 - geom.x0) / geom.dx - 0.5)) + 1
        j0 = int(math.ceil((y0 - geom.y0) / geom.dy - 0.5))
        j1 = int(math.floor((y1 - geom.y0) / geom.dy - 0.5)) + 1
        i0, i1 = max(i0, lo_i), min(i1, hi_i)
        j0, j1 = max(j0, lo_j), min(j1, hi_j)
    if i1 <= i0 or j1 <= j0:
        raise PlacementError("probe window does not overlap the interior region")
    return i0, i1, j0, j1


def solver_frequency(scene: scene_mod.Scene, cfg: SolverConfig):
    """Physical drive frequency, or its quasistatic rescale when the
    domain is unresolvably subwavelength."""
    f_src = scene.frequency
    lam_src = C0 / f_src
    span = max(scene.geom.extents)
    lam_solve = cfg.subwavelength_ratio * span
    if lam_src <= lam_solve:
        return f_src
    return C0 / lam_solve


def _probe_centers(geom, window, k_probe):
    i0, i1, j0, j1 = window
    x = geom.x0 + (np.arange(i0, i1) + 0.5) * geom.dx
    y = geom.y0 + (np.arange(j0, j1) + 0.5) * geom.dy
    z = geom.z_nodes[k_probe]
    pts = np.empty((i1 - i0, j1 - j0, 3))
    pts[..., 0] = x[:, None]
    pts[..., 1] = y[None, :]
    pts[..., 2] = z
    return pts


def _eps_edge_arrays(mat: scene_mod.MaterialGrid):
    lut = np.ones(max(scene_mod.MATERIAL_IDS.values()) + 1)
    for name, mid in scene_mod.MATERIAL_IDS.items():
        lut[mid] = scene_mod.EPS_R[name]
    eps = lut[mat.ids]
    out = {}
    p = np.pad(eps, ((1, 1), (1, 1), (1, 1)), mode="edge")
    out["ex"] = 0.25 * (
        p[1:-1, :-1, :-1] + p[1:-1, 1:, :-1] + p[1:-1, :-1, 1:] + p[1:-1, 1:, 1:]
    )
    out["ey"] = 0.25 * (
        p[:-1, 1:-1, :-1] + p[1:, 1:-1, :-1] + p[:-1, 1:-1, 1:] + p[1:, 1:-1, 1:]
    )
    out["ez"] = 0.25 * (
        p[:-1, :-1, 1:-1] + p[1:, :-1, 1:-1] + p[:-1, 1:, 1:-1] + p[1:, 1:, 1:-1]
    )
    return out


def run_harmonic(
    scene: scene_mod.Scene,
    probe_window=None,
    cycles=None,
    config: SolverConfig | None = None,
) -> ComplexFieldMap:
    """Drive the scene to periodic steady state and return the probe map.

    Runs the ramped harmonic forcing, then evaluates the probe-plane DFT
    over successive windows of ``config.dft_periods`` periods until the
    total map changes by less than ``config.ctol`` (Frobenius norm,
    relative).  Raises :class:`ConvergenceError` carrying the last
    metric if ``cycles`` periods elapse first.
    """
    cfg = config or SolverConfig()
    cycles = float(cycles if cycles is not None else cfg.max_periods)
    mat = scene_mod.voxelize(scene)
    geom = scene.geom
    f_src = scene.frequency
    f_solve = solver_frequency(scene, cfg)
    omega = 2.0 * math.pi * f_solve
    pos_scale = f_src / f_solve
    window = _window_indices(geom, probe_window)
    centers = _probe_centers(geom, window, scene.k_probe)
    center_ref = np.array([0.0, 0.0, float(geom.z_nodes[scene.k_probe])])
    pts_flat = centers.reshape(-1, 3)
    _, b_inc = incident_phasors(scene.source, pts_flat, f_solve, center_ref, pos_scale)
    b_inc = b_inc.reshape(centers.shape)

    base_meta = {
        "cells": (geom.nx, geom.ny, geom.nz),
        "window": window,
        "conductor_voxels": mat.conductor_cell_count,
        "quasistatic_rescale": f_solve != f_src,
    }

    def to_map(bx, by, bz, convergence, extra):
        meta = dict(base_meta)
        meta.update(extra)
        return ComplexFieldMap(
            bx=bx.T.copy(), by=by.T.copy(), bz=bz.T.copy(),
            x0=float(centers[0, 0, 0]), y0=float(centers[0, 0, 1]),
            pitch_x=geom.dx, pitch_y=geom.dy,
            plane_z=float(geom.z_nodes[scene.k_probe]),
            frequency=f_src, solver_frequency=f_solve,
            convergence=convergence, meta=meta,
        )

    if mat.conductor_cell_count == 0 and cfg.skip_empty:
        logger.info("no conductor voxels; returning the incident phasor directly")
        return to_map(
            b_inc[..., 0], b_inc[..., 1], b_inc[..., 2], 0.0, {"analytic": True}
        )

    pec = pec_edges_from_material(mat)
    values = {}
    for comp, indices in pec.indices.items():
        pts = edge_positions(comp, indices, geom)
        e_inc, _ = incident_phasors(scene.source, pts, f_solve, center_ref, pos_scale)
        axis = {"ex": 0, "ey": 1, "ez": 2}[comp]
        values[comp] = (e_inc[:, axis].real.copy(), e_inc[:, axis].imag.copy())
    pec.values = values

    period = 1.0 / f_solve
    dt_max = check_cfl(geom)
    n_pp = max(int(math.ceil(period / (0.99 * dt_max))), 8)
    dt = period / n_pp
    ramp_steps = int(round(cfg.ramp_periods * n_pp))
    window_steps = cfg.dft_periods * n_pp
    max_windows = int((cycles * n_pp - ramp_steps) // window_steps)
    if max_windows < 2:
        raise ValidationError(
            "cycle budget leaves fewer than two DFT windows after the ramp"
        )

    eps_edges = _eps_edge_arrays(mat) if cfg.use_dielectrics else None
    solver = YeeSolver(
        geom,
        omega=omega,
        dt=dt,
        dtype=cfg.dtype,
        params=cfg,
        pec=pec,
        ramp_time=ramp_steps * dt,
        eps_edges=eps_edges,
        threads=cfg.threads,
    )
    probe = _ProbeDft(geom, window, scene.k_probe, omega)
    logger.info(
        "harmonic run: f_solve=%.4g Hz (physical %.4g Hz), %d steps/period, "
        "ramp %d steps, window %d steps",
        f_solve, f_src, n_pp, ramp_steps, window_steps,
    )

    try:
        for n in range(ramp_steps):
            solver.step()
            if (n + 1) % n_pp == 0:
                assert_finite(solver.state)

        prev = None
        metric = math.inf
        for w in range(max_windows):
            probe.reset()
            for n in range(window_steps):
                solver.step(sample_hook=lambda t: probe.sample(solver.state, t))
            assert_finite(solver.state)
            bx, by, bz = probe.phasors()
            total = np.stack([bx, by, bz], axis=-1) + b_inc
            if prev is not None:
                num = np.linalg.norm(total - prev)
                den = np.linalg.norm(total)
                metric = num / den if den > 0 else 0.0
                logger.info("window %d: convergence metric %.3g", w + 1, metric)
                if metric <= cfg.ctol:
                    periods = cfg.ramp_periods + (w + 1) * cfg.dft_periods
                    return to_map(
                        total[..., 0], total[..., 1], total[..., 2], float(metric),
                        {"periods": periods, "steps_per_period": n_pp, "dt": dt},
                    )
            prev = total
        raise ConvergenceError(
            f"no steady state after {cycles} periods (metric {metric:.3g})",
            metric=float(metric),
        )
    finally:
        solver.close()
