"""Scene definition and voxelization.

Builds the layered simulation geometry: a silicon substrate carrying a
thin conductor pattern, an air gap up to the probe plane, and a diamond
slab above it, all embedded in a rectangular grid with absorbing (or
reflecting/periodic) boundaries.

The conductor pattern comes from a 2-D boolean raster (``PatternMask``)
with a physical pitch.  Because the conductor is far thinner than any
affordable cell, it is represented either as a zero-thickness perfectly
conducting sheet on one grid plane (default) or as a full one-cell PEC
slab for comparison.

Coordinates: the lab origin sits at the center of the mask footprint in
x/y, with z = 0 at the conductor sheet plane.  Cell index ``(i, j, k)``
covers ``[x0 + i dx, x0 + (i+1) dx] x ... ``; arrays are indexed
``[i, j, k]`` = (x, y, z).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, PlacementError, ValidationError

logger = logging.getLogger(__name__)

# Material ids for the voxel grid.  The conductor is treated as a
# perfect electric conductor; relative permittivities are recorded for
# reference and only applied when the solver is asked to use them.
MATERIAL_IDS = {"air": 0, "silicon": 1, "diamond": 2, "gold": 3}
EPS_R = {"air": 1.0, "silicon": 11.7, "diamond": 5.7, "gold": 1.0}
CONDUCTOR_MATERIAL = "gold"


# ---------------------------------------------------------------------------
# Pattern mask
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class PatternMask:
    """Boolean conductor raster with a physical pitch.

    ``occupancy[row, col]`` is True where the conductor sits; rows run
    along y, columns along x.  ``origin`` is the lab-frame position of
    the lower-left pixel corner; ``None`` centers the footprint on the
    lab origin.
    """

    occupancy: np.ndarray
    pitch: float
    origin: tuple | None = None

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 2 or occ.shape[0] < 1 or occ.shape[1] < 1:
            raise ValidationError("mask raster must be 2-D with at least one pixel")
        if not self.pitch > 0.0:
            raise ValidationError("mask pitch must be > 0")
        object.__setattr__(self, "occupancy", occ)
        if self.is_empty:
            logger.info("pattern mask is empty (no conductor pixels)")

    @property
    def width_px(self):
        return self.occupancy.shape[1]

    @property
    def height_px(self):
        return self.occupancy.shape[0]

    @property
    def conductor_px(self):
        return int(self.occupancy.sum())

    @property
    def is_empty(self):
        return self.conductor_px == 0

    @property
    def extent(self):
        """Physical (width, height) of the footprint in meters."""
        return self.width_px * self.pitch, self.height_px * self.pitch

    def origin_xy(self):
        if self.origin is not None:
            return float(self.origin[0]), float(self.origin[1])
        w, h = self.extent
        return -0.5 * w, -0.5 * h


def load_pattern_mask(path, pitch=None) -> PatternMask:
    """Load a conductor raster from a portable bitmap plus its sidecar.

    ``pitch`` overrides the sidecar value; one of the two must provide
    it.  The conductor pixel count is reported through the logger.
    """
    from . import fileio

    occupancy = fileio.read_pbm(path)
    meta = fileio.read_mask_sidecar(path)
    if pitch is None:
        pitch = meta.get("pitch_m")
    if pitch is None:
        raise ValidationError(
            f"no pitch given and no pitch_m in the sidecar for {path}"
        )
    origin = None
    if "origin_x_m" in meta and "origin_y_m" in meta:
        origin = (meta["origin_x_m"], meta["origin_y_m"])
    mask = PatternMask(occupancy=occupancy, pitch=float(pitch), origin=origin)
    logger.info(
        "loaded mask %s: %dx%d px, pitch %.3g m, %d conductor pixels",
        path, mask.width_px, mask.height_px, mask.pitch, mask.conductor_px,
    )
    return mask


def save_pattern_mask(path, mask: PatternMask, fmt="P1"):
    """Write the raster and its sidecar next to each other."""
    from . import fileio

    fileio.write_pbm(path, mask.occupancy, fmt=fmt)
    origin = mask.origin if mask.origin is not None else None
    fileio.write_mask_sidecar(path, mask.pitch, origin)


def cross_mask(size_px=100, stroke_px=1):
    """Two full-width strokes crossing at the raster center."""
    occ = np.zeros((size_px, size_px), dtype=bool)
    c = size_px // 2
    lo = c - (stroke_px - 1) // 2
    occ[lo : lo + stroke_px, :] = True
    occ[:, lo : lo + stroke_px] = True
    return occ


def ring_mask(size_px, stroke_px=1, inset_px=1):
    """Closed square ring along the raster border."""
    occ = np.zeros((size_px, size_px), dtype=bool)
    a, b = inset_px, size_px - inset_px
    occ[a : a + stroke_px, a:b] = True
    occ[b - stroke_px : b, a:b] = True
    occ[a:b, a : a + stroke_px] = True
    occ[a:b, b - stroke_px : b] = True
    return occ


def circle_ring_mask(size_px, radius_px, width_px=1.5):
    """Circular annulus raster: pixels within width/2 of the radius."""
    c = 0.5 * (size_px - 1)
    jj, ii = np.mgrid[0:size_px, 0:size_px]
    rho = np.hypot(ii - c, jj - c)
    return np.abs(rho - radius_px) <= 0.5 * width_px


def crossed_loop_mask(size_px=40, stroke_px=1, inset_px=2, offset_px=(4, 3)):
    """Closed ring plus two chords crossing off-center.

    The off-center crossing makes the four sub-loops enclose unequal
    areas, so a uniform drive pushes a net current through the chords;
    a symmetric cross would carry none.
    """
    occ = ring_mask(size_px, stroke_px, inset_px)
    c = size_px // 2
    cx = c + offset_px[0]
    cy = c + offset_px[1]
    a, b = inset_px, size_px - inset_px
    occ[cy : cy + stroke_px, a:b] = True
    occ[a:b, cx : cx + stroke_px] = True
    return occ


# ---------------------------------------------------------------------------
# Layer stack, sources, grid
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LayerStack:
    """Ordered material layers, bottom to top.

    Exactly one layer must be the conductor material; it carries the
    pattern mask.  ``gap`` is the distance from the conductor plane to
    the probe plane.  ``conductor_model`` selects the meshing of the
    thin conductor: a zero-thickness PEC sheet on one grid plane
    (default, appropriate for a 110 nm film on >100 nm cells) or one
    full cell of PEC for comparison.
    """

    layers: tuple = (
        ("silicon", 2.0e-6),
        ("gold", 110e-9),
        ("air", 3.4e-6),
        ("diamond", 3.0e-6),
    )
    gap: float = 3.4e-6
    conductor_model: str = "sheet"

    def __post_init__(self):
        object.__setattr__(
            self, "layers", tuple((str(m), float(t)) for m, t in self.layers)
        )
        for mat, t in self.layers:
            if mat not in MATERIAL_IDS:
                raise ValidationError(f"unknown material {mat!r}")
            if not t > 0.0:
                raise ValidationError(f"layer {mat!r} thickness must be > 0")
        n_cond = sum(1 for m, _ in self.layers if m == CONDUCTOR_MATERIAL)
        if n_cond != 1:
            raise ValidationError("stack must contain exactly one conductor layer")
        if not self.gap > 0.0:
            raise ValidationError("conductor-to-probe gap must be > 0")
        if self.conductor_model not in ("sheet", "slab"):
            raise ValidationError("conductor_model must be 'sheet' or 'slab'")

    @property
    def conductor_index(self):
        return next(i for i, (m, _) in enumerate(self.layers) if m == CONDUCTOR_MATERIAL)

    @property
    def conductor_thickness(self):
        return self.layers[self.conductor_index][1]


@dataclass(frozen=True)
class UniformField:
    """Spatially uniform incident field, linearly polarized.

    Mimics the large ring antenna, which is uniform over an area far
    exceeding the pattern.  ``amplitude`` is the magnetic amplitude in
    tesla, ``polarization`` the field direction (default lab z, normal
    to the pattern plane).
    """

    amplitude: float
    frequency: float
    polarization: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.amplitude > 0.0:
            raise ValidationError("source amplitude must be > 0")
        if not self.frequency > 0.0:
            raise ValidationError("source frequency must be > 0")
        p = np.asarray(self.polarization, dtype=float)
        n = np.linalg.norm(p)
        if n == 0.0:
            raise ValidationError("polarization must be non-zero")
        object.__setattr__(self, "polarization", tuple(p / n))


@dataclass(frozen=True)
class DipolePair:
    """Two anti-phased horizontal current elements above the pattern.

    The pair reproduces the remote-antenna drive: elements along x,
    separated along y and fed 180 degrees out of phase, give a net
    linearly polarized magnetic field along lab z at the pattern.  The
    phase offset is fixed at pi.  ``amplitude`` normalizes the incident
    |B| at the pattern center (tesla).
    """

    amplitude: float
    frequency: float
    height: float = 30e-3
    separation: float = 20e-3
    phase_offset: float = math.pi

    def __post_init__(self):
        if not self.amplitude > 0.0:
            raise ValidationError("source amplitude must be > 0")
        if not self.frequency > 0.0:
            raise ValidationError("source frequency must be > 0")
        if min(self.height, self.separation) <= 0.0:
            raise ValidationError("dipole geometry must be > 0")
        if not math.isclose(self.phase_offset, math.pi, rel_tol=0.0, abs_tol=1e-12):
            raise ValidationError("dipole pair phase offset is fixed at pi")


@dataclass(frozen=True)
class GridSpec:
    """Cell sizes, extents and boundary conditions of the domain.

    ``dz`` may be a scalar (uniform) or a per-cell sequence (graded
    along z only; in-plane cells stay uniform so probe maps keep a
    single pitch).  ``extent`` fixes the physical domain including
    boundary layers; ``None`` sizes it from the scene.  Boundaries are
    per-axis: ``pml`` (absorbing, ``pml_layers`` cells each side),
    ``pec`` (mirror walls) or ``periodic``.
    """

    dx: float = 0.5e-6
    dy: float = 0.5e-6
    dz: float | tuple = 0.5e-6
    extent: tuple | None = None
    boundary: tuple = ("pml", "pml", "pml")
    pml_layers: int = 8
    margin_cells: int = 8
    z_margin_cells: int = 4

    def __post_init__(self):
        if isinstance(self.boundary, str):
            object.__setattr__(self, "boundary", (self.boundary,) * 3)
        if len(self.boundary) != 3 or any(
            b not in ("pml", "pec", "periodic") for b in self.boundary
        ):
            raise ValidationError("boundary kinds must be pml|pec|periodic per axis")
        if not (self.dx > 0.0 and self.dy > 0.0):
            raise ValidationError("cell sizes must be > 0")
        dz = self.dz
        if np.isscalar(dz):
            if not dz > 0.0:
                raise ValidationError("cell sizes must be > 0")
        else:
            dz = tuple(float(v) for v in dz)
            if len(dz) < 1 or any(v <= 0.0 for v in dz):
                raise ValidationError("graded dz list must be non-empty and positive")
            object.__setattr__(self, "dz", dz)
        if "pml" in self.boundary and self.pml_layers < 4:
            raise ValidationError("PML needs at least 4 layers")
        if self.margin_cells < 0 or self.z_margin_cells < 0:
            raise ValidationError("margins must be >= 0")

    @property
    def dz_is_graded(self):
        return not np.isscalar(self.dz)

    def npml(self, axis):
        return self.pml_layers if self.boundary[axis] == "pml" else 0


@dataclass(frozen=True, eq=False)
class GridGeom:
    """Realized grid geometry: cell counts, spacings, origins, boundaries."""

    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: np.ndarray          # per-cell spacing, length nz
    x0: float
    y0: float
    z0: float
    boundary: tuple
    npml: int

    def __post_init__(self):
        dz = np.asarray(self.dz, dtype=float)
        object.__setattr__(self, "dz", dz)
        nodes = self.z0 + np.concatenate(([0.0], np.cumsum(dz)))
        object.__setattr__(self, "_z_nodes", nodes)

    @property
    def z_nodes(self):
        return self._z_nodes

    @property
    def extents(self):
        return (self.nx * self.dx, self.ny * self.dy, float(self.dz.sum()))

    @property
    def min_spacing(self):
        return min(self.dx, self.dy, float(self.dz.min()))

    def npml_axis(self, axis):
        return self.npml if self.boundary[axis] == "pml" else 0

    def x_centers(self):
        return self.x0 + (np.arange(self.nx) + 0.5) * self.dx

    def y_centers(self):
        return self.y0 + (np.arange(self.ny) + 0.5) * self.dy


# ---------------------------------------------------------------------------
# Scene and voxelization
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable, validated simulation scene.

    Construct through :func:`build_scene`, which derives the grid
    geometry, layer placement, probe plane and summary.
    """

    mask: PatternMask
    stack: LayerStack
    source: object
    grid: GridSpec
    geom: GridGeom
    k_sheet: int
    k_probe: int
    layer_cells: tuple          # (material, k_start, k_stop) per layer
    summary: dict = field(repr=False, default_factory=dict)

    @property
    def z_probe(self):
        return float(self.geom.z_nodes[self.k_probe])

    @property
    def frequency(self):
        return self.source.frequency


def _z_layout(mask, stack, grid):
    """Cell counts per layer along z, bottom to top.

    Returns (dz_cells list, layer spans, k_sheet, k_probe).  The
    conductor sheet collapses onto a grid node; in slab mode the cell
    just below that node becomes PEC.
    """
    if grid.dz_is_graded:
        dz_all = np.asarray(grid.dz, dtype=float)
    else:
        dz_all = None
    dz0 = float(np.min(grid.dz)) if grid.dz_is_graded else float(grid.dz)

    def cells_for(thickness):
        return max(1, int(round(thickness / dz0)))

    npml_z = grid.npml(2)
    spans = []
    k = npml_z + grid.z_margin_cells
    k_sheet = None
    for mat, t in stack.layers:
        if mat == CONDUCTOR_MATERIAL:
            k_sheet = k
            continue  # thin film occupies no cells of its own
        n = cells_for(t)
        spans.append((mat, k, k + n))
        k += n
    if k_sheet is None:
        raise ValidationError("stack lost its conductor layer")
    k += grid.z_margin_cells
    nz = k + npml_z

    if dz_all is not None:
        if len(dz_all) < nz:
            raise ValidationError(
                f"graded dz list has {len(dz_all)} cells but the stack needs {nz}"
            )
        nz = len(dz_all)
        dz = dz_all
    else:
        dz = np.full(nz, dz0)

    z_nodes = np.concatenate(([0.0], np.cumsum(dz)))
    gap_cells = int(round(stack.gap / dz0))
    k_probe = k_sheet + gap_cells
    if k_probe >= nz or abs(z_nodes[k_probe] - (z_nodes[k_sheet] + stack.gap)) > 0.51 * dz0:
        raise PlacementError("probe plane does not land on a grid node within dz/2")
    return dz, spans, k_sheet, k_probe, nz


def build_scene(mask: PatternMask, stack: LayerStack, source, grid: GridSpec) -> Scene:
    """Assemble and validate a scene.

    Raises
    ------
    BoundsError
        If the mask footprint does not fit inside the non-boundary
        region of an explicitly sized domain.
    PlacementError
        If the probe plane falls inside the PML or has no clearance
        above the conductor.
    """
    w_mask, h_mask = mask.extent
    npml_x = grid.npml(0)
    npml_y = grid.npml(1)

    if grid.extent is not None:
        lx, ly, lz_req = (float(v) for v in grid.extent)
        nx = int(round(lx / grid.dx))
        ny = int(round(ly / grid.dy))
    else:
        nx = int(math.ceil(w_mask / grid.dx)) + 2 * (grid.margin_cells + npml_x)
        ny = int(math.ceil(h_mask / grid.dy)) + 2 * (grid.margin_cells + npml_y)
        lz_req = None

    interior_w = (nx - 2 * npml_x) * grid.dx
    interior_h = (ny - 2 * npml_y) * grid.dy
    if w_mask > interior_w + 1e-12 or h_mask > interior_h + 1e-12:
        raise BoundsError(
            f"mask footprint {w_mask:.3g} x {h_mask:.3g} m exceeds the "
            f"non-boundary domain {interior_w:.3g} x {interior_h:.3g} m"
        )

    dz, spans, k_sheet, k_probe, nz = _z_layout(mask, stack, grid)
    if lz_req is not None and abs(float(dz.sum()) - lz_req) > float(dz.max()):
        raise BoundsError("requested z extent does not match the layer stack")

    npml_z = grid.npml(2)
    if npml_z and not (npml_z + 1 <= k_probe <= nz - npml_z - 1):
        raise PlacementError("probe plane lies inside the PML region")
    if k_probe < k_sheet + 2:
        raise PlacementError(
            "probe plane needs at least two cells of clearance above the conductor"
        )

    mask_x0, mask_y0 = mask.origin_xy()
    # Lab origin: mask footprint center at (0, 0), conductor plane at z = 0.
    x0 = mask_x0 - 0.5 * (nx * grid.dx - w_mask)
    y0 = mask_y0 - 0.5 * (ny * grid.dy - h_mask)
    z_nodes_local = np.concatenate(([0.0], np.cumsum(dz)))
    z0 = -float(z_nodes_local[k_sheet])

    geom = GridGeom(
        nx=nx, ny=ny, nz=nz,
        dx=grid.dx, dy=grid.dy, dz=dz,
        x0=x0, y0=y0, z0=z0,
        boundary=grid.boundary, npml=grid.pml_layers,
    )

    cell_mask = _mask_on_cells(mask, geom)
    warnings = []
    if max(grid.dx, grid.dy) > mask.pitch and not mask.is_empty:
        warnings.append(
            f"cells ({max(grid.dx, grid.dy):.3g} m) are coarser than the mask "
            f"pitch ({mask.pitch:.3g} m); sub-pixel features are unresolved"
        )

    summary = {
        "extents_m": geom.extents,
        "cells": (nx, ny, nz),
        "conductor_voxels": int(cell_mask.sum()),
        "k_sheet": k_sheet,
        "k_probe": k_probe,
        "z_probe_m": float(geom.z_nodes[k_probe]),
        "warnings": tuple(warnings),
    }
    logger.info(
        "scene: %dx%dx%d cells, %d conductor voxels, probe at z=%.3g m",
        nx, ny, nz, summary["conductor_voxels"], summary["z_probe_m"],
    )
    return Scene(
        mask=mask, stack=stack, source=source, grid=grid, geom=geom,
        k_sheet=k_sheet, k_probe=k_probe, layer_cells=tuple(spans),
        summary=summary,
    )


def _mask_on_cells(mask: PatternMask, geom: GridGeom):
    """Sample the raster at cell centers: a cell is conductor when its
    center falls inside an occupied pixel."""
    mask_x0, mask_y0 = mask.origin_xy()
    xc = geom.x_centers()
    yc = geom.y_centers()
    ix = np.floor((xc - mask_x0) / mask.pitch).astype(int)
    iy = np.floor((yc - mask_y0) / mask.pitch).astype(int)
    ok_x = (ix >= 0) & (ix < mask.width_px)
    ok_y = (iy >= 0) & (iy < mask.height_px)
    out = np.zeros((geom.nx, geom.ny), dtype=bool)
    if not (ok_x.any() and ok_y.any()):
        return out
    ixc = np.clip(ix, 0, mask.width_px - 1)
    iyc = np.clip(iy, 0, mask.height_px - 1)
    # occupancy is [row=y, col=x]
    hits = mask.occupancy[np.ix_(iyc, ixc)].T
    out = hits & ok_x[:, None] & ok_y[None, :]
    return out


@dataclass(frozen=True, eq=False)
class MaterialGrid:
    """Voxelized scene: material ids plus the conductor representation.

    ``ids`` holds one material id per cell.  In sheet mode the conductor
    is not a cell material; instead ``sheet_mask``/``k_sheet`` flag the
    grid plane carrying the PEC sheet.  In slab mode the conductor cells
    are marked directly in ``ids``.
    """

    geom: GridGeom
    ids: np.ndarray
    conductor_mode: str
    sheet_mask: np.ndarray | None
    k_sheet: int
    k_probe: int
    warnings: tuple = ()

    @property
    def conductor_cell_count(self):
        if self.conductor_mode == "sheet":
            return int(self.sheet_mask.sum())
        return int((self.ids == MATERIAL_IDS[CONDUCTOR_MATERIAL]).sum())

    def eps_r_of(self, material_id):
        name = {v: k for k, v in MATERIAL_IDS.items()}[material_id]
        return EPS_R[name]


def voxelize(scene: Scene) -> MaterialGrid:
    """Rasterize the scene onto the grid.

    Deterministic and idempotent: cell centers are tested against layer
    spans and the pattern raster.  A warning (recorded, not fatal) is
    kept when cells are coarser than the mask features.
    """
    geom = scene.geom
    ids = np.zeros((geom.nx, geom.ny, geom.nz), dtype=np.uint8)
    for mat, k0, k1 in scene.layer_cells:
        ids[:, :, k0:k1] = MATERIAL_IDS[mat]

    cell_mask = _mask_on_cells(scene.mask, geom)
    warnings = tuple(scene.summary.get("warnings", ()))

    if scene.stack.conductor_model == "slab":
        k_slab = max(scene.k_sheet - 1, 0)
        gold = MATERIAL_IDS[CONDUCTOR_MATERIAL]
        plane = ids[:, :, k_slab]
        plane[cell_mask] = gold
        sheet_mask = None
    else:
        sheet_mask = cell_mask

    return MaterialGrid(
        geom=geom,
        ids=ids,
        conductor_mode=scene.stack.conductor_model,
        sheet_mask=sheet_mask,
        k_sheet=scene.k_sheet,
        k_probe=scene.k_probe,
        warnings=warnings,
    )
