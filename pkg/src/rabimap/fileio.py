"""File formats for masks, field maps, Rabi maps and previews.

Every format is deterministic byte-for-byte for identical inputs, and
every artifact embeds the run's config hash for provenance.

Mask raster: portable bitmap, P1 (ASCII) or P4 (packed), where 1 marks
a conductor pixel.  A key=value sidecar next to the raster (same name,
``.hdr`` extension) carries ``pitch_m`` and optionally ``origin_x_m`` /
``origin_y_m``.

Field map binary (``.bfm``), documented bit-exactly:

    line 1: ASCII, LF-terminated, space-separated tokens:
        fieldmap 1 nx=<int> ny=<int> pitch_x_m=<float> pitch_y_m=<float>
        x0_m=<float> y0_m=<float> plane_z_m=<float> freq_hz=<float>
        solver_freq_hz=<float> convergence=<float>
        components=bx_re,bx_im,by_re,by_im,bz_re,bz_im config=<hex>
    data: little-endian float32, C order, shape (ny, nx, 3, 2);
        axis order row (y), column (x), component (bx, by, bz),
        then (real, imaginary).

Rabi map binary (``.brm``): same scheme with

    rabimap 1 nx= ny= pitch_x_m= pitch_y_m= x0_m= y0_m=
        planes=freq_hz,hwhm_hz,flag config=<hex>
    data: little-endian float32, C order, shape (ny, nx, 3);
        flag plane is 0.0 (good) or 1.0 (excluded pixel).

Quick-look preview: binary portable graymap (P5, maxval 255) with the
linear scaling bounds stated in the header comment.

Floats in headers and CSV are written with ``repr``, which round-trips
exactly in Python 3.
"""

from __future__ import annotations

import io
import os

import numpy as np

from .errors import MaskFormatError, ValidationError


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# Portable bitmap masks + sidecar
# ---------------------------------------------------------------------------
def write_pbm(path, occupancy, fmt="P1", comment=None):
    occ = np.asarray(occupancy, dtype=bool)
    h, w = occ.shape
    with open(path, "wb") as fh:
        fh.write(f"{fmt}\n".encode())
        if comment:
            fh.write(f"# {comment}\n".encode())
        fh.write(f"{w} {h}\n".encode())
        if fmt == "P1":
            for row in occ:
                fh.write((" ".join("1" if v else "0" for v in row) + "\n").encode())
        elif fmt == "P4":
            fh.write(np.packbits(occ, axis=1).tobytes())
        else:
            raise ValidationError("mask format must be P1 or P4")


def read_pbm(path):
    """Parse a P1/P4 portable bitmap into a boolean raster."""
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0
    line = 1

    def fail(msg):
        raise MaskFormatError(msg, line=line, offset=pos)

    def skip_ws_comments():
        nonlocal pos, line
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            elif c in b" \t\r\n":
                if c == b"\n":
                    line += 1
                pos += 1
            else:
                return

    def token():
        nonlocal pos
        skip_ws_comments()
        start = pos
        while pos < len(data) and data[pos : pos + 1] not in b" \t\r\n":
            pos += 1
        if start == pos:
            fail("unexpected end of file")
        return data[start:pos]

    magic = token()
    if magic not in (b"P1", b"P4"):
        fail(f"not a P1/P4 bitmap (magic {magic!r})")
    try:
        w = int(token())
        h = int(token())
    except ValueError:
        fail("raster dimensions are not integers")
    if w < 1 or h < 1:
        fail("raster dimensions must be >= 1")

    if magic == b"P1":
        bits = []
        while len(bits) < w * h:
            t = token()
            for ch in t:
                if ch == 0x30:
                    bits.append(False)
                elif ch == 0x31:
                    bits.append(True)
                else:
                    fail(f"invalid P1 digit {chr(ch)!r}")
        return np.array(bits[: w * h], dtype=bool).reshape(h, w)

    # P4: a single whitespace byte after the header, then packed rows
    if pos >= len(data):
        fail("missing raster data")
    if data[pos : pos + 1] == b"\n":
        line += 1
    pos += 1
    row_bytes = (w + 7) // 8
    need = row_bytes * h
    if len(data) - pos < need:
        fail(f"raster data truncated (need {need} bytes)")
    raw = np.frombuffer(data[pos : pos + need], dtype=np.uint8).reshape(h, row_bytes)
    bits = np.unpackbits(raw, axis=1)[:, :w]
    return bits.astype(bool)


def sidecar_path(mask_path):
    root, _ = os.path.splitext(str(mask_path))
    return root + ".hdr"


def write_mask_sidecar(mask_path, pitch_m, origin=None):
    with open(sidecar_path(mask_path), "w", encoding="ascii") as fh:
        fh.write(f"pitch_m={_fmt(pitch_m)}\n")
        if origin is not None:
            fh.write(f"origin_x_m={_fmt(origin[0])}\n")
            fh.write(f"origin_y_m={_fmt(origin[1])}\n")


def read_mask_sidecar(mask_path):
    path = sidecar_path(mask_path)
    if not os.path.exists(path):
        return {}
    out = {}
    with open(path, encoding="ascii") as fh:
        for ln, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise MaskFormatError("sidecar line is not key=value", line=ln)
            key, val = s.split("=", 1)
            try:
                out[key.strip()] = float(val)
            except ValueError:
                raise MaskFormatError(f"bad numeric value for {key!r}", line=ln)
    return out


# ---------------------------------------------------------------------------
# Field map binary + CSV
# ---------------------------------------------------------------------------
_FIELD_COMPONENTS = "bx_re,bx_im,by_re,by_im,bz_re,bz_im"


def write_field_map(field_map, path, config_hash=""):
    ny, nx = field_map.shape
    header = (
        f"fieldmap 1 nx={nx} ny={ny} "
        f"pitch_x_m={_fmt(field_map.pitch_x)} pitch_y_m={_fmt(field_map.pitch_y)} "
        f"x0_m={_fmt(field_map.x0)} y0_m={_fmt(field_map.y0)} "
        f"plane_z_m={_fmt(field_map.plane_z)} freq_hz={_fmt(field_map.frequency)} "
        f"solver_freq_hz={_fmt(field_map.solver_frequency)} "
        f"convergence={_fmt(field_map.convergence)} "
        f"components={_FIELD_COMPONENTS} config={config_hash}\n"
    )
    stack = field_map.stack()
    data = np.empty((ny, nx, 3, 2), dtype="<f4")
    data[..., 0] = stack.real
    data[..., 1] = stack.imag
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def _parse_header(line, magic):
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != magic or tokens[1] != "1":
        raise ValidationError(f"not a {magic} v1 file")
    out = {}
    for tok in tokens[2:]:
        key, val = tok.split("=", 1)
        out[key] = val
    return out


def read_field_map(path):
    from .fdtd import ComplexFieldMap

    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii")
        kv = _parse_header(header, "fieldmap")
        nx, ny = int(kv["nx"]), int(kv["ny"])
        raw = fh.read(ny * nx * 3 * 2 * 4)
    data = np.frombuffer(raw, dtype="<f4").reshape(ny, nx, 3, 2).astype(np.float64)
    cplx = data[..., 0] + 1j * data[..., 1]
    return ComplexFieldMap(
        bx=cplx[..., 0], by=cplx[..., 1], bz=cplx[..., 2],
        x0=float(kv["x0_m"]), y0=float(kv["y0_m"]),
        pitch_x=float(kv["pitch_x_m"]), pitch_y=float(kv["pitch_y_m"]),
        plane_z=float(kv["plane_z_m"]), frequency=float(kv["freq_hz"]),
        solver_frequency=float(kv["solver_freq_hz"]),
        convergence=float(kv["convergence"]),
        meta={"config": kv.get("config", "")},
    )


def write_field_map_csv(field_map, path, config_hash=""):
    ny, nx = field_map.shape
    xs = field_map.x_centers()
    ys = field_map.y_centers()
    buf = io.StringIO()
    buf.write(
        f"# fieldmap freq_hz={_fmt(field_map.frequency)} "
        f"plane_z_m={_fmt(field_map.plane_z)} config={config_hash}\n"
    )
    buf.write("x_m,y_m,bx_re,bx_im,by_re,by_im,bz_re,bz_im\n")
    for j in range(ny):
        for i in range(nx):
            row = [
                _fmt(xs[i]), _fmt(ys[j]),
                _fmt(field_map.bx[j, i].real), _fmt(field_map.bx[j, i].imag),
                _fmt(field_map.by[j, i].real), _fmt(field_map.by[j, i].imag),
                _fmt(field_map.bz[j, i].real), _fmt(field_map.bz[j, i].imag),
            ]
            buf.write(",".join(row) + "\n")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# Rabi map binary + CSV + preview
# ---------------------------------------------------------------------------
def write_rabi_map(rabi_map, path, config_hash=""):
    ny, nx = rabi_map.shape
    header = (
        f"rabimap 1 nx={nx} ny={ny} "
        f"pitch_x_m={_fmt(rabi_map.pitch_m[0])} pitch_y_m={_fmt(rabi_map.pitch_m[1])} "
        f"x0_m={_fmt(rabi_map.origin_m[0])} y0_m={_fmt(rabi_map.origin_m[1])} "
        f"planes=freq_hz,hwhm_hz,flag config={config_hash}\n"
    )
    data = np.empty((ny, nx, 3), dtype="<f4")
    data[..., 0] = rabi_map.freq_hz
    data[..., 1] = rabi_map.hwhm_hz
    data[..., 2] = rabi_map.flagged.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def read_rabi_map(path):
    from .imaging import RabiMap

    with open(path, "rb") as fh:
        kv = _parse_header(fh.readline().decode("ascii"), "rabimap")
        nx, ny = int(kv["nx"]), int(kv["ny"])
        raw = fh.read(ny * nx * 3 * 4)
    data = np.frombuffer(raw, dtype="<f4").reshape(ny, nx, 3).astype(np.float64)
    return RabiMap(
        freq_hz=data[..., 0],
        hwhm_hz=data[..., 1],
        flagged=data[..., 2] > 0.5,
        pitch_m=(float(kv["pitch_x_m"]), float(kv["pitch_y_m"])),
        origin_m=(float(kv["x0_m"]), float(kv["y0_m"])),
        meta={"config": kv.get("config", "")},
    )


def write_rabi_map_csv(rabi_map, path, config_hash=""):
    ny, nx = rabi_map.shape
    buf = io.StringIO()
    buf.write(f"# rabimap config={config_hash}\n")
    buf.write("x_m,y_m,freq_hz,hwhm_hz,flag\n")
    x0, y0 = rabi_map.origin_m
    px, py = rabi_map.pitch_m
    for j in range(ny):
        for i in range(nx):
            buf.write(
                ",".join(
                    [
                        _fmt(x0 + i * px), _fmt(y0 + j * py),
                        _fmt(rabi_map.freq_hz[j, i]), _fmt(rabi_map.hwhm_hz[j, i]),
                        "1" if rabi_map.flagged[j, i] else "0",
                    ]
                )
                + "\n"
            )
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(buf.getvalue())


def write_pgm(path, values, config_hash="", invalid=None):
    """Quick-look P5 graymap with linear scaling; the scaling bounds are
    stated in the header comment.  Invalid pixels render as 0."""
    arr = np.asarray(values, dtype=float)
    mask = np.isfinite(arr)
    if invalid is not None:
        mask &= ~invalid
    if mask.any():
        vmin = float(arr[mask].min())
        vmax = float(arr[mask].max())
    else:
        vmin = vmax = 0.0
    span = vmax - vmin if vmax > vmin else 1.0
    gray = np.zeros(arr.shape, dtype=np.uint8)
    gray[mask] = np.clip(
        np.round((arr[mask] - vmin) / span * 255.0), 0, 255
    ).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        fh.write(f"# linear scale min={_fmt(vmin)} max={_fmt(vmax)} config={config_hash}\n".encode())
        fh.write(f"{w} {h}\n255\n".encode())
        fh.write(gray.tobytes())


def write_trace_csv(path, tau_s, contrast, config_hash=""):
    buf = io.StringIO()
    buf.write(f"# rabi trace config={config_hash}\n")
    buf.write("tau_s,contrast\n")
    for t, c in zip(tau_s, contrast):
        buf.write(f"{_fmt(t)},{_fmt(c)}\n")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(buf.getvalue())


def write_points_csv(path, points, fields, config_hash=""):
    """Tabulate positions plus named field columns (analytic oracle output)."""
    buf = io.StringIO()
    buf.write(f"# analytic field table config={config_hash}\n")
    names = list(fields)
    buf.write("x_m,y_m,z_m," + ",".join(names) + "\n")
    pts = np.asarray(points, dtype=float)
    for idx in range(pts.shape[0]):
        row = [_fmt(v) for v in pts[idx]]
        row += [_fmt(fields[name][idx]) for name in names]
        buf.write(",".join(row) + "\n")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(buf.getvalue())
