"""Image/flow file formats, flow color coding and quality metrics.

Images are grayscale rasters in [0, 1] (PGM P2/P5 and PNG); flows use the
little-endian Middlebury .flo layout with magnitude > 1e9 marking unknown
vectors.  Metrics: PSNR against a unit peak, mean SSIM over 7x7 sliding
windows, and endpoint/angular flow errors.
"""

from __future__ import annotations

import struct

import numpy as np

FLO_MAGIC = 202021.25
FLO_UNKNOWN = 1e9
SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class FormatError(ValueError):
    pass


# ----------------------------------------------------------------------------
# images


def read_image(path):
    path = str(path)
    if path.lower().endswith((".pgm", ".ppm")):
        return _read_pgm(path)
    from PIL import Image
    with Image.open(path) as im:
        im = im.convert("L")
        data = np.asarray(im, dtype=float)
    return data / 255.0


def write_image(image, path):
    path = str(path)
    arr = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    q = np.rint(arr * 255.0).astype(np.uint8)
    if path.lower().endswith(".pgm"):
        _write_pgm(q, path)
        return
    from PIL import Image
    Image.fromarray(q, mode="L").save(path)


def _read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    # header tokens with '#' comments skipped; P5 payload is binary after the
    # single whitespace following maxval
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated PGM header")
        tokens.append(data[i:j])
        i = j
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"unsupported PGM magic {magic!r}")
    if maxval <= 0 or maxval > 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    if magic == b"P5":
        i += 1
        raw = data[i:i + w * h]
        if len(raw) != w * h:
            raise FormatError("truncated PGM payload")
        vals = np.frombuffer(raw, dtype=np.uint8).astype(float)
    else:
        body = data[i:].split()
        if len(body) < w * h:
            raise FormatError("truncated PGM payload")
        vals = np.array([int(t) for t in body[:w * h]], dtype=float)
    return (vals / maxval).reshape(h, w)


def _write_pgm(q, path):
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


# ----------------------------------------------------------------------------
# Middlebury flow format


def read_flo(path):
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12:
            raise FormatError("truncated .flo header")
        magic, w, h = struct.unpack("<fii", head)
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise FormatError(f"bad .flo magic {magic}")
        payload = fh.read(8 * w * h)
    if len(payload) != 8 * w * h:
        raise FormatError("truncated .flo payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    return data[:, :, 0].astype(np.float32), data[:, :, 1].astype(np.float32)


def write_flo(flow_x, flow_y, path):
    fx = np.asarray(flow_x, dtype=np.float32)
    fy = np.asarray(flow_y, dtype=np.float32)
    h, w = fx.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        inter = np.empty((h, w, 2), dtype="<f4")
        inter[:, :, 0] = fx
        inter[:, :, 1] = fy
        fh.write(inter.tobytes())


def flow_unknown_mask(flow_x, flow_y):
    return (np.abs(flow_x) > FLO_UNKNOWN) | (np.abs(flow_y) > FLO_UNKNOWN)


# ----------------------------------------------------------------------------
# flow color wheel (Middlebury convention)


def _make_color_wheel():
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    ncols = ry + yg + gc + cb + bm + mr
    wheel = np.zeros((ncols, 3))
    col = 0
    wheel[col:col + ry, 0] = 255
    wheel[col:col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col:col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col:col + yg, 1] = 255
    col += yg
    wheel[col:col + gc, 1] = 255
    wheel[col:col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col:col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col:col + cb, 2] = 255
    col += cb
    wheel[col:col + bm, 2] = 255
    wheel[col:col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col:col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col:col + mr, 0] = 255
    return wheel


_COLOR_WHEEL = _make_color_wheel()


def flow_to_color(flow_x, flow_y, max_mag=None):
    """Color-wheel rendering of a flow field; unknown vectors map to black."""
    fx = np.asarray(flow_x, dtype=float)
    fy = np.asarray(flow_y, dtype=float)
    unknown = flow_unknown_mask(fx, fy)
    fx = np.where(unknown, 0.0, fx)
    fy = np.where(unknown, 0.0, fy)
    mag = np.hypot(fx, fy)
    if max_mag is None:
        max_mag = float(mag.max())
    scale = max_mag if max_mag > 0 else 1.0
    u = fx / scale
    v = fy / scale
    rad = np.hypot(u, v)
    ncols = _COLOR_WHEEL.shape[0]
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = fk - k0
    img = np.zeros(fx.shape + (3,), dtype=np.uint8)
    for c in range(3):
        col0 = _COLOR_WHEEL[k0, c] / 255.0
        col1 = _COLOR_WHEEL[k1, c] / 255.0
        col = (1 - f) * col0 + f * col1
        inside = rad <= 1
        col = np.where(inside, 1 - rad * (1 - col), col * 0.75)
        img[:, :, c] = np.floor(255.0 * col)
    img[unknown] = 0
    return img


# ----------------------------------------------------------------------------
# metrics


def psnr(u, ref):
    """Peak signal-to-noise ratio against a unit signal peak (dB)."""
    u = np.asarray(u, dtype=float)
    ref = np.asarray(ref, dtype=float)
    mse = float(np.mean((u - ref) ** 2))
    if mse == 0.0:
        return np.inf
    return 10.0 * np.log10(1.0 / mse)


def mssim(u, ref, window=SSIM_WINDOW):
    """Mean structural similarity over sliding uniform windows."""
    u = np.asarray(u, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if u.shape != ref.shape:
        raise ValueError("images must have the same shape")
    ny, nx = u.shape
    if ny < window or nx < window:
        raise ValueError("image smaller than the SSIM window")
    from numpy.lib.stride_tricks import sliding_window_view
    wu = sliding_window_view(u, (window, window))
    wr = sliding_window_view(ref, (window, window))
    mu1 = wu.mean(axis=(2, 3))
    mu2 = wr.mean(axis=(2, 3))
    var1 = wu.var(axis=(2, 3))
    var2 = wr.var(axis=(2, 3))
    cov = (wu * wr).mean(axis=(2, 3)) - mu1 * mu2
    ssim = ((2 * mu1 * mu2 + SSIM_C1) * (2 * cov + SSIM_C2)
            / ((mu1 ** 2 + mu2 ** 2 + SSIM_C1) * (var1 + var2 + SSIM_C2)))
    return float(ssim.mean())


def endpoint_error(flow_x, flow_y, gt_x, gt_y):
    """Per-pixel endpoint error plus (mean, std) over known-gt pixels."""
    fx, fy = np.asarray(flow_x, float), np.asarray(flow_y, float)
    gx, gy = np.asarray(gt_x, float), np.asarray(gt_y, float)
    ee = np.sqrt((fx - gx) ** 2 + (fy - gy) ** 2)
    known = ~flow_unknown_mask(gx, gy)
    vals = ee[known]
    return ee, float(vals.mean()), float(vals.std())


def angular_error(flow_x, flow_y, gt_x, gt_y):
    """Per-pixel angular error (3D convention) plus (mean, std) over known gt."""
    fx, fy = np.asarray(flow_x, float), np.asarray(flow_y, float)
    gx, gy = np.asarray(gt_x, float), np.asarray(gt_y, float)
    num = 1.0 + fx * gx + fy * gy
    den = np.sqrt(1.0 + fx ** 2 + fy ** 2) * np.sqrt(1.0 + gx ** 2 + gy ** 2)
    ae = np.arccos(np.clip(num / den, -1.0, 1.0))
    known = ~flow_unknown_mask(gx, gy)
    vals = ae[known]
    return ae, float(vals.mean()), float(vals.std())
