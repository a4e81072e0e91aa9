"""Threshold-crossing event simulation, voxel grids and the EVT1 file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..tensor import FormatError

EVT_MAGIC = b"EVT1\x00"
EVT_HEADER = struct.Struct("<IIddQ")
EVT_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("ts", "<f8"), ("p", "i1")])
assert EVT_RECORD.itemsize == 13

DEFAULT_THRESHOLD = 0.15
DEFAULT_EPS_LOG = 1e-3


@dataclass
class EventStream:
    x: np.ndarray  # uint16 column
    y: np.ndarray  # uint16 row
    ts: np.ndarray  # float64 seconds
    p: np.ndarray  # int8 polarity, +1 / -1
    t_start: float
    t_end: float
    height: int
    width: int

    def __len__(self) -> int:
        return len(self.ts)

    @classmethod
    def empty(cls, t_start, t_end, height, width) -> "EventStream":
        return cls(
            np.zeros(0, np.uint16), np.zeros(0, np.uint16), np.zeros(0, np.float64),
            np.zeros(0, np.int8), float(t_start), float(t_end), int(height), int(width),
        )

    def validate(self) -> None:
        n = len(self.ts)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event field arrays differ in length")
        if self.t_end <= self.t_start:
            raise ValueError(f"empty window [{self.t_start}, {self.t_end})")
        if n == 0:
            return
        if np.any(np.diff(self.ts) < 0):
            raise ValueError("events not sorted by timestamp")
        if self.x.max() >= self.width or self.y.max() >= self.height:
            raise ValueError("event coordinates outside the sensor")
        if self.ts[0] < self.t_start or self.ts[-1] >= self.t_end:
            raise ValueError("event timestamps outside the window")
        if not np.all(np.abs(self.p) == 1):
            raise ValueError("polarity must be +1 or -1")

    def records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=EVT_RECORD)
        rec["x"], rec["y"], rec["ts"], rec["p"] = self.x, self.y, self.ts, self.p
        return rec

    def signed_counts(self) -> np.ndarray:
        out = np.zeros((self.height, self.width), np.int64)
        np.add.at(out, (self.y.astype(np.int64), self.x.astype(np.int64)), self.p.astype(np.int64))
        return out


def simulate_events(
    latents: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
    eps_log: float = DEFAULT_EPS_LOG,
    t_start: float = 0.0,
    t_end: float = 1.0,
) -> EventStream:
    """Events from a luminance sequence (T, H, W) sampled evenly over [t_start, t_end].

    Each pixel keeps a reference log level; whenever the current level moves
    k whole thresholds away from it, k events of that sign are emitted with
    timestamps where the linear interpolation between latents crosses each
    level.  The sub-threshold remainder carries over to the next interval.
    """
    if threshold <= 0:
        raise ValueError(f"contrast threshold must be positive, got {threshold}")
    if t_end <= t_start:
        raise ValueError(f"empty window [{t_start}, {t_end})")
    lum = np.asarray(latents, dtype=np.float64)
    if lum.ndim != 3:
        raise ValueError(f"expected (T, H, W) luminance, got shape {lum.shape}")
    t_count, h, w = lum.shape
    if t_count < 2:
        return EventStream.empty(t_start, t_end, h, w)
    logs = np.log(lum + eps_log)
    dt = (t_end - t_start) / (t_count - 1)
    ref = logs[0].copy()
    xs, ys, tss, ps = [], [], [], []
    for j in range(t_count - 1):
        prev, cur = logs[j], logs[j + 1]
        acc = cur - ref
        n = np.floor(np.abs(acc) / threshold).astype(np.int64)
        hit = n > 0
        if not hit.any():
            continue
        iy, ix = np.nonzero(hit)
        sign = np.sign(acc[iy, ix])
        counts = n[iy, ix]
        delta = cur[iy, ix] - prev[iy, ix]
        base = ref[iy, ix]
        start = prev[iy, ix]
        for q in range(1, int(counts.max()) + 1):
            sel = counts >= q
            level = base[sel] + sign[sel] * q * threshold
            d = delta[sel]
            frac = np.where(d != 0, (level - start[sel]) / np.where(d != 0, d, 1.0), 0.0)
            frac = np.clip(frac, 0.0, 1.0)
            t = t_start + (j + frac) * dt
            xs.append(ix[sel])
            ys.append(iy[sel])
            tss.append(t)
            ps.append(sign[sel])
        ref[iy, ix] = base + sign * counts * threshold
    if not tss:
        return EventStream.empty(t_start, t_end, h, w)
    ts = np.concatenate(tss)
    ts = np.minimum(ts, np.nextafter(t_end, t_start))
    x = np.concatenate(xs).astype(np.uint16)
    y = np.concatenate(ys).astype(np.uint16)
    p = np.concatenate(ps).astype(np.int8)
    order = np.lexsort((x, y, ts))
    return EventStream(x[order], y[order], ts[order], p[order], float(t_start), float(t_end), h, w)


def voxelize(es: EventStream, bins: int) -> np.ndarray:
    """Signed event mass in a (bins, H, W) grid with linear temporal interpolation."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    if es.t_end <= es.t_start:
        raise ValueError(f"empty window [{es.t_start}, {es.t_end})")
    grid = np.zeros((bins, es.height, es.width), np.float64)
    if len(es) == 0:
        return grid.astype(np.float32)
    u = (es.ts - es.t_start) / (es.t_end - es.t_start)
    pos = u * (bins - 1)
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    hi = np.minimum(lo + 1, bins - 1)
    pol = es.p.astype(np.float64)
    yy, xx = es.y.astype(np.int64), es.x.astype(np.int64)
    np.add.at(grid, (lo, yy, xx), pol * (1.0 - frac))
    np.add.at(grid, (hi, yy, xx), pol * frac)
    return grid.astype(np.float32)


def evt_bytes(es: EventStream) -> bytes:
    head = EVT_MAGIC + EVT_HEADER.pack(es.height, es.width, es.t_start, es.t_end, len(es))
    return head + es.records().tobytes()


def evt_size(count: int) -> int:
    return len(EVT_MAGIC) + EVT_HEADER.size + EVT_RECORD.itemsize * count


def parse_evt(buf: bytes) -> EventStream:
    m = len(EVT_MAGIC)
    if len(buf) < m or buf[:m] != EVT_MAGIC:
        raise FormatError(f"bad EVT1 magic {bytes(buf[:m])!r}", 0)
    if len(buf) < m + EVT_HEADER.size:
        raise FormatError("truncated EVT1 header", len(buf))
    h, w, t0, t1, count = EVT_HEADER.unpack_from(buf, m)
    pos = m + EVT_HEADER.size
    need = pos + EVT_RECORD.itemsize * count
    if len(buf) < need:
        whole = (len(buf) - pos) // EVT_RECORD.itemsize
        raise FormatError(
            f"truncated EVT1 payload: header declares {count} events, file holds {whole}",
            pos + whole * EVT_RECORD.itemsize,
        )
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after EVT1 records", need)
    rec = np.frombuffer(buf, dtype=EVT_RECORD, count=count, offset=pos)
    return EventStream(
        rec["x"].astype(np.uint16), rec["y"].astype(np.uint16), rec["ts"].astype(np.float64),
        rec["p"].astype(np.int8), t0, t1, h, w,
    )


def write_events(path, es: EventStream) -> None:
    with open(path, "wb") as fh:
        fh.write(evt_bytes(es))


def read_events(path) -> EventStream:
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return parse_evt(buf)
    except FormatError as exc:
        err = FormatError(f"{path}: {exc}")
        err.offset = exc.offset
        raise err from None
