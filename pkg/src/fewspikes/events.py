"""Event-stream data model, CSV/EVT1 file I/O, and a synthetic scene generator.

Formats
-------
CSV: one event per line, ``t,x,y,p`` in decimal, no header.  Timestamps are
microseconds.  The sensor geometry is not part of the file and must be given
to the loader.

EVT1 (binary, little-endian): magic ``EVT1`` (4 bytes), u32 width, u32 height,
u64 event count, then packed records ``{u64 t, u16 x, u16 y, u8 p}`` (13 bytes
each).  Round-trips are byte-exact.

The generator produces Poisson event streams from a moving shape plus uniform
background noise; a fixed seed fully determines the output bytes.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Event",
    "EventStream",
    "SyntheticSceneSpec",
    "LabeledClip",
    "EventFormatError",
    "load_events",
    "save_events",
    "generate_scene",
    "trajectory_mask",
    "SHAPE_KINDS",
]

EVT1_MAGIC = b"EVT1"
_EVT1_HEADER = struct.Struct("<4sIIQ")
_EVT1_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])

SHAPE_KINDS = ("moving-bar", "moving-disk", "expanding-square")


class EventFormatError(ValueError):
    """Malformed or out-of-contract event data; carries file location context."""


@dataclass(frozen=True)
class Event:
    """A single DVS event: time in microseconds, pixel position, polarity."""

    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class EventStream:
    """A time-sorted event sequence over a fixed sensor geometry.

    The event table is a structured array with fields t/x/y/p; it is treated
    as immutable after construction.
    """

    width: int
    height: int
    events: np.ndarray  # structured array, _EVT1_RECORD dtype

    def __post_init__(self) -> None:
        ev = np.asarray(self.events)
        if ev.dtype != _EVT1_RECORD:
            ev = np.array(ev, dtype=_EVT1_RECORD)
            object.__setattr__(self, "events", ev)
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"geometry must be positive, got {self.width}x{self.height}")
        if len(ev):
            if ev["x"].max(initial=0) >= self.width or ev["y"].max(initial=0) >= self.height:
                raise EventFormatError("event coordinates outside sensor geometry")

    def __len__(self) -> int:
        return len(self.events)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EventStream)
            and self.width == other.width
            and self.height == other.height
            and len(self.events) == len(other.events)
            and bool(np.array_equal(self.events, other.events))
        )

    @property
    def duration(self) -> int:
        """Span in microseconds: t_last - t_first, 0 when empty."""
        if len(self.events) == 0:
            return 0
        return int(self.events["t"][-1]) - int(self.events["t"][0])

    @staticmethod
    def from_arrays(width: int, height: int, t, x, y, p) -> "EventStream":
        ev = np.empty(len(t), dtype=_EVT1_RECORD)
        ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
        return EventStream(width, height, ev)


def _validate_and_sort(
    width: int, height: int, ev: np.ndarray, reorder_window_us: int, where: str
) -> np.ndarray:
    if np.any(ev["p"] > 1):
        i = int(np.argmax(ev["p"] > 1))
        raise EventFormatError(f"{where} record {i}: polarity out of range")
    if np.any(ev["x"] >= width):
        i = int(np.argmax(ev["x"] >= width))
        raise EventFormatError(f"{where} record {i}: x out of range (x={ev['x'][i]}, width={width})")
    if np.any(ev["y"] >= height):
        i = int(np.argmax(ev["y"] >= height))
        raise EventFormatError(f"{where} record {i}: y out of range (y={ev['y'][i]}, height={height})")
    if len(ev) > 1:
        t = ev["t"].astype(np.int64)
        running_max = np.maximum.accumulate(t)
        backstep = running_max - t
        if backstep.max(initial=0) > reorder_window_us:
            i = int(np.argmax(backstep > reorder_window_us))
            raise EventFormatError(
                f"{where} record {i}: timestamp {t[i]} precedes earlier event by "
                f"{backstep[i]} us (reorder window {reorder_window_us})"
            )
        if backstep.max(initial=0) > 0:
            ev = ev[np.argsort(ev["t"], kind="stable")]
    return ev


def load_events(
    path,
    format: str,
    geometry: tuple[int, int] | None = None,
    reorder_window_us: int = 0,
) -> EventStream:
    """Load an event stream from disk.

    ``format`` is ``"csv"`` or ``"evt1"``.  CSV files carry no geometry, so
    ``geometry=(width, height)`` is required; for EVT1 it is read from the
    header (and cross-checked when supplied).  Timestamps may regress by at
    most ``reorder_window_us`` microseconds (default 0: strictly monotone);
    the result is always sorted by time.
    """
    if format == "csv":
        if geometry is None:
            raise ValueError("CSV carries no geometry; pass geometry=(width, height)")
        width, height = geometry
        rows = []
        with open(path, "r", encoding="ascii") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 4:
                    raise EventFormatError(f"{path} line {lineno}: expected 4 fields, got {len(parts)}")
                try:
                    t, x, y, p = (int(v) for v in parts)
                except ValueError as exc:
                    raise EventFormatError(f"{path} line {lineno}: non-integer field ({exc})") from None
                if t < 0 or x < 0 or y < 0 or p < 0:
                    raise EventFormatError(f"{path} line {lineno}: negative field")
                if x >= width:
                    raise EventFormatError(f"{path} line {lineno}: x out of range (x={x}, width={width})")
                if y >= height:
                    raise EventFormatError(f"{path} line {lineno}: y out of range (y={y}, height={height})")
                if p > 1:
                    raise EventFormatError(f"{path} line {lineno}: polarity out of range (p={p})")
                rows.append((t, x, y, p))
        ev = np.array(rows, dtype=_EVT1_RECORD) if rows else np.empty(0, dtype=_EVT1_RECORD)
        ev = _validate_and_sort(width, height, ev, reorder_window_us, str(path))
        return EventStream(width, height, ev)

    if format == "evt1":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _EVT1_HEADER.size:
            raise EventFormatError(f"{path}: truncated header ({len(raw)} bytes)")
        magic, width, height, count = _EVT1_HEADER.unpack_from(raw, 0)
        if magic != EVT1_MAGIC:
            raise EventFormatError(f"{path} offset 0: bad magic {magic!r}")
        if geometry is not None and (width, height) != tuple(geometry):
            raise EventFormatError(
                f"{path}: header geometry {width}x{height} != expected {geometry[0]}x{geometry[1]}"
            )
        body = raw[_EVT1_HEADER.size:]
        expected = count * _EVT1_RECORD.itemsize
        if len(body) != expected:
            raise EventFormatError(
                f"{path} offset {_EVT1_HEADER.size}: body is {len(body)} bytes, expected {expected}"
            )
        ev = np.frombuffer(body, dtype=_EVT1_RECORD).copy()
        ev = _validate_and_sort(width, height, ev, reorder_window_us, str(path))
        return EventStream(int(width), int(height), ev)

    raise ValueError(f"unknown format {format!r} (expected 'csv' or 'evt1')")


def save_events(stream: EventStream, path, format: str) -> None:
    """Write a stream to disk; EVT1 round-trips byte-for-byte."""
    if format == "csv":
        with open(path, "w", encoding="ascii") as fh:
            for rec in stream.events:
                fh.write(f"{rec['t']},{rec['x']},{rec['y']},{rec['p']}\n")
    elif format == "evt1":
        with open(path, "wb") as fh:
            fh.write(_EVT1_HEADER.pack(EVT1_MAGIC, stream.width, stream.height, len(stream.events)))
            fh.write(stream.events.tobytes())
    else:
        raise ValueError(f"unknown format {format!r} (expected 'csv' or 'evt1')")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Parameters of a generated clip: one moving shape plus uniform noise.

    Rates are events per pixel per millisecond.  ``size_px`` is the bar width,
    the disk radius, or the initial half-side of the expanding square.  The
    optional ``start`` overrides the default shape center (pixels).
    """

    kind: str
    width: int
    height: int
    duration_ms: float
    velocity_px_ms: float = 0.0
    object_rate: float = 1.0
    noise_rate: float = 0.0
    size_px: float = 4.0
    seed: int = 0
    start: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}; expected one of {SHAPE_KINDS}")
        if self.object_rate < 0 or self.noise_rate < 0:
            raise ValueError("event rates must be non-negative")
        if self.duration_ms <= 0:
            raise ValueError("duration must be positive")
        if self.size_px <= 0:
            raise ValueError("size must be positive")


@dataclass(frozen=True)
class LabeledClip:
    """A generated stream with its class label and midpoint ground-truth box.

    The box is (cx, cy, w, h) in pixels, center format, inside the geometry.
    """

    stream: EventStream
    label: int
    box: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        cx, cy, w, h = self.box
        if w <= 0 or h <= 0:
            raise ValueError(f"box extent must be positive, got w={w}, h={h}")
        if not (0 <= cx - w / 2 and cx + w / 2 <= self.stream.width
                and 0 <= cy - h / 2 and cy + h / 2 <= self.stream.height):
            raise ValueError(f"box {self.box} outside {self.stream.width}x{self.stream.height}")


_SQRT2 = float(np.sqrt(2.0))


def _shape_extent(spec: SyntheticSceneSpec, t_ms: float) -> tuple[float, float, float, float]:
    """Shape bounding extent (x0, x1, y0, y1) at time t, in pixel coordinates."""
    w, h = spec.width, spec.height
    if spec.start is not None:
        cx0, cy0 = spec.start
    elif spec.kind == "moving-bar":
        cx0, cy0 = spec.size_px / 2 + 1.0, h / 2.0
    else:
        cx0, cy0 = w / 2.0, h / 2.0
    if spec.kind == "moving-bar":
        cx = cx0 + spec.velocity_px_ms * t_ms
        return cx - spec.size_px / 2, cx + spec.size_px / 2, 0.0, float(h)
    if spec.kind == "moving-disk":
        step = spec.velocity_px_ms * t_ms / _SQRT2
        cx, cy = cx0 + step, cy0 + step
        r = spec.size_px
        return cx - r, cx + r, cy - r, cy + r
    # expanding-square: half-side grows at velocity
    half = spec.size_px + spec.velocity_px_ms * t_ms
    return cx0 - half, cx0 + half, cy0 - half, cy0 + half


def _covered_pixels(spec: SyntheticSceneSpec, t_ms: float) -> tuple[np.ndarray, np.ndarray]:
    """(xs, ys) of pixels covered by the shape at time t."""
    x0, x1, y0, y1 = _shape_extent(spec, t_ms)
    xs = np.arange(max(0, int(np.floor(x0))), min(spec.width, int(np.ceil(x1))))
    ys = np.arange(max(0, int(np.floor(y0))), min(spec.height, int(np.ceil(y1))))
    if len(xs) == 0 or len(ys) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    if spec.kind == "moving-disk":
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        keep = (gx + 0.5 - cx) ** 2 + (gy + 0.5 - cy) ** 2 <= spec.size_px**2
        gx, gy = gx[keep], gy[keep]
    return gx, gy


def _exit_time_ms(spec: SyntheticSceneSpec) -> float:
    """First time the shape's extent leaves the sensor, or the clip duration."""
    lo, hi = 0.0, spec.duration_ms

    def inside(t: float) -> bool:
        x0, x1, y0, y1 = _shape_extent(spec, t)
        return x0 >= 0 and y0 >= 0 and x1 <= spec.width and y1 <= spec.height

    if not inside(0.0):
        raise ValueError("shape does not fit inside the sensor at clip start")
    if inside(hi):
        return hi
    for _ in range(60):  # bisect to sub-microsecond precision
        mid = (lo + hi) / 2
        if inside(mid):
            lo = mid
        else:
            hi = mid
    return lo


_SLAB_MS = 0.5  # time resolution of the Poisson slabs


def generate_scene(spec: SyntheticSceneSpec) -> LabeledClip:
    """Generate a labeled clip from a scene spec.

    Object events are drawn only from pixels currently covered by the shape;
    noise events are uniform over the sensor and the clip duration.  The
    ground-truth box is the shape extent at the clip midpoint.  If the shape
    exits the sensor the clip is truncated at the exit and a warning is
    issued.  Identical seeds give identical clips.
    """
    duration_ms = _exit_time_ms(spec)
    if duration_ms < spec.duration_ms:
        warnings.warn(
            f"shape exits sensor at {duration_ms:.3f} ms; clip truncated "
            f"(requested {spec.duration_ms} ms)",
            stacklevel=2,
        )
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    ts, xs, ys = [], [], []
    n_slabs = max(1, int(np.ceil(duration_ms / _SLAB_MS)))
    for i in range(n_slabs):
        t0 = i * _SLAB_MS
        t1 = min((i + 1) * _SLAB_MS, duration_ms)
        if t1 <= t0:
            break
        span = t1 - t0
        px, py = _covered_pixels(spec, (t0 + t1) / 2)
        n_obj = rng.poisson(spec.object_rate * len(px) * span) if len(px) else 0
        if n_obj:
            pick = rng.integers(0, len(px), size=n_obj)
            xs.append(px[pick])
            ys.append(py[pick])
            ts.append(rng.uniform(t0, t1, size=n_obj))
        n_noise = rng.poisson(spec.noise_rate * spec.width * spec.height * span)
        if n_noise:
            xs.append(rng.integers(0, spec.width, size=n_noise))
            ys.append(rng.integers(0, spec.height, size=n_noise))
            ts.append(rng.uniform(t0, t1, size=n_noise))
    if ts:
        t_us = np.round(np.concatenate(ts) * 1000.0).astype(np.uint64)
        x_all = np.concatenate(xs).astype(np.uint16)
        y_all = np.concatenate(ys).astype(np.uint16)
        p_all = rng.integers(0, 2, size=len(t_us)).astype(np.uint8)
        order = np.argsort(t_us, kind="stable")
        stream = EventStream.from_arrays(
            spec.width, spec.height, t_us[order], x_all[order], y_all[order], p_all[order]
        )
    else:
        stream = EventStream.from_arrays(spec.width, spec.height, [], [], [], [])

    x0, x1, y0, y1 = _shape_extent(spec, duration_ms / 2)
    x0, x1 = max(0.0, x0), min(float(spec.width), x1)
    y0, y1 = max(0.0, y0), min(float(spec.height), y1)
    box = ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)
    return LabeledClip(stream, SHAPE_KINDS.index(spec.kind), box)


def trajectory_mask(spec: SyntheticSceneSpec, dilate: int = 0) -> np.ndarray:
    """Boolean (H, W) union of pixels the shape covers over the clip.

    ``dilate`` grows the mask by that many pixels in each direction (useful
    when comparing against 3x3-neighborhood encoders).
    """
    duration_ms = _exit_time_ms(spec)
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    n_slabs = max(1, int(np.ceil(duration_ms / _SLAB_MS)))
    for i in range(n_slabs + 1):
        t = min(i * _SLAB_MS, duration_ms)
        px, py = _covered_pixels(spec, t)
        mask[py, px] = True
    for _ in range(dilate):
        grown = mask.copy()
        grown[1:, :] |= mask[:-1, :]
        grown[:-1, :] |= mask[1:, :]
        grown[:, 1:] |= mask[:, :-1]
        grown[:, :-1] |= mask[:, 1:]
        mask = grown
    return mask
