"""Behavioral model of the 128x64 spatial-contrast binary imager.

Frames are numpy arrays of shape ``(ROWS, COLS) == (64, 128)``.  The row
index is the coordinate recovered from End-Of-Row pulses during readout,
the column index is the 7-bit coordinate carried in each data word.

A readout stream is a 1-D ``int16`` array: values 0..255 are data words,
``EOR`` (-1) marks an End-Of-Row pulse.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ROWS = 64
COLS = 128
N_PIXELS = ROWS * COLS
EOR = -1
SIGN_BIT = 0x80
COL_MASK = 0x7F

DEFAULT_THETA_C = 0.15


class ProtocolError(ValueError):
    """Malformed native readout stream."""


class SensorMode(enum.Enum):
    IDLE = "idle"
    ACTIVE = "active"


@dataclass(frozen=True)
class SensorOutput:
    """Output of one frame period.

    In Idle mode only ``count`` is meaningful; in Active mode ``stream``
    holds the raster-scan readout of the same asserted pixels.
    """

    mode: SensorMode
    count: int
    stream: np.ndarray | None = None


def check_frame(frame) -> np.ndarray:
    arr = np.asarray(frame)
    if arr.shape != (ROWS, COLS):
        raise ValueError(f"frame must have shape {(ROWS, COLS)}, got {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("frame intensities must lie in [0, 255]")
    return arr


def binarize_contrast(frame, theta_c: float = DEFAULT_THETA_C) -> np.ndarray:
    """Return the boolean contrast map of a grayscale frame.

    A pixel is asserted when the larger of its absolute differences to the
    east and south neighbours, normalised by 255, exceeds ``theta_c``.
    Missing neighbours at the right and bottom edges contribute zero.
    """
    if not 0.0 <= theta_c <= 1.0:
        raise ValueError(f"theta_c must be in [0, 1], got {theta_c}")
    img = check_frame(frame).astype(np.int16)
    east = np.zeros_like(img)
    south = np.zeros_like(img)
    east[:, :-1] = np.abs(img[:, :-1] - img[:, 1:])
    south[:-1, :] = np.abs(img[:-1, :] - img[1:, :])
    return np.maximum(east, south) / 255.0 > theta_c


def frame_difference(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Ternary difference of two contrast maps as an ``int8`` array."""
    prev = np.asarray(prev, dtype=bool)
    cur = np.asarray(cur, dtype=bool)
    if prev.shape != (ROWS, COLS) or cur.shape != (ROWS, COLS):
        raise ValueError("contrast maps must be 64x128")
    return cur.astype(np.int8) - prev.astype(np.int8)


def diff_count(diff: np.ndarray) -> int:
    return int(np.count_nonzero(diff))


def encode_readout(diff: np.ndarray) -> np.ndarray:
    """Encode a ternary map as the native raster-scan token stream."""
    diff = np.asarray(diff)
    rows, cols = np.nonzero(diff)  # row-major, so already in raster order
    words = cols.astype(np.int16) | np.where(diff[rows, cols] < 0, SIGN_BIT, 0).astype(np.int16)
    # each row's words are followed by one EOR; place them via offsets
    per_row = np.bincount(rows, minlength=ROWS)
    out = np.full(len(words) + ROWS, EOR, dtype=np.int16)
    eor_pos = np.cumsum(per_row + 1) - 1
    data_mask = np.ones(out.size, dtype=bool)
    data_mask[eor_pos] = False
    out[data_mask] = words
    return out


def decode_readout(stream) -> np.ndarray:
    """Decode a token stream into an ``(n, 3)`` array of (row, col, sign).

    The row of each event is the number of EOR pulses seen before it.
    """
    tokens = np.asarray(stream, dtype=np.int16).ravel()
    is_eor = tokens == EOR
    if np.any((tokens < EOR) | (tokens > 255)):
        raise ProtocolError("token outside the 8-bit data range")
    n_eor = int(is_eor.sum())
    if n_eor > ROWS:
        raise ProtocolError(f"{n_eor} EOR pulses, at most {ROWS} allowed")
    rows = np.cumsum(is_eor) - is_eor  # EORs strictly before each token
    data = ~is_eor
    if np.any(rows[data] >= ROWS):
        raise ProtocolError("data word after the terminal EOR")
    words = tokens[data]
    out = np.empty((words.size, 3), dtype=np.int16)
    out[:, 0] = rows[data]
    out[:, 1] = words & COL_MASK
    out[:, 2] = np.where(words & SIGN_BIT, -1, 1)
    return out


def events_to_diff(events: np.ndarray) -> np.ndarray:
    diff = np.zeros((ROWS, COLS), dtype=np.int8)
    events = np.asarray(events).reshape(-1, 3)
    diff[events[:, 0], events[:, 1]] = events[:, 2]
    return diff


def sensor_step(prev_gray, cur_gray, mode: SensorMode, theta_c: float = DEFAULT_THETA_C) -> SensorOutput:
    diff = frame_difference(binarize_contrast(prev_gray, theta_c), binarize_contrast(cur_gray, theta_c))
    return output_for(diff, mode)


def output_for(diff: np.ndarray, mode: SensorMode) -> SensorOutput:
    count = diff_count(diff)
    if mode is SensorMode.IDLE:
        return SensorOutput(mode, count)
    return SensorOutput(mode, count, encode_readout(diff))


class ContrastSensor:
    """Stateful imager holding the previous contrast map in pixel memory.

    ``sense`` advances one frame period and returns the ternary difference;
    ``readout`` then produces the output for whichever mode the camera
    interface selected.
    """

    def __init__(self, theta_c: float = DEFAULT_THETA_C):
        self.theta_c = theta_c
        self._memory: np.ndarray | None = None
        self.diff: np.ndarray | None = None

    def sense(self, gray) -> np.ndarray:
        cur = binarize_contrast(gray, self.theta_c)
        prev = cur if self._memory is None else self._memory
        self._memory = cur
        self.diff = frame_difference(prev, cur)
        return self.diff

    def readout(self, mode: SensorMode) -> SensorOutput:
        if self.diff is None:
            raise RuntimeError("readout before the first frame was sensed")
        return output_for(self.diff, mode)


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 128x64 PGM with maxval 255."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    width, height, maxval = (int(f) for f in fields[1:])
    if (width, height) != (COLS, ROWS) or maxval != 255:
        raise ValueError(f"{path}: expected {COLS}x{ROWS} maxval 255, got {width}x{height} maxval {maxval}")
    raster = data[pos:pos + N_PIXELS]
    if len(raster) != N_PIXELS:
        raise ValueError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(ROWS, COLS).copy()


def write_pgm(path, frame) -> None:
    arr = check_frame(frame).astype(np.uint8)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (COLS, ROWS) + arr.tobytes())
