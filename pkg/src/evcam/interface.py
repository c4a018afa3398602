"""FPGA camera interface: Control Unit mode policy and DataPath capture."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .sensor import N_PIXELS, SensorMode, decode_readout

STORAGE_CAPACITY = 1024
PACKET_SIZE = 4
SPI_CLOCK_HZ = 5e6
SPI_WORD_BITS = 16
SPI_HEADER_BITS = 64


@dataclass
class InterfaceConfig:
    wake_threshold: int = 100
    frame_rate: float = 10.0
    t_readout: float = 300.0  # us

    def __post_init__(self):
        if not 0 <= self.wake_threshold <= N_PIXELS:
            raise ValueError(f"wake_threshold must be in [0, {N_PIXELS}]")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.t_readout <= 0:
            raise ValueError("t_readout must be positive")

    @property
    def frame_period(self) -> float:
        """Frame period in microseconds."""
        return 1e6 / self.frame_rate


@dataclass
class StorageMemory:
    capacity: int = STORAGE_CAPACITY
    events: np.ndarray = field(default_factory=lambda: np.empty((0, 3), dtype=np.int16))
    overflow: bool = False
    packets: int = 0

    def __len__(self):
        return len(self.events)


@dataclass
class FrameRecord:
    frame_index: int
    mode: SensorMode
    count: int
    events: np.ndarray | None = None
    wake: bool = False
    overflow: bool = False
    # (activity, start offset from frame start in us, duration in us)
    activity_windows: list = field(default_factory=list)

    @property
    def n_stored(self) -> int:
        return 0 if self.events is None else len(self.events)


def cu_decide_mode(count: int, cfg: InterfaceConfig) -> SensorMode:
    if count < 0:
        raise ValueError("count must be non-negative")
    return SensorMode.ACTIVE if count > cfg.wake_threshold else SensorMode.IDLE


def dp_capture(stream, capacity: int = STORAGE_CAPACITY) -> tuple[StorageMemory, int]:
    """Capture an Active-mode stream into storage.

    Events pass through a 4-event input register; a partial packet is
    flushed when the stream ends.  Once storage is full the remaining
    events are counted but dropped.
    """
    events = decode_readout(stream)
    count = len(events)
    stored = []
    n_stored = 0
    packets = 0
    for start in range(0, count, PACKET_SIZE):
        packet = events[start:start + PACKET_SIZE]
        packets += 1
        room = capacity - n_stored
        if room <= 0:
            continue
        kept = packet[:room]
        stored.append(kept)
        n_stored += len(kept)
    mem = StorageMemory(
        capacity=capacity,
        events=np.concatenate(stored) if stored else np.empty((0, 3), dtype=np.int16),
        overflow=count > capacity,
        packets=packets,
    )
    return mem, count


def interface_frame_step(frame_index: int, count: int, stream, cfg: InterfaceConfig,
                         polling: bool = False) -> FrameRecord:
    """One frame of the interface.

    ``count`` is the Idle counter value for this frame.  The mode applies to
    the same frame (the pixel memory still holds it), so an Active decision
    reads out this frame's events.  With ``polling`` the interface reads
    out every frame and wakes the processor unconditionally.
    """
    mode = SensorMode.ACTIVE if polling else cu_decide_mode(count, cfg)
    if mode is SensorMode.IDLE:
        return FrameRecord(frame_index, mode, count)
    if stream is None:
        raise ValueError("an Active frame needs its readout stream")
    mem, seen = dp_capture(stream)
    if seen != count:
        raise ValueError(f"stream carries {seen} events but counter reported {count}")
    return FrameRecord(
        frame_index, mode, count, events=mem.events, wake=True, overflow=mem.overflow,
        activity_windows=[("ringosc", 0.0, cfg.t_readout)],
    )


def count_only_record(frame_index: int, count: int, cfg: InterfaceConfig,
                      polling: bool = False) -> FrameRecord:
    """FrameRecord built from the counter alone, for energy-only traces.

    Stored events are zero placeholders; only their number is meaningful.
    """
    mode = SensorMode.ACTIVE if polling else cu_decide_mode(count, cfg)
    if mode is SensorMode.IDLE:
        return FrameRecord(frame_index, mode, count)
    n = min(count, STORAGE_CAPACITY)
    return FrameRecord(
        frame_index, mode, count, events=np.zeros((n, 3), dtype=np.int16), wake=True,
        overflow=count > STORAGE_CAPACITY, activity_windows=[("ringosc", 0.0, cfg.t_readout)],
    )


def spi_transfer_model(n_events: int) -> float:
    """Duration in microseconds of the SPI read of ``n_events`` stored events."""
    if not 0 <= n_events <= STORAGE_CAPACITY:
        raise ValueError(f"n_events must be in [0, {STORAGE_CAPACITY}]")
    return (n_events * SPI_WORD_BITS + SPI_HEADER_BITS) / SPI_CLOCK_HZ * 1e6


# SPI payload: 8-byte header (u32 seen count, u16 stored count, u8 flags,
# u8 reserved) then one big-endian u16 per event:
# bit 15 sign (1 => -1), bits 14..8 column, bits 7..2 row, bits 1..0 zero.
_HEADER = struct.Struct(">IHBB")
FLAG_OVERFLOW = 0x01


def encode_spi_payload(mem: StorageMemory, count: int) -> bytes:
    ev = np.asarray(mem.events, dtype=np.int64).reshape(-1, 3)
    words = ((ev[:, 2] < 0).astype(np.int64) << 15) | (ev[:, 1] << 8) | (ev[:, 0] << 2)
    header = _HEADER.pack(count, len(ev), FLAG_OVERFLOW if mem.overflow else 0, 0)
    return header + words.astype(">u2").tobytes()


def decode_spi_payload(payload: bytes) -> tuple[np.ndarray, int, bool]:
    """Inverse of :func:`encode_spi_payload`: (events, seen count, overflow)."""
    if len(payload) < _HEADER.size:
        raise ValueError("SPI payload shorter than its header")
    count, n, flags, _ = _HEADER.unpack_from(payload)
    body = payload[_HEADER.size:]
    if len(body) != 2 * n:
        raise ValueError(f"SPI payload announces {n} events but carries {len(body) // 2}")
    words = np.frombuffer(body, dtype=">u2").astype(np.int64)
    events = np.empty((n, 3), dtype=np.int16)
    events[:, 0] = (words >> 2) & 0x3F
    events[:, 1] = (words >> 8) & 0x7F
    events[:, 2] = np.where(words >> 15, -1, 1)
    return events, count, bool(flags & FLAG_OVERFLOW)
