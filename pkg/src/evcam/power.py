"""External power manager of the processor.

Every wake-up runs the fixed sequence IdleSleep -> PoweringOn -> Booting ->
Running -> IdleSleep.  Times are in microseconds.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

from .interface import FrameRecord, spi_transfer_model

log = logging.getLogger(__name__)


class PMState(enum.Enum):
    IDLE_SLEEP = "idle_sleep"
    POWERING_ON = "powering_on"
    BOOTING = "booting"
    RUNNING = "running"


_NEXT = {
    PMState.IDLE_SLEEP: PMState.POWERING_ON,
    PMState.POWERING_ON: PMState.BOOTING,
    PMState.BOOTING: PMState.RUNNING,
    PMState.RUNNING: PMState.IDLE_SLEEP,
}


class IllegalTransition(RuntimeError):
    pass


class OverrunWarning(UserWarning):
    """An activation did not finish within one frame period."""


@dataclass(frozen=True)
class TimingParams:
    t_readout: float = 300.0
    t_on: float = 590.0
    t_boot: float = 61.0

    def __post_init__(self):
        for name in ("t_readout", "t_on", "t_boot"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def startup(self) -> float:
        return self.t_on + self.t_boot


@dataclass(frozen=True)
class ActivationRecord:
    frame_index: int
    n_events: int
    t_start: float
    t_on: float
    t_boot: float
    t_transfer: float
    t_process: float
    overrun: bool = False

    @property
    def total(self) -> float:
        return self.t_on + self.t_boot + self.t_transfer + self.t_process

    @property
    def t_end(self) -> float:
        return self.t_start + self.total

    def phases(self):
        """Yield (state, start, end) for the three powered phases."""
        t0 = self.t_start
        t1 = t0 + self.t_on
        t2 = t1 + self.t_boot
        yield PMState.POWERING_ON, t0, t1
        yield PMState.BOOTING, t1, t2
        yield PMState.RUNNING, t2, t2 + self.t_transfer + self.t_process

    @property
    def transfer_window(self) -> tuple[float, float]:
        start = self.t_start + self.t_on + self.t_boot
        return start, start + self.t_transfer


class PowerManager:
    """Minimal FSM that refuses to skip states."""

    def __init__(self):
        self.state = PMState.IDLE_SLEEP
        self.history = [PMState.IDLE_SLEEP]

    def advance(self, to: PMState) -> None:
        if _NEXT[self.state] is not to:
            raise IllegalTransition(f"{self.state.name} -> {to.name}")
        self.state = to
        self.history.append(to)

    def run_activation(self) -> None:
        for state in (PMState.POWERING_ON, PMState.BOOTING, PMState.RUNNING, PMState.IDLE_SLEEP):
            self.advance(state)


def pm_handle_wakeup(frame: FrameRecord, timing: TimingParams, proc_model,
                     frame_period: float = 1e5) -> ActivationRecord:
    """Phase durations for the activation triggered by ``frame``.

    The activation starts when the frame's readout window closes.
    """
    if not frame.wake:
        raise ValueError(f"frame {frame.frame_index} did not request a wake-up")
    n = frame.n_stored
    t_transfer = spi_transfer_model(n)
    t_process = proc_model.t_process(n)
    total = timing.startup + t_transfer + t_process
    overrun = total > frame_period
    if overrun:
        log.warning("activation at frame %d lasts %.1f us, longer than the %.1f us frame period",
                    frame.frame_index, total, frame_period)
    return ActivationRecord(
        frame_index=frame.frame_index,
        n_events=n,
        t_start=frame.frame_index * frame_period + timing.t_readout,
        t_on=timing.t_on,
        t_boot=timing.t_boot,
        t_transfer=t_transfer,
        t_process=t_process,
        overrun=overrun,
    )


def pm_trace(frames, timing: TimingParams, proc_model, frame_period: float = 1e5,
             horizon: float | None = None):
    """Run the power manager over a frame sequence.

    Returns ``(intervals, activations)`` where ``intervals`` is a gap-free
    list of ``(PMState, start, end)`` covering ``[0, horizon)``.  A wake
    request that arrives while an activation is still in progress is
    coalesced into it (level-sensitive wake line).  Intervals beyond the
    horizon are clipped.
    """
    frames = list(frames)
    if horizon is None:
        horizon = len(frames) * frame_period
    fsm = PowerManager()
    intervals = []
    activations = []
    busy_until = 0.0
    t = 0.0
    for frame in frames:
        if not frame.wake:
            continue
        act = pm_handle_wakeup(frame, timing, proc_model, frame_period)
        if act.t_start < busy_until or act.t_start >= horizon:
            continue
        activations.append(act)
        if act.t_start > t:
            intervals.append((PMState.IDLE_SLEEP, t, act.t_start))
        for state, start, end in act.phases():
            fsm.advance(state)
            start, end = min(start, horizon), min(end, horizon)
            if end > start:
                intervals.append((state, start, end))
        fsm.advance(PMState.IDLE_SLEEP)
        t = min(act.t_end, horizon)
        busy_until = act.t_end
    if t < horizon:
        intervals.append((PMState.IDLE_SLEEP, t, horizon))
    return intervals, activations
