"""Energy accounting over per-component power-state timelines.

Units: time in microseconds, power in microwatts, energy in picojoules
(uW * us).  Average power is total energy divided by the horizon.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import brentq

from .interface import InterfaceConfig, count_only_record
from .power import TimingParams, pm_trace

COMPONENTS = ("sensor", "fpga", "soc", "cluster", "fll")
STATE_COLUMNS = ("idle", "active", "base", "ringosc", "spi", "ringosc_spi", "gated")


class TimelineIntegrityError(ValueError):
    pass


class FrameworkMismatch(ValueError):
    pass


class CalibrationError(ValueError):
    pass


class Framework(enum.Enum):
    FULLY_ACTIVE = "active"
    PERIODIC_POLLING = "polling"
    EVENT_DRIVEN = "event"


@dataclass
class ComponentPowerTable:
    sensor_idle: float = 10.0
    sensor_active: float = 20.0
    fpga_base: float = 68.0
    fpga_ringosc_on: float = 3000.0
    fpga_spi_extra: float = 456.0
    soc_idle: float = 99.0
    soc_active: float = 313.0
    cluster_active: float = 946.0
    cluster_gated: float = 0.0
    fll_active: float = 3200.0
    fll_gated: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        for lo, hi in (("sensor_idle", "sensor_active"), ("fpga_base", "fpga_ringosc_on"),
                       ("soc_idle", "soc_active"), ("cluster_gated", "cluster_active"),
                       ("fll_gated", "fll_active")):
            if getattr(self, hi) < getattr(self, lo):
                raise ValueError(f"{hi} must be >= {lo}")

    def power(self, component: str, state: str) -> float:
        if component == "fpga":
            extra = self.fpga_spi_extra if state.endswith("spi") else 0.0
            core = self.fpga_ringosc_on if state.startswith("ringosc") else self.fpga_base
            if state not in ("base", "ringosc", "spi", "ringosc_spi"):
                raise KeyError(f"unknown fpga state {state!r}")
            return core + extra
        return getattr(self, f"{component}_{state}")

    def idle_floor(self) -> float:
        return self.sensor_idle + self.fpga_base + self.soc_idle + self.cluster_gated + self.fll_gated

    def fully_active(self) -> float:
        return (self.sensor_active + self.fpga_ringosc_on + self.soc_active
                + self.cluster_active + self.fll_active)


@dataclass(frozen=True)
class ProcessingModel:
    """Processing time affine in the number of transferred events."""

    c0: float = 200.0  # us
    c1: float = 1.0  # us per event

    def __post_init__(self):
        if self.c0 < 0 or self.c1 < 0:
            raise ValueError("processing model constants must be non-negative")

    def t_process(self, n_events: int) -> float:
        return self.c0 + self.c1 * n_events


@dataclass
class PowerTimeline:
    horizon: float
    components: dict = field(default_factory=dict)  # name -> [(state, start, end)]

    def validate(self, tol: float = 1e-6) -> None:
        for name, intervals in self.components.items():
            t = 0.0
            for state, start, end in intervals:
                if abs(start - t) > tol:
                    kind = "overlap" if start < t else "gap"
                    raise TimelineIntegrityError(f"{name}: {kind} at {t:.3f} us")
                if end < start:
                    raise TimelineIntegrityError(f"{name}: negative interval at {start:.3f} us")
                t = end
            if abs(t - self.horizon) > tol:
                raise TimelineIntegrityError(f"{name}: covers {t:.3f} us of a {self.horizon:.3f} us horizon")


@dataclass
class EnergyReport:
    framework: str
    horizon: float
    n_frames: int
    state_time: dict  # component -> {state: us}
    energy: dict  # component -> pJ
    n_activations: int = 0
    mean_activation: float = 0.0

    @property
    def average(self) -> dict:
        return {c: e / self.horizon for c, e in self.energy.items()}

    @property
    def total_energy(self) -> float:
        return float(sum(self.energy.values()))

    @property
    def total(self) -> float:
        return self.total_energy / self.horizon

    @property
    def energy_per_frame(self) -> float:
        return self.total_energy / self.n_frames if self.n_frames else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["component", *(f"{s}_us" for s in STATE_COLUMNS), "avg_uW"])
        for comp, energy in self.energy.items():
            times = self.state_time.get(comp, {})
            writer.writerow([comp, *(f"{times[s]:.3f}" if s in times else "" for s in STATE_COLUMNS),
                             f"{energy / self.horizon:.6f}"])
        writer.writerow(["total", *([""] * len(STATE_COLUMNS)), f"{self.total:.6f}"])
        return buf.getvalue()


def integrate(timeline: PowerTimeline, table: ComponentPowerTable, framework: str = "",
              n_frames: int = 0, activations=()) -> EnergyReport:
    timeline.validate()
    state_time = {}
    energy = {}
    for comp, intervals in timeline.components.items():
        times: dict[str, float] = {}
        for state, start, end in intervals:
            times[state] = times.get(state, 0.0) + (end - start)
        state_time[comp] = times
        # sum per state first so the result does not depend on interval order
        energy[comp] = float(sum(table.power(comp, s) * t for s, t in sorted(times.items())))
    activations = list(activations)
    mean_act = float(np.mean([a.total for a in activations])) if activations else 0.0
    return EnergyReport(framework, timeline.horizon, n_frames, state_time, energy,
                        len(activations), mean_act)


def _merge(intervals):
    out = []
    for state, start, end in intervals:
        if end <= start:
            continue
        if out and out[-1][0] == state and out[-1][2] == start:
            out[-1] = (state, out[-1][1], end)
        else:
            out.append((state, start, end))
    return out


def _sweep(layers, horizon, name_for):
    """Partition [0, horizon) from several lists of possibly overlapping windows.

    ``layers`` maps a layer name to ``[(start, end)]``; ``name_for`` maps the
    frozenset of active layers to a state name.
    """
    edges = []
    for layer, windows in layers.items():
        for start, end in windows:
            start, end = max(0.0, start), min(horizon, end)
            if end > start:
                edges.append((start, 1, layer))
                edges.append((end, -1, layer))
    edges.sort(key=lambda e: (e[0], e[1]))
    depth = {layer: 0 for layer in layers}
    out = []
    t = 0.0
    for time, delta, layer in edges:
        if time > t:
            out.append((name_for(frozenset(k for k, v in depth.items() if v > 0)), t, time))
            t = time
        depth[layer] += delta
    if t < horizon:
        out.append((name_for(frozenset(k for k, v in depth.items() if v > 0)), t, horizon))
    return _merge(out)


def _fpga_state(active):
    if "ringosc" in active:
        return "ringosc_spi" if "spi" in active else "ringosc"
    return "spi" if "spi" in active else "base"


def build_timeline(frames, activations, framework: Framework, frame_period: float,
                   horizon: float | None = None) -> PowerTimeline:
    """Lay out component states for one framework.

    Sensor power follows each frame's mode, the FPGA runs its ring
    oscillator during readout windows and draws the SPI extra during
    transfers, and the processor domains are powered for every activation
    phase.
    """
    frames = list(frames)
    activations = list(activations)
    if horizon is None:
        horizon = len(frames) * frame_period
    if framework is Framework.FULLY_ACTIVE:
        states = {"sensor": "active", "fpga": "ringosc", "soc": "active", "cluster": "active",
                  "fll": "active"}
        return PowerTimeline(horizon, {c: [(s, 0.0, horizon)] for c, s in states.items()})

    wake_frames = {f.frame_index for f in frames if f.wake}
    if framework is Framework.PERIODIC_POLLING and len(wake_frames) != len(frames):
        raise FrameworkMismatch("periodic polling needs an activation request on every frame")
    stray = [a.frame_index for a in activations if a.frame_index not in wake_frames]
    if stray:
        raise FrameworkMismatch(f"activations without a wake request at frames {stray[:5]}")

    sensor = _merge([("active" if f.mode.value == "active" else "idle",
                      f.frame_index * frame_period, min((f.frame_index + 1) * frame_period, horizon))
                     for f in frames])
    ringosc = [(f.frame_index * frame_period + off, f.frame_index * frame_period + off + dur)
               for f in frames for name, off, dur in f.activity_windows if name == "ringosc"]
    spi = [a.transfer_window for a in activations]
    fpga = _sweep({"ringosc": ringosc, "spi": spi}, horizon, _fpga_state)
    powered = [(a.t_start, a.t_end) for a in activations]
    proc = _sweep({"on": powered}, horizon, lambda active: "active" if active else None)
    return PowerTimeline(horizon, {
        "sensor": sensor,
        "fpga": fpga,
        "soc": [(s or "idle", a, b) for s, a, b in proc],
        "cluster": [(s or "gated", a, b) for s, a, b in proc],
        "fll": [(s or "gated", a, b) for s, a, b in proc],
    })


def simulate_counts(counts, framework: Framework, cfg: InterfaceConfig | None = None,
                    timing: TimingParams | None = None, proc_model: ProcessingModel | None = None,
                    table: ComponentPowerTable | None = None) -> EnergyReport:
    """Energy report for a per-frame asserted-pixel count trace.

    The energy model only depends on counts: they decide the mode and the
    transferred payload of every frame.
    """
    cfg = cfg or InterfaceConfig()
    timing = timing or TimingParams(t_readout=cfg.t_readout)
    proc_model = proc_model or ProcessingModel()
    table = table or ComponentPowerTable()
    counts = [int(c) for c in counts]
    polling = framework is Framework.PERIODIC_POLLING
    frames = [count_only_record(i, c, cfg, polling=polling) for i, c in enumerate(counts)]
    return simulate_frames(frames, framework, cfg, timing, proc_model, table)


def simulate_frames(frames, framework: Framework, cfg: InterfaceConfig, timing: TimingParams,
                    proc_model: ProcessingModel, table: ComponentPowerTable) -> EnergyReport:
    frames = list(frames)
    period = cfg.frame_period
    horizon = len(frames) * period
    if framework is Framework.FULLY_ACTIVE:
        activations = []
    else:
        _, activations = pm_trace(frames, timing, proc_model, period, horizon)
    timeline = build_timeline(frames, activations, framework, period, horizon)
    return integrate(timeline, table, framework.value, len(frames), activations)


@dataclass
class FrameworkComparison:
    polling: EnergyReport
    event: EnergyReport

    @property
    def reduction(self) -> float:
        """Signed relative change of event-driven vs polling power (negative = saving)."""
        return (self.event.total - self.polling.total) / self.polling.total


def compare_frameworks(counts, cfg: InterfaceConfig | None = None, table: ComponentPowerTable | None = None,
                       timing: TimingParams | None = None,
                       proc_model: ProcessingModel | None = None) -> FrameworkComparison:
    pp = simulate_counts(counts, Framework.PERIODIC_POLLING, cfg, timing, proc_model, table)
    ed = simulate_counts(counts, Framework.EVENT_DRIVEN, cfg, timing, proc_model, table)
    return FrameworkComparison(pp, ed)


def calibrate_processing(target: float, counts, cfg: InterfaceConfig | None = None,
                         table: ComponentPowerTable | None = None,
                         timing: TimingParams | None = None, tol: float = 1e-6) -> ProcessingModel:
    """Fit (c0, c1) so the polling average on ``counts`` hits ``target`` uW.

    Polling power is affine in (c0, c1) as long as no activation overruns,
    so the fit is the minimum-norm least-squares solution of one linear
    equation, refined along its direction by root finding if overruns
    make the response nonlinear.
    """
    def pp(c0, c1):
        return simulate_counts(counts, Framework.PERIODIC_POLLING, cfg, timing,
                               ProcessingModel(c0, c1), table).total

    base = pp(0.0, 0.0)
    if target < base - tol:
        raise CalibrationError(
            f"target {target:.3f} uW is below the polling power with zero processing time "
            f"({base:.3f} uW)")
    if target <= base + tol:
        return ProcessingModel(0.0, 0.0)
    slopes = np.array([[pp(1.0, 0.0) - base, pp(0.0, 1.0) - base]])
    coef, *_ = np.linalg.lstsq(slopes, np.array([target - base]), rcond=None)
    coef = np.clip(coef, 0.0, None)
    if abs(pp(*coef) - target) > tol:
        hi = 1.0
        while pp(*(coef * hi)) < target:
            hi *= 2.0
            if hi > 1e6:
                raise CalibrationError(f"target {target:.3f} uW is not reachable")
        scale = brentq(lambda s: pp(*(coef * s)) - target, 0.0, hi, xtol=1e-12)
        coef = coef * scale
    return ProcessingModel(float(coef[0]), float(coef[1]))
