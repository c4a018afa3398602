"""Scenario orchestration: config, end-to-end runs, sweeps, reports."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import (BaselineParams, GroundTruthLabel, MetricCounts, baseline_detect, labels_csv,
                       match_triggers, metrics_csv, read_labels)
from .energy import (ComponentPowerTable, EnergyReport, Framework, ProcessingModel, calibrate_processing,
                     simulate_counts, simulate_frames)
from .interface import InterfaceConfig, interface_frame_step
from .pipeline import Disappear, EventPipeline, LineCross, LoopEnter, PipelineParams
from .power import TimingParams, pm_trace
from .profiles import build_profile
from .scene import SceneObject, SceneSpecError, SyntheticSceneSpec, generate_labels, generate_scene
from .sensor import DEFAULT_THETA_C, ContrastSensor, SensorMode, read_pgm, write_pgm

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    source: str = "synthetic"  # "synthetic" or a directory of PGM frames
    profile: str | None = None
    labels_path: str | None = None
    frames: int = 4000
    seed: int = 0
    theta_c: float = DEFAULT_THETA_C
    label_window: int = 15
    interface: InterfaceConfig = field(default_factory=InterfaceConfig)
    timing: TimingParams = field(default_factory=TimingParams)
    power: ComponentPowerTable = field(default_factory=ComponentPowerTable)
    processing: ProcessingModel = field(default_factory=ProcessingModel)
    calibration_target: float | None = None
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    baseline: BaselineParams = field(default_factory=BaselineParams)
    scene: SyntheticSceneSpec = field(default_factory=SyntheticSceneSpec)
    rules: list = field(default_factory=list)
    base_dir: Path = field(default_factory=Path)


def _pair(text: str, what: str):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{what}: expected 'row,col', got {text!r}") from None
    return a, b


def _numbers(text: str, n: int, what: str):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{what}: expected {n} comma-separated numbers") from None
    if len(vals) != n:
        raise ConfigError(f"{what}: expected {n} comma-separated numbers")
    return vals


def _override(obj, section: configparser.SectionProxy):
    """Return a copy of a dataclass with fields replaced from a config section."""
    known = {f.name: f for f in dataclasses.fields(obj)}
    kw = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{section.name}]: unknown key {key!r}")
        current = getattr(obj, key)
        try:
            kw[key] = type(current)(raw) if not isinstance(current, int) or isinstance(current, bool) \
                else int(raw)
        except ValueError:
            raise ConfigError(f"[{section.name}] {key}: cannot parse {raw!r}") from None
    try:
        return dataclasses.replace(obj, **kw)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}]: {exc}") from None


def _parse_rule(name: str, sec) -> object:
    kind = sec.get("type", "").strip().lower()
    try:
        if kind == "loop":
            return LoopEnter(name, _numbers(sec["region"], 4, f"rule {name} region"),
                             float(sec.get("min_size", 0)))
        if kind == "line":
            return LineCross(name, _pair(sec["p1"], f"rule {name} p1"), _pair(sec["p2"], f"rule {name} p2"),
                             int(sec.get("direction", 0)))
        if kind == "disappear":
            return Disappear(name, float(sec.get("border_margin", 5)), float(sec.get("min_displacement", 8)))
    except KeyError as exc:
        raise ConfigError(f"rule {name}: missing key {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"rule {name}: {exc}") from None
    raise ConfigError(f"rule {name}: unknown type {kind!r} (loop, line or disappear)")


def _parse_object(name: str, sec) -> SceneObject:
    try:
        wps = []
        for item in sec["waypoints"].split():
            f, r, c = item.split(":")
            wps.append((int(f), float(r), float(c)))
        return SceneObject(int(sec["height"]), int(sec["width"]), int(sec["intensity"]), wps,
                           texture=int(sec.get("texture", 0)), texture_block=int(sec.get("texture_block", 3)),
                           texture_seed=int(sec.get("texture_seed", 0)))
    except KeyError as exc:
        raise ConfigError(f"object {name}: missing key {exc}") from None
    except ValueError:
        raise ConfigError(f"object {name}: malformed values") from None


def parse_config(text: str, base_dir: Path | str = ".", seed: int | None = None) -> ScenarioConfig:
    """Parse an INI scenario description.

    A ``profile`` in ``[scenario]`` supplies scene, rules, pipeline
    parameters and wake threshold; explicit sections override them.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if "scenario" not in cp:
        raise ConfigError("missing [scenario] section")
    sc = cp["scenario"]
    cfg = ScenarioConfig(base_dir=Path(base_dir))
    try:
        cfg.name = sc.get("name", cfg.name)
        cfg.source = sc.get("source", cfg.source)
        cfg.profile = sc.get("profile")
        cfg.labels_path = sc.get("labels")
        cfg.frames = sc.getint("frames", cfg.frames)
        cfg.seed = sc.getint("seed", cfg.seed) if seed is None else seed
        cfg.theta_c = sc.getfloat("theta_c", cfg.theta_c)
        cfg.label_window = sc.getint("label_window", cfg.label_window)
        frame_rate = sc.getfloat("frame_rate", 10.0)
        threshold = sc.getint("wake_threshold", None) if "wake_threshold" in sc else None
    except ValueError as exc:
        raise ConfigError(f"[scenario]: {exc}") from None
    if cfg.frames <= 0:
        raise ConfigError("[scenario] frames must be positive")
    if not 0 <= cfg.theta_c <= 1:
        raise ConfigError("[scenario] theta_c must be in [0, 1]")

    if cfg.profile:
        try:
            prof = build_profile(cfg.profile, cfg.frames, cfg.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg.scene, cfg.rules, cfg.pipeline, cfg.baseline = prof.scene, prof.rules, prof.pipeline, prof.baseline
        threshold = prof.wake_threshold if threshold is None else threshold

    timing = cfg.timing
    if "timing" in cp:
        timing = _override(timing, cp["timing"])
    cfg.timing = timing
    try:
        cfg.interface = InterfaceConfig(threshold if threshold is not None else 100, frame_rate, timing.t_readout)
    except ValueError as exc:
        raise ConfigError(f"[scenario]: {exc}") from None
    if "power" in cp:
        cfg.power = _override(cfg.power, cp["power"])
    if "processing" in cp:
        proc = cp["processing"]
        try:
            target = proc.get("calibrate_target")
            cfg.calibration_target = float(target) if target else None
            cfg.processing = ProcessingModel(proc.getfloat("c0", 200.0), proc.getfloat("c1", 1.0))
        except ValueError as exc:
            raise ConfigError(f"[processing]: {exc}") from None
    if "pipeline" in cp:
        cfg.pipeline = _override(cfg.pipeline, cp["pipeline"])
    if "baseline" in cp:
        cfg.baseline = _override(cfg.baseline, cp["baseline"])
    if "scene" in cp:
        cfg.scene = _override(cfg.scene, cp["scene"])
    objects = [_parse_object(s.split(None, 1)[1], cp[s]) for s in cp.sections() if s.startswith("object ")]
    if objects:
        cfg.scene = dataclasses.replace(cfg.scene, objects=objects)
    rules = [_parse_rule(s.split(None, 1)[1], cp[s]) for s in cp.sections() if s.startswith("rule ")]
    if rules:
        cfg.rules = rules
    if cfg.source != "synthetic":
        src = cfg.base_dir / cfg.source
        if not src.is_dir():
            raise ConfigError(f"frame directory {src} does not exist")
        if cfg.labels_path and not (cfg.base_dir / cfg.labels_path).is_file():
            raise ConfigError(f"labels file {cfg.base_dir / cfg.labels_path} does not exist")
    else:
        try:
            cfg.scene.validate()
        except SceneSpecError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def load_config(path, seed: int | None = None) -> ScenarioConfig:
    path = Path(path)
    text = path.read_text()  # OSError propagates: an I/O failure, not a config error
    return parse_config(text, path.parent, seed)


def load_frames(cfg: ScenarioConfig):
    """Frames and ground-truth labels for a scenario."""
    if cfg.source == "synthetic":
        frames = generate_scene(cfg.scene, cfg.frames, cfg.seed)
        labels = generate_labels(cfg.scene, cfg.rules, cfg.frames, cfg.label_window)
        return frames, labels
    paths = sorted((cfg.base_dir / cfg.source).glob("*.pgm"))[:cfg.frames]
    if not paths:
        raise OSError(f"no .pgm frames in {cfg.base_dir / cfg.source}")
    frames = np.stack([read_pgm(p) for p in paths])
    labels = read_labels(cfg.base_dir / cfg.labels_path, cfg.label_window) if cfg.labels_path else []
    return frames, labels


@dataclass
class FrameTrace:
    counts: list = field(default_factory=list)
    modes: list = field(default_factory=list)
    wakes: list = field(default_factory=list)
    overflows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_index", "count", "mode", "wake", "overflow"])
        for i, row in enumerate(zip(self.counts, self.modes, self.wakes, self.overflows)):
            c, m, wake, ovf = row
            w.writerow([i, c, m, int(wake), int(ovf)])
        return buf.getvalue()

    @property
    def wake_fraction(self) -> float:
        return float(np.mean(self.wakes)) if self.wakes else 0.0


@dataclass
class RunReport:
    name: str
    energy: dict  # framework value -> EnergyReport
    metrics: dict  # domain -> MetricCounts
    triggers: dict  # domain -> [TriggerEvent]
    labels: list
    trace: FrameTrace
    processing: ProcessingModel
    overruns: int = 0

    @property
    def reduction(self) -> float | None:
        pp, ed = self.energy.get("polling"), self.energy.get("event")
        if pp is None or ed is None:
            return None
        return (ed.total - pp.total) / pp.total

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "framework", "avg_uW", "activations", "mean_activation_us", "wake_fraction"])
        for fw, rep in self.energy.items():
            w.writerow([self.name, fw, f"{rep.total:.6f}", rep.n_activations, f"{rep.mean_activation:.3f}",
                        f"{self.trace.wake_fraction:.6f}"])
        return buf.getvalue()

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "trace.csv": self.trace.to_csv(),
            "summary.csv": self.summary_csv(),
            "metrics.csv": metrics_csv((self.name, d, m) for d, m in self.metrics.items()),
            "labels.csv": labels_csv(self.labels),
        }
        for fw, rep in self.energy.items():
            files[f"energy_{fw}.csv"] = rep.to_csv()
        for domain, trigs in self.triggers.items():
            files[f"triggers_{domain}.csv"] = triggers_csv(trigs)
        written = []
        for name, text in files.items():
            path = out / name
            path.write_text(text)
            written.append(path)
        return written


def triggers_csv(triggers) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_index", "rule_id", "track_id", "row", "col"])
    for t in triggers:
        w.writerow([t.frame_index, t.rule_id, t.track_id, f"{t.row:.3f}", f"{t.col:.3f}"])
    return buf.getvalue()


def sense_counts(frames, theta_c: float) -> np.ndarray:
    sensor = ContrastSensor(theta_c)
    return np.array([int(np.count_nonzero(sensor.sense(f))) for f in frames])


FRAMEWORK_CHOICES = {
    "event": (Framework.EVENT_DRIVEN,),
    "polling": (Framework.PERIODIC_POLLING,),
    "active": (Framework.FULLY_ACTIVE,),
    "both": (Framework.PERIODIC_POLLING, Framework.EVENT_DRIVEN),
}


def run_scenario(cfg: ScenarioConfig, frameworks=("both",), with_baseline: bool = True) -> RunReport:
    """Drive sensor, interface, power manager and pipelines over one scenario.

    Both frameworks see the same frames.  The trigger pipeline of the event
    domain consumes the stored events of every frame; the baseline domain
    runs the frame-differencing detector on the grayscale frames, feeding
    the same tracker and rules.
    """
    frames, labels = load_frames(cfg)
    icfg = cfg.interface
    sensor = ContrastSensor(cfg.theta_c)
    event_pipe = EventPipeline(cfg.pipeline, cfg.rules)
    base_pipe = EventPipeline(cfg.pipeline, cfg.rules)
    trace = FrameTrace()
    ed_frames, pp_frames = [], []
    prev = None
    for i, gray in enumerate(frames):
        sensor.sense(gray)
        count = sensor.readout(SensorMode.IDLE).count
        stream = sensor.readout(SensorMode.ACTIVE).stream
        pp = interface_frame_step(i, count, stream, icfg, polling=True)
        ed = interface_frame_step(i, count, stream, icfg)
        pp_frames.append(pp)
        ed_frames.append(ed)
        trace.counts.append(count)
        trace.modes.append(ed.mode.value)
        trace.wakes.append(ed.wake)
        trace.overflows.append(ed.overflow)
        event_pipe.process(pp.events, i)
        if with_baseline:
            blobs = baseline_detect(gray, gray if prev is None else prev, cfg.baseline)
            base_pipe.step_blobs(blobs, i)
        prev = gray

    proc = cfg.processing
    if cfg.calibration_target is not None:
        proc = calibrate_processing(cfg.calibration_target, trace.counts, icfg, cfg.power, cfg.timing)
        log.info("calibrated processing model: c0=%.3f us, c1=%.5f us/event", proc.c0, proc.c1)

    wanted = []
    for choice in frameworks:
        for fw in FRAMEWORK_CHOICES[choice]:
            if fw not in wanted:
                wanted.append(fw)
    energy = {}
    overruns = 0
    for fw in wanted:
        fr = ed_frames if fw is Framework.EVENT_DRIVEN else pp_frames
        energy[fw.value] = simulate_frames(fr, fw, icfg, cfg.timing, proc, cfg.power)
        if fw is not Framework.FULLY_ACTIVE:
            _, acts = pm_trace(fr, cfg.timing, proc, icfg.frame_period, len(fr) * icfg.frame_period)
            overruns += sum(a.overrun for a in acts)

    triggers = {"event": event_pipe.triggers}
    metrics = {"event": match_triggers(event_pipe.triggers, labels)}
    if with_baseline:
        triggers["baseline"] = base_pipe.triggers
        metrics["baseline"] = match_triggers(base_pipe.triggers, labels)
    return RunReport(cfg.name, energy, metrics, triggers, labels, trace, proc, overruns)


@dataclass
class SweepRow:
    threshold: int
    wake_fraction: float
    event_power: float
    recall: float


def threshold_sweep(cfg: ScenarioConfig, thresholds) -> list[SweepRow]:
    """Event-driven power and trigger recall for each wake threshold.

    Recall is measured on the wake-gated stream: frames that do not wake
    the processor reach the tracker as empty frames.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError("threshold list is empty")
    frames, labels = load_frames(cfg)
    sensor = ContrastSensor(cfg.theta_c)
    counts, streams = [], []
    for gray in frames:
        sensor.sense(gray)
        out = sensor.readout(SensorMode.ACTIVE)
        counts.append(out.count)
        streams.append(out.stream)
    rows = []
    for thr in thresholds:
        icfg = dataclasses.replace(cfg.interface, wake_threshold=int(thr))
        recs = [interface_frame_step(i, c, s, icfg) for i, (c, s) in enumerate(zip(counts, streams))]
        rep = simulate_frames(recs, Framework.EVENT_DRIVEN, icfg, cfg.timing, cfg.processing, cfg.power)
        pipe = EventPipeline(cfg.pipeline, cfg.rules)
        empty = np.empty((0, 3), dtype=np.int16)
        for r in recs:
            pipe.process(r.events if r.wake else empty, r.frame_index)
        m = match_triggers(pipe.triggers, labels)
        rows.append(SweepRow(int(thr), float(np.mean([r.wake for r in recs])), rep.total, m.recall))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "wake_fraction", "event_power_uW", "recall"])
    for r in rows:
        w.writerow([r.threshold, f"{r.wake_fraction:.6f}", f"{r.event_power:.6f}", f"{r.recall:.6f}"])
    return buf.getvalue()


def calibrate_scenario(cfg: ScenarioConfig, target: float) -> tuple[ProcessingModel, EnergyReport, EnergyReport]:
    frames, _ = load_frames(cfg)
    counts = sense_counts(frames, cfg.theta_c)
    proc = calibrate_processing(target, counts, cfg.interface, cfg.power, cfg.timing)
    pp = simulate_counts(counts, Framework.PERIODIC_POLLING, cfg.interface, cfg.timing, proc, cfg.power)
    ed = simulate_counts(counts, Framework.EVENT_DRIVEN, cfg.interface, cfg.timing, proc, cfg.power)
    return proc, pp, ed


def write_scene(cfg: ScenarioConfig, out_dir) -> list[GroundTruthLabel]:
    """Render a synthetic scene to numbered PGM files plus labels.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = generate_scene(cfg.scene, cfg.frames, cfg.seed)
    labels = generate_labels(cfg.scene, cfg.rules, cfg.frames, cfg.label_window)
    width = max(5, len(str(len(frames))))
    for i, f in enumerate(frames):
        write_pgm(out / f"frame_{i:0{width}d}.pgm", f)
    (out / "labels.csv").write_text(labels_csv(labels))
    return labels
