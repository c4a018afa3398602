"""Scenario profiles standing in for the three monitoring datasets.

Each profile builds scripted scenes from episodes (one object crossing the
view, or walking in, stopping and leaving) and spaces them so that the
fraction of frames whose asserted-pixel count exceeds the wake threshold
matches a target activity level.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baseline import BaselineParams
from .pipeline import Disappear, LineCross, LoopEnter, PipelineParams
from .scene import SceneObject, SyntheticSceneSpec, generate_scene
from .sensor import COLS, ContrastSensor, diff_count

# published activity statistics: (wake threshold, fraction of relevant frames)
PUBLISHED_ACTIVITY = {
    "parking": (100, 0.16),
    "street": (40, 0.605),
    "people": (80, 0.654),
}
# published (periodic-polling, event-driven) average power in uW
PUBLISHED_POWER = {
    "parking": (226.0, 193.0),
    "street": (294.0, 277.0),
    "people": (267.0, 252.0),
}


@dataclass
class Profile:
    name: str
    scene: SyntheticSceneSpec
    rules: list
    pipeline: PipelineParams
    wake_threshold: int
    baseline: BaselineParams = field(default_factory=BaselineParams)


def _tex_seed(rng) -> int:
    return int(rng.integers(0, 2**31))


def _car(rng, start, v_choices=(2, 3), left_to_right=True, height=18, width=30):
    v = int(rng.choice(v_choices))
    row = float(rng.integers(22, 43))
    c_in, c_out = -width / 2 + 1, COLS + width / 2 - 1
    if not left_to_right:
        c_in, c_out = c_out, c_in
    dur = int(round(abs(c_out - c_in) / v))
    return SceneObject(height, width, int(rng.integers(170, 220)),
                       [(start, row, c_in), (start + dur, row, c_out)], texture=40,
                       texture_seed=_tex_seed(rng))


def _pedestrian_crossing(rng, start):
    col = float(rng.integers(16, COLS - 16))
    down = bool(rng.integers(0, 2))
    r_in, r_out = -6.0, 69.0
    if not down:
        r_in, r_out = r_out, r_in
    return SceneObject(16, 8, int(rng.integers(160, 200)),
                       [(start, r_in, col), (start + 75, r_out, col)], texture=40,
                       texture_seed=_tex_seed(rng))


def _walker(rng, start, stop: bool):
    """A person entering from a side border, optionally stopping, then leaving."""
    h, w = 22, 12
    row = float(rng.integers(20, 45))
    from_left = bool(rng.integers(0, 2))
    c_edge_in = -w / 2 + 1 if from_left else COLS + w / 2 - 1
    if not stop:
        c_out = COLS + w / 2 - 1 if from_left else -w / 2 + 1
        dur = int(abs(c_out - c_edge_in))
        return SceneObject(h, w, int(rng.integers(170, 210)),
                           [(start, row, c_edge_in), (start + dur, row, c_out)], texture=40,
                           texture_seed=_tex_seed(rng))
    c_stop = float(rng.integers(36, COLS - 36))
    r_stop = float(np.clip(row + rng.integers(-8, 9), 20, 44))
    walk_in = int(round(max(abs(c_stop - c_edge_in), abs(r_stop - row))))
    dwell = int(rng.integers(20, 41))
    back = bool(rng.integers(0, 2))
    c_exit = c_edge_in if back else (COLS + w / 2 - 1 if from_left else -w / 2 + 1)
    walk_out = int(round(abs(c_exit - c_stop)))
    t1 = start + walk_in
    t2 = t1 + dwell
    return SceneObject(h, w, int(rng.integers(170, 210)), [
        (start, row, c_edge_in), (t1, r_stop, c_stop), (t2, r_stop, c_stop),
        (t2 + walk_out, r_stop, c_exit)], texture=40, texture_seed=_tex_seed(rng))


def _shift(obj: SceneObject, offset: int) -> SceneObject:
    return SceneObject(obj.height, obj.width, obj.intensity,
                       [(f + offset, r, c) for f, r, c in obj.waypoints], obj.texture, obj.texture_block,
                       obj.texture_seed)


def _relevant_frames(obj: SceneObject, threshold: int, scene_kw, seed: int) -> int:
    """Frames of an isolated episode whose count exceeds ``threshold``."""
    local = _shift(obj, -obj.first_frame)
    n = local.last_frame + 3
    frames = generate_scene(SyntheticSceneSpec([local], **scene_kw), n, seed=seed)
    sensor = ContrastSensor()
    return sum(diff_count(sensor.sense(f)) > threshold for f in frames)


def _layout(episodes, n_frames, threshold, target, scene_kw, seed, min_gap=8):
    """Place episodes back to back with equal gaps to approach ``target``.

    With ``target`` None every episode is used with ``min_gap`` spacing.
    """
    if target is None:
        chosen = episodes
    else:
        goal = target * n_frames
        chosen, acc = [], 0
        for e in episodes:
            r = _relevant_frames(e, threshold, scene_kw, seed)
            if abs(acc + r - goal) >= abs(acc - goal):
                break
            chosen.append(e)
            acc += r
    busy = sum(e.last_frame - e.first_frame + 1 for e in chosen)
    gap = max(min_gap, (n_frames - busy) // (len(chosen) + 1)) if target is not None else min_gap
    out, t = [], gap
    for e in chosen:
        out.append(_shift(e, t - e.first_frame))
        t += e.last_frame - e.first_frame + 1 + gap
    return [o for o in out if o.last_frame < n_frames]


_SCENE_KW = {"noise": 3.0}


def parking(n_frames: int = 4000, seed: int = 0, target: float | None = 0.16) -> Profile:
    """Cars crossing a vertical gate; only left-to-right crossings trigger."""
    rng = np.random.Generator(np.random.PCG64(seed))
    episodes = [_car(rng, 0, left_to_right=bool(rng.random() < 0.8)) for _ in range(400)]
    objects = _layout(episodes, n_frames, 100, target, _SCENE_KW, seed)
    rules = [LineCross("gate", (4.0, 64.0), (59.0, 64.0), direction=1)]
    params = PipelineParams(cluster_radius=18, min_blob_pixels=10, merge_distance=22,
                            min_blob_pixels_2=60, gate=16, size_limit=20, max_missed=3)
    return Profile("parking", SyntheticSceneSpec(objects, **_SCENE_KW), rules, params, 100,
                   BaselineParams(intensity_threshold=25, min_pixels=40))


def street(n_frames: int = 4000, seed: int = 0, target: float | None = 0.605) -> Profile:
    """Vehicles entering two virtual loops; pedestrians cross but must not trigger."""
    rng = np.random.Generator(np.random.PCG64(seed))
    episodes = []
    for _ in range(400):
        if rng.random() < 0.7:
            episodes.append(_car(rng, 0, v_choices=(2, 3), left_to_right=bool(rng.integers(0, 2)),
                                 height=16, width=24))
        else:
            episodes.append(_pedestrian_crossing(rng, 0))
    objects = _layout(episodes, n_frames, 40, target, _SCENE_KW, seed)
    rules = [LoopEnter("loop_w", (14.0, 20.0, 50.0, 40.0), min_size=250),
             LoopEnter("loop_e", (14.0, 88.0, 50.0, 108.0), min_size=250)]
    params = PipelineParams(cluster_radius=14, min_blob_pixels=8, merge_distance=22,
                            min_blob_pixels_2=30, gate=14, size_limit=16, max_missed=3)
    return Profile("street", SyntheticSceneSpec(objects, **_SCENE_KW), rules, params, 40,
                   BaselineParams(intensity_threshold=25, min_pixels=20))


def people(n_frames: int = 1446, seed: int = 0, target: float | None = 0.654) -> Profile:
    """People walking in, stopping at a point of interest, and leaving."""
    rng = np.random.Generator(np.random.PCG64(seed))
    episodes = [_walker(rng, 0, stop=bool(rng.random() < 0.7)) for _ in range(400)]
    objects = _layout(episodes, n_frames, 80, target, _SCENE_KW, seed)
    rules = [Disappear("stop", border_margin=8.0, min_displacement=10.0)]
    params = PipelineParams(cluster_radius=14, min_blob_pixels=8, merge_distance=16,
                            min_blob_pixels_2=40, gate=10, size_limit=12, max_missed=3)
    return Profile("people", SyntheticSceneSpec(objects, **_SCENE_KW), rules, params, 80,
                   BaselineParams(intensity_threshold=25, min_pixels=20))


PROFILES = {"parking": parking, "street": street, "people": people}


def build_profile(name: str, n_frames: int, seed: int, target: float | None = ...) -> Profile:
    try:
        builder = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    if target is ...:
        return builder(n_frames, seed)
    return builder(n_frames, seed, target)
