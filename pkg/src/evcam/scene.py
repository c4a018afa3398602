"""Synthetic grayscale scenes with scripted moving rectangles.

Randomness comes from ``numpy.random.Generator(PCG64(seed))``.  Scene
draws go through one generator in a fixed order (background, clutter
patches, then per-frame noise); each object's texture comes from its own
``PCG64(texture_seed)`` so an object looks the same in any scene.  A spec
plus a seed determines every frame byte.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .baseline import GroundTruthLabel
from .pipeline import Disappear, LineCross, LoopEnter
from .sensor import COLS, ROWS


class SceneSpecError(ValueError):
    pass


@dataclass
class SceneObject:
    height: int
    width: int
    intensity: int
    # (frame, row, col) of the rectangle centre; linear in between
    waypoints: list
    texture: int = 0  # amplitude of the fixed internal block pattern
    texture_block: int = 3
    texture_seed: int = 0

    @property
    def first_frame(self) -> int:
        return int(self.waypoints[0][0])

    @property
    def last_frame(self) -> int:
        return int(self.waypoints[-1][0])

    def center(self, frame: int):
        """Centre at ``frame`` or None when the object is not in the scene."""
        wps = self.waypoints
        if frame < wps[0][0] or frame > wps[-1][0]:
            return None
        for (f0, r0, c0), (f1, r1, c1) in zip(wps, wps[1:]):
            if f0 <= frame <= f1:
                if f1 == f0:
                    return float(r1), float(c1)
                a = (frame - f0) / (f1 - f0)
                return r0 + a * (r1 - r0), c0 + a * (c1 - c0)
        return float(wps[-1][1]), float(wps[-1][2])

    def box(self, frame: int):
        """Integer (top, left) of the rectangle at ``frame``."""
        center = self.center(frame)
        if center is None:
            return None
        return (int(math.floor(center[0] - self.height / 2 + 0.5)),
                int(math.floor(center[1] - self.width / 2 + 0.5)))


@dataclass
class SyntheticSceneSpec:
    objects: list = field(default_factory=list)
    background_level: int = 100
    background_texture: float = 20.0  # peak amplitude of the smooth background field
    noise: float = 0.0  # amplitude of uniform per-pixel noise
    clutter: int = 0  # static patches with borderline contrast
    clutter_contrast: int = 38

    def validate(self) -> None:
        for k, obj in enumerate(self.objects):
            if obj.height <= 0 or obj.width <= 0:
                raise SceneSpecError(f"object {k}: non-positive size")
            if not 0 <= obj.intensity <= 255:
                raise SceneSpecError(f"object {k}: intensity outside [0, 255]")
            if not obj.waypoints:
                raise SceneSpecError(f"object {k}: no waypoints")
            frames = [w[0] for w in obj.waypoints]
            if frames != sorted(frames):
                raise SceneSpecError(f"object {k}: waypoint frames must be non-decreasing")
            for f, r, c in obj.waypoints:
                top = r - obj.height / 2
                left = c - obj.width / 2
                if top + obj.height <= 0 or top >= ROWS or left + obj.width <= 0 or left >= COLS:
                    raise SceneSpecError(f"object {k}: rectangle entirely off the plane at frame {f}")


def _background(spec: SyntheticSceneSpec, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, size=(5, 9))
    smooth = ndimage.zoom(coarse, (ROWS / 5, COLS / 9), order=1, mode="nearest")[:ROWS, :COLS]
    return spec.background_level + spec.background_texture * smooth


def _texture(obj: SceneObject) -> np.ndarray:
    if obj.texture <= 0:
        return np.full((obj.height, obj.width), float(obj.intensity))
    rng = np.random.Generator(np.random.PCG64(obj.texture_seed))
    b = obj.texture_block
    cells = rng.choice([-1.0, 1.0], size=(-(-obj.height // b), -(-obj.width // b)))
    pattern = np.kron(cells, np.ones((b, b)))[:obj.height, :obj.width]
    return obj.intensity + obj.texture * pattern


def _paste(canvas, patch, top, left):
    h, w = patch.shape
    r0, c0 = max(top, 0), max(left, 0)
    r1, c1 = min(top + h, ROWS), min(left + w, COLS)
    if r1 > r0 and c1 > c0:
        canvas[r0:r1, c0:c1] = patch[r0 - top:r1 - top, c0 - left:c1 - left]


def generate_scene(spec: SyntheticSceneSpec, n_frames: int, seed: int) -> np.ndarray:
    """Render ``n_frames`` uint8 frames of shape (64, 128)."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    base = _background(spec, rng)
    patches = [_texture(obj) for obj in spec.objects]
    for _ in range(spec.clutter):
        h, w = rng.integers(4, 10, size=2)
        top, left = rng.integers(0, ROWS - h), rng.integers(0, COLS - w)
        base[top:top + h, left:left + w] += spec.clutter_contrast
    frames = np.empty((n_frames, ROWS, COLS), dtype=np.uint8)
    for f in range(n_frames):
        img = base.copy()
        for obj, patch in zip(spec.objects, patches):
            box = obj.box(f)
            if box is not None:
                _paste(img, patch, *box)
        if spec.noise > 0:
            img += rng.uniform(-spec.noise, spec.noise, size=img.shape)
        frames[f] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return frames


def _centers(obj: SceneObject, n_frames: int):
    lo, hi = max(obj.first_frame, 0), min(obj.last_frame, n_frames - 1)
    return [(f, obj.center(f)) for f in range(lo, hi + 1)]


def _away(rule: Disappear, pos) -> bool:
    return rule.away_from_border(pos)


def generate_labels(spec: SyntheticSceneSpec, rules, n_frames: int, window: int = 15) -> list[GroundTruthLabel]:
    """Ground-truth trigger labels implied by the scripted trajectories.

    Loop entries are the first frame the centre is inside a loop (objects
    smaller than the loop's ``min_size`` are ignored), line crossings the
    frame the centre reaches the far side, and disappearances the frame an
    object that travelled at least ``min_displacement`` stops moving away
    from the border.
    """
    labels = []
    for obj in spec.objects:
        track = _centers(obj, n_frames)
        for rule in rules:
            if isinstance(rule, LoopEnter):
                if obj.height * obj.width < rule.min_size:
                    continue
                inside = False
                for f, pos in track:
                    now = rule.contains(pos)
                    if now and not inside:
                        labels.append(GroundTruthLabel(f, rule.rule_id, window))
                    inside = now
            elif isinstance(rule, LineCross):
                # positions exactly on the line are skipped, as in the tracker
                last = None
                for f, b in track:
                    if last is not None and rule.crosses(last, b) and (
                            rule.direction == 0 or rule.side(b) == rule.direction):
                        labels.append(GroundTruthLabel(f, rule.rule_id, window))
                    if rule.side(b) != 0:
                        last = b
            elif isinstance(rule, Disappear):
                if not track:
                    continue
                origin = track[0][1]
                reach = 0.0
                moving = False
                for (_, a), (f, b) in zip(track, track[1:]):
                    reach = max(reach, math.dist(origin, a))
                    step = math.dist(a, b)
                    if step > 0:
                        moving = True
                    elif moving:
                        moving = False
                        if _away(rule, a) and reach >= rule.min_displacement:
                            labels.append(GroundTruthLabel(f, rule.rule_id, window))
    return sorted(labels, key=lambda lab: (lab.frame_index, lab.rule_id))
