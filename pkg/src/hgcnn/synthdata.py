"""
Deterministic synthetic RGB-D landmark faces with genuine, print, replay and
mask presentations.

Class design:

* genuine: per-subject face shape and depth relief, skin tone with
  independent per-landmark texture noise.
* print: genuine colors (slightly lower contrast) on a near-flat, slightly
  tilted depth plane.
* replay: flat depth, genuine colors plus strong high-frequency color noise.
* mask: one shared mask relief (the average face) worn by the subject, and a
  shared spatially smooth texture (independent per channel) whose per-point
  variance matches the genuine texture noise; only the spatial correlation
  differs from genuine skin.

Every sample gets an in-plane rigid pose (rotation, translation, scale) and
a small landmark jitter.  Session 0 is frontal.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .landmarks import LABELS, REGIONS, LandmarkSample, PointSet, canonical_template, write_samples

GENERATOR_VERSION = "1"


@dataclass(frozen=True)
class GeneratorConfig:
    n_subjects: int = 10
    samples_per_subject_per_class: int = 5
    seed: int = 0
    n_sessions: int = 5
    rotation_deg: float = 15.0
    translation_px: float = 20.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    landmark_jitter_px: float = 0.3
    texture_std: float = 0.12
    replay_noise_std: float = 0.08
    sensor_color_std: float = 0.005
    depth_noise_std: float = 0.005
    flat_depth_noise_std: float = 2e-4
    print_tilt: float = 5e-4
    print_contrast: float = 0.9

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if self.samples_per_subject_per_class < 1:
            raise ValueError("samples_per_subject_per_class must be >= 1")
        object.__setattr__(self, "scale_range", tuple(self.scale_range))


def rotation_matrix(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def apply_posture(points: PointSet, angle_deg=0.0, translation=(0.0, 0.0), scale=1.0,
                  center=(100.0, 110.0)) -> PointSet:
    """Rotate/scale about ``center`` then translate; channels unchanged."""
    c = np.asarray(center)
    moved = points.transformed(rotation_matrix(angle_deg), translation=0.0, scale=scale)
    shift = c - scale * (rotation_matrix(angle_deg) @ c) + np.asarray(translation)
    return PointSet(moved.coords + shift, points.channels, points.layout)


def _face_coords(xy):
    # canonical face frame: roughly [-1, 1] across the face
    return (xy[:, 0] - 100.0) / 80.0, (xy[:, 1] - 110.0) / 70.0


def _relief(u, v, bulge, nose):
    r2 = np.clip(u**2 + 0.8 * v**2, 0.0, 1.0)
    return 0.3 + bulge * (1.0 - r2) + nose * np.exp(-(u**2 + (v + 0.15) ** 2) / 0.05)


_REGION_OFFSET = np.zeros((68, 3))
_REGION_OFFSET[list(REGIONS["mouth"])] = (0.08, -0.03, -0.03)
_REGION_OFFSET[list(REGIONS["eyes"])] = -0.15
_REGION_OFFSET[list(REGIONS["brows"])] = -0.2


def _smooth_field(u, v, waves):
    f = sum(a * np.cos(w0 * u + w1 * v + ph) for a, w0, w1, ph in waves)
    return f / np.std(f)


def generate(cfg: GeneratorConfig = GeneratorConfig()) -> list[LandmarkSample]:
    """Build the dataset.

    All randomness comes from ``np.random.default_rng(cfg.seed)``, drawn in
    this order: the shared mask texture; then per subject (in id order) its
    shape, relief and skin tone; then that subject's samples, class by class
    in ``LABELS`` order.
    """
    rng = np.random.default_rng(cfg.seed)
    base = canonical_template().coords
    u0, v0 = _face_coords(base)
    mask_texture = np.column_stack([
        _smooth_field(u0, v0, [(rng.normal(), *rng.uniform(-2.5, 2.5, 2), rng.uniform(0, 2 * np.pi))
                               for _ in range(12)])
        for _ in range(3)]) * cfg.texture_std
    mean_relief = _relief(u0, v0, 0.30, 0.15)

    samples = []
    for subj in range(cfg.n_subjects):
        sid = f"s{subj:02d}"
        sx, sy = rng.uniform(0.92, 1.08, 2)
        shape = base.copy()
        shape[:, 0] = 100.0 + sx * (shape[:, 0] - 100.0)
        shape[:, 1] = 110.0 + sy * (shape[:, 1] - 110.0)
        shape += rng.normal(0.0, 1.5, shape.shape)
        bulge, nose = rng.uniform(0.25, 0.35), rng.uniform(0.10, 0.20)
        tone = _skin_tone(rng)
        u, v = _face_coords(shape)
        relief = _relief(u, v, bulge, nose)
        mask_relief = mean_relief

        for label in LABELS:
            for k in range(cfg.samples_per_subject_per_class):
                session = k % cfg.n_sessions
                xy = shape + rng.normal(0.0, cfg.landmark_jitter_px, shape.shape)
                lighting = rng.uniform(-0.1, 0.1)
                shade = (1.0 + lighting * u)[:, None]
                if label == "mask":
                    sample_tone = _skin_tone(rng)
                    texture = mask_texture + rng.normal(0.0, cfg.sensor_color_std, (68, 3))
                else:
                    sample_tone = tone
                    texture = rng.normal(0.0, cfg.texture_std, (68, 3))
                rgb = sample_tone * shade + _REGION_OFFSET + texture
                if label == "print":
                    rgb = 0.5 + cfg.print_contrast * (rgb - 0.5)
                elif label == "replay":
                    rgb = rgb + rng.normal(0.0, cfg.replay_noise_std, rgb.shape)

                if label in ("print", "replay"):
                    tilt = rng.uniform(-cfg.print_tilt, cfg.print_tilt, 2) if label == "print" else (0, 0)
                    depth = 0.5 + tilt[0] * u + tilt[1] * v
                    depth = depth + rng.normal(0.0, cfg.flat_depth_noise_std, 68)
                else:
                    depth = (mask_relief if label == "mask" else relief)
                    depth = depth + rng.normal(0.0, cfg.depth_noise_std, 68)

                if session == 0:
                    angle, shift, scale = 0.0, rng.uniform(-2, 2, 2), 1.0
                else:
                    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
                    shift = rng.uniform(-cfg.translation_px, cfg.translation_px, 2)
                    scale = rng.uniform(*cfg.scale_range)
                pts = PointSet(xy, np.column_stack([np.clip(rgb, 0, 1), np.clip(depth, 0, 1)]),
                               ("r", "g", "b", "depth"))
                pts = apply_posture(pts, angle, shift + np.array([220.0, 130.0]), scale)
                samples.append(LandmarkSample(f"{sid}_{label}_{k:02d}", label, pts, sid, session))
    return samples


def _skin_tone(rng):
    r = rng.uniform(0.55, 0.8)
    return np.array([r, r * rng.uniform(0.7, 0.85), r * rng.uniform(0.55, 0.75)])


def manifest(samples, cfg: GeneratorConfig) -> dict:
    counts = {lab: sum(s.label == lab for s in samples) for lab in LABELS}
    return {
        "generator_version": GENERATOR_VERSION,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "subjects": sorted({s.subject for s in samples}),
        "classes": list(LABELS),
        "counts": counts,
        "n_samples": len(samples),
    }


def write_dataset(samples, cfg: GeneratorConfig, out_dir) -> dict:
    """Write ``samples.jsonl`` and ``manifest.json`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    write_samples(samples, os.path.join(out_dir, "samples.jsonl"))
    man = manifest(samples, cfg)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return man
