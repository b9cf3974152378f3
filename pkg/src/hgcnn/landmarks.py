"""
Landmark point sets: midpoint augmentation, k-NN hypergraphs and HSV channels.
"""

from __future__ import annotations

import colorsys
import json
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .hypergraph import Hypergraph

log = logging.getLogger(__name__)

N_LANDMARKS = 68
LABELS = ("genuine", "print", "replay", "mask")


@dataclass(frozen=True, eq=False)
class PointSet:
    """Points with coordinates ``(n, d)`` and per-point channels ``(n, c)``.

    ``layout`` names the channel columns, e.g. ``("r", "g", "b", "depth")``.
    """

    coords: np.ndarray
    channels: np.ndarray
    layout: tuple[str, ...]

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))
        channels = np.asarray(self.channels, dtype=np.float64)
        if channels.ndim == 1:
            channels = channels.reshape(len(coords), -1)
        if channels.shape != (len(coords), len(self.layout)):
            raise ValueError(
                f"channels shape {channels.shape} does not match {len(coords)} points "
                f"x layout {self.layout}")
        if not (np.all(np.isfinite(coords)) and np.all(np.isfinite(channels))):
            raise ValueError("coordinates and channels must be finite")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "layout", tuple(self.layout))

    def __len__(self):
        return self.coords.shape[0]

    def channel(self, *names: str) -> np.ndarray:
        idx = [self.layout.index(nm) for nm in names]
        return self.channels[:, idx]

    def transformed(self, rotation: np.ndarray | None = None, translation=0.0, scale=1.0):
        """Similarity transform of the coordinates; channels unchanged."""
        c = self.coords
        if rotation is not None:
            c = c @ np.asarray(rotation).T
        return PointSet(scale * c + translation, self.channels, self.layout)

    def permuted(self, perm):
        perm = np.asarray(perm)
        return PointSet(self.coords[perm], self.channels[perm], self.layout)


@dataclass(frozen=True)
class AugmentationConfig:
    k_interp: int = 6
    dedup_tolerance: float = 0.5

    def __post_init__(self):
        if self.k_interp < 1:
            raise ValueError("k_interp must be >= 1")
        if self.dedup_tolerance < 0:
            raise ValueError("dedup_tolerance must be >= 0")


@dataclass(frozen=True)
class HypergraphConfig:
    k_nn: int = 5


class CalibrationError(ValueError):
    def __init__(self, message, best_k, best_count):
        super().__init__(message)
        self.best_k = best_k
        self.best_count = best_count


def squared_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_indices(coords: np.ndarray, k: int, rtol: float = 1e-9) -> np.ndarray:
    """``(n, k)`` nearest neighbours of each point, self excluded.

    Distances are squared Euclidean.  Distances equal up to ``rtol`` count as
    ties and go to the smaller index, so rounding noise from a rotation cannot
    flip which of two equidistant points is kept.  Columns are ordered by
    distance, ties by index.
    """
    n = coords.shape[0]
    d = squared_distances(np.asarray(coords, dtype=np.float64))
    d[np.arange(n), np.arange(n)] = np.inf
    order = np.argsort(d, axis=1, kind="stable")
    out = np.empty((n, k), dtype=np.intp)
    for i in range(n):
        row = d[i]
        edge = row[order[i, k - 1]]
        tol = rtol * edge + 1e-300
        closer = order[i, :k][row[order[i, :k]] < edge - tol]
        tied = np.flatnonzero(np.abs(row - edge) <= tol)
        fill = tied[: k - closer.size]
        sel = np.concatenate([closer, fill])
        # stable sort by distance keeps index order inside the tie group
        out[i] = sel[np.argsort(np.where(np.isin(sel, fill), edge, row[sel]), kind="stable")]
    return out


def midpoint_pairs(pts: PointSet, cfg: AugmentationConfig) -> list[tuple[int, int]]:
    """Pairs ``(i, j)``, ``i < j``, whose midpoints survive deduplication."""
    n = len(pts)
    if n < 2:
        raise ValueError("augmentation needs at least 2 points")
    nbrs = knn_indices(pts.coords, min(cfg.k_interp, n - 1))
    candidates = sorted({(min(i, int(j)), max(i, int(j)))
                         for i in range(n) for j in nbrs[i]})
    kept_coords = list(pts.coords)
    pairs = []
    tol2 = cfg.dedup_tolerance ** 2
    for i, j in candidates:
        mid = 0.5 * (pts.coords[i] + pts.coords[j])
        existing = np.asarray(kept_coords)
        if np.min(np.sum((existing - mid) ** 2, axis=1)) <= tol2:
            continue
        kept_coords.append(mid)
        pairs.append((i, j))
    return pairs


def apply_midpoints(pts: PointSet, pairs) -> PointSet:
    """Append the midpoint of every pair (coordinates and channels averaged)."""
    if not len(pairs):
        return pts
    idx = np.asarray(pairs, dtype=np.intp)
    i, j = idx[:, 0], idx[:, 1]
    mid_c = 0.5 * (pts.coords[i] + pts.coords[j])
    mid_x = 0.5 * (pts.channels[i] + pts.channels[j])
    return PointSet(np.vstack([pts.coords, mid_c]),
                    np.vstack([pts.channels, mid_x]), pts.layout)


def augment_landmarks(pts: PointSet, cfg: AugmentationConfig = AugmentationConfig(),
                      pairs=None) -> PointSet:
    """Originals followed by deduplicated k-NN midpoints.

    Parameters
    ----------
    pairs : list of (int, int), optional
        Reuse a fixed midpoint pattern (e.g. the one computed on the canonical
        template) instead of deriving it from ``pts``.  Keeps the vertex count
        and vertex meaning identical across faces.
    """
    if len(pts) < 2:
        raise ValueError("augmentation needs at least 2 points")
    if pairs is None:
        pairs = midpoint_pairs(pts, cfg)
    return apply_midpoints(pts, pairs)


def calibrate_k_interp(template: PointSet, target_total: int,
                       dedup_tolerance: float = 0.5, k_range=range(1, 11)) -> tuple[int, int]:
    """Smallest ``k_interp`` whose augmented size reaches ``target_total``.

    Returns ``(k, achieved_count)``.  Raises ``CalibrationError`` (carrying the
    best count seen) when no ``k`` in range gets there.
    """
    best_k, best_count = None, -1
    for k in k_range:
        count = len(template) + len(midpoint_pairs(
            template, AugmentationConfig(k, dedup_tolerance)))
        if count >= target_total:
            return k, count
        if count > best_count:
            best_k, best_count = k, count
    raise CalibrationError(
        f"no k_interp in [{k_range.start}, {k_range.stop - 1}] reaches {target_total} "
        f"points (best: {best_count} at k={best_k})", best_k, best_count)


def build_knn_hypergraph(pts, cfg: HypergraphConfig = HypergraphConfig()) -> Hypergraph:
    """One hyperedge per point: the point and its ``k_nn`` nearest neighbours.

    ``pts`` is a ``PointSet`` or an ``(n, d)`` coordinate array.  The result is
    ``(k_nn + 1)``-uniform with unit weights.
    """
    coords = np.asarray(getattr(pts, "coords", pts), dtype=np.float64)
    n = coords.shape[0]
    if not 1 <= cfg.k_nn < n:
        raise ValueError(f"k_nn={cfg.k_nn} needs 1 <= k_nn < n_points={n}")
    nbrs = knn_indices(coords, cfg.k_nn)
    edges = [(i, *nbrs[i]) for i in range(n)]
    return Hypergraph(n, edges, uniform_k=cfg.k_nn + 1)


def rgb_to_hsv_channels(pts: PointSet) -> PointSet:
    """Append ``h``, ``s``, ``v`` channels computed from ``r``, ``g``, ``b``.

    Hue is scaled to ``[0, 1)``; grey points get hue and saturation 0.
    """
    rgb = pts.channel("r", "g", "b")
    hsv = np.array([colorsys.rgb_to_hsv(*px) for px in rgb]).reshape(-1, 3)
    return PointSet(pts.coords, np.hstack([pts.channels, hsv]),
                    pts.layout + ("h", "s", "v"))


# -- canonical 68-point face --------------------------------------------------

# Integer pixel coordinates in the usual 68-landmark ordering: jaw 0-16,
# brows 17-26, nose 27-35, eyes 36-47, mouth 48-67.
_TEMPLATE_XY = (
    (179, 81), (176, 98), (170, 114), (162, 131), (152, 146), (140, 158), (128, 167), (114, 173),
    (100, 175), (86, 173), (72, 167), (60, 158), (48, 146), (38, 131), (30, 114), (24, 98),
    (21, 81), (42, 52), (54, 46), (65, 44), (76, 46), (88, 52), (112, 52), (124, 46),
    (135, 44), (146, 46), (158, 52), (100, 68), (100, 81), (100, 95), (100, 108), (84, 120),
    (92, 117), (100, 116), (108, 117), (116, 120), (56, 76), (63, 73), (77, 73), (84, 76),
    (77, 79), (63, 79), (116, 76), (123, 73), (137, 73), (144, 76), (137, 79), (123, 79),
    (70, 152), (74, 146), (85, 141), (100, 139), (115, 141), (126, 146), (130, 152), (126, 158),
    (115, 163), (100, 165), (85, 163), (74, 158), (82, 152), (87, 148), (100, 147), (113, 148),
    (118, 152), (113, 156), (100, 157), (87, 156),
)

# Calibrated on the template above with dedup_tolerance 0.5: k_interp=6 is the
# smallest k giving >= 318 points, and gives exactly 318 (250 midpoints).
TEMPLATE_K_INTERP = 6
TEMPLATE_TOTAL = 318

REGIONS = {
    "jaw": range(0, 17),
    "brows": range(17, 27),
    "nose": range(27, 36),
    "eyes": range(36, 48),
    "mouth": range(48, 68),
}


def canonical_template() -> PointSet:
    """The canonical face as a ``PointSet`` with neutral grey channels."""
    xy = np.array(_TEMPLATE_XY, dtype=np.float64)
    return PointSet(xy, np.full((len(xy), 4), 0.5), ("r", "g", "b", "depth"))


@lru_cache(maxsize=None)
def _template_pattern(k_interp: int, dedup_tolerance: float):
    return tuple(midpoint_pairs(canonical_template(), AugmentationConfig(k_interp, dedup_tolerance)))


def template_pairs(cfg: AugmentationConfig | None = None) -> list[tuple[int, int]]:
    """Midpoint pattern of the canonical template (``TEMPLATE_K_INTERP`` by default)."""
    cfg = cfg or AugmentationConfig(TEMPLATE_K_INTERP)
    return list(_template_pattern(cfg.k_interp, cfg.dedup_tolerance))


# -- sample files -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LandmarkSample:
    id: str
    label: str
    points: PointSet
    subject: str
    session: int = 0

    @property
    def is_genuine(self) -> bool:
        return self.label == "genuine"


def sample_to_record(s: LandmarkSample) -> dict:
    pts = s.points
    rgb, depth = pts.channel("r", "g", "b"), pts.channel("depth")[:, 0]
    return {
        "id": s.id,
        "label": s.label,
        "subject": s.subject,
        "session": s.session,
        "points": [{"xy": [float(x), float(y)], "rgb": [float(v) for v in c], "depth": float(d)}
                   for (x, y), c, d in zip(pts.coords, rgb, depth)],
    }


def record_to_sample(rec: dict, min_points: int = N_LANDMARKS) -> LandmarkSample:
    label = rec["label"]
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}")
    points = rec["points"]
    if len(points) < min_points:
        raise ValueError(f"{len(points)} points, need at least {min_points}")
    try:
        xy = np.array([p["xy"] for p in points], dtype=np.float64)
        rgb = np.array([p["rgb"] for p in points], dtype=np.float64)
        depth = np.array([p["depth"] for p in points], dtype=np.float64)
    except ValueError:
        xy = rgb = depth = None
    if xy is None or xy.shape != (len(points), 2) or rgb.shape != (len(points), 3) \
            or depth.shape != (len(points),):
        raise ValueError("each point needs xy[2], rgb[3] and a scalar depth")
    if np.any(rgb < 0) or np.any(rgb > 1) or np.any(depth < 0) or np.any(depth > 1):
        raise ValueError("rgb and depth must lie in [0, 1]")
    pts = PointSet(xy, np.column_stack([rgb, depth]), ("r", "g", "b", "depth"))
    return LandmarkSample(str(rec["id"]), label, pts,
                          str(rec.get("subject", rec["id"])), int(rec.get("session", 0)))


def write_samples(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), separators=(",", ":")) + "\n")


def read_samples(path, min_points: int = N_LANDMARKS) -> list[LandmarkSample]:
    """Parse a JSON-lines sample file; malformed lines are skipped and counted."""
    samples, rejected = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                samples.append(record_to_sample(json.loads(line), min_points))
            except (ValueError, KeyError, TypeError) as exc:
                rejected += 1
                log.debug("line %d rejected: %s", lineno, exc)
    if rejected:
        log.warning("%s: rejected %d malformed sample(s)", path, rejected)
    return samples
