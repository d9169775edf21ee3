"""Task-relevant 3D keypoints from a patch-level response map.

The map is an H' x W' grid of text-image relevance scalars in [0, 1] with
an optional 3D point per cell. Extraction keeps the top-fraction cells,
k-means clusters their grid coordinates weighted by response, snaps each
center to the strongest cell of its cluster, maps those cells to 3D, drops
cells without depth or outside the workspace, and merges near-duplicates
with a flat-kernel mean shift. Resulting ids start at 1; id 0 is reserved
for the end-effector.

The whole pipeline is deterministic given (map, config, seed).

File schema (shared with the embedding extractor, docs/response-map.md):
{"h": int, "w": int, "values": [row-major floats], "points": [row-major
[x, y, z] or null], "meta": {...}}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constraints import Keypoint
from .errors import ParseError, ValidationError
from .scene import WorkspaceBounds


@dataclass(frozen=True)
class ResponseMap:
    height: int
    width: int
    values: np.ndarray  # (H', W') in [0, 1]
    cell_to_point: np.ndarray  # (H', W', 3), NaN rows where no depth exists
    meta: dict | None = None

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValidationError("response map dimensions must be >= 1")
        values = np.asarray(self.values, dtype=float)
        points = np.asarray(self.cell_to_point, dtype=float)
        if values.shape != (self.height, self.width):
            raise ValidationError(
                f"values shape {values.shape} does not match {self.height}x{self.width}"
            )
        if points.shape != (self.height, self.width, 3):
            raise ValidationError(
                f"points shape {points.shape} does not match {self.height}x{self.width}x3"
            )
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise ValidationError("response values must lie in [0, 1]")
        values = values.copy()
        points = points.copy()
        values.setflags(write=False)
        points.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "cell_to_point", points)

    def point_at(self, row: int, col: int) -> tuple[float, float, float] | None:
        p = self.cell_to_point[row, col]
        if np.any(np.isnan(p)):
            return None
        return (float(p[0]), float(p[1]), float(p[2]))


@dataclass(frozen=True)
class ExtractionConfig:
    num_clusters: int = 5
    top_fraction: float = 0.2
    merge_bandwidth: float = 0.04
    workspace: WorkspaceBounds = WorkspaceBounds((-0.35, -0.35, -0.01), (0.35, 0.35, 0.4))

    def __post_init__(self):
        if self.num_clusters < 1:
            raise ValidationError("num_clusters must be >= 1")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ValidationError("top_fraction must lie in (0, 1]")
        if self.merge_bandwidth <= 0.0:
            raise ValidationError("merge bandwidth must be positive")


def _kmeans_weighted(coords: np.ndarray, weights: np.ndarray, k: int, rng) -> np.ndarray:
    """Weighted k-means labels with k-means++ seeding; best of 20 restarts."""
    n = len(coords)
    k = min(k, n)
    best_labels = None
    best_inertia = math.inf
    for _ in range(20):
        centers = _kmeanspp(coords, weights, k, rng)
        labels = np.zeros(n, dtype=int)
        for _ in range(100):
            dist = ((coords[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = dist.argmin(axis=1)
            for c in range(k):
                mask = new_labels == c
                wsum = weights[mask].sum()
                if wsum > 0:
                    centers[c] = (coords[mask] * weights[mask, None]).sum(axis=0) / wsum
                else:
                    # Re-seed an empty cluster at the point farthest from its center.
                    far = dist.min(axis=1).argmax()
                    centers[c] = coords[far]
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        inertia = float((weights * ((coords - centers[labels]) ** 2).sum(axis=1)).sum())
        if inertia < best_inertia - 1e-12:
            best_inertia = inertia
            best_labels = labels.copy()
    return best_labels


def _kmeanspp(coords: np.ndarray, weights: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(coords)
    probs = weights / weights.sum()
    centers = [coords[rng.choice(n, p=probs)]]
    for _ in range(1, k):
        d2 = np.min(
            ((coords[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(axis=2), axis=1
        )
        scores = weights * d2
        total = scores.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=scores / total))
        centers.append(coords[idx])
    return np.asarray(centers, dtype=float)


def _mean_shift_merge(points: np.ndarray, bandwidth: float) -> np.ndarray:
    """Flat-kernel mean shift followed by sklearn-style duplicate removal."""
    modes = points.copy()
    for i in range(len(points)):
        x = points[i].copy()
        for _ in range(200):
            member = np.linalg.norm(points - x, axis=1) <= bandwidth
            new_x = points[member].mean(axis=0)
            if np.linalg.norm(new_x - x) < 1e-9 * bandwidth:
                break
            x = new_x
        modes[i] = x
    support = np.array(
        [(np.linalg.norm(points - m, axis=1) <= bandwidth).sum() for m in modes]
    )
    order = sorted(range(len(modes)), key=lambda i: (-support[i], i))
    kept: list[np.ndarray] = []
    for i in order:
        if all(np.linalg.norm(modes[i] - m) >= bandwidth for m in kept):
            kept.append(modes[i])
    return np.asarray(kept)


def extract(resp: ResponseMap, cfg: ExtractionConfig, rng: np.random.Generator) -> list[Keypoint]:
    """Extract merged, workspace-filtered keypoints from a response map."""
    values = resp.values.ravel()
    n_cells = values.size
    n_keep = max(1, int(round(cfg.top_fraction * n_cells)))
    # Stable selection of the strongest cells: sort by (-value, index).
    order = np.lexsort((np.arange(n_cells), -values))
    keep = np.sort(order[:n_keep])
    coords = np.stack([keep // resp.width, keep % resp.width], axis=1).astype(float)
    weights = values[keep]
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    labels = _kmeans_weighted(coords, weights, cfg.num_clusters, rng)
    candidates: list[tuple[float, float, float]] = []
    for c in range(labels.max() + 1):
        members = keep[labels == c]
        if members.size == 0:
            continue
        # Snap to the strongest cell of the cluster, lowest index on ties.
        best = members[np.lexsort((members, -values[members]))[0]]
        point = resp.point_at(int(best) // resp.width, int(best) % resp.width)
        if point is None:
            continue
        if not cfg.workspace.contains(point):
            continue
        if point not in candidates:
            candidates.append(point)
    if not candidates:
        return []
    merged = _mean_shift_merge(np.asarray(candidates, dtype=float), cfg.merge_bandwidth)
    merged = sorted(map(tuple, merged))
    return [Keypoint(i + 1, p) for i, p in enumerate(merged)]


# --- file I/O ----------------------------------------------------------------


def load_response_map(path) -> ResponseMap:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid response-map JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    try:
        h, w = int(doc["h"]), int(doc["w"])
        raw_values = doc["values"]
        raw_points = doc["points"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"response map missing field: {exc}") from exc
    if len(raw_values) != h * w:
        raise ParseError(f"values has {len(raw_values)} entries, expected {h * w}")
    if len(raw_points) != h * w:
        raise ParseError(f"points has {len(raw_points)} entries, expected {h * w}")
    values = np.asarray(raw_values, dtype=float).reshape(h, w)
    points = np.full((h * w, 3), np.nan)
    for i, p in enumerate(raw_points):
        if p is None:
            continue
        if len(p) != 3:
            raise ParseError(f"points[{i}] must be a 3-vector or null")
        points[i] = p
    try:
        return ResponseMap(h, w, values, points.reshape(h, w, 3), meta=doc.get("meta"))
    except ValidationError as exc:
        raise ParseError(str(exc)) from exc


def save_response_map(resp: ResponseMap, path) -> None:
    points = []
    for row in range(resp.height):
        for col in range(resp.width):
            p = resp.point_at(row, col)
            points.append(None if p is None else [p[0], p[1], p[2]])
    doc = {
        "h": resp.height,
        "w": resp.width,
        "values": [float(v) for v in resp.values.ravel()],
        "points": points,
        "meta": resp.meta or {},
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")
