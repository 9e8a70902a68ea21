"""Synthetic video world and mock decoder.

The world is a small canvas with rect/disc objects moving along
piecewise-linear waypoint trajectories; objects disappear during their
occlusion windows. The mock decoder reproduces, at desk scale, the failure
modes long-video trackers face: a confusable look-alike during the target's
absence, and memory poisoning once a wrong mask has been committed.

Decoder model, per decode call for target object T at time t:

  candidates
    (a) "tracking":   blend(GT_T(t), D(t), f) + jitter, where D is the
                      nearest distractor and f is the bank's target-consistent
                      weight fraction; f=1 reproduces GT_T exactly.
    (b) "distractor": D(t) + jitter.
    (c) "degraded":   heavy erosion of (a)'s pre-jitter mask.

  predicted IoU (the decoder's self-estimate)
    inside an occlusion window of T: bank-independent confusion
        s * IoU(cand, D(t)) + (1 - s) * IoU(cand, empty)
      with s the nearest distractor's similarity (0 without distractors).
    otherwise: the bank's weighted projection
        sum_e w_e * ref(e, cand) / sum_e w_e
      where an entry matched to object o (IoU >= 0.5 against o's mask at the
      entry's own frame) contributes IoU(cand, GT_o(t)); unmatched entries
      contribute 0.
    plus clipped gaussian calibration noise.

  occlusion score (shared by the three candidates)
    inside a window: uniform in [-uncertain_band, +uncertain_band].
    otherwise +occ_margin if the bank's majority-matched object is visible,
    -occ_margin if it is hidden or nothing matched.

With zero noise and no distractors the predicted IoU equals the true IoU of
the emitted mask against the ground-truth target, in or out of windows.

All randomness is drawn from a counter-based generator keyed by
(seed, object, t, channel), so responses never depend on decode order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng
from .backend import DecodeRequest, DecodeResponse
from .core import Mask
from .metrics import region_j

__all__ = [
    "ObjectSpec",
    "NoiseSpec",
    "ScenarioSpec",
    "SimBackend",
    "mock_decode",
    "render_ground_truth",
    "generate_scenario_suite",
    "load_scenario",
    "save_scenario",
    "SCENARIO_FAMILIES",
]

SCENARIO_FAMILIES = ("occlusion", "distractor", "clean", "long")

MATCH_IOU = 0.5  # an entry "matches" an object at or above this overlap
DEGRADE_EROSIONS = 3  # erosion passes for candidate (c)


@dataclass(frozen=True)
class ObjectSpec:
    """One moving object: shape, waypoint trajectory, occlusion schedule."""

    shape: str  # "rect" (size = side) or "disc" (size = radius)
    size: float
    trajectory: tuple[tuple[int, float, float], ...]  # (frame, x, y), frames ascending
    occlusion_windows: tuple[tuple[int, int], ...] = ()  # inclusive [start, end]
    is_target: bool = False
    distractor_similarity: float = 0.0

    def hidden_at(self, t: int) -> bool:
        return any(start <= t <= end for start, end in self.occlusion_windows)

    def position(self, t: int) -> tuple[float, float]:
        """Piecewise-linear interpolation; clamped beyond the end waypoints."""
        pts = self.trajectory
        if t <= pts[0][0]:
            return pts[0][1], pts[0][2]
        if t >= pts[-1][0]:
            return pts[-1][1], pts[-1][2]
        for (f0, x0, y0), (f1, x1, y1) in zip(pts, pts[1:]):
            if f0 <= t <= f1:
                if f1 == f0:
                    return x1, y1
                a = (t - f0) / (f1 - f0)
                return x0 + a * (x1 - x0), y0 + a * (y1 - y0)
        raise AssertionError("unreachable: trajectory frames not ascending?")


@dataclass(frozen=True)
class NoiseSpec:
    iou_calibration_noise: float = 0.0
    occ_margin: float = 3.0
    uncertain_band: float = 1.5
    mask_jitter: float = 0.0


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    width: int
    height: int
    num_frames: int
    objects: tuple[ObjectSpec, ...]
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    name: str = ""

    def __post_init__(self):
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        if not any(o.is_target for o in self.objects):
            raise ValueError("at least one object must be the target")
        for o in self.objects:
            for start, end in o.occlusion_windows:
                if not (0 <= start <= end < self.num_frames):
                    raise ValueError(f"occlusion window [{start}, {end}] outside frame range")
            for frame, x, y in o.trajectory:
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise ValueError(f"waypoint ({x}, {y}) outside the canvas")
        spec_noise = self.noise
        for fld in ("iou_calibration_noise", "occ_margin", "uncertain_band", "mask_jitter"):
            if getattr(spec_noise, fld) < 0:
                raise ValueError(f"noise field {fld} must be non-negative")

    def target_indices(self) -> list[int]:
        return [i for i, o in enumerate(self.objects) if o.is_target]


# ---------------------------------------------------------------------------
# Rasterization


def _render_object(spec: ScenarioSpec, obj: ObjectSpec, t: int) -> Mask:
    if obj.hidden_at(t) or obj.size <= 0:
        return Mask.empty(spec.width, spec.height)
    x, y = obj.position(t)
    grid = np.zeros((spec.height, spec.width), dtype=bool)
    if obj.shape == "rect":
        side = int(round(obj.size))
        left = int(round(x - (side - 1) / 2))
        top = int(round(y - (side - 1) / 2))
        x0, x1 = max(left, 0), min(left + side, spec.width)
        y0, y1 = max(top, 0), min(top + side, spec.height)
        if x0 < x1 and y0 < y1:
            grid[y0:y1, x0:x1] = True
    elif obj.shape == "disc":
        yy, xx = np.ogrid[: spec.height, : spec.width]
        grid = (xx - x) ** 2 + (yy - y) ** 2 <= obj.size**2
    else:
        raise ValueError(f"unknown shape {obj.shape!r}")
    return Mask.from_array(grid)


def render_ground_truth(spec: ScenarioSpec, t: int) -> list[tuple[Mask, bool]]:
    """Per-object (mask, visible) at frame t; hidden objects render empty."""
    if not (0 <= t < spec.num_frames):
        raise ValueError(f"t={t} outside [0, {spec.num_frames})")
    return [(_render_object(spec, o, t), not o.hidden_at(t)) for o in spec.objects]


# ---------------------------------------------------------------------------
# Mock decoder


def _erode(grid: np.ndarray) -> np.ndarray:
    out = grid.copy()
    out[1:, :] &= grid[:-1, :]
    out[:-1, :] &= grid[1:, :]
    out[:, 1:] &= grid[:, :-1]
    out[:, :-1] &= grid[:, 1:]
    # outside the canvas counts as background
    out[0, :] = False
    out[-1, :] = False
    out[:, 0] = False
    out[:, -1] = False
    return out & grid


class SimBackend:
    """Deterministic mock decoder over one scenario.

    Stateless given (spec, seed): all caches hold pure derived values, so
    instances are safe for concurrent decode.
    """

    supports_concurrent_decode = True

    def __init__(self, spec: ScenarioSpec, seed: Optional[int] = None):
        self.spec = spec
        self.seed = spec.seed if seed is None else seed
        self._gt: dict[int, list[tuple[Mask, bool]]] = {}
        self._match: dict[tuple[int, int, bytes], Optional[int]] = {}
        self._prio: dict[tuple[int, int], np.ndarray] = {}

    # -- world access -------------------------------------------------------

    def ground_truth(self, t: int) -> list[tuple[Mask, bool]]:
        if t not in self._gt:
            self._gt[t] = render_ground_truth(self.spec, t)
        return self._gt[t]

    def target_mask(self, object_id: int, t: int) -> Mask:
        return self.ground_truth(t)[object_id][0]

    def nearest_distractor(self, object_id: int, t: int) -> Optional[int]:
        tx, ty = self.spec.objects[object_id].position(t)
        best = None
        best_d2 = math.inf
        for i, o in enumerate(self.spec.objects):
            if i == object_id:
                continue
            ox, oy = o.position(t)
            d2 = (ox - tx) ** 2 + (oy - ty) ** 2
            if d2 < best_d2:
                best, best_d2 = i, d2
        return best

    # -- bank interpretation -------------------------------------------------

    def _matched_object(self, object_id: int, frame_index: int, mask: Mask) -> Optional[int]:
        """Which object this committed mask tracked at its own frame, if any."""
        key = (object_id, frame_index, mask.packed)
        if key in self._match:
            return self._match[key]
        gt = self.ground_truth(frame_index)
        result: Optional[int] = None
        if region_j(mask, gt[object_id][0]) >= MATCH_IOU:
            result = object_id
        else:
            best_iou = MATCH_IOU
            for i, (gmask, _) in enumerate(gt):
                if i == object_id:
                    continue
                iou = region_j(mask, gmask)
                if iou >= best_iou:
                    best_iou = iou
                    result = i
        self._match[key] = result
        return result

    def _bank_profile(self, request: DecodeRequest):
        """Per-entry matches, target-consistent fraction f, and majority object."""
        object_id = request.object_id
        matches: list[Optional[int]] = []
        mass: dict[Optional[int], float] = {}
        total = 0.0
        target_mass = 0.0
        for record, weight in request.bank.entries:
            if record.is_prompt:
                matched: Optional[int] = object_id
            else:
                matched = self._matched_object(object_id, record.frame_index, record.mask)
            matches.append(matched)
            total += weight
            mass[matched] = mass.get(matched, 0.0) + weight
            if matched == object_id:
                target_mass += weight
        f = min(max(target_mass / total, 0.0), 1.0) if total > 0 else 0.0
        # Majority by mass; ties prefer the target, then the lowest object index.
        def rank(kv):
            matched, weight = kv
            if matched is None:
                return (weight, 0, -(1 << 30))
            return (weight, 2 if matched == object_id else 1, -matched)

        majority = max(mass.items(), key=rank)[0]
        return matches, f, majority

    # -- candidate construction ----------------------------------------------

    def _priority(self, object_id: int, t: int) -> np.ndarray:
        key = (object_id, t)
        if key not in self._prio:
            gen = rng.generator(self.seed, object_id, t, "blend")
            self._prio[key] = gen.random((self.spec.height, self.spec.width))
        return self._prio[key]

    def _blend(self, object_id: int, t: int, target: Mask, distractor: Mask, f: float) -> Mask:
        prio = self._priority(object_id, t)
        tg = target.to_array()
        dg = distractor.to_array()
        return Mask.from_array((tg & (prio < f)) | (dg & (prio >= f)))

    def _jitter(self, object_id: int, t: int, k: int, mask: Mask) -> Mask:
        p = self.spec.noise.mask_jitter
        if p <= 0 or mask.pixel_count == 0:
            return mask
        g = mask.to_array()
        grow = np.zeros_like(g)
        grow[1:, :] |= g[:-1, :]
        grow[:-1, :] |= g[1:, :]
        grow[:, 1:] |= g[:, :-1]
        grow[:, :-1] |= g[:, 1:]
        outer = grow & ~g
        inner = g & ~_erode(g)
        u = rng.generator(self.seed, object_id, t, "jit", k).random((2,) + g.shape)
        out = (g | (outer & (u[0] < p))) & ~(inner & (u[1] < p))
        return Mask.from_array(out)

    def _degrade(self, mask: Mask) -> Mask:
        g = mask.to_array()
        for _ in range(DEGRADE_EROSIONS):
            g = _erode(g)
        return Mask.from_array(g)

    # -- scoring ---------------------------------------------------------------

    def _bank_digest(self, request: DecodeRequest) -> str:
        h = hashlib.sha256()
        for record, _ in request.bank.entries:
            h.update(record.frame_index.to_bytes(4, "little"))
            h.update(record.mask.packed)
        return h.hexdigest()[:16]

    def _entry_ref(
        self,
        matched: Optional[int],
        cand: Mask,
        object_id: int,
        t: int,
        in_window: bool,
        similarity: float,
        distractor_now: Mask,
        empty: Mask,
    ) -> float:
        """What one bank entry believes the candidate's IoU is.

        Out of windows, an entry matched to object o projects to o's current
        mask. While the target is hidden, appearance confusion takes over:
        target-matched entries score candidates against the look-alike
        distractor at strength s and against absence at strength 1-s, and
        distractor-matched entries also scale by that object's similarity.
        This makes the distractor candidate's score bank-independent during
        windows (near-duplicate forks collide under rounding) while empty
        candidates score by the bank's target-consistent mass.
        """
        if matched is None:
            return 0.0
        gt = self.ground_truth(t)
        if not in_window:
            return region_j(cand, gt[matched][0])
        if matched == object_id:
            return similarity * region_j(cand, distractor_now) + (1.0 - similarity) * region_j(
                cand, empty
            )
        sim_d = self.spec.objects[matched].distractor_similarity
        return sim_d * region_j(cand, gt[matched][0])

    def _predicted_iou(
        self,
        request: DecodeRequest,
        cand: Mask,
        k: int,
        in_window: bool,
        similarity: float,
        distractor_now: Mask,
        empty: Mask,
        matches: list[Optional[int]],
    ) -> float:
        t = request.time
        object_id = request.object_id
        num = 0.0
        den = 0.0
        ref_cache: dict[Optional[int], float] = {}
        for (record, weight), matched in zip(request.bank.entries, matches):
            den += weight
            if matched not in ref_cache:
                ref_cache[matched] = self._entry_ref(
                    matched, cand, object_id, t, in_window, similarity, distractor_now, empty
                )
            num += weight * ref_cache[matched]
        base = num / den if den > 0 else 0.0
        std = self.spec.noise.iou_calibration_noise
        if std > 0:
            noise = rng.generator(
                self.seed, object_id, t, "ioun", k, self._bank_digest(request)
            ).normal(0.0, std)
            base += float(noise)
        return min(max(base, 0.0), 1.0)

    def _occlusion_score(self, request: DecodeRequest, in_window: bool, majority) -> float:
        t = request.time
        object_id = request.object_id
        noise = self.spec.noise
        if in_window:
            return rng.uniform(
                -noise.uncertain_band, noise.uncertain_band, self.seed, object_id, t, "occw"
            )
        if majority is None:
            return -noise.occ_margin
        visible = self.ground_truth(t)[majority][1]
        return noise.occ_margin if visible else -noise.occ_margin

    # -- decode ------------------------------------------------------------------

    def decode(self, request: DecodeRequest) -> DecodeResponse:
        spec = self.spec
        t = request.time
        object_id = request.object_id
        if not (0 <= t < spec.num_frames):
            raise ValueError(f"decode time {t} outside the scenario")
        if not spec.objects[object_id].is_target:
            raise ValueError(f"object {object_id} is not a target")

        target_now = self.target_mask(object_id, t)
        in_window = spec.objects[object_id].hidden_at(t)
        empty = Mask.empty(spec.width, spec.height)
        d_idx = self.nearest_distractor(object_id, t)
        if d_idx is None:
            distractor_now = empty
            similarity = 0.0
        else:
            distractor_now = self.ground_truth(t)[d_idx][0]
            similarity = spec.objects[d_idx].distractor_similarity

        matches, f, majority = self._bank_profile(request)

        tracking = self._blend(object_id, t, target_now, distractor_now, f)
        cand_a = self._jitter(object_id, t, 0, tracking)
        cand_b = self._jitter(object_id, t, 1, distractor_now)
        cand_c = self._degrade(tracking)

        occ = self._occlusion_score(request, in_window, majority)
        items = []
        for k, mask in enumerate((cand_a, cand_b, cand_c)):
            iou = self._predicted_iou(
                request, mask, k, in_window, similarity, distractor_now, empty, matches
            )
            items.append((mask, iou, b""))
        return DecodeResponse.build(occ, items)


def mock_decode(request: DecodeRequest, spec: ScenarioSpec, seed: Optional[int] = None) -> DecodeResponse:
    """One-shot functional form of SimBackend.decode."""
    return SimBackend(spec, seed).decode(request)


# ---------------------------------------------------------------------------
# Scenario files


def _object_to_json(o: ObjectSpec) -> dict:
    return {
        "shape": o.shape,
        "size": o.size,
        "trajectory": [[f, x, y] for f, x, y in o.trajectory],
        "occlusion_windows": [[s, e] for s, e in o.occlusion_windows],
        "is_target": o.is_target,
        "distractor_similarity": o.distractor_similarity,
    }


def scenario_to_json(spec: ScenarioSpec) -> dict:
    return {
        "name": spec.name,
        "seed": spec.seed,
        "width": spec.width,
        "height": spec.height,
        "num_frames": spec.num_frames,
        "objects": [_object_to_json(o) for o in spec.objects],
        "noise": {
            "iou_calibration_noise": spec.noise.iou_calibration_noise,
            "occ_margin": spec.noise.occ_margin,
            "uncertain_band": spec.noise.uncertain_band,
            "mask_jitter": spec.noise.mask_jitter,
        },
    }


def scenario_from_json(obj: dict) -> ScenarioSpec:
    objects = tuple(
        ObjectSpec(
            shape=o["shape"],
            size=o["size"],
            trajectory=tuple((int(f), float(x), float(y)) for f, x, y in o["trajectory"]),
            occlusion_windows=tuple((int(s), int(e)) for s, e in o.get("occlusion_windows", [])),
            is_target=bool(o.get("is_target", False)),
            distractor_similarity=float(o.get("distractor_similarity", 0.0)),
        )
        for o in obj["objects"]
    )
    noise = obj.get("noise", {})
    return ScenarioSpec(
        seed=int(obj["seed"]),
        width=int(obj["width"]),
        height=int(obj["height"]),
        num_frames=int(obj["num_frames"]),
        objects=objects,
        noise=NoiseSpec(
            iou_calibration_noise=float(noise.get("iou_calibration_noise", 0.0)),
            occ_margin=float(noise.get("occ_margin", 3.0)),
            uncertain_band=float(noise.get("uncertain_band", 1.5)),
            mask_jitter=float(noise.get("mask_jitter", 0.0)),
        ),
        name=str(obj.get("name", "")),
    )


def save_scenario(spec: ScenarioSpec, path: str | Path):
    Path(path).write_text(json.dumps(scenario_to_json(spec), indent=2) + "\n")


def load_scenario(path: str | Path) -> ScenarioSpec:
    return scenario_from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Suite generation

_CANVAS_W, _CANVAS_H = 64, 48


def _occlusion_scenario(i: int, base_seed: int, family: str, num_frames: int, windows: int) -> ScenarioSpec:
    seed = int(rng.unit_float(base_seed, family, i, "seed") * 2**31)
    dy = int(rng.uniform(-4, 5, base_seed, family, i, "dy"))
    dy2 = int(rng.uniform(-3, 4, base_seed, family, i, "dy2"))
    similarity = round(rng.uniform(0.51, 0.515, base_seed, family, i, "sim"), 3)
    target = ObjectSpec(
        shape="rect",
        size=10,
        trajectory=((0, 12.0, 24.0 + dy), (num_frames - 1, 52.0, 24.0 + dy)),
        occlusion_windows=tuple(
            _window(base_seed, family, i, w, num_frames, windows) for w in range(windows)
        ),
        is_target=True,
    )
    distractor = ObjectSpec(
        shape="disc",
        size=5.5,
        trajectory=((0, 52.0, 10.0 + dy2), (num_frames - 1, 12.0, 10.0 + dy2)),
        is_target=False,
        distractor_similarity=similarity,
    )
    return ScenarioSpec(
        seed=seed,
        width=_CANVAS_W,
        height=_CANVAS_H,
        num_frames=num_frames,
        objects=(target, distractor),
        noise=NoiseSpec(iou_calibration_noise=0.0015, occ_margin=3.0, uncertain_band=1.5, mask_jitter=0.0),
        name=f"{family}_{i:03d}",
    )


def _window(base_seed: int, family: str, i: int, w: int, num_frames: int, windows: int) -> tuple[int, int]:
    # Windows sit mid-video; with several windows they are spread over the
    # middle half. Lengths 4..8 are fatal to the FIFO baseline (its N=6
    # recency memory fills with wrong-object commits) while leaving the
    # surviving clean pathway enough score headroom to win the first
    # certain-step prune after reappearance.
    span = num_frames // (2 * windows)
    base = num_frames // 4 + w * span
    start = base + int(
        rng.uniform(span // 8, max(span - 16, span // 8 + 1), base_seed, family, i, "wstart", w)
    )
    length = int(rng.uniform(4, 9, base_seed, family, i, "wlen", w))
    end = min(start + length - 1, num_frames - 2)
    return (start, end)


def _clean_scenario(i: int, base_seed: int) -> ScenarioSpec:
    seed = int(rng.unit_float(base_seed, "clean", i, "seed") * 2**31)
    dy = int(rng.uniform(-4, 5, base_seed, "clean", i, "dy"))
    shape = "rect" if rng.unit_float(base_seed, "clean", i, "shape") < 0.5 else "disc"
    size = 10 if shape == "rect" else 5.5
    target = ObjectSpec(
        shape=shape,
        size=size,
        trajectory=((0, 12.0, 24.0 + dy), (99, 52.0, 24.0 + dy)),
        is_target=True,
    )
    return ScenarioSpec(
        seed=seed,
        width=_CANVAS_W,
        height=_CANVAS_H,
        num_frames=100,
        objects=(target,),
        noise=NoiseSpec(iou_calibration_noise=0.002, occ_margin=3.0, uncertain_band=1.5, mask_jitter=0.005),
        name=f"clean_{i:03d}",
    )


def _distractor_scenario(i: int, base_seed: int) -> ScenarioSpec:
    seed = int(rng.unit_float(base_seed, "distractor", i, "seed") * 2**31)
    dy = int(rng.uniform(-4, 5, base_seed, "distractor", i, "dy"))
    similarity = round(rng.uniform(0.55, 0.65, base_seed, "distractor", i, "sim"), 3)
    target = ObjectSpec(
        shape="rect",
        size=10,
        trajectory=((0, 12.0, 24.0 + dy), (119, 52.0, 24.0 + dy)),
        is_target=True,
    )
    d1 = ObjectSpec(
        shape="disc",
        size=5.5,
        trajectory=((0, 52.0, 12.0), (119, 12.0, 12.0)),
        distractor_similarity=similarity,
    )
    d2 = ObjectSpec(
        shape="rect",
        size=9,
        trajectory=((0, 12.0, 38.0), (119, 52.0, 38.0)),
        distractor_similarity=similarity,
    )
    return ScenarioSpec(
        seed=seed,
        width=_CANVAS_W,
        height=_CANVAS_H,
        num_frames=120,
        objects=(target, d1, d2),
        noise=NoiseSpec(iou_calibration_noise=0.01, occ_margin=3.0, uncertain_band=1.5, mask_jitter=0.01),
        name=f"distractor_{i:03d}",
    )


def generate_scenario_suite(family: str, count: int, base_seed: int) -> list[ScenarioSpec]:
    """Deterministic scenario specs; (family, count, base_seed) fix everything."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if family == "occlusion":
        return [_occlusion_scenario(i, base_seed, "occlusion", 200, 1) for i in range(count)]
    if family == "long":
        return [_occlusion_scenario(i, base_seed, "long", 280, 2) for i in range(count)]
    if family == "clean":
        return [_clean_scenario(i, base_seed) for i in range(count)]
    if family == "distractor":
        return [_distractor_scenario(i, base_seed) for i in range(count)]
    raise ValueError(f"unknown scenario family {family!r}; choose from {SCENARIO_FAMILIES}")
