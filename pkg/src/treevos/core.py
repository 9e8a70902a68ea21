"""Shared domain types, configuration, and deterministic serialization.

Everything here is immutable after construction and safe to share across
threads. Masks are flat row-major boolean grids; pathways are persistent
singly-linked chains of committed frame records.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterator, Optional

import numpy as np

__all__ = [
    "Mask",
    "CandidatePrediction",
    "FrameRecord",
    "PathwayNode",
    "BeamState",
    "Hyperparams",
    "PROMPT_OCCLUSION_SCORE",
    "serialize_mask",
    "deserialize_mask",
    "rle_counts",
    "validate_hyperparams",
    "check_score_recurrence",
    "MaskError",
    "ConfigError",
]

# Occlusion score stored on prompt records: the largest finite float, so the
# prompt ranks last in ascending occlusion order and receives w_high.
PROMPT_OCCLUSION_SCORE = sys.float_info.max


class MaskError(ValueError):
    """Malformed mask data or RLE text."""


class ConfigError(ValueError):
    """Invalid hyperparameter or run configuration."""


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary 2D occupancy grid, stored as a flat row-major bool array.

    Coordinates are zero-based with (row=y, col=x). The bits array is made
    read-only at construction; instances may be shared freely.
    """

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MaskError(f"mask dimensions must be >= 1, got {self.width}x{self.height}")
        bits = np.asarray(self.bits, dtype=bool).reshape(-1)
        if bits.size != self.width * self.height:
            raise MaskError(
                f"bits length {bits.size} != width*height {self.width * self.height}"
            )
        if bits.base is not None or bits is self.bits:
            bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, width: int, height: int) -> "Mask":
        return cls(width, height, np.zeros(width * height, dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "Mask":
        return cls(width, height, np.ones(width * height, dtype=bool))

    @classmethod
    def from_array(cls, grid: np.ndarray) -> "Mask":
        """Build from a (height, width) 2D array-like."""
        grid = np.asarray(grid, dtype=bool)
        if grid.ndim != 2:
            raise MaskError(f"expected a 2D grid, got shape {grid.shape}")
        return cls(grid.shape[1], grid.shape[0], grid.reshape(-1))

    def to_array(self) -> np.ndarray:
        """Return a read-only (height, width) view of the bits."""
        return self.bits.reshape(self.height, self.width)

    @cached_property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @cached_property
    def packed(self) -> bytes:
        """Compact byte digest key (dimensions + packed bits)."""
        return (
            self.width.to_bytes(4, "little")
            + self.height.to_bytes(4, "little")
            + np.packbits(self.bits).tobytes()
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.bits, other.bits))
        )

    def __hash__(self) -> int:
        return hash(self.packed)

    def __repr__(self) -> str:
        return f"Mask({self.width}x{self.height}, {self.pixel_count} px)"


def rle_counts(mask: Mask) -> str:
    """Run-length counts over the row-major bit string.

    Alternating zero/one run lengths, always starting with the zero run; a
    leading "0" marks a bit string that starts with a one.
    """
    bits = mask.bits
    if bits.size == 0:  # unreachable given dimension invariants
        return ""
    # Boundaries where the bit value changes.
    change = np.flatnonzero(bits[1:] != bits[:-1]) + 1
    starts = np.concatenate(([0], change, [bits.size]))
    runs = np.diff(starts).tolist()
    if bits[0]:
        runs.insert(0, 0)
    return ",".join(str(r) for r in runs)


def serialize_mask(mask: Mask) -> bytes:
    """Canonical serialized form: "width,height," then the run counts."""
    return f"{mask.width},{mask.height},{rle_counts(mask)}".encode("ascii")


def deserialize_mask(data: bytes | str) -> Mask:
    """Inverse of serialize_mask; rejects non-canonical encodings."""
    text = data.decode("ascii") if isinstance(data, bytes) else data
    parts = text.split(",")
    if len(parts) < 3:
        raise MaskError(f"RLE too short: {text!r}")
    try:
        values = [int(p) for p in parts]
    except ValueError as exc:
        raise MaskError(f"non-integer RLE field in {text!r}") from exc
    width, height, counts = values[0], values[1], values[2:]
    if width < 1 or height < 1:
        raise MaskError(f"bad dimensions {width}x{height}")
    if any(c < 0 for c in counts):
        raise MaskError("negative run length")
    if any(c == 0 for c in counts[1:]):
        raise MaskError("zero-length run after the first")
    total = sum(counts)
    if total != width * height:
        raise MaskError(f"run lengths sum to {total}, expected {width * height}")
    bits = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for count in counts:
        if value:
            bits[pos : pos + count] = True
        pos += count
        value = not value
    return Mask(width, height, bits)


@dataclass(frozen=True)
class CandidatePrediction:
    """One decoder proposal: mask, self-estimated IoU, shared occlusion score.

    The payload is opaque to the engine; it is whatever the backend wants
    stored alongside the record if this candidate is committed.
    """

    mask: Mask
    predicted_iou: float
    occlusion_score: float
    payload: bytes = b""

    def __post_init__(self):
        if not (0.0 <= self.predicted_iou <= 1.0):
            raise ValueError(f"predicted_iou {self.predicted_iou} outside [0, 1]")
        if not math.isfinite(self.occlusion_score):
            raise ValueError(f"occlusion_score {self.occlusion_score} is not finite")


@dataclass(frozen=True)
class FrameRecord:
    """One committed step on a pathway."""

    frame_index: int
    mask: Mask
    predicted_iou: float
    occlusion_score: float
    payload: bytes = b""
    is_prompt: bool = False

    @classmethod
    def prompt(cls, frame_index: int, mask: Mask, payload: bytes = b"") -> "FrameRecord":
        """The root record: ground-truth prompt with perfect scores."""
        return cls(
            frame_index=frame_index,
            mask=mask,
            predicted_iou=1.0,
            occlusion_score=PROMPT_OCCLUSION_SCORE,
            payload=payload,
            is_prompt=True,
        )


@dataclass(frozen=True)
class PathwayNode:
    """Immutable tree node; a pathway is the chain from a leaf to the root.

    cumulative_score(root) = 0; each child adds log(predicted_iou + epsilon).
    Structural sharing between pathways is expected.
    """

    record: FrameRecord
    parent: Optional["PathwayNode"] = None
    cumulative_score: float = 0.0

    @classmethod
    def root(cls, record: FrameRecord) -> "PathwayNode":
        if not record.is_prompt:
            raise ValueError("root node must wrap a prompt record")
        return cls(record=record, parent=None, cumulative_score=0.0)

    def iter_up(self) -> Iterator["PathwayNode"]:
        node: Optional[PathwayNode] = self
        while node is not None:
            yield node
            node = node.parent

    def chain(self) -> list[FrameRecord]:
        """Frame records from root to this node."""
        records = [node.record for node in self.iter_up()]
        records.reverse()
        return records

    def depth(self) -> int:
        return sum(1 for _ in self.iter_up()) - 1


@dataclass(frozen=True)
class BeamState:
    """The live pathway leaves for one tracked object at one time step.

    Leaves are sorted by cumulative score descending under the engine's
    documented tie-break; all leaves sit at record.frame_index == time.
    """

    object_id: int
    time: int
    leaves: tuple[PathwayNode, ...]

    @classmethod
    def initial(cls, object_id: int, root: PathwayNode) -> "BeamState":
        return cls(object_id=object_id, time=root.record.frame_index, leaves=(root,))

    @property
    def best(self) -> PathwayNode:
        return self.leaves[0]


@dataclass(frozen=True)
class Hyperparams:
    """Engine hyperparameters with published defaults.

    P: live pathway count. N: max non-prompt memory frames. epsilon: additive
    constant inside the log score. delta_conf: uncertainty threshold on
    |occlusion score|. delta_iou: memory quality gate. (w_low, w_high):
    modulation weight bounds. iou_rounding_decimals: decimal places for the
    diversity distinctness test; None disables rounding.
    """

    P: int = 3
    N: int = 6
    epsilon: float = 1e-10
    delta_conf: float = 2.0
    delta_iou: float = 0.3
    w_low: float = 0.95
    w_high: float = 1.05
    iou_rounding_decimals: Optional[int] = 2

    def with_(self, **overrides) -> "Hyperparams":
        return replace(self, **overrides)


def validate_hyperparams(h: Hyperparams) -> Optional[str]:
    """Return None if valid, else the first violated constraint by field name."""
    if not isinstance(h.P, int) or h.P < 1:
        return "P must be an integer >= 1"
    if not isinstance(h.N, int) or h.N < 1:
        return "N must be an integer >= 1"
    if not (h.epsilon > 0 and math.isfinite(h.epsilon)):
        return "epsilon must be a finite real > 0"
    if not (h.delta_conf >= 0 and math.isfinite(h.delta_conf)):
        return "delta_conf must be a finite real >= 0"
    if not (0.0 <= h.delta_iou <= 1.0):
        return "delta_iou must lie in [0, 1]"
    if not (h.w_low > 0 and math.isfinite(h.w_low)):
        return "w_low must be a finite real > 0"
    if not (math.isfinite(h.w_high) and h.w_high >= h.w_low):
        return "w_high must be >= w_low"
    if h.iou_rounding_decimals is not None and (
        not isinstance(h.iou_rounding_decimals, int) or h.iou_rounding_decimals < 0
    ):
        return "iou_rounding_decimals must be None or an integer >= 0"
    return None


def check_score_recurrence(leaf: PathwayNode, epsilon: float, tol: float = 1e-12) -> None:
    """Walk a pathway and assert the cumulative-score recurrence at each node.

    Raises AssertionError on the first violation; used by tests and debug
    tooling, never on the hot path.
    """
    for node in leaf.iter_up():
        if node.parent is None:
            assert node.cumulative_score == 0.0, "root score must be exactly 0"
            assert node.record.is_prompt, "root record must be the prompt"
        else:
            expected = node.parent.cumulative_score + math.log(
                node.record.predicted_iou + epsilon
            )
            assert (
                abs(node.cumulative_score - expected) <= tol
            ), f"score recurrence broken at frame {node.record.frame_index}"
            assert (
                node.record.frame_index > node.parent.record.frame_index
            ), "frame_index must strictly increase along a pathway"
            assert not node.record.is_prompt, "only the root may be the prompt"
