"""Object-aware memory bank construction.

A bank for time t is built from a pathway ending at t-1: scan backward from
the newest record, keep frames whose scores pass both quality gates, stop
after N accepted, and always include the prompt. Each selected entry gets a
modulation weight, linearly spaced over [w_low, w_high] by ascending
occlusion score; applying the weight to its stored features is the backend's
job, keeping the engine model-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import FrameRecord, Hyperparams, PathwayNode

__all__ = [
    "MemoryBankView",
    "select_memory_frames",
    "select_recent_frames",
    "compute_modulation_weights",
    "build_bank",
    "build_bank_recency",
]


@dataclass(frozen=True)
class MemoryBankView:
    """Ordered (record, weight) pairs conditioning one decode call."""

    entries: tuple[tuple[FrameRecord, float], ...]
    built_for_time: int

    def records(self) -> list[FrameRecord]:
        return [record for record, _ in self.entries]

    def weights(self) -> list[float]:
        return [weight for _, weight in self.entries]


def select_memory_frames(pathway: PathwayNode, n: int, delta_iou: float) -> list[FrameRecord]:
    """Backward-scan gated frame selection.

    Walks records newest-first, keeps those with predicted_iou > delta_iou
    and occlusion_score > 0, stops after n accepted. The prompt record is
    always included and exempt from the gates. Output is sorted by
    frame_index ascending.
    """
    accepted: list[FrameRecord] = []
    prompt: FrameRecord | None = None
    for node in pathway.iter_up():
        record = node.record
        if record.is_prompt:
            prompt = record
            continue
        if len(accepted) >= n:
            continue
        if record.predicted_iou > delta_iou and record.occlusion_score > 0:
            accepted.append(record)
    if prompt is None:
        raise ValueError("pathway has no prompt record at its root")
    accepted.append(prompt)
    accepted.sort(key=lambda r: r.frame_index)
    return accepted


def select_recent_frames(pathway: PathwayNode, n: int) -> list[FrameRecord]:
    """FIFO selection: the n most recent records plus the prompt, no gates."""
    accepted: list[FrameRecord] = []
    prompt: FrameRecord | None = None
    for node in pathway.iter_up():
        record = node.record
        if record.is_prompt:
            prompt = record
        elif len(accepted) < n:
            accepted.append(record)
    if prompt is None:
        raise ValueError("pathway has no prompt record at its root")
    accepted.append(prompt)
    accepted.sort(key=lambda r: r.frame_index)
    return accepted


def compute_modulation_weights(
    occlusion_scores: list[float], w_low: float, w_high: float
) -> list[float]:
    """Assign linearly spaced weights by ascending occlusion score.

    The entry with rank r in ascending occlusion order receives
    w_low + r/(M-1) * (w_high - w_low). Ties keep input order (ascending
    frame index for bank entries). A single entry gets the midpoint.
    Returned weights are in input order.
    """
    m = len(occlusion_scores)
    if m == 0:
        raise ValueError("occlusion_scores must be nonempty")
    if w_high < w_low:
        raise ValueError("w_high must be >= w_low")
    if m == 1:
        return [(w_low + w_high) / 2.0]
    order = sorted(range(m), key=lambda i: (occlusion_scores[i], i))
    weights = [0.0] * m
    span = w_high - w_low
    for rank, idx in enumerate(order):
        weights[idx] = w_low + (rank / (m - 1)) * span
    return weights


def build_bank(pathway: PathwayNode, h: Hyperparams) -> MemoryBankView:
    """Gated selection composed with modulation weights (the default builder)."""
    records = select_memory_frames(pathway, h.N, h.delta_iou)
    weights = compute_modulation_weights(
        [r.occlusion_score for r in records], h.w_low, h.w_high
    )
    return MemoryBankView(
        entries=tuple(zip(records, weights)),
        built_for_time=pathway.record.frame_index + 1,
    )


def build_bank_recency(pathway: PathwayNode, h: Hyperparams) -> MemoryBankView:
    """Recency-only builder: last N frames, no gates, all weights 1.0.

    This reproduces the plain FIFO memory of the greedy baseline.
    """
    records = select_recent_frames(pathway, h.N)
    return MemoryBankView(
        entries=tuple((r, 1.0) for r in records),
        built_for_time=pathway.record.frame_index + 1,
    )
