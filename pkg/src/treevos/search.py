"""Constrained tree-memory search engine.

Each tracked object keeps P live pathways. Every step branches each pathway
into the decoder's three candidates, scores them by adding log(predicted IoU
+ epsilon) to the parent's cumulative score, then prunes back to P. When the
step is uncertain (every decode call's |occlusion score| below delta_conf),
pruning switches to a diversity selection that prefers candidates with
distinct rounded IoU values. After the last frame, the best-scoring pathway
is the committed masklet.

The total order used everywhere ties can occur is: tentative score
descending, parent beam position ascending, candidate index ascending.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .backend import DecodeRequest, DecoderBackend
from .core import (
    BeamState,
    CandidatePrediction,
    FrameRecord,
    Hyperparams,
    PathwayNode,
)
from .memory import MemoryBankView, build_bank

__all__ = [
    "ExpansionCandidate",
    "StepInfo",
    "MemoryBuilder",
    "ScoreDomainError",
    "DecodeFailure",
    "score_update",
    "expand",
    "is_uncertain",
    "prune_top_p",
    "select_diverse",
    "step",
    "step_detailed",
    "finalize",
    "track",
    "brute_force_best",
    "BRUTE_FORCE_DEFAULT_CAP",
]

MemoryBuilder = Callable[[PathwayNode, Hyperparams], MemoryBankView]

BRUTE_FORCE_DEFAULT_CAP = 3**10


class ScoreDomainError(ValueError):
    """Predicted IoU outside [0, 1] reached the scoring rule."""


class DecodeFailure(RuntimeError):
    """Backend decode error, annotated with the leaf it was expanding."""

    def __init__(self, message: str, object_id: int, time: int, leaf_position: int):
        super().__init__(message)
        self.object_id = object_id
        self.time = time
        self.leaf_position = leaf_position


@dataclass(frozen=True)
class ExpansionCandidate:
    """One of the 3P branch options produced by expanding a beam.

    parent_position is the parent's index in the previous beam; together with
    candidate_index it makes the total order reconstructible regardless of
    list order.
    """

    parent: PathwayNode
    parent_position: int
    candidate_index: int
    prediction: CandidatePrediction
    tentative_score: float

    def sort_key(self) -> tuple[float, int, int]:
        return (-self.tentative_score, self.parent_position, self.candidate_index)


@dataclass(frozen=True)
class StepInfo:
    """Diagnostics for one committed step (feeds the optional trace log)."""

    time: int
    uncertain: bool
    chosen: tuple[tuple[int, int], ...]  # (parent_position, candidate_index)
    leaf_scores: tuple[float, ...]
    banks: tuple[tuple[tuple[int, float], ...], ...]  # per decode call


def score_update(parent_score: float, predicted_iou: float, epsilon: float) -> float:
    """parent_score + ln(predicted_iou + epsilon)."""
    if not (0.0 <= predicted_iou <= 1.0):
        raise ScoreDomainError(f"predicted_iou {predicted_iou} outside [0, 1]")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    return parent_score + math.log(predicted_iou + epsilon)


def expand(
    leaves: Sequence[PathwayNode],
    frame_ref: str,
    backend: DecoderBackend,
    memory_builder: MemoryBuilder,
    *,
    object_id: int,
    time: int,
    h: Hyperparams,
) -> list[ExpansionCandidate]:
    """Branch every leaf into its three decoder candidates.

    One decode call per leaf, conditioned on that leaf's memory bank. Output
    order is (leaf order) x (candidate order), length 3 * len(leaves).
    """
    if not leaves:
        raise ValueError("cannot expand an empty beam")
    out: list[ExpansionCandidate] = []
    for position, leaf in enumerate(leaves):
        bank = memory_builder(leaf, h)
        request = DecodeRequest(
            object_id=object_id, time=time, frame_ref=frame_ref, bank=bank
        )
        try:
            response = backend.decode(request)
        except Exception as exc:
            raise DecodeFailure(
                f"decode failed for object {object_id} at t={time} "
                f"(beam position {position}): {exc}",
                object_id,
                time,
                position,
            ) from exc
        for k, prediction in enumerate(response.candidates):
            tentative = score_update(leaf.cumulative_score, prediction.predicted_iou, h.epsilon)
            out.append(
                ExpansionCandidate(
                    parent=leaf,
                    parent_position=position,
                    candidate_index=k,
                    prediction=prediction,
                    tentative_score=tentative,
                )
            )
    return out


def is_uncertain(candidates: Sequence[ExpansionCandidate], delta_conf: float) -> bool:
    """True iff every decode call's |occlusion score| is below delta_conf.

    The occlusion score is shared by the three candidates of one call, so the
    maximum is taken over distinct parent positions.
    """
    if not candidates:
        raise ValueError("candidates must be nonempty")
    by_call: dict[int, float] = {}
    for c in candidates:
        by_call.setdefault(c.parent_position, abs(c.prediction.occlusion_score))
    return max(by_call.values()) < delta_conf


def _pick_top(candidates: Sequence[ExpansionCandidate], p: int) -> list[ExpansionCandidate]:
    if not candidates:
        raise ValueError("candidates must be nonempty")
    if p < 1:
        raise ValueError("P must be >= 1")
    return sorted(candidates, key=ExpansionCandidate.sort_key)[:p]


def _rounded_iou(candidate: ExpansionCandidate, decimals: Optional[int]) -> float:
    iou = candidate.prediction.predicted_iou
    return iou if decimals is None else round(iou, decimals)


def _pick_diverse(
    candidates: Sequence[ExpansionCandidate], p: int, decimals: Optional[int]
) -> list[ExpansionCandidate]:
    if not candidates:
        raise ValueError("candidates must be nonempty")
    if p < 1:
        raise ValueError("P must be >= 1")
    ranked = sorted(candidates, key=ExpansionCandidate.sort_key)
    selected: list[ExpansionCandidate] = []
    skipped: list[ExpansionCandidate] = []
    seen: set[float] = set()
    for c in ranked:
        if len(selected) == p:
            break
        key = _rounded_iou(c, decimals)
        if key in seen:
            skipped.append(c)
        else:
            seen.add(key)
            selected.append(c)
    if len(selected) < p:
        selected.extend(skipped[: p - len(selected)])
        selected.sort(key=ExpansionCandidate.sort_key)
    return selected


def _make_node(candidate: ExpansionCandidate) -> PathwayNode:
    p = candidate.prediction
    record = FrameRecord(
        frame_index=candidate.parent.record.frame_index + 1,
        mask=p.mask,
        predicted_iou=p.predicted_iou,
        occlusion_score=p.occlusion_score,
        payload=p.payload,
        is_prompt=False,
    )
    return PathwayNode(
        record=record, parent=candidate.parent, cumulative_score=candidate.tentative_score
    )


def prune_top_p(candidates: Sequence[ExpansionCandidate], p: int) -> list[PathwayNode]:
    """Keep the min(p, all) best candidates under the total order."""
    return [_make_node(c) for c in _pick_top(candidates, p)]


def select_diverse(
    candidates: Sequence[ExpansionCandidate], p: int, decimals: Optional[int]
) -> list[PathwayNode]:
    """Diversity pruning used on uncertain steps.

    Walk candidates in the total order, selecting each one whose rounded IoU
    differs from every already-selected value (round half-to-even at
    `decimals` places; None compares raw values). If fewer than p distinct
    values exist, remaining slots are filled from the skipped candidates in
    rank order. The result is re-sorted under the total order so the beam
    stays score-sorted.
    """
    return [_make_node(c) for c in _pick_diverse(candidates, p, decimals)]


def step(
    state: BeamState,
    frame_ref: str,
    backend: DecoderBackend,
    memory_builder: MemoryBuilder = build_bank,
    h: Hyperparams = Hyperparams(),
    *,
    diversify: bool = True,
) -> BeamState:
    """Advance the beam one frame; see step_detailed for diagnostics."""
    new_state, _ = step_detailed(
        state, frame_ref, backend, memory_builder, h, diversify=diversify
    )
    return new_state


def step_detailed(
    state: BeamState,
    frame_ref: str,
    backend: DecoderBackend,
    memory_builder: MemoryBuilder = build_bank,
    h: Hyperparams = Hyperparams(),
    *,
    diversify: bool = True,
) -> tuple[BeamState, StepInfo]:
    """Expand, test uncertainty, prune, and return the new beam plus trace info."""
    time = state.time + 1
    candidates = expand(
        state.leaves,
        frame_ref,
        backend,
        memory_builder,
        object_id=state.object_id,
        time=time,
        h=h,
    )
    uncertain = is_uncertain(candidates, h.delta_conf)
    if uncertain and diversify:
        picked = _pick_diverse(candidates, h.P, h.iou_rounding_decimals)
    else:
        picked = _pick_top(candidates, h.P)
    leaves = tuple(_make_node(c) for c in picked)
    new_state = BeamState(object_id=state.object_id, time=time, leaves=leaves)
    banks = tuple(
        tuple((r.frame_index, w) for r, w in memory_builder(leaf, h).entries)
        for leaf in state.leaves
    )
    info = StepInfo(
        time=time,
        uncertain=uncertain,
        chosen=tuple((c.parent_position, c.candidate_index) for c in picked),
        leaf_scores=tuple(leaf.cumulative_score for leaf in leaves),
        banks=banks,
    )
    return new_state, info


def finalize(state: BeamState) -> tuple[PathwayNode, list[FrameRecord]]:
    """The best pathway and its full root-to-leaf record chain."""
    if not state.leaves:
        raise ValueError("beam is empty")
    best = state.leaves[0]
    return best, best.chain()


def track(
    root: PathwayNode,
    frame_refs: Sequence[str],
    backend: DecoderBackend,
    memory_builder: MemoryBuilder = build_bank,
    h: Hyperparams = Hyperparams(),
    *,
    object_id: int = 0,
    diversify: bool = True,
    collect_info: bool = False,
) -> tuple[BeamState, list[StepInfo]]:
    """Run the full per-object loop over frame_refs (times root+1, root+2, ...)."""
    state = BeamState.initial(object_id, root)
    infos: list[StepInfo] = []
    for frame_ref in frame_refs:
        if collect_info:
            state, info = step_detailed(
                state, frame_ref, backend, memory_builder, h, diversify=diversify
            )
            infos.append(info)
        else:
            state = step(state, frame_ref, backend, memory_builder, h, diversify=diversify)
    return state, infos


def brute_force_best(
    root: PathwayNode,
    frame_refs: Sequence[str],
    backend: DecoderBackend,
    memory_builder: MemoryBuilder = build_bank,
    h: Hyperparams = Hyperparams(),
    *,
    object_id: int = 0,
    cap: int = BRUTE_FORCE_DEFAULT_CAP,
) -> tuple[PathwayNode, float]:
    """Exhaustive oracle: the argmax pathway over all 3^T candidate sequences.

    Every sequence's memory bank is rebuilt honestly at each step (decode
    results are shared only along identical prefixes). Ties are broken by the
    same total order the beam induces: cumulative score descending at T, then
    at T-1, ..., then lexicographically smallest candidate-index sequence.
    """
    t_total = len(frame_refs)
    if 3**t_total > cap:
        raise ValueError(
            f"3^{t_total} sequences exceed the enumeration cap {cap}; refusing"
        )
    if t_total == 0:
        return root, 0.0

    best_node: Optional[PathwayNode] = None
    best_key: Optional[tuple] = None

    # Depth-first over candidate-index sequences; path_scores[i] is the
    # cumulative score after step i+1, path_ks the choices so far.
    def visit(node: PathwayNode, depth: int, path_scores: list[float], path_ks: list[int]):
        nonlocal best_node, best_key
        if depth == t_total:
            key = tuple(-s for s in reversed(path_scores)) + tuple(path_ks)
            if best_key is None or key < best_key:
                best_key = key
                best_node = node
            return
        time = node.record.frame_index + 1
        bank = memory_builder(node, h)
        request = DecodeRequest(
            object_id=object_id, time=time, frame_ref=frame_refs[depth], bank=bank
        )
        response = backend.decode(request)
        for k, prediction in enumerate(response.candidates):
            score = score_update(node.cumulative_score, prediction.predicted_iou, h.epsilon)
            child = PathwayNode(
                record=FrameRecord(
                    frame_index=time,
                    mask=prediction.mask,
                    predicted_iou=prediction.predicted_iou,
                    occlusion_score=prediction.occlusion_score,
                    payload=prediction.payload,
                    is_prompt=False,
                ),
                parent=node,
                cumulative_score=score,
            )
            path_scores.append(score)
            path_ks.append(k)
            visit(child, depth + 1, path_scores, path_ks)
            path_scores.pop()
            path_ks.pop()

    visit(root, 0, [], [])
    assert best_node is not None
    return best_node, best_node.cumulative_score
