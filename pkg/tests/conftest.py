import numpy as np
import pytest

from treevos.core import CandidatePrediction, FrameRecord, Mask, PathwayNode
from treevos.search import ExpansionCandidate


def make_mask(width, height, seed=None, p=0.5):
    if seed is None:
        return Mask.empty(width, height)
    rng = np.random.default_rng(seed)
    return Mask(width, height, rng.random(width * height) < p)


def make_root(mask=None, frame_index=0):
    mask = mask if mask is not None else Mask.full(4, 4)
    return PathwayNode.root(FrameRecord.prompt(frame_index, mask))


def make_candidate(score, iou, pos=0, k=0, parent=None, occ=3.0, mask=None):
    parent = parent if parent is not None else make_root()
    pred = CandidatePrediction(
        mask=mask if mask is not None else Mask.empty(2, 2),
        predicted_iou=iou,
        occlusion_score=occ,
    )
    return ExpansionCandidate(
        parent=parent, parent_position=pos, candidate_index=k, prediction=pred,
        tentative_score=score,
    )


def make_record(frame_index, iou, occ, mask=None, payload=b""):
    return FrameRecord(
        frame_index=frame_index,
        mask=mask if mask is not None else Mask.empty(2, 2),
        predicted_iou=iou,
        occlusion_score=occ,
        payload=payload,
    )


def make_chain(records, prompt_mask=None):
    """Prompt root plus the given records, in frame order."""
    node = make_root(prompt_mask)
    for record in records:
        node = PathwayNode(record=record, parent=node, cumulative_score=0.0)
    return node


@pytest.fixture
def root():
    return make_root()
