"""Constrained tree-memory beam search for video object tracking."""

from .core import (
    BeamState,
    CandidatePrediction,
    FrameRecord,
    Hyperparams,
    Mask,
    PathwayNode,
    deserialize_mask,
    serialize_mask,
    validate_hyperparams,
)
from .memory import MemoryBankView, build_bank, build_bank_recency, compute_modulation_weights
from .backend import (
    DecodeRequest,
    DecodeResponse,
    EchoBackend,
    ExternalBackend,
    RecordingBackend,
    ReplayBackend,
    ScriptedBackend,
)
from .search import (
    brute_force_best,
    expand,
    finalize,
    is_uncertain,
    prune_top_p,
    score_update,
    select_diverse,
    step,
    track,
)
from .simworld import ScenarioSpec, SimBackend, generate_scenario_suite, mock_decode
from .metrics import FrameScore, contour_f, mask_to_bbox, region_j

__version__ = "0.1.0"
