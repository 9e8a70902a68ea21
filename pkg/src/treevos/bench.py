"""Scenario runner and experiment harness.

run() executes scenarios in tree/greedy/oracle mode against a chosen backend
and writes, per scenario, a per-frame CSV, a summary JSON (with the resolved
config for provenance), plus optional SVG curves and a step-trace NDJSON.
sweep() repeats runs along one hyperparameter axis; compare() diffs two runs
frame-by-frame. Everything is deterministic for fixed seeds, including under
scenario-level parallelism (each scenario writes its own files atomically;
aggregates are folded in name order).
"""

from __future__ import annotations

import itertools
import json
import os
import shlex
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .backend import (
    DecoderBackend,
    ExternalBackend,
    RecordingBackend,
    ReplayBackend,
    ScriptedBackend,
)
from .core import (
    BeamState,
    FrameRecord,
    Hyperparams,
    Mask,
    PathwayNode,
    serialize_mask,
    validate_hyperparams,
)
from .memory import build_bank, build_bank_recency
from .metrics import FrameScore, contour_f, region_j, series_and_summary
from .search import (
    BRUTE_FORCE_DEFAULT_CAP,
    MemoryBuilder,
    brute_force_best,
    finalize,
    step_detailed,
)
from .simworld import ScenarioSpec, SimBackend, load_scenario
from .svg import write_line_chart
from . import rng as _rng

__all__ = [
    "RunConfig",
    "ScenarioResult",
    "RunResult",
    "run",
    "sweep",
    "compare",
    "oracle_check",
    "make_memory_builder",
    "random_tree_menu",
    "shared_menu",
    "ConfigurationError",
    "RunError",
    "SWEEP_AXES",
]

SWEEP_AXES = ("P", "delta_conf", "delta_iou", "modulation", "rounding")

MODES = ("tree", "greedy", "oracle")


class ConfigurationError(ValueError):
    """Bad run configuration (exit code 2 at the CLI)."""


class RunError(RuntimeError):
    """Failure while executing a run (exit code 1 at the CLI)."""


@dataclass(frozen=True)
class RunConfig:
    scenarios: tuple[str, ...]
    output_dir: str
    hyperparams: Hyperparams = Hyperparams()
    mode: str = "tree"  # tree | greedy | oracle
    backend: str = "sim"  # sim | external:<cmd>
    parallelism: int = 1
    # Per-contribution toggles; None means "what the mode implies".
    diversify: Optional[bool] = None
    memory: Optional[str] = None  # gated | recency
    modulation: Optional[bool] = None
    trace: bool = False
    svg: bool = False
    segments: int = 4
    record_dir: Optional[str] = None
    replay_dir: Optional[str] = None
    oracle_cap: int = BRUTE_FORCE_DEFAULT_CAP

    def resolved(self) -> "ResolvedPolicy":
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        err = validate_hyperparams(self.hyperparams)
        if err:
            raise ConfigurationError(err)
        if self.parallelism < 1:
            raise ConfigurationError("parallelism must be >= 1")
        if self.mode == "greedy":
            h = self.hyperparams.with_(P=1)
            diversify = False if self.diversify is None else self.diversify
            memory = self.memory or "recency"
            modulation = False if self.modulation is None else self.modulation
        else:
            h = self.hyperparams
            diversify = True if self.diversify is None else self.diversify
            memory = self.memory or "gated"
            modulation = True if self.modulation is None else self.modulation
        if memory not in ("gated", "recency"):
            raise ConfigurationError(f"unknown memory policy {memory!r}")
        return ResolvedPolicy(h=h, diversify=diversify, memory=memory, modulation=modulation)


@dataclass(frozen=True)
class ResolvedPolicy:
    h: Hyperparams
    diversify: bool
    memory: str
    modulation: bool


def make_memory_builder(memory: str, modulation: bool) -> MemoryBuilder:
    """Gated/recency selection crossed with modulation on/off."""
    if memory == "recency":
        return build_bank_recency
    if modulation:
        return build_bank

    def gated_unmodulated(pathway: PathwayNode, h: Hyperparams):
        return build_bank(pathway, h.with_(w_low=1.0, w_high=1.0))

    return gated_unmodulated


# ---------------------------------------------------------------------------
# Single-scenario execution


@dataclass
class ScenarioResult:
    name: str
    frame_scores: list[FrameScore]  # averaged across target objects
    mean_j: float
    mean_f: float
    mean_jf: float
    segment_jf: tuple[float, ...]
    final_scores: dict[int, float]  # object -> winning cumulative score
    masklet_rle: dict[int, list[str]]
    uncertain_steps: int
    pairwise_iou_sum: float
    pairwise_iou_count: int
    trace_lines: list[str]

    @property
    def mean_pairwise_selected_iou(self) -> Optional[float]:
        if self.pairwise_iou_count == 0:
            return None
        return self.pairwise_iou_sum / self.pairwise_iou_count


def _make_backend(config: RunConfig, spec: ScenarioSpec) -> DecoderBackend:
    kind = config.backend
    if kind == "sim":
        backend: DecoderBackend = SimBackend(spec)
    elif kind.startswith("external:"):
        backend = ExternalBackend(shlex.split(kind.split(":", 1)[1]))
    else:
        raise ConfigurationError(f"unknown backend {kind!r} (use sim or external:<cmd>)")
    if config.replay_dir is not None:
        backend = ReplayBackend.load(Path(config.replay_dir) / f"{spec.name}.ndjson")
    elif config.record_dir is not None:
        Path(config.record_dir).mkdir(parents=True, exist_ok=True)
        backend = RecordingBackend(backend, Path(config.record_dir) / f"{spec.name}.ndjson")
    return backend


def run_scenario(spec: ScenarioSpec, config: RunConfig) -> ScenarioResult:
    policy = config.resolved()
    backend = _make_backend(config, spec)
    memory_builder = make_memory_builder(policy.memory, policy.modulation)
    sim = SimBackend(spec)  # ground truth source for prompts and metrics
    frame_refs = [str(t) for t in range(1, spec.num_frames)]

    per_object: dict[int, list[FrameScore]] = {}
    final_scores: dict[int, float] = {}
    masklets: dict[int, list[str]] = {}
    trace_lines: list[str] = []
    uncertain_steps = 0
    pair_sum = 0.0
    pair_count = 0

    try:
        for obj in spec.target_indices():
            prompt = FrameRecord.prompt(0, sim.target_mask(obj, 0))
            root = PathwayNode.root(prompt)
            if config.mode == "oracle":
                if 3 ** len(frame_refs) > config.oracle_cap:
                    raise RunError(
                        f"oracle mode needs 3^{len(frame_refs)} decode sequences, over the cap "
                        f"{config.oracle_cap}"
                    )
                leaf, _ = brute_force_best(
                    root,
                    frame_refs,
                    backend,
                    memory_builder,
                    policy.h,
                    object_id=obj,
                    cap=config.oracle_cap,
                )
                records = leaf.chain()
            else:
                state = BeamState.initial(obj, root)
                for frame_ref in frame_refs:
                    state, info = step_detailed(
                        state,
                        frame_ref,
                        backend,
                        memory_builder,
                        policy.h,
                        diversify=policy.diversify,
                    )
                    if info.uncertain:
                        uncertain_steps += 1
                        for a, b in itertools.combinations(state.leaves, 2):
                            pair_sum += region_j(a.record.mask, b.record.mask)
                            pair_count += 1
                    if config.trace:
                        trace_lines.append(
                            json.dumps(
                                {
                                    "object": obj,
                                    "time": info.time,
                                    "uncertain": info.uncertain,
                                    "leaf_scores": list(info.leaf_scores),
                                    "chosen": [list(c) for c in info.chosen],
                                    "banks": [[list(e) for e in bank] for bank in info.banks],
                                }
                            )
                        )
                leaf, records = finalize(state)

            final_scores[obj] = leaf.cumulative_score
            masklets[obj] = [serialize_mask(r.mask).decode("ascii") for r in records]
            scores = []
            for t, record in enumerate(records):
                gt = sim.target_mask(obj, t)
                scores.append(
                    FrameScore(t, region_j(record.mask, gt), contour_f(record.mask, gt))
                )
            per_object[obj] = scores
    finally:
        close = getattr(backend, "close", None)
        if close is not None:
            close()

    objects = sorted(per_object)
    averaged = [
        FrameScore(
            t,
            sum(per_object[o][t].j for o in objects) / len(objects),
            sum(per_object[o][t].f for o in objects) / len(objects),
        )
        for t in range(spec.num_frames)
    ]
    _, summary = series_and_summary(averaged, config.segments)
    return ScenarioResult(
        name=spec.name,
        frame_scores=averaged,
        mean_j=summary.mean_j,
        mean_f=summary.mean_f,
        mean_jf=summary.mean_jf,
        segment_jf=summary.segment_jf,
        final_scores=final_scores,
        masklet_rle=masklets,
        uncertain_steps=uncertain_steps,
        pairwise_iou_sum=pair_sum,
        pairwise_iou_count=pair_count,
        trace_lines=trace_lines,
    )


# ---------------------------------------------------------------------------
# Run orchestration


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _config_json(config: RunConfig) -> dict:
    policy = config.resolved()
    h = policy.h
    # parallelism is an execution detail, not part of the result's identity;
    # keeping it out lets parallelism levels produce byte-identical bundles.
    return {
        "mode": config.mode,
        "backend": config.backend,
        "segments": config.segments,
        "diversify": policy.diversify,
        "memory": policy.memory,
        "modulation": policy.modulation,
        "hyperparams": {
            "P": h.P,
            "N": h.N,
            "epsilon": h.epsilon,
            "delta_conf": h.delta_conf,
            "delta_iou": h.delta_iou,
            "w_low": h.w_low,
            "w_high": h.w_high,
            "iou_rounding_decimals": h.iou_rounding_decimals,
        },
        "record_dir": config.record_dir,
        "replay_dir": config.replay_dir,
    }


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
            cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    return "unknown"


def _emit_scenario(result: ScenarioResult, config: RunConfig, provenance: str):
    out_dir = Path(config.output_dir) / result.name
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, _ = series_and_summary(result.frame_scores, config.segments)
    _atomic_write(out_dir / "frames.csv", "\n".join(rows) + "\n")
    summary = {
        "scenario": result.name,
        "git": provenance,
        "config": _config_json(config),
        "mean_j": result.mean_j,
        "mean_f": result.mean_f,
        "mean_jf": result.mean_jf,
        "segment_jf": list(result.segment_jf),
        "final_scores": {str(k): v for k, v in sorted(result.final_scores.items())},
        "uncertain_steps": result.uncertain_steps,
        "mean_pairwise_selected_iou": result.mean_pairwise_selected_iou,
        "masklet_sha256": {
            str(k): _sha256_lines(v) for k, v in sorted(result.masklet_rle.items())
        },
    }
    _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if config.trace:
        _atomic_write(out_dir / "trace.ndjson", "\n".join(result.trace_lines) + "\n")
    if config.svg:
        write_line_chart(
            out_dir / "curve.svg",
            {"jf": [s.jf for s in result.frame_scores]},
            title=f"{result.name} per-frame J&F",
        )


def _sha256_lines(lines: list[str]) -> str:
    import hashlib

    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("ascii"))
        h.update(b"\n")
    return h.hexdigest()


@dataclass
class RunResult:
    output_dir: Path
    scenarios: list[ScenarioResult]

    @property
    def mean_jf(self) -> float:
        return sum(r.mean_jf for r in self.scenarios) / len(self.scenarios)

    def scenario(self, name: str) -> ScenarioResult:
        for r in self.scenarios:
            if r.name == name:
                return r
        raise KeyError(name)


def _run_one(args: tuple[str, RunConfig]) -> ScenarioResult:
    path, config = args
    spec = load_scenario(path)
    return run_scenario(spec, config)


def run(config: RunConfig) -> RunResult:
    """Execute all scenarios and write the result bundle."""
    if not config.scenarios:
        raise ConfigurationError("no scenarios given")
    config.resolved()  # validate before any worker starts
    if config.backend.startswith("external:") and config.parallelism != 1:
        raise ConfigurationError("external backends serialize; use parallelism=1")
    provenance = _git_describe()
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)

    jobs = [(path, config) for path in config.scenarios]
    if config.parallelism == 1:
        results = [_run_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(_run_one, jobs))
    results.sort(key=lambda r: r.name)
    for result in results:
        _emit_scenario(result, config, provenance)

    aggregate = {
        "git": provenance,
        "config": _config_json(config),
        "scenario_count": len(results),
        "mean_j": sum(r.mean_j for r in results) / len(results),
        "mean_f": sum(r.mean_f for r in results) / len(results),
        "mean_jf": sum(r.mean_jf for r in results) / len(results),
        "segment_jf": [
            sum(r.segment_jf[i] for r in results) / len(results)
            for i in range(config.segments)
        ],
        "scenarios": {
            r.name: {"mean_j": r.mean_j, "mean_f": r.mean_f, "mean_jf": r.mean_jf}
            for r in results
        },
    }
    _atomic_write(
        Path(config.output_dir) / "summary.json",
        json.dumps(aggregate, indent=2, sort_keys=True) + "\n",
    )
    return RunResult(output_dir=Path(config.output_dir), scenarios=results)


# ---------------------------------------------------------------------------
# Sweeps


def _axis_config(config: RunConfig, axis: str, value: str) -> RunConfig:
    h = config.hyperparams
    if axis == "P":
        h = h.with_(P=int(value))
    elif axis == "delta_conf":
        h = h.with_(delta_conf=float(value))
    elif axis == "delta_iou":
        h = h.with_(delta_iou=float(value))
    elif axis == "modulation":
        low, _, high = value.partition(":")
        h = h.with_(w_low=float(low), w_high=float(high))
    elif axis == "rounding":
        if value not in ("on", "off"):
            raise ConfigurationError("rounding axis takes values on/off")
        h = h.with_(iou_rounding_decimals=2 if value == "on" else None)
    else:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    err = validate_hyperparams(h)
    if err:
        raise ConfigurationError(f"{axis}={value}: {err}")
    safe = value.replace(":", "_")
    return replace(
        config,
        hyperparams=h,
        output_dir=str(Path(config.output_dir) / f"{axis}_{safe}"),
    )


def sweep(config: RunConfig, axis: str, values: Sequence[str]) -> list[tuple[str, RunResult]]:
    """One run per axis value; all other hyperparams stay at the config's."""
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    results = []
    rows = ["axis,value,mean_j,mean_f,mean_jf"]
    for value in values:
        sub = _axis_config(config, axis, value)
        result = run(sub)
        results.append((value, result))
        rows.append(
            f"{axis},{value},"
            f"{sum(r.mean_j for r in result.scenarios) / len(result.scenarios):.6f},"
            f"{sum(r.mean_f for r in result.scenarios) / len(result.scenarios):.6f},"
            f"{result.mean_jf:.6f}"
        )
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    _atomic_write(Path(config.output_dir) / "sweep.csv", "\n".join(rows) + "\n")
    return results


# ---------------------------------------------------------------------------
# Compare


def _read_frames_csv(path: Path) -> list[tuple[int, float]]:
    lines = path.read_text().strip().splitlines()
    out = []
    for line in lines[1:]:
        time_s, _, _, jf_s = line.split(",")
        out.append((int(time_s), float(jf_s)))
    return out


def compare(run_a: str | Path, run_b: str | Path, output_dir: str | Path, segments: int = 4) -> dict:
    """Per-frame J&F gap (a minus b) and per-segment gap means."""
    run_a, run_b, output_dir = Path(run_a), Path(run_b), Path(output_dir)
    names_a = sorted(p.name for p in run_a.iterdir() if (p / "frames.csv").exists())
    names_b = sorted(p.name for p in run_b.iterdir() if (p / "frames.csv").exists())
    if names_a != names_b or not names_a:
        raise RunError(f"runs do not cover the same scenarios: {names_a} vs {names_b}")
    output_dir.mkdir(parents=True, exist_ok=True)
    from .metrics import segment_slices

    per_scenario = {}
    for name in names_a:
        fa = _read_frames_csv(run_a / name / "frames.csv")
        fb = _read_frames_csv(run_b / name / "frames.csv")
        if len(fa) != len(fb) or any(ta != tb for (ta, _), (tb, _) in zip(fa, fb)):
            raise RunError(f"scenario {name}: frame ranges differ between runs")
        gaps = [ja - jb for (_, ja), (_, jb) in zip(fa, fb)]
        rows = ["time,gap"] + [f"{t},{g:.6f}" for (t, _), g in zip(fa, gaps)]
        _atomic_write(output_dir / f"{name}_gap.csv", "\n".join(rows) + "\n")
        seg = [
            sum(gaps[sl]) / max(1, len(gaps[sl]))
            for sl in segment_slices(len(gaps), segments)
        ]
        per_scenario[name] = {"mean_gap": sum(gaps) / len(gaps), "segment_gap": seg}
    summary = {
        "run_a": str(run_a),
        "run_b": str(run_b),
        "scenarios": per_scenario,
        "mean_gap": sum(v["mean_gap"] for v in per_scenario.values()) / len(per_scenario),
        "segment_gap": [
            sum(v["segment_gap"][i] for v in per_scenario.values()) / len(per_scenario)
            for i in range(segments)
        ],
    }
    _atomic_write(output_dir / "compare.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# Scripted fixtures and the oracle check


def random_tree_menu(seed: int) -> Callable[[int, tuple[int, ...]], tuple[tuple[float, float, float], float]]:
    """Path-dependent random IoU menus (no ties almost surely), always certain."""

    def menu(time: int, prefix: tuple[int, ...]):
        ious = tuple(
            0.05 + 0.9 * _rng.unit_float(seed, "tree", time, prefix, k) for k in range(3)
        )
        return ious, 3.0

    return menu


def shared_menu(seed: int) -> Callable[[int, tuple[int, ...]], tuple[tuple[float, float, float], float]]:
    """Menus depending on time only (shared across parents at each step).

    For these, the kept sets of beams with growing P nest (each kept parent's
    best child outranks every child of the extra parent), so the final beam
    score is non-decreasing in P.
    """

    def menu(time: int, prefix: tuple[int, ...]):
        ious = tuple(0.05 + 0.9 * _rng.unit_float(seed, "shared", time, k) for k in range(3))
        return ious, 3.0

    return menu


def oracle_check(
    count: int = 50,
    t_min: int = 3,
    t_max: int = 8,
    seed: int = 1,
    p_values: Sequence[int] = (1, 2, 3, 4),
) -> dict:
    """Beam-vs-exhaustive verification on scripted random-tree fixtures.

    For each fixture: the unpruned beam (P = 3^T) must return exactly the
    exhaustive argmax pathway and score; pruned beams must never exceed the
    oracle score. Monotonicity in P is checked on shared-menu fixtures.
    """
    from .search import track

    # Oracle fixtures keep every frame in the bank (permissive gate, certain
    # occlusion scores), so the committed prefix is recoverable from payloads.
    h = Hyperparams(delta_iou=0.0, N=max(t_max, 6))
    report = {"fixtures": [], "ok": True}
    for i in range(count):
        t_total = t_min + (i % (t_max - t_min + 1))
        backend = ScriptedBackend(random_tree_menu(seed * 1000 + i))
        root = PathwayNode.root(FrameRecord.prompt(0, Mask.full(4, 4)))
        frames = [str(t) for t in range(1, t_total + 1)]
        oracle_leaf, oracle_score = brute_force_best(
            root, frames, backend, build_bank, h, cap=3**t_max
        )
        state, _ = track(root, frames, backend, build_bank, h.with_(P=3**t_total))
        beam_leaf, _ = finalize(state)
        exact = (
            beam_leaf.cumulative_score == oracle_score
            and [r.payload for r in beam_leaf.chain()] == [r.payload for r in oracle_leaf.chain()]
        )
        dominance = {}
        for p in p_values:
            state_p, _ = track(root, frames, backend, build_bank, h.with_(P=p))
            best_p, _ = finalize(state_p)
            dominance[p] = best_p.cumulative_score
        dom_ok = all(score <= oracle_score + 1e-12 for score in dominance.values())
        shared_backend = ScriptedBackend(shared_menu(seed * 1000 + i))
        mono_scores = []
        for p in p_values:
            state_p, _ = track(root, frames, shared_backend, build_bank, h.with_(P=p))
            best_p, _ = finalize(state_p)
            mono_scores.append(best_p.cumulative_score)
        mono_ok = all(a <= b + 1e-12 for a, b in zip(mono_scores, mono_scores[1:]))
        fixture = {
            "fixture": i,
            "T": t_total,
            "oracle_score": oracle_score,
            "beam_full_score": beam_leaf.cumulative_score,
            "exact": exact,
            "dominance_scores": {str(p): s for p, s in dominance.items()},
            "dominance_ok": dom_ok,
            "monotone_scores": mono_scores,
            "monotone_ok": mono_ok,
        }
        report["fixtures"].append(fixture)
        if not (exact and dom_ok and mono_ok):
            report["ok"] = False
    return report
