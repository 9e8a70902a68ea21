"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v`. The simulator criteria share
one 200-scenario occlusion suite computed once per session.
"""

import shutil
import time
from pathlib import Path

import pytest

from treevos.backend import EchoBackend, ExternalBackend, ScriptedBackend
from treevos.bench import RunConfig, random_tree_menu, run_scenario, shared_menu
from treevos.cli import main as cli_main
from treevos.core import FrameRecord, Hyperparams, Mask, PathwayNode
from treevos.memory import build_bank, compute_modulation_weights, select_memory_frames
from treevos.search import brute_force_best, finalize, track
from treevos.simworld import generate_scenario_suite, save_scenario

from conftest import make_chain, make_mask, make_record
from fifo_reference import handrolled_fifo, run_strict_engine

ACCEPT_SEED = 2024
SUITE_SIZE = 200

H_ORACLE = Hyperparams(delta_iou=0.0, N=16)


def report(criterion, detail):
    print(f"[PASS] criterion {criterion}: {detail}")


# ---------------------------------------------------------------------------
# Scripted-fixture criteria (1-3)


@pytest.fixture(scope="module")
def oracle_fixtures():
    """50 random path-dependent tree fixtures with T in 3..8, plus oracles."""
    fixtures = []
    root = PathwayNode.root(FrameRecord.prompt(0, Mask.full(4, 4)))
    for i in range(50):
        t_total = 3 + (i % 6)
        backend = ScriptedBackend(random_tree_menu(9000 + i))
        frames = [str(t) for t in range(1, t_total + 1)]
        leaf, score = brute_force_best(root, frames, backend, build_bank, H_ORACLE)
        fixtures.append((i, t_total, backend, frames, root, leaf, score))
    return fixtures


def test_criterion_1_oracle_equivalence(oracle_fixtures):
    started = time.time()
    for i, t_total, backend, frames, root, oracle_leaf, oracle_score in oracle_fixtures:
        state, _ = track(root, frames, backend, build_bank, H_ORACLE.with_(P=3**t_total))
        beam_leaf, _ = finalize(state)
        assert beam_leaf.cumulative_score == oracle_score, f"fixture {i}: score differs"
        beam_chain = [(r.payload, r.mask, r.predicted_iou) for r in beam_leaf.chain()]
        oracle_chain = [(r.payload, r.mask, r.predicted_iou) for r in oracle_leaf.chain()]
        assert beam_chain == oracle_chain, f"fixture {i}: pathway differs"
    elapsed = time.time() - started
    assert elapsed < 60, f"took {elapsed:.1f}s, budget 60s"
    report(1, f"50 fixtures bit-exact vs exhaustive oracle in {elapsed:.1f}s")


def test_criterion_2_beam_dominance_and_monotonicity(oracle_fixtures):
    started = time.time()
    for i, t_total, backend, frames, root, _, oracle_score in oracle_fixtures:
        for p in (1, 2, 3, 4):
            state, _ = track(root, frames, backend, build_bank, H_ORACLE.with_(P=p))
            leaf, _ = finalize(state)
            assert leaf.cumulative_score <= oracle_score, f"fixture {i} P={p} beats oracle"
    # Monotone-in-P holds on shared-menu fixtures (kept sets provably nest);
    # path-dependent trees do not guarantee it, so they are checked above for
    # dominance only.
    root = PathwayNode.root(FrameRecord.prompt(0, Mask.full(4, 4)))
    for i in range(50):
        t_total = 3 + (i % 6)
        backend = ScriptedBackend(shared_menu(7000 + i))
        frames = [str(t) for t in range(1, t_total + 1)]
        scores = []
        for p in (1, 2, 3, 4):
            state, _ = track(root, frames, backend, build_bank, H_ORACLE.with_(P=p))
            scores.append(finalize(state)[0].cumulative_score)
        assert all(a <= b + 1e-12 for a, b in zip(scores, scores[1:])), (
            f"shared-menu fixture {i} not monotone: {scores}"
        )
    elapsed = time.time() - started
    assert elapsed < 60, f"took {elapsed:.1f}s, budget 60s"
    report(2, f"dominance on 50 fixtures, monotone-in-P on 50 nested fixtures ({elapsed:.1f}s)")


def test_criterion_3_greedy_baseline_fidelity():
    for seed in range(20):
        prompt_mask = make_mask(4, 4, seed=seed + 100)
        engine = run_strict_engine(seed, prompt_mask, frames=15, n=4)
        reference = handrolled_fifo(seed, prompt_mask, frames=15, n=4)
        assert engine == reference, f"fixture {seed}: masklets diverge"
    report(3, "strict FIFO mode matches the hand-rolled reference on 20 fixtures")


# ---------------------------------------------------------------------------
# Simulator criteria (4-6)


@pytest.fixture(scope="module")
def occlusion_suite():
    return generate_scenario_suite("occlusion", SUITE_SIZE, ACCEPT_SEED)


@pytest.fixture(scope="module")
def occlusion_runs(occlusion_suite):
    """Every mode the simulator criteria need, computed once, in-memory."""
    configs = {
        "tree": RunConfig(scenarios=("-",), output_dir="-", mode="tree"),
        "greedy": RunConfig(scenarios=("-",), output_dir="-", mode="greedy"),
        "p1": RunConfig(scenarios=("-",), output_dir="-", hyperparams=Hyperparams(P=1)),
        "p2": RunConfig(scenarios=("-",), output_dir="-", hyperparams=Hyperparams(P=2)),
        "norounding": RunConfig(
            scenarios=("-",),
            output_dir="-",
            hyperparams=Hyperparams(iou_rounding_decimals=None),
        ),
    }
    started = time.time()
    runs = {
        name: [run_scenario(spec, config) for spec in occlusion_suite]
        for name, config in configs.items()
    }
    runs["elapsed"] = time.time() - started
    return runs


def post_occlusion_mean(spec, result):
    end = spec.objects[spec.target_indices()[0]].occlusion_windows[-1][1]
    scores = [s.jf for s in result.frame_scores if s.time > end]
    return sum(scores) / len(scores)


def test_criterion_4_error_accumulation(occlusion_suite, occlusion_runs):
    tree, greedy = occlusion_runs["tree"], occlusion_runs["greedy"]
    post_gap = sum(
        post_occlusion_mean(spec, t) - post_occlusion_mean(spec, g)
        for spec, t, g in zip(occlusion_suite, tree, greedy)
    ) / len(occlusion_suite)
    assert post_gap >= 0.10, f"post-occlusion gap {post_gap:.3f} below 10 points"

    monotone = 0
    for t, g in zip(tree, greedy):
        gaps = [a - b for a, b in zip(t.segment_jf, g.segment_jf)]
        if all(x <= y + 1e-12 for x, y in zip(gaps, gaps[1:])):
            monotone += 1
    share = monotone / len(tree)
    assert share >= 0.80, f"segment gaps non-decreasing in only {share:.0%}"

    # The two modes this criterion names must fit the single-thread budget.
    budget = occlusion_runs["elapsed"] * 2 / 5
    assert budget < 600, f"tree+greedy runtime {budget:.0f}s over 10 min"
    report(
        4,
        f"post-occlusion gap {post_gap * 100:.1f} points, segment gaps "
        f"non-decreasing in {share:.0%} of {SUITE_SIZE} scenarios",
    )


def test_criterion_5_pathway_ablation_trend(occlusion_runs):
    means = {
        name: sum(r.mean_jf for r in occlusion_runs[name]) / len(occlusion_runs[name])
        for name in ("p1", "p2", "tree")
    }
    assert means["p1"] < means["p2"], f"P=1 {means['p1']:.3f} !< P=2 {means['p2']:.3f}"
    assert means["p2"] <= means["tree"] + 1e-12, (
        f"P=2 {means['p2']:.3f} !<= P=3 {means['tree']:.3f}"
    )
    report(
        5,
        "mean J&F P=1 {p1:.3f} < P=2 {p2:.3f} <= P=3 {p3:.3f}".format(
            p1=means["p1"], p2=means["p2"], p3=means["tree"]
        ),
    )


def test_criterion_6_rounding_diversity_effect(occlusion_runs):
    on, off = occlusion_runs["tree"], occlusion_runs["norounding"]
    mean_on = sum(r.mean_jf for r in on) / len(on)
    mean_off = sum(r.mean_jf for r in off) / len(off)
    assert mean_off <= mean_on + 1e-12, f"disabled rounding {mean_off:.3f} beats {mean_on:.3f}"

    pair_on = sum(r.pairwise_iou_sum for r in on) / sum(r.pairwise_iou_count for r in on)
    pair_off = sum(r.pairwise_iou_sum for r in off) / sum(r.pairwise_iou_count for r in off)
    assert pair_on < pair_off, (
        f"selected-candidate pairwise IoU {pair_on:.3f} not below {pair_off:.3f}"
    )
    report(
        6,
        f"mean J&F {mean_off:.3f} (raw) <= {mean_on:.3f} (rounded); "
        f"pairwise selected IoU {pair_on:.3f} < {pair_off:.3f}",
    )


# ---------------------------------------------------------------------------
# Criterion 7: memory-gate property suite (seeded enumeration)


def test_criterion_7_memory_gate_properties():
    import random

    rng = random.Random(99)
    for case in range(200):
        n = rng.randint(1, 8)
        delta_iou = rng.random()
        records = [
            make_record(t + 1, rng.random(), rng.uniform(-3, 3))
            for t in range(rng.randint(0, 14))
        ]
        picked = select_memory_frames(make_chain(records), n, delta_iou)
        prompts = [r for r in picked if r.is_prompt]
        assert len(prompts) == 1, "prompt inclusion"
        non_prompt = [r for r in picked if not r.is_prompt]
        assert len(non_prompt) <= n, "N cap"
        assert all(
            r.predicted_iou > delta_iou and r.occlusion_score > 0 for r in non_prompt
        ), "gate soundness"
        indices = [r.frame_index for r in picked]
        assert indices == sorted(indices), "ascending order"
        newest_passing = [
            r
            for r in reversed(records)
            if r.predicted_iou > delta_iou and r.occlusion_score > 0
        ][:n]
        assert sorted(r.frame_index for r in newest_passing) == [
            r.frame_index for r in non_prompt
        ], "backward scan order"

    for case in range(200):
        m = random.Random(100 + case).randint(1, 12)
        gen = random.Random(200 + case)
        scores = [gen.uniform(-50, 50) for _ in range(m)]
        w_low = gen.uniform(0.1, 1.0)
        w_high = w_low + gen.uniform(0.0, 1.0)
        weights = compute_modulation_weights(scores, w_low, w_high)
        assert all(w_low - 1e-12 <= w <= w_high + 1e-12 for w in weights), "range"
        ranked = sorted(range(m), key=lambda i: (scores[i], i))
        ordered = [weights[i] for i in ranked]
        assert all(a <= b + 1e-12 for a, b in zip(ordered, ordered[1:])), "rank assignment"
        scaled = compute_modulation_weights([s * 3.5 for s in scores], w_low, w_high)
        assert scaled == weights, "scale invariance"
        assert compute_modulation_weights(scores, 1.0, 1.0) == [1.0] * m, "[1,1] no-op"
    report(7, "400 seeded property cases for gates and modulation weights")


# ---------------------------------------------------------------------------
# Criterion 8: determinism of the run bundle


def test_criterion_8_run_determinism(tmp_path):
    suite = tmp_path / "suite"
    suite.mkdir()
    for spec in generate_scenario_suite("occlusion", 4, 77):
        save_scenario(spec, suite / f"{spec.name}.json")

    def bundle(out, parallelism):
        code = cli_main(
            [
                "run",
                "--scenarios",
                str(suite),
                "--out",
                str(out),
                "--trace",
                "--parallelism",
                str(parallelism),
            ]
        )
        assert code == 0
        return {
            str(p.relative_to(out)): p.read_bytes()
            for p in sorted(Path(out).rglob("*"))
            if p.is_file()
        }

    first = bundle(tmp_path / "r1", 1)
    repeat = bundle(tmp_path / "r2", 1)
    parallel = bundle(tmp_path / "r4", 4)
    parallel_repeat = bundle(tmp_path / "r4b", 4)
    assert first == repeat, "repeat run differs"
    assert first == parallel, "parallelism changed output bytes"
    assert parallel == parallel_repeat, "parallel repeat differs"
    report(8, "byte-identical bundles across repeats and parallelism {1, 4}")


# ---------------------------------------------------------------------------
# Criterion 9 (secondary): transport transparency via the TypeScript adapter


ADAPTER = Path(__file__).resolve().parent.parent / "adapter" / "dist" / "main.js"


@pytest.mark.skipif(
    shutil.which("node") is None or not ADAPTER.exists(),
    reason="adapter not built (run: cd adapter && npm run build)",
)
def test_criterion_9_transport_transparency():
    h = Hyperparams(delta_iou=0.0, N=6)
    frames = [str(t) for t in range(1, 7)]

    def masklet(backend, seed):
        root = PathwayNode.root(FrameRecord.prompt(0, make_mask(10, 8, seed=seed, p=0.55)))
        state, _ = track(root, frames, backend, build_bank, h)
        _, records = finalize(state)
        from treevos.core import serialize_mask

        return [serialize_mask(r.mask) for r in records]

    with ExternalBackend(["node", str(ADAPTER), "--mode", "echo"], timeout=30) as ext:
        for seed in range(10):
            assert masklet(EchoBackend(), seed) == masklet(ext, seed), f"fixture {seed}"
    report(9, "10 fixtures byte-identical over the wire and in-process")
