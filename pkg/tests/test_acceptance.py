"""Acceptance gate: one test per criterion, each printing a PASS line with
the measured value so a verbose run doubles as the acceptance report.

The desk-scale training runs (criteria 5 and 10) share session fixtures;
expect the whole module to take on the order of an hour of CPU.
"""

import itertools
import time

import numpy as np
import pytest
from scipy import stats as sstats

from lclnet.data import load_bpl_trials, synth_glyphs
from lclnet.evaluate import confidence_interval, evaluate_protocol, model_score_fn
from lclnet.nn import ContrastNet, ModelSpec, contrast_loss, episode_labels, predict
from lclnet.sampler import (
    count_distinct_contexts,
    count_trials,
    generate_context,
    make_batch,
    rng_stream,
    save_manifest,
)
from lclnet.tensor import Tensor, grad_check
from lclnet.train import TrainConfig, init_params, load_checkpoint, train

DESK_SPEC = ModelSpec(depth_n=1, image_size=16, n_candidates=5)
DESK_STEPS = 20_000


def _desk_config(tmp, tag):
    return TrainConfig(
        n_contexts=8,
        decay1=12_000,
        decay2=16_000,
        max_steps=DESK_STEPS,
        seed=11,
        checkpoint_path=str(tmp / f"desk_{tag}.ckpt"),
        trace_path=str(tmp / f"desk_{tag}.csv"),
    )


@pytest.fixture(scope="session")
def desk_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("desk")


@pytest.fixture(scope="session")
def desk_run_a(desk_dir, glyphs16):
    cfg = _desk_config(desk_dir, "a")
    return train(cfg, DESK_SPEC, glyphs16), cfg


@pytest.fixture(scope="session")
def desk_run_b(desk_dir, glyphs16):
    cfg = _desk_config(desk_dir, "b")
    return train(cfg, DESK_SPEC, glyphs16), cfg


def test_criterion_01_gradient_check_full_network():
    spec = ModelSpec(depth_n=1, image_size=8, n_candidates=3)
    params = init_params(spec, seed=0, dtype=np.float64)
    model = ContrastNet(spec, params)
    rng = np.random.default_rng(0)
    pairs = rng.uniform(0, 1, size=(3, 2, 8, 8))
    labels = np.array([[0.0, 1.0, 1.0]])

    def forward():
        return contrast_loss(model.forward_pairs(pairs, 1, train=True), labels)

    start = time.monotonic()
    err = grad_check(
        forward, list(params.tensors.values()), h=1e-5, max_coords=200, rng=rng
    )
    elapsed = time.monotonic() - start
    assert err < 1e-4
    assert elapsed < 120
    print(f"\nACCEPTANCE 1 PASS: gradcheck max rel err {err:.3e} in {elapsed:.1f}s")


def test_criterion_02_sampler_property_suite(tmp_path):
    ds = synth_glyphs(20, 4, 8, seed=5)
    start = time.monotonic()
    rng = rng_stream(7)
    slot_counts = np.zeros(5, dtype=int)
    for _ in range(10_000):
        ctx = generate_context(ds, 5, rng)
        ctx.check_invariants()
        slot_counts[ctx.answer_index] += 1
    pvalue = sstats.chisquare(slot_counts).pvalue
    assert pvalue > 0.001
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_manifest(make_batch(ds, 50, 5, rng_stream(3)), p1)
    save_manifest(make_batch(ds, 50, 5, rng_stream(3)), p2)
    assert p1.read_bytes() == p2.read_bytes()
    elapsed = time.monotonic() - start
    assert elapsed < 60
    print(
        f"\nACCEPTANCE 2 PASS: 10000 draws valid, chi2 p={pvalue:.3f}, "
        f"byte-exact seeds, {elapsed:.1f}s"
    )


def test_criterion_03_loss_unit_values():
    z20 = np.zeros((1, 20))
    z20[0, 1:] = 1.0
    uniform = contrast_loss(Tensor(np.full((1, 20), 0.5)), z20).item()
    assert abs(uniform - np.log(2.0)) < 1e-6
    hand = contrast_loss(Tensor(np.array([[0.2, 0.9]])), np.array([[0.0, 1.0]])).item()
    assert abs(hand - 0.16425) < 1e-5
    perfect = contrast_loss(
        Tensor(np.array([[1e-7, 1 - 1e-7, 1 - 1e-7]])), np.array([[0.0, 1.0, 1.0]])
    ).item()
    assert perfect < 1e-5
    print(
        f"\nACCEPTANCE 3 PASS: ln2 case {uniform:.5f}, hand case {hand:.5f}, "
        f"clamped-perfect {perfect:.2e}"
    )


def test_criterion_04_overfit_one_batch(glyphs16):
    batch = make_batch(glyphs16, 4, 5, rng_stream(7))
    cfg = TrainConfig(
        n_contexts=4, decay1=1200, decay2=1600, max_steps=2000, seed=3
    )
    start = time.monotonic()
    res = train(cfg, DESK_SPEC, glyphs16, fixed_batch=batch)
    elapsed = time.monotonic() - start
    final_loss = res.trace[-1][2]
    acts = res.model.forward_contexts(glyphs16, batch, train=False).data
    correct = sum(1 for a, c in zip(acts, batch) if predict(a) == c.answer_index)
    assert final_loss < 0.05
    assert correct == len(batch)
    assert elapsed < 600
    # fixed batch: smoothed loss is monotone nonincreasing over 100-step windows
    losses = np.array([l for _, _, l in res.trace])
    windows = losses[: len(losses) // 100 * 100].reshape(-1, 100).mean(axis=1)
    assert np.all(np.diff(windows) <= 1e-3)
    print(
        f"\nACCEPTANCE 4 PASS: loss {final_loss:.4f}, batch accuracy "
        f"{correct}/{len(batch)} in {elapsed:.0f}s"
    )


def test_criterion_05_desk_scale_end_to_end(desk_run_a, glyphs16_heldout):
    (result, _cfg) = desk_run_a
    score = model_score_fn(result.model, glyphs16_heldout)
    one = evaluate_protocol(
        score, "variant", 5, 1, runs=20, testset=glyphs16_heldout, base_seed=1000
    )
    five = evaluate_protocol(
        score, "variant", 5, 5, runs=20, testset=glyphs16_heldout, base_seed=1000
    )
    assert one.mean >= 0.80
    assert five.mean >= one.mean
    print(
        f"\nACCEPTANCE 5 PASS: held-out 5-way 1-shot {one.mean:.4f} "
        f"(+/- {one.ci_halfwidth:.4f}), 5-shot {five.mean:.4f} vs chance 0.20"
    )


def test_criterion_06_fewshot_degenerate_equivalence():
    ds = synth_glyphs(10, 6, 8, seed=3)
    spec = ModelSpec(depth_n=1, image_size=8, n_candidates=4)
    model = ContrastNet(spec, init_params(spec, seed=1))
    rng = rng_stream(2)
    warm = model.assemble_pairs(ds, make_batch(ds, 2, 4, rng))
    model.encode_pairs(warm, train=True)
    for _ in range(100):
        ctx = generate_context(ds, 4, rng)
        multishot = model.multishot_activations(ds, ctx)
        oneshot = model.forward_contexts(ds, [ctx], train=False).data.sum(axis=0)
        assert np.array_equal(multishot, oneshot)
    print("\nACCEPTANCE 6 PASS: n_shot=1 bitwise equal to one-shot on 100 episodes")


def test_criterion_07_protocol_accounting(tmp_path):
    assert count_trials(659, 20, 20, 1) == 627
    assert count_trials(659, 20, 20, 5) == 527
    ds = synth_glyphs(25, 4, 8, seed=2)
    good = tmp_path / "good.json"
    save_manifest(make_batch(ds, 400, 20, rng_stream(0)), good)
    assert len(load_bpl_trials(good)) == 400
    bad = tmp_path / "bad.json"
    save_manifest(make_batch(ds, 399, 20, rng_stream(0)), bad)
    from lclnet.errors import ProtocolError

    with pytest.raises(ProtocolError):
        load_bpl_trials(bad)
    print("\nACCEPTANCE 7 PASS: trial budgets 627/527; fixed protocol enforces 400x20")


def test_criterion_08_confidence_interval_hand_cases():
    mean1, hw1 = confidence_interval([0.8] * 50 + [1.0] * 50)
    assert abs(mean1 - 0.9) < 1e-4
    assert abs(hw1 - 0.0197) < 1e-4
    mean2, hw2 = confidence_interval([0.0, 1.0])
    assert abs(mean2 - 0.5) < 1e-4
    assert abs(hw2 - 0.980) < 1e-3
    print(f"\nACCEPTANCE 8 PASS: CI cases ({mean1:.3f},{hw1:.4f}) and ({mean2:.2f},{hw2:.3f})")


def _enumerate_contexts(sc, k, length):
    seen = set()
    for pos_cat in range(sc):
        others = [c for c in range(sc) if c != pos_cat]
        for rec in range(k):
            for pos_sample in range(k):
                if pos_sample == rec:
                    continue
                for neg_cats in itertools.permutations(others, length - 1):
                    for neg_samples in itertools.product(range(k), repeat=length - 1):
                        negs = list(zip(neg_cats, neg_samples))
                        for slot in range(length):
                            cand = negs[:slot] + [(pos_cat, pos_sample)] + negs[slot:]
                            seen.add(((pos_cat, rec), tuple(cand)))
    return len(seen)


def test_criterion_09_context_count_vs_enumeration():
    checked = 0
    for sc in (1, 2, 3, 4):
        for k in (1, 2, 3):
            for length in (1, 2, 3):
                if sc < length:
                    continue
                assert count_distinct_contexts(sc, k, length) == _enumerate_contexts(
                    sc, k, length
                ), (sc, k, length)
                checked += 1
    print(f"\nACCEPTANCE 9 PASS: exact count matches enumeration on {checked} instances")


def test_criterion_10_determinism_of_desk_runs(desk_run_a, desk_run_b, glyphs16_heldout):
    (res_a, cfg_a) = desk_run_a
    (res_b, cfg_b) = desk_run_b
    from pathlib import Path

    bytes_a = Path(cfg_a.checkpoint_path).read_bytes()
    bytes_b = Path(cfg_b.checkpoint_path).read_bytes()
    assert bytes_a == bytes_b
    rep_a = evaluate_protocol(
        model_score_fn(res_a.model, glyphs16_heldout),
        "variant", 5, 1, runs=10, testset=glyphs16_heldout, base_seed=1000,
    )
    rep_b = evaluate_protocol(
        model_score_fn(res_b.model, glyphs16_heldout),
        "variant", 5, 1, runs=10, testset=glyphs16_heldout, base_seed=1000,
    )
    assert rep_a.to_dict() == rep_b.to_dict()
    assert res_a.trace == res_b.trace
    print(
        f"\nACCEPTANCE 10 PASS: identical checkpoints ({len(bytes_a)} bytes) "
        f"and identical reports across two full runs"
    )


@pytest.mark.skip(
    reason="optional compute-heavy criterion: requires the real Omniglot background "
    "set and its fixed 400-trial manifest, neither shipped with this repository"
)
def test_criterion_11_optional_omniglot_tiny2():
    pass
