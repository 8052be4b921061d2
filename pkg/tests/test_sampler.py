import itertools
import json

import numpy as np
import pytest
from scipy import stats as sstats

from lclnet.data import synth_glyphs
from lclnet.errors import ContractError, DataError
from lclnet.sampler import (
    Context,
    count_distinct_contexts,
    count_trials,
    generate_context,
    generate_fewshot_context,
    generate_test_trials,
    load_manifest,
    make_batch,
    rng_stream,
    save_manifest,
)


@pytest.fixture(scope="module")
def small_ds():
    return synth_glyphs(20, 4, 8, seed=5)


class TestGenerateContext:
    def test_all_categories_used_when_forced(self):
        ds = synth_glyphs(5, 2, 8, seed=2)
        ctx = generate_context(ds, 5, rng_stream(0))
        cats = {ref.rpartition("/")[0] for ref in ctx.candidates}
        assert len(cats) == 5
        assert ctx.labels.count(0) == 1
        ctx.check_invariants()

    def test_seed_determinism(self, small_ds):
        a = generate_context(small_ds, 5, rng_stream(42))
        b = generate_context(small_ds, 5, rng_stream(42))
        assert a == b

    def test_positive_slot_uniform(self, small_ds):
        rng = rng_stream(7)
        counts = np.zeros(5, dtype=int)
        for _ in range(10_000):
            counts[generate_context(small_ds, 5, rng).answer_index] += 1
        assert sstats.chisquare(counts).pvalue > 0.001

    def test_invariants_hold_over_many_draws(self, small_ds):
        rng = rng_stream(3)
        for _ in range(2_000):
            generate_context(small_ds, 7, rng).check_invariants()

    def test_insufficient_categories(self, small_ds):
        with pytest.raises(DataError):
            generate_context(small_ds, 21, rng_stream(0))

    def test_category_omission_frequency(self):
        # with SC = L+1, each category should be left out ~uniformly
        ds = synth_glyphs(6, 2, 8, seed=3)
        rng = rng_stream(11)
        omitted = {c.cid: 0 for c in ds.categories}
        n = 6_000
        for _ in range(n):
            ctx = generate_context(ds, 5, rng)
            used = {r.rpartition("/")[0] for r in ctx.candidates}
            (missing,) = set(omitted) - used
            omitted[missing] += 1
        freqs = np.array(list(omitted.values())) / n
        assert np.all(np.abs(freqs - 1 / 6) < 0.03)


class TestFewshot:
    def test_one_shot_matches_base_distribution(self, small_ds):
        a = generate_context(small_ds, 5, rng_stream(9))
        b = generate_fewshot_context(small_ds, 5, 1, rng_stream(9))
        assert a == b

    def test_forced_full_usage(self):
        ds = synth_glyphs(8, 6, 8, seed=4)
        ctx = generate_fewshot_context(ds, 5, 5, rng_stream(1))
        pos_cat = ctx.candidates[ctx.answer_index].rpartition("/")[0]
        used = set(ctx.recognizing) | {ctx.candidates[ctx.answer_index]}
        assert len(used) == 6
        assert all(r.rpartition("/")[0] == pos_cat for r in ctx.recognizing)

    def test_recognizing_pairwise_distinct(self, small_ds):
        rng = rng_stream(13)
        for _ in range(10_000):
            ctx = generate_fewshot_context(small_ds, 5, 3, rng)
            assert len(set(ctx.recognizing)) == 3

    def test_insufficient_samples(self):
        ds = synth_glyphs(6, 3, 8, seed=1)
        with pytest.raises(DataError):
            generate_fewshot_context(ds, 5, 5, rng_stream(0))

    def test_nonpositive_shot_count(self, small_ds):
        with pytest.raises(ContractError):
            generate_fewshot_context(small_ds, 5, 0, rng_stream(0))


class TestMakeBatch:
    def test_batch_size(self, small_ds):
        assert len(make_batch(small_ds, 40, 5, rng_stream(0))) == 40

    def test_single_draw_equivalence(self, small_ds):
        assert make_batch(small_ds, 1, 5, rng_stream(5))[0] == generate_context(
            small_ds, 5, rng_stream(5)
        )

    def test_adjacent_seeds_differ(self, small_ds):
        assert make_batch(small_ds, 4, 5, rng_stream(1)) != make_batch(
            small_ds, 4, 5, rng_stream(2)
        )


class TestCountTrials:
    def test_exact_division(self):
        assert count_trials(21, 1, 20, 1) == 1

    def test_benchmark_budget_one_shot(self):
        assert count_trials(659, 20, 20, 1) == 627

    def test_benchmark_budget_five_shot(self):
        assert count_trials(659, 20, 20, 5) == 527

    def test_rejects_nonpositive(self):
        with pytest.raises(ContractError):
            count_trials(0, 20, 20, 1)
        with pytest.raises(ContractError):
            count_trials(10, 20, 20, -1)


class TestGenerateTestTrials:
    def test_trial_count(self):
        ds = synth_glyphs(25, 2, 8, seed=6)
        trials = generate_test_trials(ds, 20, 1, seed=0)
        assert len(trials) == 2  # floor(50/21)
        for t in trials:
            assert t.n_candidates == 20
            t.check_invariants()

    def test_seed_changes_trials(self):
        ds = synth_glyphs(25, 3, 8, seed=6)
        assert generate_test_trials(ds, 20, 1, seed=0) != generate_test_trials(ds, 20, 1, seed=1)

    def test_trial_streams_are_order_independent(self):
        ds = synth_glyphs(25, 3, 8, seed=6)
        trials = generate_test_trials(ds, 5, 1, seed=4)
        again = generate_test_trials(ds, 5, 1, seed=4)
        assert trials == again


def _enumerate_contexts(sc, k, L):
    """Brute-force set enumeration of all distinct one-shot episodes."""
    seen = set()
    cats = range(sc)
    for pos_cat in cats:
        others = [c for c in cats if c != pos_cat]
        for rec in range(k):
            for pos_sample in range(k):
                if pos_sample == rec:
                    continue
                for neg_cats in itertools.permutations(others, L - 1):
                    for neg_samples in itertools.product(range(k), repeat=L - 1):
                        negs = list(zip(neg_cats, neg_samples))
                        for slot in range(L):
                            cand = negs[:slot] + [(pos_cat, pos_sample)] + negs[slot:]
                            seen.add(((pos_cat, rec), tuple(cand)))
    return len(seen)


class TestCountDistinct:
    def test_tiny_exact(self):
        assert count_distinct_contexts(2, 2, 2) == 16

    def test_no_positive_pair_when_k1(self):
        assert count_distinct_contexts(5, 1, 3) == 0

    @pytest.mark.parametrize("sc", [2, 3, 4])
    @pytest.mark.parametrize("k", [2, 3])
    @pytest.mark.parametrize("L", [2, 3])
    def test_matches_enumeration(self, sc, k, L):
        if sc < L:
            pytest.skip("infeasible combination")
        assert count_distinct_contexts(sc, k, L) == _enumerate_contexts(sc, k, L)

    def test_benchmark_scale_magnitude(self):
        # exact big-integer value for the full-size configuration
        v = count_distinct_contexts(136, 20, 20)
        assert 1e70 < v < 1e71


class TestManifest:
    def test_round_trip(self, small_ds, tmp_path):
        contexts = make_batch(small_ds, 10, 5, rng_stream(21))
        path = tmp_path / "trials.json"
        save_manifest(contexts, path)
        assert load_manifest(path) == contexts

    def test_byte_identical_for_fixed_seed(self, small_ds, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_manifest(make_batch(small_ds, 5, 5, rng_stream(8)), p1)
        save_manifest(make_batch(small_ds, 5, 5, rng_stream(8)), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_bad_answer_index(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps([{"recognizing": ["a/b"], "candidates": ["c/d"], "answer_index": 3}]))
        with pytest.raises(DataError):
            load_manifest(path)

    def test_rejects_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(DataError):
            load_manifest(path)


class TestContextValidation:
    def test_requires_exactly_one_positive(self):
        with pytest.raises(ContractError):
            Context(["a/x"], ["b/y", "c/z"], [1, 1])
        with pytest.raises(ContractError):
            Context(["a/x"], ["b/y", "c/z"], [0, 0])

    def test_requires_recognizing(self):
        with pytest.raises(ContractError):
            Context([], ["b/y"], [0])
