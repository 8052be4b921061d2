"""Episodic context construction and trial accounting.

A contrast context pairs one (or a few) recognizing samples with an
ordered, shuffled list of candidate samples from distinct categories,
exactly one of which shares the recognizing category. Construction:
draw the candidate categories without replacement, pick one of them as
the positive, draw one sample per negative category, draw two distinct
samples from the positive category (recognizing + positive candidate),
concatenate positive-first, then shuffle the candidate order.

RNG: numpy PCG64. A given seed reproduces the same draw sequence on any
platform; per-trial streams are derived as SeedSequence(seed, (index,))
so trial generation is order-independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError

POSITIVE = 0  # candidate label marking the same-category sample
NEGATIVE = 1


def rng_stream(seed: int, *key) -> np.random.Generator:
    """Deterministic PCG64 stream; extra key parts derive independent substreams."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


@dataclass
class Context:
    """One episode: recognizing sample(s) plus L labelled candidates."""

    recognizing: list  # list[str] sample refs "category_id/sample_name"
    candidates: list  # list[str] sample refs, length L
    labels: list  # list[int], 0 = positive, 1 = negative, exactly one 0

    def __post_init__(self):
        if not self.recognizing:
            raise ContractError("context needs at least one recognizing sample")
        if len(self.candidates) != len(self.labels):
            raise ContractError("candidate/label length mismatch")
        if self.labels.count(POSITIVE) != 1:
            raise ContractError(f"context must have exactly one positive, got {self.labels}")

    @property
    def answer_index(self) -> int:
        return self.labels.index(POSITIVE)

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    def check_invariants(self) -> None:
        """Assert the structural episode invariants (raises ContractError)."""
        cats = [ref.rpartition("/")[0] for ref in self.candidates]
        if len(set(cats)) != len(cats):
            raise ContractError("candidate categories are not distinct")
        rec_cats = {ref.rpartition("/")[0] for ref in self.recognizing}
        if len(rec_cats) != 1:
            raise ContractError("recognizing samples span multiple categories")
        pos = self.candidates[self.answer_index]
        if pos.rpartition("/")[0] != next(iter(rec_cats)):
            raise ContractError("positive candidate category differs from recognizing category")
        if pos in self.recognizing:
            raise ContractError("positive candidate equals a recognizing sample")
        if len(set(self.recognizing)) != len(self.recognizing):
            raise ContractError("recognizing samples are not distinct")


def _ref(cid: str, name: str) -> str:
    return f"{cid}/{name}"


def _draw_candidates(dataset, n_candidates: int, rng, n_recognizing: int):
    cats = dataset.categories
    if len(cats) < n_candidates:
        raise DataError(
            f"need {n_candidates} categories, dataset has {len(cats)}"
        )
    need_pos = n_recognizing + 1  # recognizing samples + positive candidate, all distinct
    if not any(len(c.samples) >= need_pos for c in cats):
        raise DataError(f"no category has the {need_pos} samples a positive category needs")
    for _ in range(1000):
        chosen = rng.choice(len(cats), size=n_candidates, replace=False)
        eligible = [i for i in chosen if len(cats[i].samples) >= need_pos]
        if eligible:
            break
    else:  # pragma: no cover - requires adversarial dataset shape
        raise DataError("could not draw a candidate set containing a usable positive category")
    pos_idx = int(eligible[rng.integers(len(eligible))])
    negatives = [int(i) for i in chosen if i != pos_idx]

    pos_cat = cats[pos_idx]
    pos_samples = rng.choice(len(pos_cat.samples), size=need_pos, replace=False)
    recognizing = [_ref(pos_cat.cid, pos_cat.sample_names[int(s)]) for s in pos_samples[:-1]]
    pos_candidate = _ref(pos_cat.cid, pos_cat.sample_names[int(pos_samples[-1])])

    candidates = [pos_candidate]
    labels = [POSITIVE]
    for i in negatives:
        cat = cats[i]
        s = int(rng.integers(len(cat.samples)))
        candidates.append(_ref(cat.cid, cat.sample_names[s]))
        labels.append(NEGATIVE)

    perm = rng.permutation(n_candidates)
    return recognizing, [candidates[int(p)] for p in perm], [labels[int(p)] for p in perm]


def generate_context(dataset, n_candidates: int, rng) -> Context:
    """Draw one one-shot episode."""
    rec, cand, lab = _draw_candidates(dataset, n_candidates, rng, n_recognizing=1)
    return Context(rec, cand, lab)


def generate_fewshot_context(dataset, n_candidates: int, n_shot: int, rng) -> Context:
    """Draw one episode with n_shot recognizing samples, all distinct from
    each other and from the positive candidate."""
    if n_shot < 1:
        raise ContractError(f"n_shot must be >= 1, got {n_shot}")
    rec, cand, lab = _draw_candidates(dataset, n_candidates, rng, n_recognizing=n_shot)
    return Context(rec, cand, lab)


def make_batch(dataset, n_contexts: int, n_candidates: int, rng) -> list:
    return [generate_context(dataset, n_candidates, rng) for _ in range(n_contexts)]


def count_trials(n_categories: int, samples_per_category: int, n_candidates: int, n_shot: int) -> int:
    """Trial budget floor((EC*KE)/(L+n_shot)); remainders are discarded."""
    for name, v in (
        ("n_categories", n_categories),
        ("samples_per_category", samples_per_category),
        ("n_candidates", n_candidates),
        ("n_shot", n_shot),
    ):
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise ContractError(f"{name} must be a positive integer, got {v!r}")
    return (n_categories * samples_per_category) // (n_candidates + n_shot)


def generate_test_trials(testset, n_candidates: int, n_shot: int, seed: int) -> list:
    """Regenerate a trial set from held-out categories; count per the trial
    budget, each trial from its own derived stream."""
    n = count_trials(
        len(testset.categories), testset.min_samples_per_category, n_candidates, n_shot
    )
    trials = []
    for i in range(n):
        rng = rng_stream(seed, i)
        if n_shot == 1:
            trials.append(generate_context(testset, n_candidates, rng))
        else:
            trials.append(generate_fewshot_context(testset, n_candidates, n_shot, rng))
    return trials


def count_distinct_contexts(n_categories: int, samples_per_category: int, n_candidates: int) -> int:
    """Exact number of distinct one-shot episodes (order-sensitive candidates).

    positive category x ordered (recognizing, positive-candidate) pair x
    slot for the positive x ordered negative-category placement x one
    sample choice per negative.
    """
    sc, k, L = n_categories, samples_per_category, n_candidates
    if sc < L:
        raise ContractError(f"need at least {L} categories, got {sc}")
    if k < 2:
        return 0
    return sc * k * (k - 1) * L * math.perm(sc - 1, L - 1) * k ** (L - 1)


# -- trial manifests -----------------------------------------------------------


def save_manifest(contexts: list, path) -> None:
    """Write trials as a canonical JSON array (byte-stable for a fixed input)."""
    entries = [
        {
            "recognizing": list(c.recognizing),
            "candidates": list(c.candidates),
            "answer_index": c.answer_index,
        }
        for c in contexts
    ]
    Path(path).write_text(json.dumps(entries, sort_keys=True, indent=1) + "\n")


def load_manifest(path) -> list:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"trial manifest {p} not found")
    try:
        entries = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise DataError(f"{p}: manifest must be a JSON array")
    contexts = []
    for i, e in enumerate(entries):
        try:
            rec = list(e["recognizing"])
            cand = list(e["candidates"])
            ans = int(e["answer_index"])
        except (TypeError, KeyError) as exc:
            raise DataError(f"{p}: malformed entry {i}: {exc}") from exc
        if not 0 <= ans < len(cand):
            raise DataError(f"{p}: entry {i} answer_index {ans} out of range")
        labels = [NEGATIVE] * len(cand)
        labels[ans] = POSITIVE
        contexts.append(Context(rec, cand, labels))
    return contexts
