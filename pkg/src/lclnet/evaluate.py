"""Accuracy over trial sets, multi-run aggregation, and 95% confidence
intervals (normal approximation over per-run accuracies)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .nn import predict
from .sampler import generate_test_trials


@dataclass
class EvalReport:
    protocol: str
    runs: int
    accuracies: list
    mean: float
    ci_halfwidth: float
    n_candidates: int
    n_shot: int
    trials_per_run: int
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "runs": self.runs,
            "accuracies": self.accuracies,
            "mean": self.mean,
            "ci_halfwidth": self.ci_halfwidth,
            "n_candidates": self.n_candidates,
            "n_shot": self.n_shot,
            "trials_per_run": self.trials_per_run,
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        rows = [
            ("protocol", self.protocol),
            ("runs", str(self.runs)),
            ("trials/run", str(self.trials_per_run)),
            ("way", str(self.n_candidates)),
            ("shots", str(self.n_shot)),
            ("accuracy", f"{100 * self.mean:.2f} +/- {100 * self.ci_halfwidth:.2f} %"),
        ]
        if self.note:
            rows.append(("note", self.note))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def confidence_interval(accuracies) -> tuple:
    """(mean, 1.96 * s / sqrt(R)) with sample standard deviation (R-1)."""
    accs = list(accuracies)
    if not accs:
        raise ContractError("confidence_interval needs at least one run")
    mean = float(np.mean(accs))
    if len(accs) < 2:
        return mean, 0.0
    s = float(np.std(accs, ddof=1))
    return mean, 1.96 * s / math.sqrt(len(accs))


def evaluate_trials(score_fn, trials) -> float:
    """Fraction of trials where the minimum-activation candidate is the answer.

    `score_fn(ctx)` returns the activation vector for one trial; lower
    means more likely positive.
    """
    if not trials:
        raise ContractError("empty trial list")
    correct = sum(1 for t in trials if predict(score_fn(t)) == t.answer_index)
    return correct / len(trials)


def model_score_fn(model, dataset):
    """Standard scorer: few-shot activation sums in eval mode."""
    return lambda ctx: model.multishot_activations(dataset, ctx)


def evaluate_protocol(
    score_fn,
    protocol: str,
    n_candidates: int,
    n_shot: int,
    runs: int = 100,
    testset=None,
    base_seed: int = 0,
    fixed_trials=None,
) -> EvalReport:
    """Aggregate accuracy over runs.

    "variant": each run regenerates its trial set from `testset` with seed
    base_seed + run, so one integer reproduces the whole report.
    "bpl": the fixed `fixed_trials` manifest is scored once (the eval path
    is deterministic, so repeated runs would be identical) and the report
    says so.
    """
    if protocol == "variant":
        if testset is None:
            raise ContractError("variant protocol needs a test dataset")
        accs = []
        trials_per_run = 0
        for r in range(runs):
            trials = generate_test_trials(testset, n_candidates, n_shot, seed=base_seed + r)
            trials_per_run = len(trials)
            accs.append(evaluate_trials(score_fn, trials))
        note = ""
    elif protocol == "bpl":
        if fixed_trials is None:
            raise ContractError("bpl protocol needs a fixed trial manifest")
        accs = [evaluate_trials(score_fn, fixed_trials)]
        trials_per_run = len(fixed_trials)
        note = "deterministic eval on fixed trials; runs collapsed to 1"
    else:
        raise ContractError(f"unknown protocol {protocol!r}")
    mean, hw = confidence_interval(accs)
    return EvalReport(
        protocol=protocol,
        runs=len(accs),
        accuracies=accs,
        mean=mean,
        ci_halfwidth=hw,
        n_candidates=n_candidates,
        n_shot=n_shot,
        trials_per_run=trials_per_run,
        note=note,
    )
