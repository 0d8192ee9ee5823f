"""Model selection rules and benchmark result aggregation.

Three rules pick a (run, checkpoint) given the runs of one trial:
training-domain validation, leave-one-domain-out cross-validation, and the
test-domain oracle.  All maximize their score with ties broken by earliest
step, then lowest run index.  Aggregation across trials reports mean and
standard error of target accuracy as percentages with one decimal.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cdga.training import BenchmarkRun

RULE_TRAIN_VAL = "train_validation"
RULE_LEAVE_ONE_OUT = "leave_one_out"
RULE_ORACLE = "oracle"
ALL_RULES = (RULE_TRAIN_VAL, RULE_LEAVE_ONE_OUT, RULE_ORACLE)


class SelectionError(ValueError):
    """The runs given to a selection rule cannot support it."""


@dataclass(frozen=True)
class SelectionResult:
    run_index: int
    step: int
    score: float
    target_accuracy: float
    hparam_index: int | None = None


def _best(candidates: Iterable[tuple[float, int, int, float]]) -> tuple[float, int, int, float]:
    """Pick max score; ties prefer the earliest step, then lowest run index.

    Candidates are (score, step, run_index, target_acc) tuples.
    """
    ranked = sorted(candidates, key=lambda c: (-c[0], c[1], c[2]))
    if not ranked:
        raise SelectionError("no checkpoints to select from")
    return ranked[0]


def select_training_domain_validation(runs: Sequence[BenchmarkRun]) -> SelectionResult:
    """Maximize the mean validation accuracy across training domains."""
    candidates = []
    for ri, run in enumerate(runs):
        for ckpt in run.checkpoints:
            if not ckpt.train_val_acc:
                continue
            score = float(np.mean(list(ckpt.train_val_acc.values())))
            candidates.append((score, ckpt.step, ri, ckpt.target_acc))
    score, step, ri, target = _best(candidates)
    return SelectionResult(run_index=ri, step=step, score=score, target_accuracy=target,
                           hparam_index=runs[ri].config.hparam_index)


def select_oracle(runs: Sequence[BenchmarkRun]) -> SelectionResult:
    """Maximize target accuracy directly (upper bound, not a fair rule)."""
    candidates = []
    for ri, run in enumerate(runs):
        for ckpt in run.checkpoints:
            candidates.append((ckpt.target_acc, ckpt.step, ri, ckpt.target_acc))
    score, step, ri, target = _best(candidates)
    return SelectionResult(run_index=ri, step=step, score=score, target_accuracy=target,
                           hparam_index=runs[ri].config.hparam_index)


def select_leave_one_domain_out(runs: Sequence[BenchmarkRun]) -> SelectionResult:
    """Pick the hyperparameter choice whose held-out-domain runs average best.

    ``runs`` mixes full runs (holdout_domain None) with leave-one-out runs;
    they are grouped by hparam_index.  Each holdout run contributes its
    final checkpoint's left-out-domain accuracy; the winning choice (ties:
    lowest hparam index) reports its full run's final-checkpoint target
    accuracy.
    """
    full: dict[int, tuple[int, BenchmarkRun]] = {}
    held: dict[int, list[BenchmarkRun]] = {}
    for ri, run in enumerate(runs):
        h = run.config.hparam_index
        if run.config.holdout_domain is None:
            if h not in full:
                full[h] = (ri, run)
        else:
            held.setdefault(h, []).append(run)
    if not held:
        raise SelectionError("leave-one-out selection needs held-out-domain runs")

    scored: list[tuple[float, int]] = []
    for h in sorted(full):
        sub = held.get(h, [])
        if not sub:
            continue
        if len(sub[0].config.train_domains) < 2:
            raise SelectionError("leave-one-out needs at least 2 training domains")
        accs = []
        for run in sub:
            if not run.checkpoints:
                continue
            acc = run.checkpoints[-1].leave_out_acc
            if acc is None:
                raise SelectionError("held-out run has no leave-out accuracy")
            accs.append(acc)
        if not accs:
            continue
        scored.append((float(np.mean(accs)), h))
    if not scored:
        raise SelectionError("no hyperparameter choice has usable held-out runs")
    scored.sort(key=lambda s: (-s[0], s[1]))
    score, h = scored[0]
    ri, run = full[h]
    if not run.checkpoints:
        raise SelectionError(f"winning hyperparameter choice {h} has no full-run checkpoints")
    last = run.checkpoints[-1]
    return SelectionResult(run_index=ri, step=last.step, score=score,
                           target_accuracy=last.target_acc, hparam_index=h)


SELECTION_RULES = {
    RULE_TRAIN_VAL: select_training_domain_validation,
    RULE_LEAVE_ONE_OUT: select_leave_one_domain_out,
    RULE_ORACLE: select_oracle,
}


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (population std over sqrt n) in percent."""
    arr = np.asarray(values, dtype=np.float64) * 100.0
    if arr.size == 0:
        raise ValueError("cannot aggregate zero trials")
    return float(arr.mean()), float(arr.std(ddof=0) / np.sqrt(arr.size))


def format_mean_stderr(values: Sequence[float]) -> str:
    mean, se = mean_stderr(values)
    return f"{mean:.1f} ± {se:.1f}"


@dataclass
class ResultTable:
    """Per-target accuracy table: rows are algorithms, columns targets + Avg."""

    selection_rule: str
    targets: tuple[str, ...]
    algorithms: tuple[str, ...] = ()
    trials: dict = field(default_factory=dict)  # (algorithm, target) -> [acc...]

    def add(self, algorithm: str, target: str, accuracy: float) -> None:
        if target not in self.targets:
            raise KeyError(f"unknown target {target!r}")
        if algorithm not in self.algorithms:
            self.algorithms = self.algorithms + (algorithm,)
        self.trials.setdefault((algorithm, target), []).append(accuracy)

    def cell(self, algorithm: str, target: str) -> str:
        values = self.trials.get((algorithm, target))
        if not values:
            return "X"
        return format_mean_stderr(values)

    def average(self, algorithm: str) -> str:
        means = []
        for target in self.targets:
            values = self.trials.get((algorithm, target))
            if not values:
                return "X"
            means.append(mean_stderr(values)[0])
        return f"{float(np.mean(means)):.1f}"

    @property
    def complete(self) -> bool:
        return all(
            self.trials.get((a, t)) for a in self.algorithms for t in self.targets
        )

    def rows(self) -> list[list[str]]:
        header = ["Algorithm", *self.targets, "Avg"]
        body = [
            [alg, *(self.cell(alg, t) for t in self.targets), self.average(alg)]
            for alg in self.algorithms
        ]
        return [header, *body]

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerows(self.rows())

    def render_text(self) -> str:
        rows = self.rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = [f"Model selection: {self.selection_rule}"]
        for r in rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "selection_rule": self.selection_rule,
            "targets": list(self.targets),
            "algorithms": list(self.algorithms),
            "cells": {
                f"{alg}|{t}": self.trials.get((alg, t), [])
                for alg in self.algorithms
                for t in self.targets
            },
        }


def aggregate_trials(
    selection_rule: str,
    targets: Sequence[str],
    runs_by_cell: dict,
) -> ResultTable:
    """Apply a rule per (algorithm, target, trial) and collect a table.

    ``runs_by_cell`` maps (algorithm, target, trial) to that trial's runs.
    Cells whose selection fails stay empty and render as "X".
    """
    table = ResultTable(selection_rule=selection_rule, targets=tuple(targets))
    rule = SELECTION_RULES[selection_rule]
    for (algorithm, target, _trial), runs in sorted(runs_by_cell.items()):
        try:
            result = rule(runs)
        except SelectionError:
            if algorithm not in table.algorithms:
                table.algorithms = table.algorithms + (algorithm,)
            continue
        table.add(algorithm, target, result.target_accuracy)
    return table
