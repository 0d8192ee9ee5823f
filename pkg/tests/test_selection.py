"""Selection rules, tie-breaking, and result table aggregation."""

import itertools

import numpy as np
import pytest

from cdga.models import ModelSpec
from cdga.selection import (
    ALL_RULES,
    RULE_LEAVE_ONE_OUT,
    RULE_ORACLE,
    RULE_TRAIN_VAL,
    ResultTable,
    SELECTION_RULES,
    SelectionError,
    aggregate_trials,
    format_mean_stderr,
    mean_stderr,
    select_leave_one_domain_out,
    select_oracle,
    select_training_domain_validation,
)
from cdga.training import BenchmarkRun, Checkpoint, TrainConfig


def make_run(checkpoints, hparam_index=0, holdout=None, trial=0,
             train_domains=("a", "b")):
    """checkpoints: list of (step, {domain: val_acc}, leave_out, target)."""
    config = TrainConfig(
        model=ModelSpec(),
        hparams={"lr": 1e-3},
        seed=trial,
        target_domain="t",
        train_domains=train_domains,
        holdout_domain=holdout,
        hparam_index=hparam_index,
        trial_index=trial,
    )
    return BenchmarkRun(
        config=config,
        checkpoints=[
            Checkpoint(step=s, train_val_acc=dict(v), leave_out_acc=lo, target_acc=t)
            for s, v, lo, t in checkpoints
        ],
    )


class TestTrainValidation:
    def test_picks_best_mean_validation(self):
        runs = [
            make_run([(10, {"a": 0.6, "b": 0.8}, None, 0.50),
                      (20, {"a": 0.7, "b": 0.9}, None, 0.55)]),
            make_run([(10, {"a": 0.9, "b": 0.9}, None, 0.40)], hparam_index=1),
        ]
        result = select_training_domain_validation(runs)
        assert (result.run_index, result.step) == (1, 10)
        assert result.score == pytest.approx(0.9)
        assert result.target_accuracy == pytest.approx(0.40)
        assert result.hparam_index == 1

    def test_selection_ignores_target_accuracy(self):
        # The fair rule must not peek: a checkpoint with sky-high target
        # accuracy but worse validation loses.
        runs = [
            make_run([(10, {"a": 0.8, "b": 0.8}, None, 0.30),
                      (20, {"a": 0.5, "b": 0.5}, None, 0.99)]),
        ]
        result = select_training_domain_validation(runs)
        assert result.step == 10
        assert result.target_accuracy == pytest.approx(0.30)

    def test_tie_prefers_earliest_step_then_lowest_run(self):
        tied = [(10, {"a": 0.7}, None, 0.1), (30, {"a": 0.7}, None, 0.2)]
        runs = [make_run(tied[::-1]), make_run(tied)]
        result = select_training_domain_validation(runs)
        assert (result.run_index, result.step) == (0, 10)
        runs2 = [make_run([tied[0]]), make_run([tied[0]])]
        assert select_training_domain_validation(runs2).run_index == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            runs = []
            for h in range(3):
                ckpts = [
                    (10 * (k + 1),
                     {"a": round(float(rng.random()), 2),
                      "b": round(float(rng.random()), 2)},
                     None,
                     float(rng.random()))
                    for k in range(4)
                ]
                runs.append(make_run(ckpts, hparam_index=h))
            best = min(
                (
                    (-np.mean(list(c.train_val_acc.values())), c.step, ri)
                    for ri, run in enumerate(runs)
                    for c in run.checkpoints
                ),
            )
            result = select_training_domain_validation(runs)
            assert (result.run_index, result.step) == (best[2], best[1])

    def test_no_checkpoints_is_error(self):
        with pytest.raises(SelectionError):
            select_training_domain_validation([make_run([])])


class TestOracle:
    def test_picks_best_target_accuracy(self):
        runs = [
            make_run([(10, {"a": 0.99}, None, 0.40)]),
            make_run([(10, {"a": 0.10}, None, 0.80)], hparam_index=1),
        ]
        result = select_oracle(runs)
        assert result.run_index == 1
        assert result.target_accuracy == pytest.approx(0.80)

    def test_oracle_dominates_fair_rules(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            runs = [
                make_run(
                    [
                        (10 * (k + 1),
                         {"a": float(rng.random()), "b": float(rng.random())},
                         None,
                         float(rng.random()))
                        for k in range(3)
                    ],
                    hparam_index=h,
                )
                for h in range(3)
            ]
            oracle = select_oracle(runs).target_accuracy
            fair = select_training_domain_validation(runs).target_accuracy
            assert oracle >= fair


class TestLeaveOneOut:
    def runs_fixture(self):
        # Choice 0: held-out accs (0.5, 0.7) -> 0.6; choice 1: (0.8, 0.6) -> 0.7.
        return [
            make_run([(10, {"a": 0.5, "b": 0.5}, None, 0.41),
                      (20, {"a": 0.5, "b": 0.5}, None, 0.42)], hparam_index=0),
            make_run([(20, {"b": 0.9}, 0.5, 0.0)], hparam_index=0, holdout="a"),
            make_run([(20, {"a": 0.9}, 0.7, 0.0)], hparam_index=0, holdout="b"),
            make_run([(10, {"a": 0.5, "b": 0.5}, None, 0.61),
                      (20, {"a": 0.5, "b": 0.5}, None, 0.62)], hparam_index=1),
            make_run([(20, {"b": 0.9}, 0.8, 0.0)], hparam_index=1, holdout="a"),
            make_run([(20, {"a": 0.9}, 0.6, 0.0)], hparam_index=1, holdout="b"),
        ]

    def test_averages_final_holdout_accuracy(self):
        result = select_leave_one_domain_out(self.runs_fixture())
        assert result.hparam_index == 1
        assert result.score == pytest.approx(0.7)
        # Winner reports its FULL run's final checkpoint.
        assert result.target_accuracy == pytest.approx(0.62)
        assert result.step == 20
        assert result.run_index == 3

    def test_only_final_checkpoint_counts(self):
        runs = self.runs_fixture()
        # A stellar early leave-out acc on choice 0 must not matter.
        runs[1] = make_run(
            [(10, {"b": 0.9}, 1.0, 0.0), (20, {"b": 0.9}, 0.5, 0.0)],
            hparam_index=0, holdout="a",
        )
        assert select_leave_one_domain_out(runs).hparam_index == 1

    def test_tie_prefers_lowest_hparam_index(self):
        runs = self.runs_fixture()
        runs[4] = make_run([(20, {"b": 0.9}, 0.5, 0.0)], hparam_index=1, holdout="a")
        runs[5] = make_run([(20, {"a": 0.9}, 0.7, 0.0)], hparam_index=1, holdout="b")
        result = select_leave_one_domain_out(runs)
        assert result.hparam_index == 0
        assert result.target_accuracy == pytest.approx(0.42)

    def test_needs_holdout_runs(self):
        with pytest.raises(SelectionError):
            select_leave_one_domain_out(
                [make_run([(10, {"a": 0.5}, None, 0.5)])]
            )

    def test_rejects_single_train_domain(self):
        runs = [
            make_run([(10, {"a": 0.5}, None, 0.5)], train_domains=("a",)),
            make_run([(10, {}, 0.5, 0.0)], holdout="a", train_domains=("a",)),
        ]
        with pytest.raises(SelectionError):
            select_leave_one_domain_out(runs)

    def test_missing_leave_out_accuracy_is_error(self):
        runs = self.runs_fixture()
        runs[1] = make_run([(20, {"b": 0.9}, None, 0.0)], hparam_index=0, holdout="a")
        with pytest.raises(SelectionError):
            select_leave_one_domain_out(runs)


class TestAggregation:
    def test_mean_stderr_population_std(self):
        mean, se = mean_stderr([0.85, 0.86, 0.84])
        assert mean == pytest.approx(85.0)
        assert se == pytest.approx(np.std([85.0, 86.0, 84.0]) / np.sqrt(3))

    def test_formatting(self):
        assert format_mean_stderr([0.854, 0.856]) == "85.5 ± 0.1"
        assert format_mean_stderr([0.885, 0.885]) == "88.5 ± 0.0"
        assert format_mean_stderr([0.5]) == "50.0 ± 0.0"

    def test_empty_trials_error(self):
        with pytest.raises(ValueError):
            mean_stderr([])

    def table_fixture(self):
        table = ResultTable(selection_rule=RULE_TRAIN_VAL, targets=("art", "photo"))
        for acc in (0.854, 0.856):
            table.add("ERM", "art", acc)
        table.add("ERM", "photo", 0.7)
        return table

    def test_cells_and_average(self):
        table = self.table_fixture()
        assert table.cell("ERM", "art") == "85.5 ± 0.1"
        assert table.cell("ERM", "photo") == "70.0 ± 0.0"
        assert table.average("ERM") == f"{(85.5 + 70.0) / 2:.1f}"
        assert table.complete

    def test_missing_cell_renders_x_and_poisons_average(self):
        table = ResultTable(selection_rule=RULE_ORACLE, targets=("art", "photo"))
        table.add("CDGA", "art", 0.9)
        assert table.cell("CDGA", "photo") == "X"
        assert table.average("CDGA") == "X"
        assert not table.complete

    def test_unknown_target_rejected(self):
        with pytest.raises(KeyError):
            self.table_fixture().add("ERM", "sketch", 0.5)

    def test_csv_layout(self, tmp_path):
        table = self.table_fixture()
        out = tmp_path / "sub" / "table.csv"
        table.to_csv(out)
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "Algorithm,art,photo,Avg"
        assert rows[1] == "ERM,85.5 ± 0.1,70.0 ± 0.0,77.8"

    def test_render_text_names_rule(self):
        text = self.table_fixture().render_text()
        assert text.startswith("Model selection: train_validation\n")
        assert "85.5 ± 0.1" in text

    def test_aggregate_trials_collects_cells(self):
        runs_by_cell = {}
        for trial, acc in enumerate((0.7, 0.8)):
            runs_by_cell[("ERM", "art", trial)] = [
                make_run([(10, {"a": 0.9, "b": 0.9}, None, acc)])
            ]
        runs_by_cell[("ERM", "photo", 0)] = [make_run([])]  # selection fails
        table = aggregate_trials(RULE_TRAIN_VAL, ["art", "photo"], runs_by_cell)
        assert table.cell("ERM", "art") == "75.0 ± 3.5"
        assert table.cell("ERM", "photo") == "X"
        assert not table.complete

    def test_rule_registry(self):
        assert set(ALL_RULES) == {RULE_TRAIN_VAL, RULE_LEAVE_ONE_OUT, RULE_ORACLE}
        assert set(SELECTION_RULES) == set(ALL_RULES)


class TestRulesAgreeOnDominantRun:
    def test_all_rules_pick_the_clear_winner(self):
        # One hyperparameter choice dominates on every score; every rule
        # must select it.
        runs = []
        for h, level in enumerate((0.5, 0.9)):
            runs.append(
                make_run([(10, {"a": level, "b": level}, None, level)],
                         hparam_index=h)
            )
            for holdout in ("a", "b"):
                visible = "b" if holdout == "a" else "a"
                runs.append(
                    make_run([(10, {visible: level}, level, 0.0)],
                             hparam_index=h, holdout=holdout)
                )
        for rule in ALL_RULES:
            full_only = [r for r in runs if r.config.holdout_domain is None]
            picked = SELECTION_RULES[rule](
                runs if rule == RULE_LEAVE_ONE_OUT else full_only
            )
            assert picked.hparam_index == 1, rule
            assert picked.target_accuracy == pytest.approx(0.9)
