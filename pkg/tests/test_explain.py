import itertools
import math

import numpy as np
import pytest

from shortfall.errors import ValidationError
from shortfall.explain import (
    Player,
    exact_shapley,
    shapley_sampling,
    waterfall_export,
    waterfall_svg,
    window_players,
)


def singleton_players(n):
    return [Player(label=f"x{i}", indices=(i,)) for i in range(n)]


def brute_force_shapley(fn, x, baseline, n):
    """Definition-level oracle: average marginal over all n! orderings."""
    contributions = np.zeros(n)
    for perm in itertools.permutations(range(n)):
        current = baseline.copy()
        prev = fn(current)
        for j in perm:
            current[j] = x[j]
            value = fn(current)
            contributions[j] += value - prev
            prev = value
    return contributions / math.factorial(n)


class TestExact:
    def test_matches_permutation_definition(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(5, 5))

        def fn(v):
            return float(v @ A @ v + v.sum())

        x = rng.normal(size=5)
        baseline = np.zeros(5)
        report = exact_shapley(fn, x, baseline, singleton_players(5))
        oracle = brute_force_shapley(fn, x, baseline, 5)
        np.testing.assert_allclose(
            [v for _l, v in report.contributions], oracle, atol=1e-10)

    def test_efficiency(self):
        rng = np.random.default_rng(1)

        def fn(v):
            return float(np.tanh(v).sum() + v[0] * v[1])

        x, baseline = rng.normal(size=4), rng.normal(size=4)
        report = exact_shapley(fn, x, baseline, singleton_players(4))
        assert abs(report.base_value + report.total()
                   - report.prediction) < 1e-10

    def test_symmetry(self):
        # Players 0 and 1 enter fn identically, so equal values.
        def fn(v):
            return float(v[0] + v[1] + 3.0 * v[0] * v[1] + 2.0 * v[2])

        x = np.array([1.0, 1.0, 2.0])
        baseline = np.zeros(3)
        report = exact_shapley(fn, x, baseline, singleton_players(3))
        values = dict(report.contributions)
        assert abs(values["x0"] - values["x1"]) < 1e-12

    def test_dummy_player_gets_zero(self):
        def fn(v):
            return float(v[0] ** 2 + v[2])

        x = np.array([2.0, 5.0, 1.0])
        baseline = np.array([0.0, -3.0, 0.0])
        report = exact_shapley(fn, x, baseline, singleton_players(3))
        assert abs(dict(report.contributions)["x1"]) < 1e-12

    def test_linear_model_gives_coefficient_times_delta(self):
        w = np.array([2.0, -1.0, 0.5])

        def fn(v):
            return float(w @ v)

        x = np.array([1.0, 2.0, 3.0])
        baseline = np.array([0.5, 0.5, 0.5])
        report = exact_shapley(fn, x, baseline, singleton_players(3))
        np.testing.assert_allclose(
            [v for _l, v in report.contributions], w * (x - baseline), atol=1e-12)

    def test_player_limit(self):
        with pytest.raises(ValidationError):
            exact_shapley(lambda v: 0.0, np.zeros(13), np.zeros(13),
                          singleton_players(13))


class TestSampling:
    def make_fixture(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(8, 8)) * 0.3
        w = rng.normal(size=8)

        def fn(v):
            return float(w @ v + v @ A @ v)

        x = rng.normal(size=8)
        baseline = rng.normal(size=8)
        return fn, x, baseline

    def test_within_five_percent_of_exact_at_200_permutations(self):
        fn, x, baseline = self.make_fixture()
        players = singleton_players(8)
        exact = exact_shapley(fn, x, baseline, players)
        sampled = shapley_sampling(fn, x, baseline, players,
                                   n_permutations=200, seed=0)
        scale = max(abs(v) for _l, v in exact.contributions)
        for (_l, a), (_l2, b) in zip(sampled.contributions, exact.contributions):
            assert abs(a - b) <= 0.05 * scale

    def test_efficiency_is_exact(self):
        fn, x, baseline = self.make_fixture()
        report = shapley_sampling(fn, x, baseline, singleton_players(8),
                                  n_permutations=13, seed=5)
        assert abs(report.base_value + report.total()
                   - report.prediction) <= 1e-9

    def test_seed_determinism(self):
        fn, x, baseline = self.make_fixture()
        a = shapley_sampling(fn, x, baseline, singleton_players(8),
                             n_permutations=20, seed=9)
        b = shapley_sampling(fn, x, baseline, singleton_players(8),
                             n_permutations=20, seed=9)
        assert a.contributions == b.contributions

    def test_group_player_moves_coordinates_together(self):
        # One player owning both interacting coordinates captures the
        # full pairwise effect.
        def fn(v):
            return float(v[0] * v[1] + v[2])

        players = [Player("pair", (0, 1)), Player("solo", (2,))]
        x = np.array([2.0, 3.0, 1.0])
        baseline = np.zeros(3)
        report = shapley_sampling(fn, x, baseline, players,
                                  n_permutations=10, seed=0)
        values = dict(report.contributions)
        assert abs(values["pair"] - 6.0) < 1e-9
        assert abs(values["solo"] - 1.0) < 1e-9

    def test_overlapping_players_rejected(self):
        players = [Player("a", (0, 1)), Player("b", (1,))]
        with pytest.raises(ValidationError):
            shapley_sampling(lambda v: 0.0, np.zeros(2), np.zeros(2), players)


class TestWindowPlayers:
    def test_default_cell_count(self):
        players = window_players()
        assert len(players) == 588
        owned = sorted(i for p in players for i in p.indices)
        assert owned == list(range(588))

    def test_labels_name_feature_and_lag(self):
        players = window_players()
        labels = [p.label for p in players]
        assert "qt_behind_release (27 days ago)" in labels
        assert "qt_behind_release (today)" in labels

    def test_id_players_appended(self):
        players = window_players(include_ids=True)
        assert len(players) == 591
        assert players[-1].label == "part_id"


class TestWaterfall:
    def make_report(self):
        def fn(v):
            return float((np.arange(1, 7) * v).sum())

        x, baseline = np.ones(6), np.zeros(6)
        return exact_shapley(fn, x, baseline, singleton_players(6))

    def test_rows_aggregate_tail(self):
        report = self.make_report()
        rows, text = waterfall_export(report, top_k=3)
        assert len(rows) == 4
        assert rows[-1][0] == "all other features"
        assert abs(sum(v for _l, v in rows)
                   - (report.prediction - report.base_value)) < 1e-9
        assert "baseline prediction" in text

    def test_svg_is_written_and_well_formed(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "waterfall.svg"
        waterfall_svg(report, top_k=4, path=path)
        content = path.read_text()
        assert content.startswith("<svg")
        assert content.rstrip().endswith("</svg>")
        assert content.count("<rect") == 5
