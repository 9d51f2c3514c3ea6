import numpy as np
import pytest

from rsgames import game_core
from rsgames.game_core import MatrixGame, SaddlePoint, best_response_gap, solve_zero_sum


def closed_form_2x2(M):
    """Independent oracle: pure-saddle scan, else the textbook formula."""
    M = np.asarray(M, dtype=float)
    for r in range(2):
        for c in range(2):
            if M[r, c] == M[:, c].max() and M[r, c] == M[r, :].min():
                return float(M[r, c])
    a, b = M[0]
    c, d = M[1]
    return float((a * d - b * c) / (a - b - c + d))


class TestSolveZeroSum:
    def test_matching_pennies(self):
        sp = solve_zero_sum(MatrixGame([[1.0, -1.0], [-1.0, 1.0]]))
        np.testing.assert_allclose(sp.row_strategy, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(sp.col_strategy, [0.5, 0.5], atol=1e-12)
        assert abs(sp.value) <= 1e-12

    def test_singleton(self):
        sp = solve_zero_sum(MatrixGame([[5.0]]))
        assert sp.value == 5.0
        np.testing.assert_allclose(sp.row_strategy, [1.0])
        np.testing.assert_allclose(sp.col_strategy, [1.0])

    def test_2x2_mixed(self):
        sp = solve_zero_sum(MatrixGame([[3.0, 1.0], [0.0, 2.0]]))
        assert abs(sp.value - 1.5) <= 1e-12
        np.testing.assert_allclose(sp.row_strategy, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(sp.col_strategy, [0.25, 0.75], atol=1e-12)

    def test_2x2_epsilon_grid_cross_check(self):
        # exhaustive mixed-strategy grid bounds the value from both sides
        M = np.array([[3.0, 1.0], [0.0, 2.0]])
        ps = np.linspace(0.0, 1.0, 401)
        F = np.stack([1.0 - ps, ps], axis=1)
        payoff = F @ M @ F.T
        upper = payoff.max(axis=0).min()  # min over g of max over f
        lower = payoff.min(axis=1).max()
        sp = solve_zero_sum(MatrixGame(M))
        assert lower - 1e-9 <= sp.value <= upper + 1e-9

    def test_lp_matches_closed_form(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            M = rng.normal(size=(2, 2)) * 5.0
            via_lp = solve_zero_sum(MatrixGame(M), method="lp")
            assert abs(via_lp.value - closed_form_2x2(M)) <= 1e-12

    def test_random_games_saddle_gap(self):
        rng = np.random.default_rng(22)
        for _ in range(150):
            m, n = rng.integers(2, 7, size=2)
            game = MatrixGame(rng.normal(size=(m, n)) * 10.0)
            sp = solve_zero_sum(game)
            assert best_response_gap(game, sp.row_strategy, sp.col_strategy) <= 1e-8

    def test_transposition_negation(self):
        rng = np.random.default_rng(23)
        for _ in range(30):
            M = rng.normal(size=(3, 4))
            v = solve_zero_sum(MatrixGame(M)).value
            v_swapped = solve_zero_sum(MatrixGame(-M.T)).value
            assert abs(v_swapped + v) <= 1e-9

    def test_constant_shift(self):
        rng = np.random.default_rng(24)
        M = rng.normal(size=(4, 3))
        base = solve_zero_sum(MatrixGame(M))
        shifted_game = MatrixGame(M + 7.25)
        shifted = solve_zero_sum(shifted_game)
        assert abs(shifted.value - base.value - 7.25) <= 1e-9
        gap = best_response_gap(shifted_game, base.row_strategy, base.col_strategy)
        assert gap <= 1e-9

    def test_deterministic_tie_break(self):
        # all strategies optimal; lowest action indices win
        sp = solve_zero_sum(MatrixGame(np.zeros((3, 3))))
        np.testing.assert_allclose(sp.row_strategy, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(sp.col_strategy, [1.0, 0.0, 0.0])
        again = solve_zero_sum(MatrixGame(np.zeros((3, 3))))
        np.testing.assert_array_equal(sp.row_strategy, again.row_strategy)

    def test_dominated_rows_not_pruned(self):
        # row 0 dominated; solver must still satisfy the gap bound
        game = MatrixGame([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [3.0, 1.0, 2.0]])
        sp = solve_zero_sum(game)
        assert best_response_gap(game, sp.row_strategy, sp.col_strategy) <= 1e-8

    def test_rejects_bad_payoff(self):
        with pytest.raises(ValueError):
            MatrixGame(np.array([[np.inf, 0.0]]))
        with pytest.raises(ValueError):
            MatrixGame(np.zeros((0, 2)))


class TestBestResponseGap:
    def test_saddle_has_zero_gap(self):
        game = MatrixGame([[1.0, -1.0], [-1.0, 1.0]])
        assert best_response_gap(game, [0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_unilateral_deviation(self):
        game = MatrixGame([[1.0, -1.0], [-1.0, 1.0]])
        # row cannot improve against the mixed column, but the column can
        assert abs(best_response_gap(game, [1.0, 0.0], [0.5, 0.5]) - 1.0) <= 1e-12

    def test_singleton(self):
        assert best_response_gap(MatrixGame([[5.0]]), [1.0], [1.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            best_response_gap(MatrixGame([[1.0, 0.0]]), [1.0, 0.0], [1.0, 0.0])


class TestSaddlePoint:
    def test_validates_probabilities(self):
        with pytest.raises(ValueError):
            SaddlePoint(np.array([0.7, 0.7]), np.array([1.0]), 0.0)
        with pytest.raises(ValueError):
            SaddlePoint(np.array([-0.1, 1.1]), np.array([1.0]), 0.0)
