"""Zero-sum matrix games: exact saddle points in mixed strategies.

Orientation is fixed throughout the package: the row player (f) maximizes
f @ payoff @ g, the column player (g) minimizes.  2x2 games without a pure
saddle are solved in closed form; everything else goes through a
self-contained dense simplex on the classical LP formulation.

Tie-breaking is deterministic: among pure saddles the lowest (row, col)
index pair wins, so degenerate games (e.g. the all-zero matrix) resolve to
the first action of each player and leave baseline behaviour untouched.
"""

from dataclasses import dataclass

import numpy as np

from .numkit import NumericalError

SADDLE_GAP_TOL = 1e-9


@dataclass(frozen=True)
class MatrixGame:
    """Payoff matrix, row maximizer vs column minimizer."""

    payoff: np.ndarray

    def __post_init__(self):
        payoff = np.asarray(self.payoff, dtype=float)
        if payoff.ndim != 2 or payoff.shape[0] < 1 or payoff.shape[1] < 1:
            raise ValueError(f"payoff must be a 2-D matrix, got shape {payoff.shape}")
        if not np.all(np.isfinite(payoff)):
            raise ValueError("payoff has non-finite entries")
        object.__setattr__(self, "payoff", payoff)

    @property
    def shape(self):
        return self.payoff.shape


@dataclass(frozen=True)
class SaddlePoint:
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    value: float

    def __post_init__(self):
        f = np.asarray(self.row_strategy, dtype=float)
        g = np.asarray(self.col_strategy, dtype=float)
        for name, p in (("row_strategy", f), ("col_strategy", g)):
            if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} is not a probability vector: {p}")
        if not np.isfinite(self.value):
            raise ValueError("value is not finite")
        object.__setattr__(self, "row_strategy", f)
        object.__setattr__(self, "col_strategy", g)


def _pure_saddle(M: np.ndarray):
    """First (row-major) entry that is a column max and a row min, or None."""
    col_max = M.max(axis=0)
    row_min = M.min(axis=1)
    for r in range(M.shape[0]):
        for c in range(M.shape[1]):
            if M[r, c] == col_max[c] and M[r, c] == row_min[r]:
                return r, c
    return None


def _solve_2x2_mixed(M: np.ndarray) -> SaddlePoint:
    # valid only when no pure saddle exists, so the denominator is nonzero
    a, b = M[0]
    c, d = M[1]
    den = a - b - c + d
    f = np.array([(d - c) / den, (a - b) / den])
    g = np.array([(d - b) / den, (a - c) / den])
    v = (a * d - b * c) / den
    f = np.clip(f, 0.0, 1.0)
    g = np.clip(g, 0.0, 1.0)
    return SaddlePoint(f / f.sum(), g / g.sum(), float(v))


def _simplex_max(A: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Maximize c@x s.t. A@x <= b, x >= 0 with b >= 0 (slack start).

    Returns (x, duals), duals read off the slack columns at optimality.
    Dantzig entering rule with lowest-index ties; switches to Bland's rule
    after 100 pivots to rule out cycling.
    """
    m, n = A.shape
    # tableau rows: [A | I | b]
    T = np.hstack([A, np.eye(m), b.reshape(-1, 1)])
    cost = np.concatenate([c, np.zeros(m)])
    basis = list(range(n, n + m))
    for it in range(1000):
        reduced = cost - cost[basis] @ T[:, :-1]
        reduced[basis] = 0.0
        if it < 100:
            enter = int(np.argmax(reduced))
        else:  # Bland: first improving index
            improving = np.nonzero(reduced > 1e-11)[0]
            enter = int(improving[0]) if improving.size else int(np.argmax(reduced))
        if reduced[enter] <= 1e-11:
            x = np.zeros(n + m)
            x[basis] = T[:, -1]
            duals = cost[basis] @ T[:, n : n + m]
            return x[:n], duals
        col = T[:, enter]
        ratios = np.full(m, np.inf)
        pos = col > 1e-11
        ratios[pos] = T[pos, -1] / col[pos]
        leave = int(np.argmin(ratios))
        if not np.isfinite(ratios[leave]):
            raise NumericalError("unbounded linear program in matrix-game solve")
        T[leave] /= T[leave, enter]
        for r in range(m):
            if r != leave and T[r, enter] != 0.0:
                T[r] -= T[r, enter] * T[leave]
        basis[leave] = enter
    raise NumericalError("simplex did not terminate on matrix-game LP")


def _solve_lp(M: np.ndarray) -> SaddlePoint:
    """General m x n game via the positive-shift LP and its duals."""
    shift = 1.0 - M.min()
    Mp = M + shift
    m, n = Mp.shape
    # column player: max 1@z  s.t.  Mp@z <= 1, z >= 0; duals give the row player
    z, duals = _simplex_max(Mp, np.ones(m), np.ones(n))
    total = z.sum()
    if total <= 0:
        raise NumericalError("degenerate LP solution in matrix-game solve")
    g = np.clip(z, 0.0, None)
    g /= g.sum()
    f = np.clip(duals, 0.0, None)
    if f.sum() <= 0:
        raise NumericalError("degenerate dual solution in matrix-game solve")
    f /= f.sum()
    value = 1.0 / total - shift
    return SaddlePoint(f, g, float(value))


def solve_zero_sum(game: MatrixGame, method: str = "auto") -> SaddlePoint:
    """Mixed saddle point of a finite zero-sum game.

    method="auto" tries pure-saddle detection, then the 2x2 closed form,
    then the LP; method="lp" forces the LP path (used to cross-check the
    closed form).
    """
    M = game.payoff
    if method == "auto":
        if M.shape == (1, 1):
            return SaddlePoint(np.ones(1), np.ones(1), float(M[0, 0]))
        pure = _pure_saddle(M)
        if pure is not None:
            r, c = pure
            f = np.zeros(M.shape[0])
            g = np.zeros(M.shape[1])
            f[r] = 1.0
            g[c] = 1.0
            return SaddlePoint(f, g, float(M[r, c]))
        if M.shape == (2, 2):
            return _solve_2x2_mixed(M)
    elif method != "lp":
        raise ValueError(f"unknown method {method!r}")
    sp = _solve_lp(M)
    gap = best_response_gap(game, sp.row_strategy, sp.col_strategy)
    if gap > 1e-7:
        raise NumericalError(f"matrix-game LP left a saddle gap of {gap:.3e}")
    return sp


def best_response_gap(game: MatrixGame, f, g) -> float:
    """Largest improvement available to either player by a pure deviation.

    Zero exactly at a saddle point; used as the universal solution check.
    """
    M = game.payoff
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (M.shape[0],) or g.shape != (M.shape[1],):
        raise ValueError(
            f"strategy shapes {f.shape}/{g.shape} do not match game {M.shape}"
        )
    value = f @ M @ g
    row_gap = (M @ g).max() - value
    col_gap = value - (f @ M).min()
    return float(max(row_gap, col_gap, 0.0))
