"""Adversarial inventory market-making under regime switching.

A market maker quotes ask/bid offsets (u_a, u_b) from the mid price; orders
arrive with intensity A * exp(-k * u).  A drift predator pushes the price
against the maker's inventory at w*(q) = -xi * gamma * q, which under CARA
utility is equivalent to raising the variance by xi * gamma (the risk
isomorphism used throughout).  The inventory penalty theta_i(tau, q)
(tau = time to horizon, regime i, integer inventory q in [-Q, Q]) solves

    d theta_i(q) / d tau = 0.5 * gamma * (sigma_i^2 + xi*gamma) * q^2
        - (A / gamma) * C0 * sum_active_sides exp(-gamma * dtheta_side)
        + (1 / gamma) * sum_{j != i} mu_ij * (1 - exp(-gamma*(theta_j - theta_i)))

with theta(0, q) = 0, C0 = (1 + gamma/k)^(-k/gamma), dtheta_ask =
theta(q-1) - theta(q), dtheta_bid = theta(q+1) - theta(q).  Risk terms
raise the penalty, executed flow lowers it, switching mixes regimes.  The
ask is suppressed at q = -Q and the bid at q = +Q.

The substitution v = exp(-gamma * theta) makes the system exactly linear,
dv/dtau = -M v with a constant block generator M (assembled in
:func:`build_generator`), so v(tau) = expm(-M tau) @ 1 is exact for
piecewise-constant switching rates.  The nonlinear form above is kept only
as an independent test oracle.

Quotes come from the per-side first-order condition against the stored
penalty table:

    u_side = (1/gamma) * ln(1 + gamma/k) + dtheta_side,   clamped >= 0,

so spreads widen whenever holding inventory becomes more expensive.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import game_core, numkit, outer_layer
from .game_core import MatrixGame
from .numkit import NumericalError, TimeGrid
from .outer_layer import OuterGameSpec, OuterSolution

SECONDS_PER_YEAR = 365.0 * 86400.0
HOURS_PER_YEAR = 365.0 * 24.0
DAYS_PER_YEAR = 365.0


class AccuracyError(NumericalError):
    """The CARA transform left the positive cone (tolerance exceeded)."""


def _as_generator(rates, N):
    """Return a (N, N) generator: given off-diagonals, diagonal = -row sum."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (N, N):
        raise ValueError(f"rates must be ({N}, {N}), got {rates.shape}")
    off = rates - np.diag(np.diag(rates))
    if np.any(off < 0):
        raise ValueError("switching rates must be nonnegative off-diagonal")
    return off - np.diag(off.sum(axis=1))


@dataclass
class ASModel:
    """Market-making parameters.  Times are in years (365-day year).

    gamma: CARA risk aversion (1/currency)
    xi: predator cost coefficient; drift control w*(q) = -xi*gamma*q
    A: base order-flow intensity (fills/year at zero offset)
    k: offset sensitivity of the fill intensity (1/currency)
    sigmas: per-regime annualized volatility, one entry per regime
    q_max: inventory bound (integer units)
    horizon: trading horizon T
    rates: regime switching generator (off-diagonal rates per year)
    s0: initial mid price
    dt: simulation step
    """

    gamma: float
    xi: float
    A: float
    k: float
    sigmas: np.ndarray
    q_max: int
    horizon: float
    rates: np.ndarray = None
    s0: float = 90863.90
    dt: float = 15.0 / SECONDS_PER_YEAR

    def __post_init__(self):
        self.sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        if self.gamma <= 0 or self.A <= 0 or self.k <= 0:
            raise ValueError("gamma, A and k must be positive")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if np.any(self.sigmas <= 0):
            raise ValueError("volatilities must be positive")
        if self.q_max < 1:
            raise ValueError("q_max must be at least 1")
        if self.horizon <= 0 or self.dt <= 0:
            raise ValueError("horizon and dt must be positive")
        N = self.sigmas.shape[0]
        if self.rates is None:
            self.rates = np.zeros((N, N))
        self.rates = _as_generator(self.rates, N)

    @property
    def n_regimes(self) -> int:
        return self.sigmas.shape[0]

    @property
    def n_levels(self) -> int:
        return 2 * self.q_max + 1

    def q_levels(self) -> np.ndarray:
        return np.arange(-self.q_max, self.q_max + 1)

    @property
    def fill_constant(self) -> float:
        """C0 = (1 + gamma/k)^(-k/gamma)."""
        return float((1.0 + self.gamma / self.k) ** (-self.k / self.gamma))

    @property
    def base_offset(self) -> float:
        """Zero-inventory per-side offset (1/gamma) ln(1 + gamma/k)."""
        return float(math.log1p(self.gamma / self.k) / self.gamma)


@dataclass(frozen=True)
class QuotePair:
    """Per-side offsets from mid.  A side at its inventory bound is inactive."""

    ask: float
    bid: float
    ask_active: bool = True
    bid_active: bool = True


@dataclass
class ThetaTable:
    """Penalty table theta[node, regime, q + q_max] on ascending taus."""

    taus: np.ndarray
    theta: np.ndarray
    gamma: float
    q_max: int

    def theta_at(self, i: int, q: int, tau: float) -> float:
        col = self.theta[:, i, q + self.q_max]
        return float(np.interp(tau, self.taus, col))

    def slice_at(self, tau: float) -> np.ndarray:
        out = np.empty(self.theta.shape[1:])
        for i in range(self.theta.shape[1]):
            for qi in range(self.theta.shape[2]):
                out[i, qi] = float(np.interp(tau, self.taus, self.theta[:, i, qi]))
        return out


def predator_drift(q: int, model: ASModel) -> float:
    """Optimal adversarial drift w*(q) = -xi * gamma * q."""
    if abs(q) > model.q_max:
        raise ValueError(f"|q| = {abs(q)} exceeds the inventory bound {model.q_max}")
    return -model.xi * model.gamma * q


def build_generator(model: ASModel, rates=None) -> np.ndarray:
    """Assemble the block generator M of the linear penalty system.

    State index = regime * (2*q_max + 1) + (q + q_max).  Per state:
    diagonal   0.5*gamma^2*(sigma_i^2 + xi*gamma)*q^2 + sum_j mu_ij
    inventory  -A*C0 to (i, q -+ 1) for each active side
    regime     -mu_ij to (j, q)
    The inactive side at q = -+ q_max contributes no inventory entry, which
    is what halves the executed-flow term at the bounds.
    """
    N, nq = model.n_regimes, model.n_levels
    Q = _as_generator(model.rates if rates is None else rates, N)
    fill = model.A * model.fill_constant
    gamma = model.gamma
    M = np.zeros((N * nq, N * nq))
    qs = model.q_levels()
    for i in range(N):
        risk = 0.5 * gamma**2 * (model.sigmas[i] ** 2 + model.xi * gamma)
        for qi, q in enumerate(qs):
            row = i * nq + qi
            M[row, row] = risk * q * q - Q[i, i]
            if q > -model.q_max:  # ask active: fill moves q -> q - 1
                M[row, i * nq + qi - 1] = -fill
            if q < model.q_max:  # bid active: fill moves q -> q + 1
                M[row, i * nq + qi + 1] = -fill
            for j in range(N):
                if j != i:
                    M[row, j * nq + qi] = -Q[i, j]
    return M


def _propagate_v(M: np.ndarray, tau: float, v0: np.ndarray, max_seg_norm: float = 30.0):
    """(log v)(tau) for dv/dtau = -M v, v(0) = v0, with rescaled segments.

    Segmenting keeps every intermediate in floating range; only the ratios
    and the accumulated log scale are retained.
    """
    norm = float(np.abs(M).sum(axis=0).max())
    n_seg = max(1, int(math.ceil(norm * tau / max_seg_norm)))
    E = scipy.linalg.expm(-M * (tau / n_seg))
    v = v0.astype(float).copy()
    log_scale = 0.0
    for _ in range(n_seg):
        v = E @ v
        top = v.max()
        if not np.isfinite(top) or np.any(v <= 0.0):
            raise AccuracyError(
                "CARA transform v lost positivity; |M| tau too large for the "
                "requested tolerance"
            )
        v /= top
        log_scale += math.log(top)
    return np.log(v) + log_scale


def solve_theta_exact(model: ASModel, rates=None, tau: float = 0.0) -> np.ndarray:
    """Penalty slice theta(tau) of shape (N, 2*q_max+1) via the matrix
    exponential, exact for rates constant on the interval."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    N, nq = model.n_regimes, model.n_levels
    if tau == 0.0:
        return np.zeros((N, nq))
    M = build_generator(model, rates)
    log_v = _propagate_v(M, tau, np.ones(N * nq))
    return (-log_v / model.gamma).reshape(N, nq)


def solve_theta_piecewise(model: ASModel, segments) -> np.ndarray:
    """Compose constant-rate segments, listed from the horizon outward:
    segments = [(tau_len_0, rates_0), (tau_len_1, rates_1), ...]."""
    N, nq = model.n_regimes, model.n_levels
    v = np.ones(N * nq)
    log_scale = 0.0
    for tau_len, rates in segments:
        if tau_len < 0:
            raise ValueError("segment lengths must be nonnegative")
        if tau_len == 0:
            continue
        M = build_generator(model, rates)
        log_v = _propagate_v(M, tau_len, v)
        top = log_v.max()
        v = np.exp(log_v - top)
        log_scale += top
    return (-(np.log(v) + log_scale) / model.gamma).reshape(N, nq)


def build_theta_table(model: ASModel, n_steps: int, rates=None,
                      max_seg_norm: float = 30.0) -> ThetaTable:
    """Penalty table on the uniform tau grid {0, dτ, ..., horizon}.

    Each node step applies exp(-M dτ) split into rescaled sub-segments, so
    arbitrarily stiff generators stay inside floating range.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    N, nq = model.n_regimes, model.n_levels
    taus = np.linspace(0.0, model.horizon, n_steps + 1)
    M = build_generator(model, rates)
    dtau = model.horizon / n_steps
    norm = float(np.abs(M).sum(axis=0).max())
    n_sub = max(1, int(math.ceil(norm * dtau / max_seg_norm)))
    E = scipy.linalg.expm(-M * (dtau / n_sub))
    theta = np.empty((n_steps + 1, N, nq))
    theta[0] = 0.0
    v = np.ones(N * nq)
    log_scale = 0.0
    for idx in range(1, n_steps + 1):
        for _ in range(n_sub):
            v = E @ v
            top = v.max()
            if not np.isfinite(top) or np.any(v <= 0.0):
                raise AccuracyError(
                    f"CARA transform v lost positivity at tau={taus[idx]:.6g}"
                )
            v /= top
            log_scale += math.log(top)
        theta[idx] = (-(np.log(v) + log_scale) / model.gamma).reshape(N, nq)
    return ThetaTable(taus=taus, theta=theta, gamma=model.gamma, q_max=model.q_max)


def integrated_variance(model: ASModel, rates=None, i: int = 0,
                        tau: float = 0.0) -> float:
    """w_i(tau) = int_0^tau [exp(Q u) s]_i du with s the squared vols.

    Computed exactly through the augmented generator [[Q, s], [0, 0]]: the
    top-right block of its exponential is the integral above.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    N = model.n_regimes
    Q = _as_generator(model.rates if rates is None else rates, N)
    s = model.sigmas**2
    aug = np.zeros((N + 1, N + 1))
    aug[:N, :N] = Q
    aug[:N, N] = s
    return float(scipy.linalg.expm(aug * tau)[i, N])


def integrated_variance_expansion(model: ASModel, rates=None, i: int = 0,
                                  tau: float = 0.0) -> float:
    """Second-order form sigma_i^2 tau + 0.5 sum_j mu_ij (sigma_j^2 -
    sigma_i^2) tau^2 capturing the drift into connected regimes."""
    N = model.n_regimes
    Q = _as_generator(model.rates if rates is None else rates, N)
    s = model.sigmas**2
    return float(s[i] * tau + 0.5 * (Q[i] @ s) * tau**2)


def risk_factor(model: ASModel, rates=None, i: int = 0, tau: float = 0.0) -> float:
    """Horizon-integrated risk factor C_i(tau) = gamma w_i(tau) + gamma^2 xi tau."""
    w = integrated_variance(model, rates, i, tau)
    return float(model.gamma * w + model.gamma**2 * model.xi * tau)


def effective_volatility(model: ASModel, i: int, tau: float, rates=None):
    """(instantaneous effective variance, horizon risk factor):
    sigma_i^2 + xi*gamma and C_i(tau)."""
    inst = float(model.sigmas[i] ** 2 + model.xi * model.gamma)
    return inst, risk_factor(model, rates, i, tau)


def theta_expansion(model: ASModel, rates=None, i: int = 0, q: int = 0,
                    tau: float = 0.0) -> float:
    """Short-horizon penalty (q^2/2) C_i(tau) - c_q (A/gamma) C0 tau, with
    the executed-flow coefficient c_q = 2 interior and 1 at q = -+ q_max."""
    if abs(q) > model.q_max:
        raise ValueError(f"|q| = {abs(q)} exceeds the inventory bound {model.q_max}")
    c_q = 1.0 if abs(q) == model.q_max else 2.0
    rent = c_q * (model.A / model.gamma) * model.fill_constant * tau
    return 0.5 * q * q * risk_factor(model, rates, i, tau) - rent


def quote_from_slice(theta_slice: np.ndarray, model: ASModel, i: int,
                     q: int) -> QuotePair:
    """Per-side first-order-condition quotes from one penalty slice."""
    if abs(q) > model.q_max:
        raise ValueError(f"|q| = {abs(q)} exceeds the inventory bound {model.q_max}")
    base = model.base_offset
    qi = q + model.q_max
    ask_active = q > -model.q_max
    bid_active = q < model.q_max
    ask = 0.0
    bid = 0.0
    if ask_active:
        ask = max(base + theta_slice[i, qi - 1] - theta_slice[i, qi], 0.0)
    if bid_active:
        bid = max(base + theta_slice[i, qi + 1] - theta_slice[i, qi], 0.0)
    return QuotePair(ask=ask, bid=bid, ask_active=ask_active, bid_active=bid_active)


def optimal_quotes(table: ThetaTable, model: ASModel, i: int, q: int,
                   t: float) -> QuotePair:
    """Quotes at clock time t (tau = horizon - t) from the penalty table."""
    tau = model.horizon - t
    if tau < -1e-12 or t < -1e-12:
        raise ValueError(f"t = {t} outside [0, horizon]")
    tau = max(tau, 0.0)
    theta_slice = table.slice_at(tau)
    return quote_from_slice(theta_slice, model, i, q)


def quote_surfaces(table: ThetaTable, model: ASModel):
    """Vectorized quote arrays over the whole table.

    Returns (ask, bid, ask_active, bid_active) with ask/bid of shape
    (n_nodes, N, 2*q_max+1); entries of inactive sides are 0.
    """
    base = model.base_offset
    th = table.theta
    ask = np.zeros_like(th)
    bid = np.zeros_like(th)
    ask[:, :, 1:] = np.maximum(base + th[:, :, :-1] - th[:, :, 1:], 0.0)
    bid[:, :, :-1] = np.maximum(base + th[:, :, 1:] - th[:, :, :-1], 0.0)
    nq = model.n_levels
    ask_active = np.ones(nq, dtype=bool)
    bid_active = np.ones(nq, dtype=bool)
    ask_active[0] = False
    bid_active[-1] = False
    return ask, bid, ask_active, bid_active


def macro_theta_cost(model: ASModel, rates=None, i: int = 0, q: int = 0,
                     tau: float = 0.0) -> float:
    """Running cost of the macro switching game: the penalty expansion."""
    return theta_expansion(model, rates, i, q, tau)


def _affine_generator(spec: OuterGameSpec, f_act: float, g_act: float) -> np.ndarray:
    off = spec.mu_bar + f_act * spec.lam_att - g_act * spec.lam_stab
    off = off - np.diag(np.diag(off))
    return np.maximum(off, 0.0)


def solve_macro_as(model: ASModel, spec: OuterGameSpec, q: int, grid: TimeGrid,
                   mode: str = "affine", flag_tol: float = 1e-9) -> OuterSolution:
    """Backward macro sweep of U_i(t, q) for one inventory level.

    The node optimization is min over the stabilizer, max over the driver of
    phi_i(q; f, g) + sum_j mu_ij(f, g) (U_j - U_i).  phi is evaluated at the
    candidate pair (rates applied to the whole chain), so it is not bilinear
    in (f, g); in affine mode the four action vertices define a 2x2 game
    whose mixed saddle is adopted, and nodes where the true bracket at that
    saddle strays from the game value by more than flag_tol are counted in
    meta["nonbilinear_nodes"].  Quadratic mode uses the closed-form
    proportional efforts and charges both effort penalties to the flow;
    bang_bang mode plays the printed threshold indicators (honoring
    spec.flip_bang_bang) instead of solving the node games.
    """
    if spec.lam_att is None or spec.lam_stab is None:
        raise ValueError("solve_macro_as needs an affine-profile OuterGameSpec")
    if mode not in ("affine", "quadratic", "bang_bang"):
        raise ValueError(f"unknown mode {mode!r}")
    N = spec.n_regimes
    if N != model.n_regimes:
        raise ValueError("model and spec disagree on the number of regimes")
    n_nodes = grid.n_steps + 1
    nodes = grid.nodes()
    T = grid.T

    U = np.zeros((n_nodes, N))
    f_out = np.zeros((n_nodes, N, 2))
    g_out = np.zeros((n_nodes, N, 2))
    mu_out = np.zeros((n_nodes, N, N))
    flagged = 0

    def phi_vec(tau, rates_off):
        return np.array(
            [macro_theta_cost(model, rates_off, i, q, tau) for i in range(N)]
        )

    def node_policies(U_node, tau):
        nonlocal flagged
        efforts = np.zeros((N, 2))
        mu_rows = np.zeros((N, N))
        gaps_all = outer_layer.stability_gaps(U_node)
        if mode == "quadratic":
            for i in range(N):
                f_i, g_i = outer_layer.proportional_policy(
                    gaps_all[i], spec.lam_att[i], spec.lam_stab[i],
                    spec.rho_f, spec.rho_g, clamp=spec.clamp_efforts,
                )
                efforts[i] = (f_i, g_i)
                mu_rows[i] = _affine_generator(spec, f_i, g_i)[i]
            return efforts, mu_rows
        if mode == "bang_bang":
            for i in range(N):
                f_i, g_i = outer_layer.bang_bang_policy(
                    gaps_all[i], spec.lam_att[i], spec.lam_stab[i],
                    flip=spec.flip_bang_bang,
                )
                efforts[i] = (f_i, g_i)
                mu_rows[i] = _affine_generator(spec, f_i, g_i)[i]
            return efforts, mu_rows
        vertex_phi = {}
        for fa in (0.0, 1.0):
            for ga in (0.0, 1.0):
                vertex_phi[(fa, ga)] = phi_vec(tau, _affine_generator(spec, fa, ga))
        for i in range(N):
            H = np.empty((2, 2))
            for ai, fa in enumerate((0.0, 1.0)):
                for bi, ga in enumerate((0.0, 1.0)):
                    rates = _affine_generator(spec, fa, ga)
                    H[ai, bi] = vertex_phi[(fa, ga)][i] + rates[i] @ gaps_all[i]
            sp = game_core.solve_zero_sum(MatrixGame(H))
            f_i = float(sp.row_strategy[1])
            g_i = float(sp.col_strategy[1])
            rates = _affine_generator(spec, f_i, g_i)
            true_val = phi_vec(tau, rates)[i] + rates[i] @ gaps_all[i]
            if abs(true_val - sp.value) > flag_tol * max(1.0, abs(sp.value)):
                flagged += 1
            efforts[i] = (f_i, g_i)
            mu_rows[i] = rates[i]
        return efforts, mu_rows

    def step_rhs(efforts, mu_rows):
        def rhs(t, U_cur):
            tau = T - t
            out = np.empty(N)
            for i in range(N):
                f_i, g_i = efforts[i]
                rates = _affine_generator(spec, f_i, g_i)
                val = macro_theta_cost(model, rates, i, q, tau)
                val += mu_rows[i] @ (U_cur - U_cur[i])
                if mode == "quadratic":
                    val -= 0.5 * spec.rho_f * f_i**2 + 0.5 * spec.rho_g * g_i**2
                out[i] = val
            return -out

        return rhs

    for idx in range(grid.n_steps, 0, -1):
        tau = T - nodes[idx]
        efforts, mu_rows = node_policies(U[idx], tau)
        f_out[idx] = np.stack([[1.0 - e[0], e[0]] for e in efforts])
        g_out[idx] = np.stack([[1.0 - e[1], e[1]] for e in efforts])
        mu_out[idx] = mu_rows - np.diag(mu_rows.sum(axis=1))
        U[idx - 1] = numkit.rk4_step(
            step_rhs(efforts, mu_rows), nodes[idx], U[idx], -grid.step
        )
    efforts, mu_rows = node_policies(U[0], T - nodes[0])
    f_out[0] = np.stack([[1.0 - e[0], e[0]] for e in efforts])
    g_out[0] = np.stack([[1.0 - e[1], e[1]] for e in efforts])
    mu_out[0] = mu_rows - np.diag(mu_rows.sum(axis=1))

    return OuterSolution(
        grid=grid, k=U, f=f_out, g=g_out, mu=mu_out,
        meta={"mode": mode, "nonbilinear_nodes": flagged, "inventory": q},
    )
