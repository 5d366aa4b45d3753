"""Aggregative games: aggregate, pseudo-gradients, regularity constants, NE oracle.

A game is given by per-player gradient callables rather than symbolic costs.
Player ``i`` has action ``x_i`` in R^n and cost ``fbar_i(x_i, sigma)`` where

    sigma(x) = (1/N) * sum_i phi_i(x_i)

is the aggregate.  Stacked vectors are always player-major: ``x[i*n:(i+1)*n]``
is player ``i``'s block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import AssumptionViolation, InputShapeError, OracleFailure

# Lipschitz estimates of exactly zero (decoupled games, constant phi) are
# floored here so GameConstants stays strictly positive.
_POSITIVE_FLOOR = 1e-12


@dataclass(frozen=True)
class AffineStructure:
    """Closed-form linear description of a game.

    ``F(x, s) = F_x @ x + F_s @ s + F_0`` and ``phi(x) = phi_matrix @ x``.
    When present, the integrator uses it to run the closed loop as an affine
    switched system on the compiled kernel.
    """

    F_x: np.ndarray
    F_s: np.ndarray
    F_0: np.ndarray
    phi_matrix: np.ndarray


@dataclass(frozen=True)
class GameSpec:
    """An N-player aggregative game with n-dimensional actions.

    ``cost_grad(i, x_i, s_i)`` returns the pair
    ``(d/dy fbar_i(y, s_i) at y=x_i, d/dy fbar_i(x_i, y) at y=s_i)``.
    ``phi_jac(i, x_i)`` returns the *transpose* of the Jacobian of ``phi_i``.
    ``cost(i, x_i, sigma)``, if given, is the scalar cost used only for
    finite-difference cross-checks.
    """

    n_players: int
    action_dim: int
    cost_grad: Callable[[int, np.ndarray, np.ndarray], tuple]
    phi: Callable[[int, np.ndarray], np.ndarray]
    phi_jac: Callable[[int, np.ndarray], np.ndarray]
    cost: Optional[Callable[[int, np.ndarray, np.ndarray], float]] = None
    affine: Optional[AffineStructure] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_players < 1 or self.action_dim < 1:
            raise ValueError("n_players and action_dim must be positive")

    @property
    def dim(self) -> int:
        return self.n_players * self.action_dim


@dataclass(frozen=True)
class GameConstants:
    mu: float
    theta: float
    theta_hat: float
    ell: float

    def __post_init__(self):
        for name in ("mu", "theta", "theta_hat", "ell"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.mu > self.theta:
            raise ValueError("mu cannot exceed theta")

    def to_dict(self) -> dict:
        return {"mu": self.mu, "theta": self.theta,
                "theta_hat": self.theta_hat, "ell": self.ell}


def _stacked(game: GameSpec, v, name: str = "x") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (game.dim,):
        raise InputShapeError(
            f"{name} must have shape ({game.dim},), got {v.shape}")
    return v


def stacked_phi(game: GameSpec, x) -> np.ndarray:
    """col(phi_1(x_1), ..., phi_N(x_N))."""
    x = _stacked(game, x)
    n = game.action_dim
    return np.concatenate([
        np.asarray(game.phi(i, x[i * n:(i + 1) * n]), dtype=float).reshape(n)
        for i in range(game.n_players)
    ])


def phi_jacobian(game: GameSpec, x) -> np.ndarray:
    """Block-diagonal Jacobian d phi(x) / d x of the stacked map."""
    x = _stacked(game, x)
    n = game.action_dim
    jac = np.zeros((game.dim, game.dim))
    for i in range(game.n_players):
        blk = np.asarray(game.phi_jac(i, x[i * n:(i + 1) * n]), dtype=float)
        jac[i * n:(i + 1) * n, i * n:(i + 1) * n] = blk.T
    return jac


def aggregate(game: GameSpec, x) -> np.ndarray:
    """The aggregate sigma(x) = (1/N) sum_i phi_i(x_i), a vector in R^n."""
    return stacked_phi(game, x).reshape(game.n_players, game.action_dim).mean(axis=0)


def extended_pseudo_gradient(game: GameSpec, x, s) -> np.ndarray:
    """col(J_1(x_1, s_1), ..., J_N(x_N, s_N)).

    Each player's term replaces the true aggregate by its own estimate s_i:
    ``J_i = grad_own + (1/N) * phi_jac_i(x_i) @ grad_aggregate``.
    """
    x = _stacked(game, x)
    s = _stacked(game, s, "s")
    n, N = game.action_dim, game.n_players
    out = np.empty(game.dim)
    for i in range(N):
        blk = slice(i * n, (i + 1) * n)
        xi = x[blk]
        g_own, g_agg = game.cost_grad(i, xi, s[blk])
        out[blk] = g_own + np.dot(game.phi_jac(i, xi), g_agg) / N
    return out


def pseudo_gradient(game: GameSpec, x) -> np.ndarray:
    """F(x), evaluated as the extended pseudo-gradient at exact consensus s = 1 (x) sigma(x)."""
    x = _stacked(game, x)
    s = np.tile(aggregate(game, x), game.n_players)
    return extended_pseudo_gradient(game, x, s)


def _sample_box(rng, box, dim, size):
    low, high = box
    low = np.broadcast_to(np.asarray(low, dtype=float), (dim,))
    high = np.broadcast_to(np.asarray(high, dtype=float), (dim,))
    if np.any(high <= low):
        raise ValueError("estimation box must be nonempty")
    return rng.uniform(low, high, size=(size, dim))


def estimate_constants(game: GameSpec, box=(-5.0, 5.0), n_samples: int = 10_000,
                       seed: int = 0) -> GameConstants:
    """Certify the regularity constants by random sampling over ``box``.

    ``mu`` is the smallest observed monotonicity ratio
    ``(x-x')^T (F(x)-F(x')) / |x-x'|^2``; ``theta`` and ``theta_hat`` are the
    largest observed Lipschitz ratios of F and of the extended pseudo-gradient
    in its second argument; ``ell`` is the largest sampled spectral norm of
    d phi / d x.  Deterministic for a fixed seed.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    rng = np.random.default_rng(seed)
    dim = game.dim
    xs = _sample_box(rng, box, dim, n_samples)
    xps = _sample_box(rng, box, dim, n_samples)
    ss = _sample_box(rng, box, dim, n_samples)
    sps = _sample_box(rng, box, dim, n_samples)

    mu = np.inf
    theta = 0.0
    theta_hat = 0.0
    n = game.action_dim
    jac_blocks = []
    for x, xp, s, sp in zip(xs, xps, ss, sps):
        dx = x - xp
        nx2 = dx @ dx
        if nx2 > 0:
            dF = pseudo_gradient(game, x) - pseudo_gradient(game, xp)
            mu = min(mu, dx @ dF / nx2)
            theta = max(theta, np.sqrt(dF @ dF / nx2))
        ds = s - sp
        ns2 = ds @ ds
        if ns2 > 0:
            dG = extended_pseudo_gradient(game, x, s) - extended_pseudo_gradient(game, x, sp)
            theta_hat = max(theta_hat, np.sqrt(dG @ dG / ns2))
        for i in range(game.n_players):
            jac_blocks.append(game.phi_jac(i, x[i * n:(i + 1) * n]))
    blocks = np.asarray(jac_blocks, dtype=float).reshape(-1, n, n)
    ell = float(np.max(np.linalg.norm(blocks, 2, axis=(1, 2))))

    if not mu > 0:
        raise AssumptionViolation(
            "Assumption 1.3",
            f"pseudo-gradient is not strongly monotone on the sampled box "
            f"(min ratio {mu:.4g})")
    return GameConstants(
        mu=float(mu),
        theta=float(max(theta, mu)),
        theta_hat=float(max(theta_hat, _POSITIVE_FLOOR)),
        ell=float(max(ell, _POSITIVE_FLOOR)),
    )


def solve_ne(game: GameSpec, constants: GameConstants, tol: float = 1e-10,
             max_iters: int = 100_000, x0=None) -> np.ndarray:
    """Centralized NE oracle: iterate x <- x - eta F(x) with eta = mu / theta^2.

    Strong monotonicity plus Lipschitz continuity make this a contraction with
    factor sqrt(1 - mu^2/theta^2).  Returns x with |F(x)| <= tol.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    eta = constants.mu / constants.theta ** 2
    x = np.zeros(game.dim) if x0 is None else _stacked(game, x0).copy()
    for _ in range(max_iters):
        g = pseudo_gradient(game, x)
        if np.linalg.norm(g) <= tol:
            return x
        x = x - eta * g
    residual = float(np.linalg.norm(pseudo_gradient(game, x)))
    if residual <= tol:
        return x
    raise OracleFailure(residual, max_iters)


def check_phi_jacobian(game: GameSpec, points, step: float = 1e-6) -> float:
    """Largest relative mismatch between ``phi_jac`` and a central-difference Jacobian."""
    n = game.action_dim
    worst = 0.0
    for x in np.atleast_2d(points):
        x = _stacked(game, x)
        for i in range(game.n_players):
            xi = x[i * n:(i + 1) * n]
            fd = np.empty((n, n))
            for k in range(n):
                e = np.zeros(n)
                e[k] = step
                fd[:, k] = (np.asarray(game.phi(i, xi + e), dtype=float)
                            - np.asarray(game.phi(i, xi - e), dtype=float)) / (2 * step)
            got = np.asarray(game.phi_jac(i, xi), dtype=float).reshape(n, n).T
            worst = max(worst, np.linalg.norm(got - fd) / max(np.linalg.norm(fd), 1.0))
    return worst


def check_gradients(game: GameSpec, points, step: float = 1e-6) -> float:
    """Largest relative mismatch between ``cost_grad`` and finite differences of ``cost``.

    ``points`` rows are stacked ``(x, s)`` pairs of length 2*N*n.
    """
    if game.cost is None:
        raise ValueError("game has no scalar cost to differentiate")
    n, dim = game.action_dim, game.dim
    worst = 0.0
    for row in np.atleast_2d(points):
        x, s = row[:dim], row[dim:]
        for i in range(game.n_players):
            xi = x[i * n:(i + 1) * n]
            si = s[i * n:(i + 1) * n]
            g_own, g_agg = game.cost_grad(i, xi, si)
            fd_own = np.empty(n)
            fd_agg = np.empty(n)
            for k in range(n):
                e = np.zeros(n)
                e[k] = step
                fd_own[k] = (game.cost(i, xi + e, si) - game.cost(i, xi - e, si)) / (2 * step)
                fd_agg[k] = (game.cost(i, xi, si + e) - game.cost(i, xi, si - e)) / (2 * step)
            for got, fd in ((g_own, fd_own), (g_agg, fd_agg)):
                got = np.asarray(got, dtype=float).reshape(n)
                worst = max(worst, np.linalg.norm(got - fd) / max(np.linalg.norm(fd), 1.0))
    return worst


def _player_matrices(weights, n_players, n):
    if weights is None:
        return [np.eye(n) for _ in range(n_players)]
    if len(weights) != n_players:
        raise InputShapeError(f"need {n_players} aggregation weights, got {len(weights)}")
    mats = []
    for w in weights:
        w = np.asarray(w, dtype=float)
        if w.ndim == 0:
            mats.append(float(w) * np.eye(n))
        elif w.shape == (n, n):
            mats.append(w.copy())
        else:
            raise InputShapeError(f"aggregation weight must be scalar or {n}x{n}")
    return mats


def lq_game(n_players: int, action_dim: int = 1, c=None, d: float = 0.1,
            weights=None) -> GameSpec:
    """Linear-quadratic aggregative game.

    ``fbar_i(x_i, sigma) = 0.5 |x_i - c_i|^2 + d x_i^T sigma`` with
    ``phi_i(x_i) = A_i x_i``.  ``c`` defaults to ``c_i = i + 1`` (1-based
    player index) in every coordinate; ``weights`` is a list of scalars or
    n-by-n matrices ``A_i`` (identity when omitted).
    """
    N, n = n_players, action_dim
    if c is None:
        c_arr = np.repeat(np.arange(1, N + 1, dtype=float), n).reshape(N, n)
    else:
        c_arr = np.asarray(c, dtype=float)
        if c_arr.ndim == 1 and c_arr.shape[0] == N:
            c_arr = np.repeat(c_arr, n).reshape(N, n)
        c_arr = c_arr.reshape(N, n)
    mats = _player_matrices(weights, N, n)
    d = float(d)

    def cost_grad(i, xi, si):
        return xi - c_arr[i] + d * si, d * xi

    def phi(i, xi):
        return mats[i] @ xi

    def phi_jac(i, xi):
        return mats[i].T

    def cost(i, xi, sigma):
        r = xi - c_arr[i]
        return 0.5 * r @ r + d * xi @ sigma

    dim = N * n
    F_x = np.eye(dim)
    phi_matrix = np.zeros((dim, dim))
    for i, A in enumerate(mats):
        sl = slice(i * n, (i + 1) * n)
        F_x[sl, sl] += d / N * A.T
        phi_matrix[sl, sl] = A
    affine = AffineStructure(F_x=F_x, F_s=d * np.eye(dim), F_0=-c_arr.ravel(),
                             phi_matrix=phi_matrix)
    params = {"N": N, "n": n, "c": c_arr.tolist(), "d": d,
              "A": None if weights is None else [m.tolist() for m in mats]}
    return GameSpec(n_players=N, action_dim=n, cost_grad=cost_grad, phi=phi,
                    phi_jac=phi_jac, cost=cost, affine=affine, name="lq-game",
                    params=params)


def _lq_from_params(params: dict) -> GameSpec:
    return lq_game(int(params["N"]), int(params.get("n", 1)), params.get("c"),
                   params.get("d", 0.1), params.get("A"))


GAME_PRESETS: dict[str, Callable[[dict], GameSpec]] = {
    "lq-game": _lq_from_params,
}


def game_from_preset(preset: str, params: dict) -> GameSpec:
    try:
        factory = GAME_PRESETS[preset]
    except KeyError:
        raise KeyError(f"unknown game preset {preset!r}") from None
    return factory(params)
