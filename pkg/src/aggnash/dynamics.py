"""Closed-loop NE-seeking dynamics over a switching graph.

Each player i runs

    x_i' = -delta * J_i(x_i, s_i)
    s_i' = -alpha (s_i - phi_i(x_i)) - beta sum_j a_ij (s_i - s_j) - nu_i
    nu_i' = alpha beta sum_j a_ij (s_i - s_j)

where s_i tracks the aggregate and nu_i is the integral correction of the
dynamic average-consensus estimator.  Stacked, the state is ``(x, s, nu)``
in R^{3Nn}.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import _backend
from .errors import DivergenceError, InitialConditionError, InputShapeError
from .game_model import GameSpec, extended_pseudo_gradient, stacked_phi
from .switching_graph import SwitchingSchedule, laplacian

DIVERGENCE_LIMIT = 1e9
NU_SUM_TOL = 1e-12


@dataclass(frozen=True)
class AlgorithmParams:
    delta: float
    alpha: float = 1.0
    beta: float = 1.0
    delta_star: float | None = None

    def __post_init__(self):
        for name in ("delta", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.delta_star is not None and not self.delta < self.delta_star:
            raise ValueError("delta must lie below the attached delta_star")


@dataclass(frozen=True)
class SystemState:
    x: np.ndarray
    s: np.ndarray
    nu: np.ndarray
    t: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.s, self.nu])

    @classmethod
    def from_vector(cls, z, t: float = 0.0) -> "SystemState":
        z = np.asarray(z, dtype=float)
        m = z.shape[0] // 3
        return cls(z[:m].copy(), z[m:2 * m].copy(), z[2 * m:].copy(), t)


def default_initial_state(game: GameSpec, x0=None) -> SystemState:
    """x(0) = x0 (zeros by default), s(0) = phi(x(0)), nu(0) = 0."""
    x0 = np.zeros(game.dim) if x0 is None else np.asarray(x0, dtype=float)
    return SystemState(x0.copy(), stacked_phi(game, x0), np.zeros(game.dim))


def projection_matrices(N: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Consensus projector ``(1 1^T / N) kron I_n`` and its complement."""
    if N < 1 or n < 1:
        raise ValueError("N and n must be positive")
    P = np.kron(np.full((N, N), 1.0 / N), np.eye(n))
    return P, np.eye(N * n) - P


@dataclass(frozen=True, eq=False)
class OrthogonalBasis:
    """Q = [r R] with r = 1/sqrt(N) and R an orthonormal complement."""

    r: np.ndarray
    R: np.ndarray
    n: int

    @property
    def N(self) -> int:
        return self.r.shape[0]

    @cached_property
    def Q(self) -> np.ndarray:
        return np.column_stack([self.r, self.R])

    @cached_property
    def r_kron(self) -> np.ndarray:
        return np.kron(self.r[:, None], np.eye(self.n))

    @cached_property
    def R_kron(self) -> np.ndarray:
        return np.kron(self.R, np.eye(self.n))

    @cached_property
    def Q_kron(self) -> np.ndarray:
        return np.kron(self.Q, np.eye(self.n))


def orthogonal_basis(N: int, n: int = 1) -> OrthogonalBasis:
    """Deterministic R from the QR factorization of ``[r | I_N]``.

    Each column of R is signed so that its first non-negligible entry is
    positive.
    """
    if N < 2:
        raise ValueError("need at least two players")
    r = np.full(N, 1.0 / np.sqrt(N))
    q, _ = np.linalg.qr(np.column_stack([r, np.eye(N)]))
    R = q[:, 1:N].copy()
    for c in range(R.shape[1]):
        lead = np.flatnonzero(np.abs(R[:, c]) > 1e-12)[0]
        if R[lead, c] < 0:
            R[:, c] = -R[:, c]
    return OrthogonalBasis(r=r, R=R, n=n)


def laplacian_apply(L: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    """(L kron I_n) v, computed without forming the Kronecker product."""
    N = L.shape[0]
    return (L @ v.reshape(N, n)).ravel()


def _check_graph(game: GameSpec, L: np.ndarray):
    if L.shape != (game.n_players, game.n_players):
        raise InputShapeError(
            f"Laplacian must be {game.n_players}x{game.n_players}, got {L.shape}")


def closed_loop_field(state: SystemState, game: GameSpec, L_active: np.ndarray,
                      params: AlgorithmParams):
    """Time derivative ``(x', s', nu')`` of the closed loop under Laplacian ``L_active``."""
    _check_graph(game, L_active)
    x, s, nu = state.x, state.s, state.nu
    n = game.action_dim
    Ls = laplacian_apply(L_active, np.asarray(s, dtype=float), n)
    xdot = -params.delta * extended_pseudo_gradient(game, x, s)
    sdot = -params.alpha * (s - stacked_phi(game, x)) - params.beta * Ls - nu
    nudot = params.alpha * params.beta * Ls
    return xdot, sdot, nudot


def closed_loop_matrix(game: GameSpec, L_active: np.ndarray,
                       params: AlgorithmParams) -> tuple[np.ndarray, np.ndarray]:
    """``(M, b)`` with ``z' = M z + b`` for games carrying an affine structure."""
    if game.affine is None:
        raise ValueError("game has no affine structure")
    _check_graph(game, L_active)
    aff = game.affine
    m = game.dim
    LI = np.kron(L_active, np.eye(game.action_dim))
    a, bt, d = params.alpha, params.beta, params.delta
    M = np.zeros((3 * m, 3 * m))
    M[:m, :m] = -d * aff.F_x
    M[:m, m:2 * m] = -d * aff.F_s
    M[m:2 * m, :m] = a * aff.phi_matrix
    M[m:2 * m, m:2 * m] = -a * np.eye(m) - bt * LI
    M[m:2 * m, 2 * m:] = -np.eye(m)
    M[2 * m:, m:2 * m] = a * bt * LI
    b = np.zeros(3 * m)
    b[:m] = -d * aff.F_0
    return M, b


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution.  ``states[k]`` is the state at ``times[k]``.

    ``layout`` is ``(N, n)`` for closed-loop trajectories (columns are
    ``x, s, nu``) and ``None`` for other systems.  Every switching instant in
    ``[0, t_end]`` appears exactly in ``times``.
    """

    times: np.ndarray
    states: np.ndarray
    graph_idx: np.ndarray
    switch_times: np.ndarray
    layout: tuple | None = None
    diverged_at: float | None = None

    def _block(self, k: int) -> np.ndarray:
        if self.layout is None:
            raise AttributeError("trajectory has no (x, s, nu) layout")
        m = self.layout[0] * self.layout[1]
        return self.states[:, k * m:(k + 1) * m]

    @property
    def x(self) -> np.ndarray:
        return self._block(0)

    @property
    def s(self) -> np.ndarray:
        return self._block(1)

    @property
    def nu(self) -> np.ndarray:
        return self._block(2)

    def state(self, k: int) -> SystemState:
        return SystemState.from_vector(self.states[k], float(self.times[k]))

    def to_csv(self, path) -> None:
        """Write ``t, graph_idx, x_*, s_*, nu_*`` rows with round-trip float formatting."""
        if self.layout is not None:
            m = self.layout[0] * self.layout[1]
            cols = [f"{p}_{j}" for p in ("x", "s", "nu") for j in range(m)]
        else:
            cols = [f"z_{j}" for j in range(self.states.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "graph_idx"] + cols)
            for t, g, row in zip(self.times, self.graph_idx, self.states):
                w.writerow([repr(float(t)), int(g)] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, layout: tuple | None = None) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = np.array([[float(v) for v in r] for r in rows[1:]])
        times = body[:, 0]
        gidx = body[:, 1].astype(int)
        switches = times[1:][np.diff(gidx) != 0]
        return cls(times, body[:, 2:], gidx, switches, layout)


def _plan(start: float, end: float, h: float) -> tuple[int, float]:
    """Full h-steps and the final shortened step landing exactly on ``end``."""
    n_total = max(1, math.ceil((end - start) / h - 1e-9))
    n_full = n_total - 1
    return n_full, (end - start) - n_full * h


Advance = Callable[[int, np.ndarray, float, int, int], tuple]


def _march(schedule: SwitchingSchedule, Y: np.ndarray, t0: float, t_end: float,
           h: float, record_every: int, advance: Advance, layout):
    if not h > 0:
        raise ValueError("step size h must be positive")
    if record_every < 1:
        raise ValueError("record_every must be at least 1")
    times = [t0]
    recs = [Y.copy()]
    switches = []
    diverged_at = None
    for start, end, gidx in schedule.pieces(t0, t_end):
        if start > t0:
            switches.append(start)
        n_full, h_last = _plan(start, end, h)
        done, rec = advance(gidx, Y, h, n_full, record_every)
        if len(rec):
            times.extend(start + h * record_every * np.arange(1, len(rec) + 1))
            recs.extend(rec)
        if done < n_full:
            diverged_at = start + (done + 1) * h
            break
        done, _ = advance(gidx, Y, h_last, 1, 1)
        if done < 1:
            diverged_at = end
            break
        times.append(end)
        recs.append(Y.copy())
    times = np.asarray(times)
    states = np.asarray(recs).reshape(len(recs), -1)
    gidx = np.array([schedule.index_at(min(t, np.nextafter(schedule.horizon, 0)))
                     for t in times])
    return Trajectory(times, states, gidx, np.asarray(switches), layout, diverged_at)


def _affine_advance(mats: dict, backend):
    def advance(gidx, Y, h, n_steps, stride):
        M, b = mats[gidx]
        return _backend.affine_steps(M, b, Y, h, n_steps, stride, DIVERGENCE_LIMIT, backend)
    return advance


def _generic_advance(rhs):
    limit2 = DIVERGENCE_LIMIT ** 2

    def advance(gidx, Y, h, n_steps, stride):
        f = rhs(gidx)
        y = Y[:, 0]
        out = []
        for step in range(n_steps):
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            sq = y @ y
            if not sq <= limit2:
                return step, np.asarray(out)
            if (step + 1) % stride == 0:
                out.append(Y.copy())
        return n_steps, np.asarray(out)
    return advance


def check_nu_sum(game: GameSpec, nu) -> float:
    """Norm of sum_i nu_i; raises if it is not zero to within tolerance."""
    nu = np.asarray(nu, dtype=float)
    total = nu.reshape(game.n_players, game.action_dim).sum(axis=0)
    norm = float(np.linalg.norm(total))
    if norm > NU_SUM_TOL * max(1.0, float(np.max(np.abs(nu), initial=0.0))):
        raise InitialConditionError(f"sum of nu_i(0) has norm {norm:.3e}, must be zero")
    return norm


def integrate(initial: SystemState, game: GameSpec, schedule: SwitchingSchedule,
              params: AlgorithmParams, t_end: float, h: float = 1e-3,
              record_every: int = 1, raise_on_divergence: bool = True,
              use_affine: bool = True, backend: str | None = None) -> Trajectory:
    """Integrate the closed loop from ``initial.t`` to ``t_end`` with fixed-step RK4.

    Steps never straddle a switching instant: the last step of every constant
    piece is shortened to land on it.  Games with an affine structure run on
    the compiled kernel; others use the generic vector field.
    """
    check_nu_sum(game, initial.nu)
    if schedule.n_nodes != game.n_players:
        raise InputShapeError("schedule node count must equal the number of players")
    Y = initial.as_vector().reshape(-1, 1).copy()
    if Y.shape[0] != 3 * game.dim:
        raise InputShapeError("initial state dimensions do not match the game")
    laps = {k: laplacian(g) for k, g in enumerate(schedule.graphs)}
    if use_affine and game.affine is not None:
        mats = {k: closed_loop_matrix(game, L, params) for k, L in laps.items()}
        advance = _affine_advance(mats, backend)
    else:
        def rhs(gidx):
            L = laps[gidx]

            def f(z):
                parts = closed_loop_field(SystemState.from_vector(z), game, L, params)
                return np.concatenate(parts)
            return f
        advance = _generic_advance(rhs)
    traj = _march(schedule, Y, float(initial.t), float(t_end), h, record_every,
                  advance, (game.n_players, game.action_dim))
    if traj.diverged_at is not None and raise_on_divergence:
        raise DivergenceError(traj.diverged_at, traj)
    return traj


@dataclass(frozen=True)
class TransformedState:
    x_bar: np.ndarray
    s_bar: np.ndarray
    nu_bar: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.y1, self.y2])

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.z1, self.z2])


def to_error_coordinates(state: SystemState, game: GameSpec, x_star,
                         basis: OrthogonalBasis, alpha: float) -> TransformedState:
    """Shift to the estimator's moving equilibrium and rotate by Q kron I_n.

    ``s_bar = s - P phi(x)``, ``nu_bar = nu - alpha P_perp phi(x)``,
    ``y = Q^T s_bar`` and ``z = Q^T nu_bar`` split after the first n entries.
    """
    n = game.action_dim
    if basis.N != game.n_players or basis.n != n:
        raise InputShapeError("basis does not match the game dimensions")
    x = np.asarray(state.x, dtype=float)
    ph = stacked_phi(game, x)
    consensus = np.tile(ph.reshape(game.n_players, n).mean(axis=0), game.n_players)
    s_bar = np.asarray(state.s, dtype=float) - consensus
    nu_bar = np.asarray(state.nu, dtype=float) - alpha * (ph - consensus)
    y = basis.Q_kron.T @ s_bar
    z = basis.Q_kron.T @ nu_bar
    return TransformedState(x - np.asarray(x_star, dtype=float), s_bar, nu_bar,
                            y[:n], y[n:], z[:n], z[n:])


def equilibrium_state(game: GameSpec, x_star, alpha: float) -> SystemState:
    """The closed-loop equilibrium ``(x*, P phi(x*), alpha P_perp phi(x*))``."""
    x_star = np.asarray(x_star, dtype=float)
    P, Pp = projection_matrices(game.n_players, game.action_dim)
    ph = stacked_phi(game, x_star)
    return SystemState(x_star.copy(), P @ ph, alpha * (Pp @ ph))


def ancillary_matrix(L_active: np.ndarray, params: AlgorithmParams,
                     basis: OrthogonalBasis, n: int) -> np.ndarray:
    """A(t) of the switched linear system acting on ``(zeta1, zeta2, zeta3)``."""
    N = L_active.shape[0]
    m = (N - 1) * n
    K = np.kron(basis.R.T @ L_active @ basis.R, np.eye(n))
    a, b = params.alpha, params.beta
    A = np.zeros((n + 2 * m, n + 2 * m))
    A[:n, :n] = -a * np.eye(n)
    A[n:n + m, n:n + m] = -a * np.eye(m) - b * K
    A[n:n + m, n + m:] = -np.eye(m)
    A[n + m:, n:n + m] = a * b * K
    return A


def ancillary_dim(N: int, n: int) -> int:
    return (2 * N - 1) * n


def simulate_ancillary(schedule: SwitchingSchedule, params: AlgorithmParams, zeta0,
                       t_end: float, h: float = 1e-3, record_every: int = 1,
                       t0: float = 0.0, backend: str | None = None) -> Trajectory:
    """Integrate ``zeta' = A(t) zeta`` with the switch-aligned RK4 stepper."""
    zeta0 = np.asarray(zeta0, dtype=float)
    N = schedule.n_nodes
    n, rem = divmod(zeta0.shape[0], 2 * N - 1)
    if rem or n < 1:
        raise InputShapeError(f"zeta0 length must be a multiple of {2 * N - 1}")
    basis = orthogonal_basis(N, n)
    zero = np.zeros(zeta0.shape[0])
    mats = {k: (ancillary_matrix(laplacian(g), params, basis, n), zero)
            for k, g in enumerate(schedule.graphs)}
    traj = _march(schedule, zeta0.reshape(-1, 1).copy(), t0, t_end, h, record_every,
                  _affine_advance(mats, backend), None)
    if traj.diverged_at is not None:
        raise DivergenceError(traj.diverged_at, traj)
    return traj
