"""Finite tabular MDPs, reward parameterizations and Boltzmann value iteration.

Transition tables are stored as a CSR matrix with one row per (state, action)
pair, row index ``state * n_actions + action``. A row with no entries means the
action is unavailable in that state, which is how state-dependent action sets
(hyperlinks in a graph, for instance) are represented.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ConvergenceWarning, ModelError

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERS = 10_000
_DENSE_MATVEC_LIMIT = 100_000


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """A finite MDP without a reward function.

    Parameters
    ----------
    n_states, n_actions : int
        State and action ids are dense integers in ``[0, n)``.
    transitions : scipy.sparse.csr_matrix
        Shape ``(n_states * n_actions, n_states)``.
    terminal : ndarray of bool
        Terminal states. Every available action there must self-loop.
    gamma : float
        Discount rate in (0, 1].
    """

    n_states: int
    n_actions: int
    transitions: sp.csr_matrix
    terminal: np.ndarray
    gamma: float

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ModelError("an MDP needs at least one state and one action")
        if not 0.0 < self.gamma <= 1.0:
            raise ModelError(f"gamma must lie in (0, 1], got {self.gamma}")
        t = sp.csr_matrix(self.transitions, dtype=float)
        t.eliminate_zeros()
        t.sort_indices()
        if t.shape != (self.n_states * self.n_actions, self.n_states):
            raise ModelError(f"transition table has shape {t.shape}")
        if t.nnz and (t.data < 0).any():
            raise ModelError("negative transition probability")
        sums = np.asarray(t.sum(axis=1)).ravel()
        live = np.diff(t.indptr) > 0
        bad = live & (np.abs(sums - 1.0) > 1e-9)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ModelError(
                f"distribution for (state={row // self.n_actions}, "
                f"action={row % self.n_actions}) sums to {sums[row]}"
            )
        terminal = np.zeros(self.n_states, dtype=bool)
        terminal[np.asarray(self.terminal, dtype=bool)] = True
        for s in np.flatnonzero(terminal):
            rows = t[s * self.n_actions:(s + 1) * self.n_actions]
            if rows.nnz and not (np.all(rows.indices == s) and np.allclose(rows.data, 1.0)):
                raise ModelError(f"terminal state {s} does not self-loop")
        if not live.reshape(self.n_states, self.n_actions)[~terminal].any(axis=1).all():
            s = int(np.flatnonzero(~live.reshape(self.n_states, self.n_actions).any(axis=1) & ~terminal)[0])
            raise ModelError(f"non-terminal state {s} has no available action")
        terminal.setflags(write=False)
        object.__setattr__(self, "transitions", t)
        object.__setattr__(self, "terminal", terminal)

    @classmethod
    def from_triples(
        cls,
        n_states: int,
        n_actions: int,
        triples: Iterable[tuple[int, int, int, float]],
        terminal: Iterable[int] = (),
        gamma: float = 0.9,
    ) -> "TabularMdp":
        """Build from ``(state, action, next_state, probability)`` entries.

        Rows of terminal states are replaced by self-loops for every action
        that was given there.
        """
        terminal = sorted(set(int(s) for s in terminal))
        term = set(terminal)
        rows, cols, vals = [], [], []
        for s, a, s2, p in triples:
            s, a, s2 = int(s), int(a), int(s2)
            if not (0 <= s < n_states and 0 <= s2 < n_states and 0 <= a < n_actions):
                raise ModelError(f"triple ({s}, {a}, {s2}) out of range")
            if s in term:
                s2, p = s, 1.0
            rows.append(s * n_actions + a)
            cols.append(s2)
            vals.append(float(p))
        t = sp.coo_matrix((vals, (rows, cols)), shape=(n_states * n_actions, n_states)).tocsr()
        # duplicate (s, a, s') entries were summed; terminal self-loops may now exceed 1
        for s in terminal:
            for r in range(s * n_actions, (s + 1) * n_actions):
                lo, hi = t.indptr[r], t.indptr[r + 1]
                if hi > lo:
                    t.data[lo:hi] = 1.0
        mask = np.zeros(n_states, dtype=bool)
        mask[terminal] = True
        return cls(n_states, n_actions, t, mask, float(gamma))

    @cached_property
    def available(self) -> np.ndarray:
        """Boolean ``(n_states, n_actions)`` action-availability mask."""
        live = np.diff(self.transitions.indptr) > 0
        return live.reshape(self.n_states, self.n_actions)

    @cached_property
    def transition_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(state, action, next_state, probability)`` arrays aligned with the CSR data."""
        t = self.transitions
        rows = np.repeat(np.arange(t.shape[0]), np.diff(t.indptr))
        return rows // self.n_actions, rows % self.n_actions, t.indices.copy(), t.data.copy()

    def successors(self, state: int, action: int) -> tuple[np.ndarray, np.ndarray]:
        r = state * self.n_actions + action
        lo, hi = self.transitions.indptr[r], self.transitions.indptr[r + 1]
        return self.transitions.indices[lo:hi], self.transitions.data[lo:hi]

    def transition_probability(self, state: int, action: int, next_state: int) -> float:
        nxt, p = self.successors(state, action)
        i = np.searchsorted(nxt, next_state)
        return float(p[i]) if i < len(nxt) and nxt[i] == next_state else 0.0

    def with_terminal(self, terminal: Iterable[int]) -> "TabularMdp":
        """Copy with a different terminal set; new terminal rows become self-loops."""
        s, a, s2, p = self.transition_arrays
        return TabularMdp.from_triples(
            self.n_states, self.n_actions, zip(s, a, s2, p), terminal, self.gamma
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.n_states, self.n_actions], dtype=np.int64).tobytes())
        h.update(np.float64(self.gamma).tobytes())
        h.update(self.transitions.indptr.astype(np.int64).tobytes())
        h.update(self.transitions.indices.astype(np.int64).tobytes())
        h.update(self.transitions.data.tobytes())
        h.update(self.terminal.tobytes())
        return h.hexdigest()

    def to_json(self) -> dict:
        s, a, s2, p = self.transition_arrays
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "terminal": [int(x) for x in np.flatnonzero(self.terminal)],
            "transitions": [[int(i), int(j), int(k), float(q)] for i, j, k, q in zip(s, a, s2, p)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "TabularMdp":
        return cls.from_triples(
            data["n_states"], data["n_actions"], data["transitions"],
            data.get("terminal", ()), data["gamma"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


class RewardParams:
    """A reward parameterization ``theta``.

    Subclasses implement :meth:`reward` vectorized over numpy arrays of
    ``(state, action, next_state)``. Transitions out of terminal states always
    earn 0, whatever :meth:`reward` says.
    """

    id: str = "theta"

    def reward(self, state, action, next_state) -> np.ndarray:
        raise NotImplementedError

    def transition_rewards(self, mdp: TabularMdp) -> np.ndarray:
        """Rewards aligned with ``mdp.transitions.data``."""
        s, a, s2, _ = mdp.transition_arrays
        r = np.asarray(self.reward(s, a, s2), dtype=float)
        r = np.broadcast_to(r, s.shape).copy()
        r[mdp.terminal[s]] = 0.0
        return r

    def expected_rewards(self, mdp: TabularMdp) -> np.ndarray:
        """``(n_states, n_actions)`` table of ``sum_s' T(s,a,s') r(s,a,s')``."""
        t = mdp.transitions
        weighted = sp.csr_matrix((t.data * self.transition_rewards(mdp), t.indices, t.indptr), shape=t.shape)
        return np.asarray(weighted.sum(axis=1)).reshape(mdp.n_states, mdp.n_actions)

    def __repr__(self):
        return f"{type(self).__name__}({self.id!r})"


class FunctionReward(RewardParams):
    def __init__(self, id: str, fn: Callable):
        self.id = id
        self.fn = fn

    def reward(self, state, action, next_state):
        return self.fn(state, action, next_state)


class TabularReward(RewardParams):
    """Reward looked up from a ``(S, A)`` or ``(S, A, S)`` table."""

    def __init__(self, id: str, table):
        self.id = id
        self.table = np.asarray(table, dtype=float)
        if self.table.ndim not in (2, 3):
            raise ValueError("reward table must be (S, A) or (S, A, S)")

    def reward(self, state, action, next_state):
        if self.table.ndim == 2:
            return self.table[state, action]
        return self.table[state, action, next_state]


@dataclass(frozen=True)
class Rationality:
    """Top-level rationality ``beta`` and within-option rationality ``beta_o``."""

    beta: float
    beta_o: float = 3.0

    def __post_init__(self):
        if not (self.beta >= 0 and self.beta_o >= 0):
            raise ValueError(f"rationality must be non-negative, got {self}")


@dataclass(frozen=True, eq=False)
class SoftSolution:
    """Fixed point of the self-consistent Boltzmann backup.

    ``q`` holds ``-inf`` where an option is not initiable; ``policy`` holds 0
    there. Terminal rows are all zero in ``policy`` and ``v``.
    """

    v: np.ndarray
    q: np.ndarray
    policy: np.ndarray
    initiable: np.ndarray
    option_ids: tuple
    beta: float
    converged: bool
    n_iter: int
    residual: float

    @cached_property
    def option_index(self) -> dict:
        return {o: i for i, o in enumerate(self.option_ids)}

    @cached_property
    def log_policy(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.policy)


@dataclass(frozen=True, eq=False)
class HardSolution:
    v: np.ndarray
    q: np.ndarray
    converged: bool
    n_iter: int
    residual: float


@dataclass(frozen=True, eq=False)
class OptionStack:
    """Option models of one option set stacked for vectorized backups.

    ``transition`` has shape ``(n_options * n_states, n_states)`` with row
    ``o * n_states + s`` holding the discounted model of option ``o`` from
    ``s``. ``reward`` and ``initiable`` are ``(n_states, n_options)``.
    """

    option_ids: tuple
    reward: np.ndarray
    transition: sp.csr_matrix
    initiable: np.ndarray
    theta_id: str | None = None

    @classmethod
    def from_models(cls, models: Sequence) -> "OptionStack":
        if not models:
            raise ModelError("empty option set")
        ids = tuple(m.option.id for m in models)
        if len(set(ids)) != len(ids):
            raise ModelError("option ids must be unique")
        theta_ids = {m.theta_id for m in models}
        return cls(
            option_ids=ids,
            reward=np.column_stack([m.reward for m in models]),
            transition=sp.vstack([m.transition for m in models], format="csr"),
            initiable=np.column_stack([m.initiable for m in models]),
            theta_id=theta_ids.pop() if len(theta_ids) == 1 else None,
        )

    def with_reward(self, reward: np.ndarray, theta_id=None) -> "OptionStack":
        return OptionStack(self.option_ids, reward, self.transition, self.initiable, theta_id)

    def select(self, indices: Sequence[int]) -> "OptionStack":
        """The sub-stack of the options at ``indices``, in that order."""
        idx = np.asarray(indices, dtype=int)
        if idx.size == 0:
            raise ModelError("empty option set")
        n = self.reward.shape[0]
        rows = (idx[:, None] * n + np.arange(n)).ravel()
        return OptionStack(tuple(self.option_ids[i] for i in idx), self.reward[:, idx],
                           self.transition[rows], self.initiable[:, idx], self.theta_id)

    @property
    def n_options(self) -> int:
        return len(self.option_ids)


def boltzmann_distribution(q_values, beta: float) -> np.ndarray:
    """Softmax of ``beta * q_values`` computed with max-subtraction.

    >>> boltzmann_distribution([np.log(2.0), 0.0], 1.0)
    array([0.66666667, 0.33333333])
    """
    q = np.asarray(q_values, dtype=float).ravel()
    if q.size == 0:
        raise ValueError("q_values is empty")
    if not np.all(np.isfinite(q)):
        raise ValueError("q_values must be finite")
    if not beta >= 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    z = beta * (q - q.max())
    w = np.exp(z)
    return w / w.sum()


def masked_boltzmann(q: np.ndarray, mask: np.ndarray, beta: float) -> np.ndarray:
    """Row-wise Boltzmann distribution over the entries where ``mask`` is set.

    Rows without any set entry come back all zero.
    """
    z = np.where(mask, beta * np.where(mask, q, 0.0), -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    zmax[~np.isfinite(zmax)] = 0.0
    w = np.exp(z - zmax)
    total = w.sum(axis=1, keepdims=True)
    total[total == 0] = 1.0
    return w / total


def _check_initiable(mdp: TabularMdp, initiable: np.ndarray):
    stuck = ~mdp.terminal & ~initiable.any(axis=1)
    if stuck.any():
        raise ModelError(f"non-terminal state {int(np.flatnonzero(stuck)[0])} has no initiable option")


def _matvec_operand(matrix):
    # scipy's per-call overhead dominates the fixed-point loop on tiny models
    if sp.issparse(matrix) and matrix.shape[0] * matrix.shape[1] <= _DENSE_MATVEC_LIMIT:
        return matrix.toarray()
    return matrix


def _soft_fixed_point(backup, mask, terminal, beta, warm_start, tolerance, max_iters):
    n_states = mask.shape[0]
    v = np.zeros(n_states) if warm_start is None else np.array(warm_start, dtype=float)
    if v.shape != (n_states,):
        raise ValueError(f"warm start has shape {v.shape}, expected ({n_states},)")
    v[terminal] = 0.0
    # loop-invariant pieces of masked_boltzmann; rows with no entry are pinned to zero below
    live = mask.any(axis=1)
    fill = np.where(mask | ~live[:, None], 0.0, -np.inf)
    dead = (~live).astype(float)[:, None]
    zero = terminal | ~live
    converged, residual, it = False, np.inf, 0
    for it in range(1, max_iters + 1):
        # backups are finite everywhere, so masked entries only need zero weight
        q = backup(v)
        z = beta * q + fill
        w = np.exp(z - z.max(axis=1, keepdims=True))
        w *= mask
        v_new = (w / (w.sum(axis=1, keepdims=True) + dead) * q).sum(axis=1)
        v_new[zero] = 0.0
        residual = float(np.max(np.abs(v_new - v))) if n_states else 0.0
        v = v_new
        if residual < tolerance:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"soft value iteration did not reach tolerance {tolerance} in {max_iters} "
            f"iterations (residual {residual:.3g})",
            ConvergenceWarning,
            stacklevel=3,
        )
    q = np.where(mask, backup(v), -np.inf)
    pi = masked_boltzmann(q, mask, beta)
    return v, q, pi, converged, it, residual


def soft_value_iteration(
    mdp: TabularMdp,
    options,
    theta: RewardParams | None = None,
    rationality: Rationality | float = 1.0,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    warm_start=None,
) -> SoftSolution:
    """Self-consistent Boltzmann value iteration over an option set.

    Iterates ``V(s) <- sum_o pi(s,o) [r_o(s) + sum_s' P_o(s,s') V(s')]`` where
    ``pi`` is the Boltzmann distribution over ``Q(s, o)`` restricted to options
    initiable in ``s`` and ``P_o`` is the discounted multi-time option model.
    The fixed point is not unique in general; the one returned is the one
    reached from ``warm_start`` (zeros by default).

    Parameters
    ----------
    options : OptionStack or sequence of OptionModel
        Models built against ``mdp`` and ``theta``.
    theta : RewardParams, optional
        Only used to check that the models were built for it.
    """
    beta = rationality.beta if isinstance(rationality, Rationality) else float(rationality)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    stack = options if isinstance(options, OptionStack) else OptionStack.from_models(list(options))
    if theta is not None and stack.theta_id is not None and stack.theta_id != theta.id:
        raise ModelError(f"option models were built for {stack.theta_id!r}, not {theta.id!r}")
    n_s, n_o = mdp.n_states, stack.n_options
    if stack.transition.shape != (n_o * n_s, n_s):
        raise ModelError("option models do not match the MDP's state count")
    mask = stack.initiable & ~mdp.terminal[:, None]
    _check_initiable(mdp, mask)
    reward = np.where(mask, stack.reward, 0.0)
    transition = _matvec_operand(stack.transition)

    def backup(v):
        return reward + (transition @ v).reshape(n_o, n_s).T

    v, q, pi, converged, it, residual = _soft_fixed_point(
        backup, mask, mdp.terminal, beta, warm_start, tolerance, max_iters
    )
    return SoftSolution(v, q, pi, mask, stack.option_ids, beta, converged, it, residual)


def soft_value_iteration_actions(
    mdp: TabularMdp,
    theta: RewardParams,
    rationality: Rationality | float = 1.0,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    warm_start=None,
) -> SoftSolution:
    """Self-consistent Boltzmann value iteration over raw actions (no option models)."""
    beta = rationality.beta if isinstance(rationality, Rationality) else float(rationality)
    mask = mdp.available & ~mdp.terminal[:, None]
    _check_initiable(mdp, mask)
    r_sa = theta.expected_rewards(mdp)
    t, gamma = _matvec_operand(mdp.transitions), mdp.gamma
    shape = (mdp.n_states, mdp.n_actions)

    def backup(v):
        return r_sa + gamma * (t @ v).reshape(shape)

    v, q, pi, converged, it, residual = _soft_fixed_point(
        backup, mask, mdp.terminal, beta, warm_start, tolerance, max_iters
    )
    return SoftSolution(v, q, pi, mask, tuple(range(mdp.n_actions)), beta, converged, it, residual)


def hard_value_iteration(
    mdp: TabularMdp,
    theta: RewardParams,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    warm_start=None,
) -> HardSolution:
    """Standard max-backup value iteration over atomic actions."""
    mask = mdp.available & ~mdp.terminal[:, None]
    _check_initiable(mdp, mask)
    r_sa = theta.expected_rewards(mdp)
    t, gamma = mdp.transitions, mdp.gamma
    shape = (mdp.n_states, mdp.n_actions)
    v = np.zeros(mdp.n_states) if warm_start is None else np.array(warm_start, dtype=float)
    v[mdp.terminal] = 0.0
    converged, residual, it = False, np.inf, 0
    for it in range(1, max_iters + 1):
        q = np.where(mask, r_sa + gamma * (t @ v).reshape(shape), -np.inf)
        v_new = np.where(mdp.terminal, 0.0, q.max(axis=1))
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual < tolerance:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"value iteration did not reach tolerance {tolerance} in {max_iters} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    q = np.where(mask, r_sa + gamma * (t @ v).reshape(shape), -np.inf)
    return HardSolution(v, q, converged, it, residual)


def random_mdp(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    gamma: float = 0.9,
    n_terminal: int = 1,
    branching: int = 2,
) -> TabularMdp:
    """Random sparse MDP used by tests and the oracle-check command."""
    triples = []
    for s in range(n_states):
        for a in range(n_actions):
            k = int(rng.integers(1, branching + 1))
            nxt = rng.choice(n_states, size=k, replace=False)
            p = rng.dirichlet(np.ones(k))
            triples.extend((s, a, int(s2), float(q)) for s2, q in zip(nxt, p))
    terminal = rng.choice(n_states, size=n_terminal, replace=False) if n_terminal else []
    return TabularMdp.from_triples(n_states, n_actions, triples, terminal, gamma)
