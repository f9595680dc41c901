"""Options: specifications, discounted option models and consistent-exit probabilities."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .exceptions import ModelError, OptionDivergenceError
from .mdp import OptionStack, RewardParams, TabularMdp, masked_boltzmann

logger = logging.getLogger(__name__)

ATOMIC = "atomic"
DETERMINISTIC_GOTO = "deterministic-goto"
BOLTZMANN_GOTO = "boltzmann-goto"


@dataclass(frozen=True, eq=False)
class OptionSpec:
    """Policy, initiation set and termination function of one option.

    ``policy`` is a CSR ``(n_states, n_actions)`` matrix; rows are only
    meaningful for states the option can occupy while active.
    """

    id: str
    initiation: np.ndarray
    policy: sp.csr_matrix
    termination: np.ndarray
    kind: str = ATOMIC
    action: int | None = None
    destination: tuple = ()
    label: str | None = None
    beta_o: float | None = None
    n_unreachable: int = 0

    def __post_init__(self):
        term = np.asarray(self.termination, dtype=float)
        if term.ndim != 1 or ((term < 0) | (term > 1)).any():
            raise ModelError(f"option {self.id!r}: termination probabilities must lie in [0, 1]")
        pol = sp.csr_matrix(self.policy, dtype=float)
        pol.eliminate_zeros()
        pol.sort_indices()
        sums = np.asarray(pol.sum(axis=1)).ravel()
        live = np.diff(pol.indptr) > 0
        if (np.abs(sums[live] - 1.0) > 1e-9).any():
            raise ModelError(f"option {self.id!r}: policy rows must sum to 1")
        init = np.asarray(self.initiation, dtype=bool)
        if (init & ~live).any():
            raise ModelError(f"option {self.id!r}: policy undefined on part of its initiation set")
        object.__setattr__(self, "termination", term)
        object.__setattr__(self, "policy", pol)
        object.__setattr__(self, "initiation", init)

    @property
    def n_states(self) -> int:
        return self.policy.shape[0]

    def action_probability(self, state: int, action: int) -> float:
        lo, hi = self.policy.indptr[state], self.policy.indptr[state + 1]
        idx = self.policy.indices[lo:hi]
        i = np.searchsorted(idx, action)
        if i < len(idx) and idx[i] == action:
            return float(self.policy.data[lo + i])
        return 0.0

    def to_json(self) -> dict:
        out = {"id": self.id, "kind": self.kind}
        if self.kind == ATOMIC:
            out["action"] = int(self.action)
        else:
            out["destination"] = self.label
            out["beta_o"] = self.beta_o
        return out


@dataclass(frozen=True, eq=False)
class OptionModel:
    """Discounted (multi-time) model of an option under one reward ``theta``.

    ``reward[s]`` is the expected discounted reward accumulated until the option
    terminates; ``transition[s, s']`` is the expected discount ``gamma**k`` of
    terminating in ``s'`` after ``k`` steps. Both are zero outside ``initiable``.
    """

    option: OptionSpec
    reward: np.ndarray
    transition: sp.csr_matrix
    initiable: np.ndarray
    theta_id: str | None = None


def atomic_option(action: int, mdp: TabularMdp, id: str | None = None) -> OptionSpec:
    """Wrap a primitive action as a one-step option."""
    if not 0 <= action < mdp.n_actions:
        raise ModelError(f"unknown action id {action}")
    where = mdp.available[:, action] & ~mdp.terminal
    rows = np.flatnonzero(mdp.available[:, action])
    policy = sp.csr_matrix(
        (np.ones(len(rows)), (rows, np.full(len(rows), action))),
        shape=(mdp.n_states, mdp.n_actions),
    )
    return OptionSpec(
        id=id if id is not None else str(action),
        initiation=where,
        policy=policy,
        termination=np.ones(mdp.n_states),
        kind=ATOMIC,
        action=int(action),
    )


def atomic_options(mdp: TabularMdp, names: Sequence[str] | None = None) -> list[OptionSpec]:
    names = names or [str(a) for a in range(mdp.n_actions)]
    return [atomic_option(a, mdp, names[a]) for a in range(mdp.n_actions)]


def _destination_mask(mdp: TabularMdp, destination) -> np.ndarray:
    if callable(destination):
        mask = np.asarray(destination(np.arange(mdp.n_states)), dtype=bool)
    else:
        arr = np.asarray(destination)
        if arr.dtype == bool and arr.shape == (mdp.n_states,):
            mask = arr.copy()
        else:
            mask = np.zeros(mdp.n_states, dtype=bool)
            mask[np.asarray(list(destination), dtype=int)] = True
    if mask.shape != (mdp.n_states,) or not mask.any():
        raise ModelError("destination selects no state")
    return mask


def goal_step_costs(
    mdp: TabularMdp,
    destination,
    actions: Iterable[int] | None = None,
    max_iters: int = 100_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Expected-step cost-to-go toward a destination.

    Returns ``(distance, action_cost)`` where ``distance[s]`` is the minimal
    expected number of steps from ``s`` to the destination (``inf`` when
    unreachable) and ``action_cost[s, a] = 1 + E[distance(s')]``.
    """
    dest = _destination_mask(mdp, destination)
    allowed = mdp.available.copy()
    if actions is not None:
        keep = np.zeros(mdp.n_actions, dtype=bool)
        keep[list(actions)] = True
        allowed &= keep[None, :]
    shape = (mdp.n_states, mdp.n_actions)
    d = np.where(dest, 0.0, np.inf)
    cost = np.full(shape, np.inf)
    for _ in range(max_iters):
        cost = np.where(allowed, 1.0 + (mdp.transitions @ d).reshape(shape), np.inf)
        d_new = np.where(dest, 0.0, cost.min(axis=1))
        fin = np.isfinite(d_new)
        if np.array_equal(fin, np.isfinite(d)) and np.allclose(d_new[fin], d[fin], rtol=0, atol=1e-12):
            d = d_new
            break
        d = d_new
    cost = np.where(allowed, 1.0 + (mdp.transitions @ d).reshape(shape), np.inf)
    return d, cost


def goto_option(
    mdp: TabularMdp,
    destination,
    mode: str = "deterministic",
    beta_o: float | None = None,
    actions: Iterable[int] | None = None,
    id: str | None = None,
    label: str | None = None,
) -> OptionSpec:
    """Option that navigates to ``destination`` under a uniform step cost.

    ``destination`` is a predicate over state ids, a boolean mask or an
    iterable of state ids. In ``"deterministic"`` mode the policy takes the
    cost-minimizing action (lowest action id on ties); in ``"boltzmann"`` mode
    it is Boltzmann(``beta_o``) over the negative expected step costs.
    Only ``actions`` (all actions by default) are ever emitted. States that
    cannot reach the destination are left out of the initiation set.
    """
    if mode not in ("deterministic", "boltzmann"):
        raise ValueError(f"unknown goto mode {mode!r}")
    if mode == "boltzmann" and (beta_o is None or beta_o < 0):
        raise ValueError("boltzmann goto needs a non-negative beta_o")
    dest = _destination_mask(mdp, destination)
    dist, cost = goal_step_costs(mdp, dest, actions)
    active = np.isfinite(dist) & ~dest
    finite = np.isfinite(cost) & active[:, None]
    rows = np.flatnonzero(active)
    if mode == "deterministic":
        best = np.argmin(cost[rows], axis=1)
        policy = sp.csr_matrix(
            (np.ones(len(rows)), (rows, best)), shape=(mdp.n_states, mdp.n_actions)
        )
        kind = DETERMINISTIC_GOTO
    else:
        probs = masked_boltzmann(-cost, finite, beta_o)
        policy = sp.csr_matrix(probs)
        kind = BOLTZMANN_GOTO
    unreachable = ~mdp.terminal & ~dest & ~np.isfinite(dist)
    n_unreachable = int(unreachable.sum())
    if n_unreachable:
        logger.debug("goto %s: %d states cannot reach the destination", label or id, n_unreachable)
    dest_states = tuple(int(s) for s in np.flatnonzero(dest))
    name = label if label is not None else ",".join(map(str, dest_states[:4]))
    return OptionSpec(
        id=id if id is not None else f"goto:{name}",
        initiation=active & ~mdp.terminal,
        policy=policy,
        termination=dest.astype(float),
        kind=kind,
        destination=dest_states,
        label=label,
        beta_o=beta_o if mode == "boltzmann" else None,
        n_unreachable=n_unreachable,
    )


class OptionDynamics:
    """Reward-independent part of an option model, factorized once per MDP.

    Solves ``(I - gamma M D) x = b`` where ``M`` is the option's state chain,
    ``D = diag(1 - alpha)``; entering a terminal state of the MDP always ends
    the option.
    """

    def __init__(self, option: OptionSpec, mdp: TabularMdp):
        if option.n_states != mdp.n_states or option.policy.shape[1] != mdp.n_actions:
            raise ModelError(f"option {option.id!r} was built for a different MDP")
        self.option = option
        self.mdp = mdp
        self.initiable = option.initiation & ~mdp.terminal
        n_s, n_a = mdp.n_states, mdp.n_actions
        if option.kind == ATOMIC:
            self._lu = None
            a = option.action
            rows = np.arange(n_s) * n_a + a
            t = mdp.transitions[rows]
            keep = sp.diags(self.initiable.astype(float))
            self.transition = sp.csr_matrix(keep @ (mdp.gamma * t))
            self.transition.eliminate_zeros()
            return
        pol = option.policy.tocoo()
        self._block = sp.csr_matrix(
            (pol.data, (pol.row, pol.row * n_a + pol.col)), shape=(n_s, n_s * n_a)
        )
        chain = sp.csr_matrix(self._block @ mdp.transitions)
        alpha = np.maximum(option.termination, mdp.terminal.astype(float))
        system = sp.identity(n_s, format="csc") - mdp.gamma * (chain @ sp.diags(1.0 - alpha))
        self._system = sp.csc_matrix(system)
        try:
            self._lu = splu(self._system)
        except RuntimeError as exc:
            raise OptionDivergenceError(
                f"option {option.id!r} does not terminate with probability 1"
            ) from exc
        cols = np.flatnonzero(alpha > 0)
        rhs = (mdp.gamma * chain[:, cols] @ sp.diags(alpha[cols])).toarray()
        sol = self._solve(rhs)
        sol[~self.initiable] = 0.0
        full = sp.csr_matrix((n_s, n_s))
        if len(cols):
            coo = sp.coo_matrix(sol)
            full = sp.csr_matrix((coo.data, (coo.row, cols[coo.col])), shape=(n_s, n_s))
        full.eliminate_zeros()
        self.transition = full

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise OptionDivergenceError(f"option {self.option.id!r} model diverges")
        resid = self._system @ x - rhs
        scale = 1.0 + np.max(np.abs(x)) if x.size else 1.0
        if x.size and np.max(np.abs(resid)) > 1e-10 * scale:
            raise OptionDivergenceError(
                f"option {self.option.id!r} model could not be solved to 1e-10 residual"
            )
        return x

    def reward(self, expected_rewards: np.ndarray) -> np.ndarray:
        """Discounted in-option reward from a ``(n_states, n_actions)`` reward table."""
        if self._lu is None:
            r = expected_rewards[:, self.option.action].copy()
        else:
            r = self._solve(self._block @ expected_rewards.ravel())
        r[~self.initiable] = 0.0
        return r

    def model(self, theta: RewardParams, expected_rewards: np.ndarray | None = None) -> OptionModel:
        if expected_rewards is None:
            expected_rewards = theta.expected_rewards(self.mdp)
        return OptionModel(self.option, self.reward(expected_rewards), self.transition,
                           self.initiable, theta.id)


def build_option_model(option: OptionSpec, mdp: TabularMdp, theta: RewardParams) -> OptionModel:
    """Discounted reward and transition model of ``option`` under ``theta``."""
    return OptionDynamics(option, mdp).model(theta)


class OptionModelBuilder:
    """Option models of a fixed option set for many rewards on one MDP.

    The transition part is factorized once; each :meth:`stack` call only
    solves for the reward vectors.
    """

    def __init__(self, options: Sequence[OptionSpec], mdp: TabularMdp):
        ids = [o.id for o in options]
        if len(set(ids)) != len(ids):
            raise ModelError("option ids must be unique")
        self.options = list(options)
        self.mdp = mdp
        self.dynamics = [OptionDynamics(o, mdp) for o in self.options]

    @cached_property
    def _template(self) -> OptionStack:
        return OptionStack(
            option_ids=tuple(o.id for o in self.options),
            reward=np.zeros((self.mdp.n_states, len(self.options))),
            transition=sp.vstack([d.transition for d in self.dynamics], format="csr"),
            initiable=np.column_stack([d.initiable for d in self.dynamics]),
        )

    def models(self, theta: RewardParams) -> list[OptionModel]:
        r_sa = theta.expected_rewards(self.mdp)
        return [d.model(theta, r_sa) for d in self.dynamics]

    def stack(self, theta: RewardParams) -> OptionStack:
        r_sa = theta.expected_rewards(self.mdp)
        reward = np.column_stack([d.reward(r_sa) for d in self.dynamics])
        return self._template.with_reward(reward, theta.id)


def exit_probabilities(
    option: OptionSpec,
    states: Sequence[int],
    actions: Sequence[int],
    start: int = 0,
    terminal: np.ndarray | None = None,
    open_end: bool = False,
) -> list[tuple[int, float]]:
    """Consistent-exit probabilities of ``option`` started at position ``start``.

    Returns ``(end, p)`` for every end position with ``p > 0``: the probability
    that the option, initiated in ``states[start]``, emits exactly
    ``actions[start:end]`` and terminates in ``states[end]``. With ``open_end``
    the final position of the trajectory needs no termination (the option may
    still be running when observation stops).
    """
    n = len(actions)
    s0 = states[start]
    if not option.initiation[s0] or (terminal is not None and terminal[s0]):
        return []
    out = []
    p = 1.0
    for t in range(start, n):
        p *= option.action_probability(states[t], actions[t])
        if p == 0.0:
            break
        nxt = states[t + 1]
        alpha = option.termination[nxt]
        if terminal is not None and terminal[nxt]:
            alpha = 1.0
        if open_end and t + 1 == n:
            out.append((n, p))
            break
        if alpha > 0.0:
            out.append((t + 1, p * alpha))
        p *= 1.0 - alpha
        if p == 0.0:
            break
    return out


class OptionSetIndex:
    """An option set with policies, terminations and initiation sets stacked for lookups.

    Behaves as a read-only sequence of its options.
    """

    def __init__(self, options: Iterable[OptionSpec]):
        self.options = list(options)
        if not self.options:
            raise ModelError("empty option set")
        ids = [o.id for o in self.options]
        if len(set(ids)) != len(ids):
            raise ModelError("option ids must be unique")
        self.n_states = self.options[0].policy.shape[0]
        self.policy = sp.vstack([o.policy for o in self.options], format="csr")
        self.termination = np.vstack([o.termination for o in self.options])
        self.initiation = np.vstack([o.initiation for o in self.options])

    def __len__(self):
        return len(self.options)

    def __getitem__(self, i):
        return self.options[i]

    def __iter__(self):
        return iter(self.options)

    def exit_table(self, states, actions, terminal=None, open_end=False) -> list[list[tuple]]:
        """``table[i]`` lists ``(end, option_index, p)`` for every positive consistent exit from ``i``.

        Same arithmetic, in the same order, as :func:`exit_probabilities`,
        vectorized across options.
        """
        states = np.asarray(states, dtype=int)
        actions = np.asarray(actions, dtype=int)
        n, n_opt = len(actions), len(self.options)
        rows = (np.arange(n_opt)[:, None] * self.n_states + states[:-1][None, :]).ravel()
        pi = np.asarray(self.policy[rows, np.tile(actions, n_opt)]).reshape(n_opt, n)
        alpha = self.termination[:, states]
        start_ok = self.initiation[:, states[:-1]]
        if terminal is not None:
            alpha[:, terminal[states]] = 1.0
            start_ok = start_ok & ~terminal[states[:-1]]
        table = []
        for i in range(n):
            row = []
            run = start_ok[:, i].astype(float)
            for e in range(i + 1, n + 1):
                run = run * pi[:, e - 1]
                out = run if open_end and e == n else run * alpha[:, e]
                row.extend((e, int(k), float(out[k])) for k in np.flatnonzero(out > 0.0))
                if e == n:
                    break
                run = run * (1.0 - alpha[:, e])
                if not run.any():
                    break
            table.append(row)
        return table


def as_option_index(options) -> OptionSetIndex:
    return options if isinstance(options, OptionSetIndex) else OptionSetIndex(options)


def consistent_exit_probability(
    option: OptionSpec,
    states: Sequence[int],
    actions: Sequence[int],
    terminal: np.ndarray | None = None,
    open_end: bool = False,
) -> float:
    """Probability the option emits exactly this segment and stops at its last state.

    ``states`` has one more entry than ``actions``. A first state outside the
    initiation set, or any action the policy would not take, gives 0.
    """
    if len(actions) == 0 or len(states) != len(actions) + 1:
        raise ValueError("a segment needs n >= 1 actions and n + 1 states")
    for end, p in exit_probabilities(option, states, actions, 0, terminal, open_end):
        if end == len(actions):
            return p
    return 0.0


def option_library_to_json(options: Iterable[OptionSpec]) -> list[dict]:
    return [o.to_json() for o in options]


def option_library_from_json(
    entries: Iterable[dict],
    mdp: TabularMdp,
    resolve: Callable[[str], object],
    actions: Iterable[int] | None = None,
) -> list[OptionSpec]:
    """Rebuild options from :func:`option_library_to_json` output.

    ``resolve`` maps a destination label to anything :func:`goto_option`
    accepts as a destination.
    """
    out = []
    for e in entries:
        kind = e["kind"]
        if kind == ATOMIC:
            out.append(atomic_option(int(e["action"]), mdp, e["id"]))
        elif kind in (DETERMINISTIC_GOTO, BOLTZMANN_GOTO):
            mode = "deterministic" if kind == DETERMINISTIC_GOTO else "boltzmann"
            out.append(goto_option(mdp, resolve(e["destination"]), mode, e.get("beta_o"),
                                   actions, e["id"], e["destination"]))
        else:
            raise ValueError(f"unknown option kind {kind!r}")
    return out
