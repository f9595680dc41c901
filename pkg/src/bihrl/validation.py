"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import math
import operator
from typing import Iterable, Sequence

from .exceptions import ContractError
from .inference import ActionTrajectory
from .mdp import RewardParams, TabularMdp


def check_beta(beta, name: str = "beta") -> float:
    try:
        value = float(beta)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a number, got {beta!r}") from None
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and non-negative, got {beta!r}")
    return value


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    try:
        value = operator.index(value)
    except TypeError:
        raise ValueError(f"{name} must be an integer, got {value!r}") from None
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_seed(seed) -> int:
    if seed is None:
        raise ValueError("a seed is required for stochastic runs")
    return check_positive_int(seed, "seed", minimum=0)


def check_trajectories(X, mdp: TabularMdp | None = None) -> list[ActionTrajectory]:
    """Coerce ``X`` to a non-empty list of trajectories, checking them against ``mdp`` if given.

    Items may be :class:`ActionTrajectory` objects, ``(states, actions)`` pairs
    or dicts in the JSON layout.
    """
    if isinstance(X, ActionTrajectory):
        X = [X]
    out = []
    for i, item in enumerate(X):
        if isinstance(item, ActionTrajectory):
            t = item
        elif isinstance(item, dict):
            t = ActionTrajectory.from_json(item)
        else:
            try:
                states, actions = item
            except (TypeError, ValueError):
                raise ValueError(f"item {i} is not a trajectory") from None
            t = ActionTrajectory(states, actions, f"traj-{i}")
        if mdp is not None:
            t.check(mdp)
        out.append(t)
    if not out:
        raise ValueError("no trajectories given")
    return out


def check_support(support: Iterable[RewardParams]) -> list[RewardParams]:
    support = list(support)
    if not support:
        raise ValueError("reward support is empty")
    ids = [t.id for t in support]
    if len(set(ids)) != len(ids):
        raise ContractError("reward support has duplicate ids")
    return support


def check_option_ids(options: Sequence) -> None:
    ids = [o.id for o in options]
    if len(set(ids)) != len(ids):
        raise ContractError("option ids must be unique")
