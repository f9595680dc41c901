"""Modified taxi-driver gridworld with a free-cell reward family.

Grid cells are ``(x, y)`` with the origin at the bottom-left. A state is
(taxi cell, passenger location, destination); the passenger location is a
landmark or ``InTaxi``. States where the passenger already waits at its own
destination are terminal: a successful drop-off leads there.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from ..inference import ActionTrajectory
from ..mdp import RewardParams, TabularMdp, soft_value_iteration
from ..options import OptionModelBuilder, OptionSpec, atomic_options, goto_option
from ..simulate import rollout_option, simulate_agent

GRID = 5
ACTIONS = ("N", "E", "S", "W", "Pickup", "Putdown")
N, E, S, W, PICKUP, PUTDOWN = range(6)
MOVES = {N: (0, 1), E: (1, 0), S: (0, -1), W: (-1, 0)}
MOVE_ACTIONS = (N, E, S, W)
LANDMARK_NAMES = ("R", "G", "B", "Y")
PASSENGER_LOCATIONS = LANDMARK_NAMES + ("InTaxi",)
IN_TAXI = 4
N_STATES = GRID * GRID * len(PASSENGER_LOCATIONS) * len(LANDMARK_NAMES)
MAX_FREE_CELLS = 5
DEFAULT_GAMMA = 0.95


def _wall(a, b):
    return frozenset((a, b))


@dataclass(frozen=True)
class TaxiLayout:
    landmarks: dict
    named_cells: dict
    walls: frozenset
    option_destination_universe: tuple

    def blocked(self, cell, move) -> bool:
        x, y = cell
        dx, dy = MOVES[move]
        nx, ny = x + dx, y + dy
        if not (0 <= nx < GRID and 0 <= ny < GRID):
            return True
        return _wall(cell, (nx, ny)) in self.walls

    def step(self, cell, move):
        if self.blocked(cell, move):
            return cell
        dx, dy = MOVES[move]
        return (cell[0] + dx, cell[1] + dy)

    def to_json(self) -> dict:
        return {
            "grid": GRID,
            "actions": list(ACTIONS),
            "landmarks": {k: list(v) for k, v in self.landmarks.items()},
            "named_cells": {k: list(v) for k, v in self.named_cells.items()},
            "walls": sorted([sorted(list(c) for c in w) for w in self.walls]),
            "option_destination_universe": [list(c) for c in self.option_destination_universe],
        }


LAYOUT = TaxiLayout(
    landmarks={"R": (1, 4), "G": (4, 4), "B": (3, 0), "Y": (0, 0)},
    named_cells={"R": (1, 4), "R1": (0, 4), "G": (4, 4), "B": (3, 0), "B1": (4, 0), "Y": (0, 0)},
    walls=frozenset({
        _wall((0, 0), (1, 0)), _wall((0, 1), (1, 1)),
        _wall((1, 3), (2, 3)), _wall((1, 4), (2, 4)),
        _wall((2, 0), (3, 0)), _wall((2, 1), (3, 1)),
    }),
    option_destination_universe=tuple(
        [(x, y) for y in (3, 4) for x in range(GRID)]
        + [(0, 0), (0, 1), (3, 0), (3, 1), (4, 0), (4, 1)]
    ),
)


@dataclass(frozen=True)
class TaxiState:
    taxi_pos: tuple
    passenger: int
    destination: int

    def encode(self) -> int:
        return encode(self.taxi_pos, self.passenger, self.destination)


def cell_index(cell) -> int:
    return cell[0] * GRID + cell[1]


def index_cell(i: int) -> tuple:
    return (i // GRID, i % GRID)


def encode(cell, passenger: int, destination: int) -> int:
    return ((cell_index(cell) * len(PASSENGER_LOCATIONS)) + passenger) * len(LANDMARK_NAMES) + destination


def decode(state: int) -> TaxiState:
    rest, dest = divmod(int(state), len(LANDMARK_NAMES))
    cell, passenger = divmod(rest, len(PASSENGER_LOCATIONS))
    return TaxiState(index_cell(cell), passenger, dest)


_DECODED = [decode(s) for s in range(N_STATES)]
STATE_CELL = np.array([cell_index(d.taxi_pos) for d in _DECODED])
TERMINAL = np.array([d.passenger == d.destination for d in _DECODED])


def _landmark_cell(i):
    return LAYOUT.landmarks[LANDMARK_NAMES[i]]


PICKUP_OK = np.array([
    d.passenger < IN_TAXI and d.passenger != d.destination and d.taxi_pos == _landmark_cell(d.passenger)
    for d in _DECODED
])
PUTDOWN_OK = np.array([
    d.passenger == IN_TAXI and d.taxi_pos == _landmark_cell(d.destination) for d in _DECODED
])
START_STATES = np.array([
    s for s, d in enumerate(_DECODED) if d.passenger < IN_TAXI and d.passenger != d.destination
])


def _next_state(state: int, action: int) -> int:
    d = _DECODED[state]
    if action in MOVES:
        return encode(LAYOUT.step(d.taxi_pos, action), d.passenger, d.destination)
    if action == PICKUP and PICKUP_OK[state]:
        return encode(d.taxi_pos, IN_TAXI, d.destination)
    if action == PUTDOWN and PUTDOWN_OK[state]:
        return encode(d.taxi_pos, d.destination, d.destination)
    return state


@lru_cache(maxsize=8)
def taxi_mdp(gamma: float = DEFAULT_GAMMA) -> TabularMdp:
    """Transition structure of the taxi world (shared by every reward)."""
    triples = [(s, a, _next_state(s, a), 1.0) for s in range(N_STATES) for a in range(len(ACTIONS))]
    return TabularMdp.from_triples(N_STATES, len(ACTIONS), triples, np.flatnonzero(TERMINAL), gamma)


class TaxiTheta(RewardParams):
    """Classic taxi rewards except that entering any of ``free_cells`` costs 0.

    Moves cost -1 (0 when the cell occupied after the move is free, including
    a blocked move that leaves the taxi where it was). A successful pickup
    costs -1, failed pickups and drop-offs -10, a successful drop-off pays +20.
    """

    def __init__(self, free_cells: Sequence = ()):
        cells = tuple(sorted({(int(x), int(y)) for x, y in free_cells}))
        if len(cells) != len(tuple(free_cells)):
            raise ValueError("free cells must be distinct")
        if len(cells) > MAX_FREE_CELLS:
            raise ValueError(f"at most {MAX_FREE_CELLS} free cells")
        if any(not (0 <= x < GRID and 0 <= y < GRID) for x, y in cells):
            raise ValueError("free cell off the grid")
        self.free_cells = cells
        self.id = "free:" + ";".join(f"{x},{y}" for x, y in cells)
        self._free = np.zeros(GRID * GRID, dtype=bool)
        for c in cells:
            self._free[cell_index(c)] = True

    @classmethod
    def from_id(cls, theta_id: str) -> "TaxiTheta":
        body = theta_id.split(":", 1)[1] if ":" in theta_id else theta_id
        cells = [tuple(int(v) for v in c.split(",")) for c in body.split(";") if c]
        return cls(cells)

    def __eq__(self, other):
        return isinstance(other, TaxiTheta) and other.free_cells == self.free_cells

    def __hash__(self):
        return hash(self.free_cells)

    def reward(self, state, action, next_state):
        state = np.asarray(state)
        action = np.asarray(action)
        next_state = np.asarray(next_state)
        move = np.where(self._free[STATE_CELL[next_state]], 0.0, -1.0)
        pickup = np.where(PICKUP_OK[state], -1.0, -10.0)
        putdown = np.where(PUTDOWN_OK[state], 20.0, -10.0)
        return np.where(action < PICKUP, move, np.where(action == PICKUP, pickup, putdown))


def build_taxi_mdp(theta: TaxiTheta | None = None, gamma: float = DEFAULT_GAMMA):
    """The taxi MDP and its reward under ``theta`` (no free cells by default)."""
    return taxi_mdp(gamma), theta if theta is not None else TaxiTheta()


def taxi_theta_count(ordered: bool = False, max_free: int = MAX_FREE_CELLS) -> int:
    """Size of the free-cell reward family.

    Unordered sets of up to ``max_free`` distinct cells number 68,406; ordered
    distinct 5-tuples number 25*24*23*22*21 = 6,375,600.
    """
    n = GRID * GRID
    if ordered:
        return math.perm(n, max_free)
    return sum(math.comb(n, k) for k in range(max_free + 1))


def enumerate_taxi_thetas(max_free: int = MAX_FREE_CELLS) -> Iterator[TaxiTheta]:
    cells = [index_cell(i) for i in range(GRID * GRID)]
    for k in range(max_free + 1):
        for combo in itertools.combinations(cells, k):
            yield TaxiTheta(combo)


def sample_taxi_thetas(rng: np.random.Generator, count: int, max_free: int = MAX_FREE_CELLS) -> list[TaxiTheta]:
    """Draws from the hierarchical prior: ``k`` uniform in ``0..max_free``, then a uniform ``k``-subset."""
    out = []
    for _ in range(count):
        k = int(rng.integers(0, max_free + 1))
        idx = rng.choice(GRID * GRID, size=k, replace=False)
        out.append(TaxiTheta([index_cell(int(i)) for i in idx]))
    return out


def taxi_theta_space(mode: str = "enumerate", seed: int | None = None, count: int | None = None):
    if mode == "enumerate":
        return list(enumerate_taxi_thetas())
    if mode == "sample":
        if seed is None or count is None:
            raise ValueError("sampling needs a seed and a count")
        return sample_taxi_thetas(np.random.default_rng(seed), count)
    raise ValueError(f"unknown mode {mode!r}")


def taxi_theta_log_prior(theta: TaxiTheta, max_free: int = MAX_FREE_CELLS) -> float:
    k = len(theta.free_cells)
    return -math.log(max_free + 1) - math.log(math.comb(GRID * GRID, k))


def theta_neighbours(theta: TaxiTheta, max_free: int = MAX_FREE_CELLS) -> list[TaxiTheta]:
    """Every reward one edit away: one free cell added, removed or moved."""
    cells = set(theta.free_cells)
    others = [index_cell(i) for i in range(GRID * GRID) if index_cell(i) not in cells]
    out = []
    if len(cells) < max_free:
        out += [TaxiTheta(sorted(cells | {c})) for c in others]
    for c in sorted(cells):
        rest = cells - {c}
        out.append(TaxiTheta(sorted(rest)))
        out += [TaxiTheta(sorted(rest | {d})) for d in others]
    return out


def reduced_theta_support(true_theta: TaxiTheta, size: int, seed: int,
                          neighbours: bool = False) -> list[TaxiTheta]:
    """``true_theta`` plus distinct prior draws up to ``size``, in draw order.

    With ``neighbours`` the truth's one-edit neighbours come right after it,
    so the support holds the alternatives that differ from it the least.
    """
    rng = np.random.default_rng(seed)
    support = [true_theta]
    seen = {true_theta}
    if neighbours:
        for theta in theta_neighbours(true_theta):
            if theta not in seen and len(support) < size:
                seen.add(theta)
                support.append(theta)
    while len(support) < size:
        (theta,) = sample_taxi_thetas(rng, 1)
        if theta not in seen:
            seen.add(theta)
            support.append(theta)
    return support


def cell_goto_option(mdp: TabularMdp, cell, label: str | None = None) -> OptionSpec:
    """Deterministic navigation option to a grid cell, whatever the passenger state."""
    target = cell_index(cell)
    label = label or f"{cell[0]},{cell[1]}"
    return goto_option(mdp, lambda s: STATE_CELL[s] == target, "deterministic",
                       actions=MOVE_ACTIONS, id=f"goto:{label}", label=label)


def taxi_atomic_options(mdp: TabularMdp) -> list[OptionSpec]:
    return atomic_options(mdp, list(ACTIONS))


def default_taxi_options(mdp: TabularMdp | None = None) -> list[OptionSpec]:
    """The six atomic options plus deterministic goto R1 and goto B1."""
    mdp = mdp or taxi_mdp()
    return taxi_atomic_options(mdp) + [
        cell_goto_option(mdp, LAYOUT.named_cells["R1"], "R1"),
        cell_goto_option(mdp, LAYOUT.named_cells["B1"], "B1"),
    ]


def destination_universe_options(mdp: TabularMdp | None = None) -> list[OptionSpec]:
    """Goto options for the 16 cells near the landmarks."""
    mdp = mdp or taxi_mdp()
    return [cell_goto_option(mdp, c) for c in LAYOUT.option_destination_universe]


def option_set_universe(max_options: int = 3, n_destinations: int = 16) -> list[frozenset]:
    """All sets of up to ``max_options`` destination indices (697 for the defaults)."""
    return [frozenset(c) for k in range(max_options + 1)
            for c in itertools.combinations(range(n_destinations), k)]


def resolve_cell_label(label: str):
    """Turn ``"R1"`` or ``"x,y"`` into a state predicate for :func:`goto_option`."""
    cell = LAYOUT.named_cells.get(label)
    if cell is None:
        cell = tuple(int(v) for v in label.split(","))
    target = cell_index(cell)
    return lambda s: STATE_CELL[s] == target


def sample_start_state(rng: np.random.Generator) -> int:
    return int(START_STATES[rng.integers(len(START_STATES))])


def simulate_hierarchical_agent(
    theta: TaxiTheta,
    option_library: Sequence[OptionSpec],
    beta: float,
    seed: int,
    n_trajectories: int,
    max_steps: int = 200,
    gamma: float = DEFAULT_GAMMA,
) -> list[ActionTrajectory]:
    """Trajectories of a Boltzmann planner over ``option_library`` in the taxi world.

    Starts are uniform over (cell, passenger landmark, distinct destination).
    Trajectories that hit ``max_steps`` are kept and flagged ``truncated``.
    """
    mdp = taxi_mdp(gamma)
    sol = soft_value_iteration(mdp, OptionModelBuilder(option_library, mdp).stack(theta), theta, beta)
    rng = np.random.default_rng(seed)
    return simulate_agent(mdp, option_library, sol, sample_start_state, rng, n_trajectories,
                          max_steps, id_prefix=f"taxi-{seed}")
