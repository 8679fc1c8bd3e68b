"""Goal-space planning over a (storage level x time period) grid.

Subgoals are grid cells. Observed trajectories yield goal-to-goal records
(discounted return and discount between goals in adjacent periods); these
form a period-layered DAG that is pruned to its initial-to-terminal core and
solved by a single backward value-iteration sweep. A two-head network learns
state-to-goal return and discount, and the projected value of the best
nearby next-period goal is used as a shaping potential.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .approximator import AdamState, TwoHeadModel, adam_step
from .errors import ContractError, NumericError, ValidationError

log = logging.getLogger(__name__)


class Subgoal(NamedTuple):
    period: int  # 1..Q-1 (period 0 holds no goals)
    level: int   # 0..L-1


@dataclass(frozen=True)
class GoalGrid:
    num_levels: int = 40
    num_periods: int = 16
    horizon_steps: int = 72
    tank_capacity: float = 1.0
    tolerance_frac: float = 0.4
    nearby_radius: int = 5

    def __post_init__(self):
        if self.num_levels < 2:
            raise ValidationError("num_levels must be >= 2")
        if not 2 <= self.num_periods <= self.horizon_steps:
            raise ValidationError("num_periods must be in [2, horizon_steps]")
        if not 0 < self.tolerance_frac < 0.5:
            raise ValidationError("tolerance_frac must be in (0, 0.5) so goals are disjoint")
        if self.nearby_radius < 0:
            raise ValidationError("nearby_radius must be >= 0")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(0.0, self.tank_capacity, self.num_levels)

    @property
    def spacing(self) -> float:
        return self.tank_capacity / (self.num_levels - 1)

    @property
    def tolerance(self) -> float:
        return self.tolerance_frac * self.spacing

    @property
    def terminal_period(self) -> int:
        return self.num_periods - 1

    @property
    def num_goals(self) -> int:
        return self.num_levels * (self.num_periods - 1)

    def period_of(self, t):
        """Period index of step ``t`` (vectorised); step T joins the last period."""
        t = np.asarray(t)
        p = np.minimum((t * self.num_periods) // self.horizon_steps, self.num_periods - 1)
        return int(p) if p.ndim == 0 else p

    def period_steps(self, q: int) -> range:
        lo = -(-q * self.horizon_steps // self.num_periods)
        hi = -(-(q + 1) * self.horizon_steps // self.num_periods)
        if q == self.num_periods - 1:
            hi = self.horizon_steps + 1
        return range(lo, hi)

    def nearest_level(self, level):
        lv = np.rint(np.asarray(level, dtype=float) / self.spacing).astype(np.int64)
        lv = np.clip(lv, 0, self.num_levels - 1)
        return int(lv) if lv.ndim == 0 else lv

    def member_level(self, level):
        """Level index whose center is within tolerance, else -1 (vectorised)."""
        lv = np.asarray(self.nearest_level(level))
        dist = np.abs(np.asarray(level, dtype=float) - lv * self.spacing)
        out = np.where(dist <= self.tolerance, lv, -1)
        return int(out) if out.ndim == 0 else out

    def coords(self, goal: Subgoal) -> tuple[float, float]:
        return goal.level / (self.num_levels - 1), goal.period / (self.num_periods - 1)

    def goals(self):
        return [Subgoal(q, l) for q in range(1, self.num_periods) for l in range(self.num_levels)]


def goal_membership(level: float, t: int, grid: GoalGrid) -> Subgoal | None:
    """Goal containing a state with storage ``level`` at step ``t``, if any."""
    q = grid.period_of(t)
    if q == 0:
        return None
    lv = grid.member_level(level)
    return None if lv < 0 else Subgoal(q, lv)


def shape_reward(r, phi, phi_next, gamma, done=False):
    """Potential-based shaping ``r + gamma*phi_next - phi``.

    The successor potential is taken as zero on terminal transitions so that
    sums over an episode telescope to ``-phi(x_0)`` when ``gamma == 1``.
    """
    phi_next = np.where(done, 0.0, phi_next)
    out = np.asarray(r, dtype=float) + gamma * phi_next - np.asarray(phi, dtype=float)
    return float(out) if out.ndim == 0 else out


# -- extraction ---------------------------------------------------------------------

class GoalRecord(NamedTuple):
    source: Subgoal
    target: Subgoal
    reward: float
    discount: float
    steps: int


class TerminalRecord(NamedTuple):
    goal: Subgoal
    reward: float


class StateGoalSample(NamedTuple):
    state: np.ndarray
    goal: Subgoal
    reward: float
    discount: float
    steps: int


@dataclass
class Extraction:
    records: list[GoalRecord] = field(default_factory=list)
    terminals: list[TerminalRecord] = field(default_factory=list)
    samples: list[StateGoalSample] = field(default_factory=list)

    def extend(self, other: "Extraction"):
        self.records += other.records
        self.terminals += other.terminals
        self.samples += other.samples


def _default_level(obs, grid):
    return float(obs[0]) * grid.tank_capacity


def extract_goal_transitions(trajectory, grid: GoalGrid, gamma: float,
                             level_fn=None) -> Extraction:
    """Goal-to-goal records and state-to-goal samples from one episode.

    The membership event of a period is the last state in it that belongs to
    a goal; in the terminal period only the final state counts, and only when
    the episode actually ended. Records link events of adjacent periods. The
    terminal bonus is split off the last reward and reported separately as a
    terminal record, so the terminal goal carries it.

    ``trajectory`` is a time-ordered list of transitions (``state``,
    ``reward``, ``next_state``, ``done``, ``step``, ``terminal_reward``).
    ``level_fn(obs, grid)`` returns the storage level encoded in an
    observation.
    """
    out = Extraction()
    if not trajectory:
        return out
    level_fn = level_fn or _default_level
    states = [tr.state for tr in trajectory] + [trajectory[-1].next_state]
    steps = [int(tr.step) for tr in trajectory] + [int(trajectory[-1].step) + 1]
    rewards = [float(tr.reward) for tr in trajectory]
    ended = bool(trajectory[-1].done)
    term_r = float(trajectory[-1].terminal_reward) if ended else 0.0
    if ended:
        rewards[-1] -= term_r
    n = len(states)
    if any(steps[k + 1] != steps[k] + 1 for k in range(n - 1)):
        raise ContractError("trajectory steps are not contiguous")

    periods = [grid.period_of(t) for t in steps]
    levels = [grid.member_level(level_fn(s, grid)) for s in states]
    tp = grid.terminal_period

    events: dict[int, int] = {}  # period -> state index
    for k in range(n):
        q = periods[k]
        if q == 0 or levels[k] < 0:
            continue
        if q == tp and not (ended and k == n - 1):
            continue
        events[q] = k

    # discounted return-to-target for every state, one target per period
    for q in sorted(events):
        j = events[q]
        goal = Subgoal(q, levels[j])
        G = 0.0
        for t in range(j - 1, -1, -1):
            if periods[t] < q - 1:
                break
            G = rewards[t] + gamma * G
            h = j - t
            disc = gamma ** h
            if periods[t] == q - 1:
                out.samples.append(StateGoalSample(np.asarray(states[t], dtype=float),
                                                   goal, G, disc, h))
                if events.get(q - 1) == t:
                    src = Subgoal(q - 1, levels[t])
                    out.records.append(GoalRecord(src, goal, G, disc, h))
    if ended and tp in events:
        out.terminals.append(TerminalRecord(Subgoal(tp, levels[events[tp]]), term_r))
    return out


# -- graph --------------------------------------------------------------------------

@dataclass
class EdgeStats:
    reward: float
    discount: float
    count: int = 1

    def add(self, reward, discount):
        self.count += 1
        self.reward += (reward - self.reward) / self.count
        self.discount += (discount - self.discount) / self.count


@dataclass
class GoalGraph:
    nodes: set = field(default_factory=set)
    edges: dict = field(default_factory=dict)       # (g, g') -> EdgeStats
    terminal: dict = field(default_factory=dict)    # g -> [mean reward, count]
    values: dict = field(default_factory=dict)      # g -> value

    def successors(self, g):
        return [b for (a, b) in self.edges if a == g]

    def adjacency(self):
        succ = {g: [] for g in self.nodes}
        pred = {g: [] for g in self.nodes}
        for a, b in self.edges:
            succ[a].append(b)
            pred[b].append(a)
        return succ, pred

    def remove(self, doomed):
        doomed = set(doomed)
        self.nodes -= doomed
        self.edges = {e: s for e, s in self.edges.items()
                      if e[0] not in doomed and e[1] not in doomed}
        self.terminal = {g: v for g, v in self.terminal.items() if g not in doomed}
        self.values = {g: v for g, v in self.values.items() if g not in doomed}

    def copy(self) -> "GoalGraph":
        return GoalGraph(set(self.nodes),
                         {e: EdgeStats(s.reward, s.discount, s.count) for e, s in self.edges.items()},
                         {g: list(v) for g, v in self.terminal.items()},
                         dict(self.values))

    @property
    def empty(self) -> bool:
        return not self.nodes

    def to_json(self) -> dict:
        return {
            "nodes": sorted([list(g) for g in self.nodes]),
            "edges": [[*a, *b, s.reward, s.discount, s.count]
                      for (a, b), s in sorted(self.edges.items())],
            "terminal": [[*g, v[0], v[1]] for g, v in sorted(self.terminal.items())],
            "values": [[*g, v] for g, v in sorted(self.values.items())],
        }

    @classmethod
    def from_json(cls, data) -> "GoalGraph":
        g = cls()
        g.nodes = {Subgoal(int(q), int(l)) for q, l in data["nodes"]}
        for q, l, q2, l2, r, d, c in data["edges"]:
            g.edges[(Subgoal(int(q), int(l)), Subgoal(int(q2), int(l2)))] = EdgeStats(r, d, int(c))
        for q, l, r, c in data["terminal"]:
            g.terminal[Subgoal(int(q), int(l))] = [r, int(c)]
        for q, l, v in data["values"]:
            g.values[Subgoal(int(q), int(l))] = v
        return g


def build_graph(records, grid: GoalGrid, terminals=()) -> GoalGraph:
    graph = GoalGraph()
    for rec in records:
        a, b = rec.source, rec.target
        if b.period != a.period + 1:
            raise ContractError(f"record {a}->{b} does not join adjacent periods")
        graph.nodes.update((a, b))
        stats = graph.edges.get((a, b))
        if stats is None:
            graph.edges[(a, b)] = EdgeStats(rec.reward, rec.discount)
        else:
            stats.add(rec.reward, rec.discount)
    for rec in terminals:
        if rec.goal.period != grid.terminal_period:
            raise ContractError(f"terminal record for non-terminal goal {rec.goal}")
        graph.nodes.add(rec.goal)
        entry = graph.terminal.setdefault(rec.goal, [0.0, 0])
        entry[1] += 1
        entry[0] += (rec.reward - entry[0]) / entry[1]
    return graph


def _bfs(sources, neighbours):
    seen = set(sources)
    queue = deque(sources)
    while queue:
        g = queue.popleft()
        for h in neighbours[g]:
            if h not in seen:
                seen.add(h)
                queue.append(h)
    return seen


def prune_graph(graph: GoalGraph, grid: GoalGrid) -> GoalGraph:
    """Keep only goals on some first-period-to-terminal-period path.

    Backward BFS from terminal-period goals removes dead ends; forward BFS
    from the surviving first-period goals then removes orphans. Returns a
    pruned copy; the input graph is not modified.
    """
    out = graph.copy()
    _, pred = out.adjacency()
    terminal = [g for g in out.nodes if g.period == grid.terminal_period]
    out.remove(out.nodes - _bfs(terminal, pred))

    succ, _ = out.adjacency()
    initial = [g for g in out.nodes if g.period == 1]
    out.remove(out.nodes - _bfs(initial, succ))
    if out.empty and graph.nodes:
        log.debug("goal graph pruned to empty (%d nodes before)", len(graph.nodes))
    return out


def value_iteration(graph: GoalGraph, grid: GoalGrid) -> dict:
    """Exact goal values on a pruned, period-layered DAG.

    Terminal goals take their mean observed terminal reward; every other goal
    takes the best ``r + discount * value`` over its successors, swept in
    reverse period order. Values are stored on ``graph.values`` and returned.
    """
    succ, _ = graph.adjacency()
    values = {}
    for g in sorted(graph.nodes, key=lambda g: -g.period):
        if g.period == grid.terminal_period:
            values[g] = graph.terminal.get(g, [0.0, 0])[0]
            continue
        if not succ[g]:
            raise ContractError(f"goal {g} has no successor; prune the graph first")
        best = -np.inf
        for h in succ[g]:
            if h.period != g.period + 1:
                raise ContractError(f"edge {g}->{h} skips periods")
            s = graph.edges[(g, h)]
            best = max(best, s.reward + s.discount * values[h])
        values[g] = best
    graph.values = values
    return values


def value_table(graph: GoalGraph, grid: GoalGrid) -> np.ndarray:
    """Dense ``(Q, L)`` table of goal values, NaN where no goal survives."""
    table = np.full((grid.num_periods, grid.num_levels), np.nan)
    for g, v in graph.values.items():
        table[g.period, g.level] = v
    return table


# -- state-to-goal models -----------------------------------------------------------

def model_inputs(states, goals, grid: GoalGrid) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    coords = np.array([grid.coords(g) for g in goals], dtype=float).reshape(-1, 2)
    return np.concatenate([states, coords], axis=1)


def train_state_goal_models(samples, model: TwoHeadModel, opt: AdamState,
                            steps: int = 100, batch_size: int = 128,
                            rng: np.random.Generator | None = None,
                            grid: GoalGrid | None = None, inputs=None, targets=None):
    """Minibatch Adam on the joint squared error of both heads.

    Either pass ``samples`` (with ``grid``) or precomputed ``inputs`` and
    ``targets=(returns, discounts)``. Returns the list of batch losses;
    batches with a non-finite loss are skipped.
    """
    if inputs is None:
        if not samples:
            raise ValueError("no state-to-goal samples to train on")
        inputs = model_inputs([s.state for s in samples], [s.goal for s in samples], grid)
        targets = (np.array([s.reward for s in samples]), np.array([s.discount for s in samples]))
    if len(inputs) == 0:
        raise ValueError("no state-to-goal samples to train on")
    rng = rng if rng is not None else np.random.default_rng(0)
    r_all, g_all = targets
    n = len(inputs)
    losses = []
    for _ in range(steps):
        idx = rng.choice(n, size=batch_size, replace=False) if n > batch_size else np.arange(n)
        loss, grads = model.loss_and_grads(inputs[idx], r_all[idx], g_all[idx])
        if not np.isfinite(loss):
            log.warning("non-finite state-to-goal loss; batch skipped")
            continue
        try:
            adam_step(model.params(), grads, opt)
        except NumericError as exc:
            log.warning("%s", exc)
            continue
        losses.append(loss)
    return losses


def project_value(states, levels, steps, grid: GoalGrid, graph_values: np.ndarray,
                  model: TwoHeadModel) -> np.ndarray:
    """Projected value of the best nearby goal in the next period.

    ``graph_values`` is the dense table from :func:`value_table`. Nearby
    goals are surviving goals in the period after the state's period whose
    level index is within ``grid.nearby_radius`` of the state's nearest
    level. States with no nearby goal get 0.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    steps = np.atleast_1d(np.asarray(steps))
    n = len(states)
    k = grid.nearby_radius
    nxt = grid.period_of(steps) + 1
    near = grid.nearest_level(levels)
    cand = near[:, None] + np.arange(-k, k + 1)[None, :]
    valid = (cand >= 0) & (cand < grid.num_levels) & (nxt[:, None] < grid.num_periods)
    q_idx = np.broadcast_to(np.minimum(nxt, grid.num_periods - 1)[:, None], cand.shape)
    vals = graph_values[q_idx, np.clip(cand, 0, grid.num_levels - 1)]
    valid &= ~np.isnan(vals)
    rows, cols = np.nonzero(valid)
    out = np.zeros(n)
    if len(rows) == 0:
        return out
    goal_coords = np.stack([cand[rows, cols] / (grid.num_levels - 1),
                            q_idx[rows, cols] / (grid.num_periods - 1)], axis=1)
    X = np.concatenate([states[rows], goal_coords], axis=1)
    r, disc = model.forward(X)
    proj = r + disc * vals[rows, cols]
    best = np.full(n, -np.inf)
    np.maximum.at(best, rows, proj)
    return np.where(np.isfinite(best), best, 0.0)


def lookup_value(levels, steps, grid: GoalGrid, graph_values: np.ndarray) -> np.ndarray:
    """Value of the goal a state belongs to (0 when it belongs to none)."""
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    q = grid.period_of(np.atleast_1d(np.asarray(steps)))
    lv = grid.member_level(levels)
    ok = (lv >= 0) & (q >= 1)
    vals = graph_values[q, np.clip(lv, 0, grid.num_levels - 1)]
    return np.where(ok & ~np.isnan(vals), vals, 0.0)


@dataclass
class PlannerConfig:
    num_levels: int = 40
    num_periods: int = 16
    tolerance_frac: float = 0.4
    nearby_radius: int = 5
    model_hidden: tuple[int, ...] = (64, 64)
    model_lr: float = 1e-3
    model_steps: int = 100
    model_batch: int = 128
    offline_episodes: int = 50
    offline_model_steps: int = 2000


class GoalPlanner:
    """Owns the goal graph, its values and the state-to-goal models.

    ``mode`` is ``"projection"`` (potential from the state-to-goal models)
    or ``"lookup"`` (potential is the value of the goal the state is in).
    """

    def __init__(self, grid: GoalGrid, gamma: float, obs_dim: int, cfg: PlannerConfig,
                 rng: np.random.Generator, mode: str = "projection", level_fn=None):
        if mode not in ("projection", "lookup"):
            raise ValueError(f"unknown planner mode {mode!r}")
        self.grid = grid
        self.gamma = gamma
        self.cfg = cfg
        self.mode = mode
        self.rng = rng
        self.level_fn = level_fn or _default_level
        self.model = TwoHeadModel.create(obs_dim + 2, rng, tuple(cfg.model_hidden))
        self.opt = AdamState.for_params(self.model.params(), lr=cfg.model_lr)
        self.graph = GoalGraph()
        self.raw_graph = GoalGraph()
        self.table = np.full((grid.num_periods, grid.num_levels), np.nan)
        self.model_ready = False
        self.frozen = False
        self.version = 0
        self._cache: dict = {}
        self.last_losses: list[float] = []

    @property
    def active(self) -> bool:
        if self.graph.empty:
            return False
        return self.mode == "lookup" or self.model_ready

    def _extract(self, trajectories):
        total = Extraction()
        keep = {}
        for traj in trajectories:
            if not traj:
                continue
            key = (int(traj[0].episode), int(traj[0].step), len(traj), bool(traj[-1].done))
            ext = self._cache.get(key)
            if ext is None:
                ext = extract_goal_transitions(traj, self.grid, self.gamma, self.level_fn)
            keep[key] = ext
            total.extend(ext)
        self._cache = keep
        return total

    def update(self, trajectories, model_steps: int | None = None) -> Extraction:
        """Rebuild graph, prune, run value iteration and train the models."""
        if self.frozen:
            return Extraction()
        ext = self._extract(trajectories)
        self.raw_graph = build_graph(ext.records, self.grid, ext.terminals)
        self.graph = prune_graph(self.raw_graph, self.grid)
        if not self.graph.empty:
            value_iteration(self.graph, self.grid)
        self.table = value_table(self.graph, self.grid)
        steps = self.cfg.model_steps if model_steps is None else model_steps
        if self.mode == "projection" and ext.samples and steps > 0:
            X = model_inputs([s.state for s in ext.samples], [s.goal for s in ext.samples],
                             self.grid)
            targets = (np.array([s.reward for s in ext.samples]),
                       np.array([s.discount for s in ext.samples]))
            self.last_losses = train_state_goal_models(
                None, self.model, self.opt, steps, self.cfg.model_batch, self.rng,
                inputs=X, targets=targets)
            self.model_ready = True
        self.version += 1
        return ext

    def potentials(self, states, levels=None, steps=None) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if levels is None:
            levels = np.array([self.level_fn(s, self.grid) for s in states])
        if not self.active:
            return np.zeros(len(states))
        if self.mode == "lookup":
            return lookup_value(levels, steps, self.grid, self.table)
        return project_value(states, levels, steps, self.grid, self.table, self.model)


# -- exports ------------------------------------------------------------------------

def normalize_columns(table: np.ndarray) -> np.ndarray:
    """Per-period min-max scaling; constant (or single-entry) columns map to 0."""
    out = np.full_like(table, np.nan)
    for q in range(table.shape[0]):
        col = table[q]
        ok = ~np.isnan(col)
        if not ok.any():
            continue
        lo, hi = col[ok].min(), col[ok].max()
        out[q, ok] = 0.0 if hi == lo else (col[ok] - lo) / (hi - lo)
    return out


def heatmap_rows(graph: GoalGraph, grid: GoalGrid):
    table = value_table(graph, grid)
    norm = normalize_columns(table)
    rows = []
    for q in range(grid.num_periods):
        for l in range(grid.num_levels):
            if not np.isnan(table[q, l]):
                rows.append((q, l, float(table[q, l]), float(norm[q, l])))
    return rows


def write_heatmap(graph: GoalGraph, grid: GoalGrid, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "level", "value", "normalized_value"])
        for q, l, v, nv in heatmap_rows(graph, grid):
            w.writerow([q, l, repr(v), repr(nv)])


def write_edges(graph: GoalGraph, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "level", "q_next", "level_next", "reward", "discount", "count"])
        for (a, b), s in sorted(graph.edges.items()):
            w.writerow([a.period, a.level, b.period, b.level, repr(s.reward),
                        repr(s.discount), s.count])


def save_graph(graph: GoalGraph, grid: GoalGrid, path):
    payload = {"grid": {k: getattr(grid, k) for k in grid.__dataclass_fields__},
               "graph": graph.to_json()}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_graph(path) -> tuple[GoalGraph, GoalGrid]:
    payload = json.loads(Path(path).read_text())
    return GoalGraph.from_json(payload["graph"]), GoalGrid(**payload["grid"])
