"""Training runs, evaluation and run comparison.

A run trains one algorithm over several seeds and writes, under its output
directory::

    config.json          resolved configuration
    metrics.csv          one row per (seed, episode); deterministic
    timing.csv           wall-clock seconds per (seed, episode)
    seed_<s>/checkpoint.npz
    seed_<s>/graph.json, graph_edges.csv, values_heatmap.csv   (GSP variants)
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import env as E
from .ddpg import AgentParams, DDPGAgent, ReplayBuffer, Transition, load_agent, save_agent
from .errors import ConfigError, NumericError, UsageError, ValidationError
from .gsp import (GoalGrid, GoalPlanner, PlannerConfig, normalize_columns, save_graph,
                  value_table, write_edges, write_heatmap)

log = logging.getLogger(__name__)

ALGORITHMS = ("ddpg", "gsp_offline", "gsp_online", "gsp_online_np")


@dataclass
class PriceConfig:
    seed: int = 0
    base: float = 1.0
    amplitude: float = 0.5
    noise_std: float = 0.05
    # when set, prices are read from this file instead of generated
    file: str | None = None

    def profile(self, horizon: int) -> E.PriceProfile:
        if self.file:
            return E.load_price_profile(self.file)
        return E.generate_price_profile(self.seed, horizon, self.base, self.amplitude,
                                        self.noise_std)


@dataclass
class RunConfig:
    algorithm: str = "ddpg"
    episodes: int = 80
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs/default"
    env: E.EnvParams = field(default_factory=E.EnvParams)
    agent: AgentParams = field(default_factory=AgentParams)
    gsp: PlannerConfig = field(default_factory=PlannerConfig)
    price: PriceConfig = field(default_factory=PriceConfig)
    # noise-free evaluation rollout after every training episode
    eval_each_episode: bool = True
    save_checkpoints: bool = True

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.episodes < 1:
            raise ValidationError("episodes must be >= 1")
        if not self.seeds:
            raise ValidationError("seeds must be non-empty")
        self.env.validate()
        self.agent.validate()
        GoalGrid(self.gsp.num_levels, self.gsp.num_periods, self.env.horizon_steps,
                 self.env.tank_capacity, self.gsp.tolerance_frac, self.gsp.nearby_radius)
        if self.gsp.model_steps < 0 or self.gsp.model_batch < 1:
            raise ValidationError("gsp.model_steps must be >= 0 and gsp.model_batch >= 1")
        if self.algorithm == "gsp_offline" and self.gsp.offline_episodes < 1:
            raise ValidationError("gsp_offline needs gsp.offline_episodes >= 1")
        return self

    @property
    def grid(self) -> GoalGrid:
        return GoalGrid(self.gsp.num_levels, self.gsp.num_periods, self.env.horizon_steps,
                        self.env.tank_capacity, self.gsp.tolerance_frac, self.gsp.nearby_radius)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agent"]["hidden"] = list(self.agent.hidden)
        d["gsp"]["model_hidden"] = list(self.gsp.model_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        env = E.EnvParams(**d.pop("env", {}))
        ap = dict(d.pop("agent", {}))
        if "hidden" in ap:
            ap["hidden"] = tuple(ap["hidden"])
        gp = dict(d.pop("gsp", {}))
        if "model_hidden" in gp:
            gp["model_hidden"] = tuple(gp["model_hidden"])
        price = PriceConfig(**d.pop("price", {}))
        return cls(env=env, agent=AgentParams(**ap), gsp=PlannerConfig(**gp), price=price, **d)


@dataclass
class EpisodeMetrics:
    seed: int
    episode: int
    total_steps: int
    return_: float
    shaped_bonus: float
    final_storage: float
    satisfied: bool
    elec_cost: float
    path_penalty: float
    eval_return: float
    eval_final_storage: float
    eval_satisfied: bool
    graph_nodes: int
    graph_edges: int
    initial_potential: float
    wall_seconds: float = 0.0

    CSV_FIELDS = ("seed", "episode", "total_steps", "return", "shaped_bonus", "final_storage",
                  "satisfied", "elec_cost", "path_penalty", "eval_return",
                  "eval_final_storage", "eval_satisfied", "graph_nodes", "graph_edges",
                  "initial_potential")

    def row(self):
        vals = [self.seed, self.episode, self.total_steps, self.return_, self.shaped_bonus,
                self.final_storage, int(self.satisfied), self.elec_cost, self.path_penalty,
                self.eval_return, self.eval_final_storage, int(self.eval_satisfied),
                self.graph_nodes, self.graph_edges, self.initial_potential]
        return [repr(float(v)) if isinstance(v, float) else v for v in vals]


@dataclass
class SeedResult:
    seed: int
    metrics: list[EpisodeMetrics]
    agent: DDPGAgent
    planner: GoalPlanner | None


def level_from_obs(obs, grid):
    return float(obs[0]) * grid.tank_capacity


def rollout(agent: DDPGAgent, params: E.EnvParams, profile: E.PriceProfile,
            initial_level=None):
    """Noise-free episode; returns (return, final level, storage trajectory)."""
    state = E.reset(params, profile, initial_level)
    total, levels = 0.0, [state.tank_level]
    for _ in range(params.horizon_steps):
        a = agent.act(E.observe(state, params), noise_std=0.0)
        state, rb, _ = E.step(state, params.setpoint_from_action(a), params, profile)
        total += rb.total
        levels.append(state.tank_level)
    return total, state.tank_level, levels


def heuristic_episodes(params: E.EnvParams, profile: E.PriceProfile, n: int,
                       rng: np.random.Generator):
    """Exploratory data for offline goal-space pre-training.

    Alternates random piecewise-constant actions with a price-threshold
    policy (fill below a random price quantile, draw down above it).
    """
    prices = np.asarray(profile.prices[:params.horizon_steps])
    trajectories = []
    for ep in range(n):
        state = E.reset(params, profile)
        obs = E.observe(state, params)
        traj = []
        greedy = ep % 2 == 1
        thresh = np.quantile(prices, rng.uniform(0.2, 0.8))
        hold, a = 0, 0.0
        for t in range(params.horizon_steps):
            if greedy:
                a = (1.0 if prices[t] <= thresh else -1.0) + rng.normal(0.0, 0.3)
            else:
                if hold == 0:
                    a, hold = rng.uniform(-1.0, 1.0), int(rng.integers(1, 13))
                hold -= 1
            a = float(np.clip(a, -1.0, 1.0))
            nxt, rb, done = E.step(state, params.setpoint_from_action(a), params, profile)
            nobs = E.observe(nxt, params)
            traj.append(Transition(obs, np.array([a]), rb.total, nobs, done, -1 - ep, t,
                                   rb.terminal))
            state, obs = nxt, nobs
        trajectories.append(traj)
    return trajectories


def train_seed(config: RunConfig, seed: int, profile: E.PriceProfile | None = None) -> SeedResult:
    """Train DDPG, with goal-space shaping unless the algorithm is plain ddpg, on one seed."""
    cfg = config
    p, ap = cfg.env, cfg.agent
    profile = profile or cfg.price.profile(p.horizon_steps)
    grid = cfg.grid
    streams = np.random.SeedSequence(seed).spawn(5)
    init_rng, act_rng, sample_rng, plan_rng, offline_rng = (np.random.default_rng(s) for s in streams)

    agent = DDPGAgent.create(p.obs_dim, 1, ap, init_rng)
    buffer = ReplayBuffer(ap.buffer_size, p.obs_dim, 1)
    planner = None
    if cfg.algorithm != "ddpg":
        mode = "lookup" if cfg.algorithm == "gsp_online_np" else "projection"
        planner = GoalPlanner(grid, ap.gamma, p.obs_dim, cfg.gsp, plan_rng, mode, level_from_obs)
        if cfg.algorithm == "gsp_offline":
            data = heuristic_episodes(p, profile, cfg.gsp.offline_episodes, offline_rng)
            planner.update(data, model_steps=cfg.gsp.offline_model_steps)
            planner.frozen = True

    # Potentials of every buffer slot under the planner's current snapshot.
    # Slots are filled lazily in one batch when a sample touches a stale one;
    # the snapshot only changes between episodes, so this equals computing
    # them at sampling time.
    phi = np.zeros(ap.buffer_size)
    phi_next = np.zeros(ap.buffer_size)
    stale = np.zeros(ap.buffer_size, dtype=bool)

    def fill_stale():
        idx = np.nonzero(stale)[0]
        if len(idx) == 0:
            return
        obs_all = np.concatenate([buffer.obs[idx], buffer.next_obs[idx]])
        steps_all = np.concatenate([buffer.steps[idx], buffer.steps[idx] + 1])
        both = planner.potentials(obs_all, obs_all[:, 0] * p.tank_capacity, steps_all)
        phi[idx], phi_next[idx] = both[:len(idx)], both[len(idx):]
        stale[idx] = False

    episode_log = []  # (write counter at episode start, transitions)
    metrics = []
    global_step = 0
    for ep in range(cfg.episodes):
        t_start = time.perf_counter()
        state = E.reset(p, profile)
        obs = E.observe(state, p)
        ret = elec = path = 0.0
        first_write = buffer.writes
        traj, slots = [], []
        for t in range(p.horizon_steps):
            if global_step < ap.learning_starts:
                action = act_rng.uniform(-1.0, 1.0, size=1)
            else:
                action = agent.act(obs, act_rng)
            nxt, rb, done = E.step(state, p.setpoint_from_action(action), p, profile)
            nobs = E.observe(nxt, p)
            tr = Transition(obs, action, rb.total, nobs, done, ep, t, rb.terminal)
            slot = buffer.push(tr)
            traj.append(tr)
            slots.append(slot)
            phi[slot] = phi_next[slot] = 0.0
            stale[slot] = planner is not None
            ret += rb.total
            elec += rb.elec
            path += rb.path
            global_step += 1

            if global_step >= ap.learning_starts and buffer.size >= ap.batch_size:
                batch = buffer.sample(ap.batch_size, sample_rng)
                pots = None
                if planner is not None:
                    if stale[batch.indices].any():
                        fill_stale()
                    pots = (phi[batch.indices], phi_next[batch.indices])
                try:
                    agent.update(batch, pots)
                except NumericError as exc:
                    log.warning("seed %d step %d: %s", seed, global_step, exc)
            state, obs = nxt, nobs

        # shaping bookkeeping under the snapshot used during this episode
        if planner is not None:
            fill_stale()
        sl = np.asarray(slots)
        dones = buffer.dones[sl]
        bonus = float(np.sum(ap.gamma * np.where(dones, 0.0, phi_next[sl]) - phi[sl]))
        initial_potential = float(phi[sl[0]])

        episode_log.append((first_write, traj))
        # potentials are only consumed by updates, so the planner waits too
        if (planner is not None and not planner.frozen
                and global_step + p.horizon_steps > ap.learning_starts):
            oldest = buffer.writes - buffer.capacity
            episode_log = [(w, tj[max(0, oldest - w):]) for w, tj in episode_log
                           if w + len(tj) > oldest]
            planner.update([tj for _, tj in episode_log])
            stale[:buffer.size] = True
        wall = time.perf_counter() - t_start

        if cfg.eval_each_episode:
            ev_ret, ev_final, _ = rollout(agent, p, profile)
        else:
            ev_ret, ev_final = float("nan"), float("nan")
        # counts before pruning, so they only grow while nothing is evicted
        g = planner.raw_graph if planner is not None else None
        metrics.append(EpisodeMetrics(
            seed=seed, episode=ep, total_steps=global_step, return_=ret, shaped_bonus=bonus,
            final_storage=state.tank_level, satisfied=p.satisfied(state.tank_level),
            elec_cost=-elec, path_penalty=path, eval_return=ev_ret,
            eval_final_storage=ev_final,
            eval_satisfied=bool(cfg.eval_each_episode and p.satisfied(ev_final)),
            graph_nodes=len(g.nodes) if g is not None else 0,
            graph_edges=len(g.edges) if g is not None else 0,
            initial_potential=initial_potential, wall_seconds=wall))
        log.info("seed %d ep %d return %.3f final %.3f", seed, ep, ret, state.tank_level)
    return SeedResult(seed, metrics, agent, planner)


def write_metrics(results, out_dir: Path):
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EpisodeMetrics.CSV_FIELDS)
        for res in results:
            for m in res.metrics:
                w.writerow(m.row())
    with open(out_dir / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "episode", "wall_seconds"])
        for res in results:
            for m in res.metrics:
                w.writerow([m.seed, m.episode, f"{m.wall_seconds:.6f}"])


def train(config: RunConfig, out_dir=None) -> list[SeedResult]:
    config.validate()
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    profile = config.price.profile(config.env.horizon_steps)
    if len(profile) < config.env.horizon_steps:
        raise ConfigError("price profile shorter than the horizon")
    cfg_dict = config.to_dict()
    cfg_dict["out_dir"] = str(out)
    (out / "config.json").write_text(json.dumps(cfg_dict, indent=2, sort_keys=True))

    results = []
    for seed in config.seeds:
        res = train_seed(config, seed, profile)
        results.append(res)
        sd = out / f"seed_{seed}"
        sd.mkdir(exist_ok=True)
        if config.save_checkpoints:
            meta = {"env": asdict(config.env), "prices": list(profile.prices),
                    "algorithm": config.algorithm, "seed": seed}
            save_agent(res.agent, sd / "checkpoint.npz", meta)
        if res.planner is not None:
            save_graph(res.planner.graph, config.grid, sd / "graph.json")
            write_edges(res.planner.raw_graph, sd / "graph_edges.csv")
            write_heatmap(res.planner.graph, config.grid, sd / "values_heatmap.csv")
    write_metrics(results, out)
    return results


def evaluate(checkpoint, n_episodes: int, env_params: E.EnvParams | None = None,
             profile: E.PriceProfile | None = None) -> dict:
    """Noise-free rollouts of a saved actor."""
    if n_episodes < 1:
        raise UsageError("n_episodes must be >= 1")
    agent, info = load_agent(checkpoint)
    meta = info.get("meta", {})
    params = env_params or E.EnvParams(**meta.get("env", {}))
    if profile is None:
        if "prices" not in meta:
            raise ConfigError("checkpoint has no price profile; pass one explicitly")
        profile = E.PriceProfile(tuple(meta["prices"]))
    if agent.actor.in_dim != params.obs_dim:
        from .errors import ShapeError
        raise ShapeError(f"checkpoint actor expects {agent.actor.in_dim} inputs, "
                         f"environment produces {params.obs_dim}")
    returns, finals, trajs = [], [], []
    for _ in range(n_episodes):
        r, f, lv = rollout(agent, params, profile)
        returns.append(r)
        finals.append(f)
        trajs.append(lv)
    finals_arr = np.array(finals)
    return {
        "episodes": n_episodes,
        "mean_return": float(np.mean(returns)),
        "satisfaction_rate": float(np.mean([params.satisfied(f) for f in finals])),
        "final_storage": {"mean": float(finals_arr.mean()), "min": float(finals_arr.min()),
                          "max": float(finals_arr.max()),
                          "quartiles": [float(x) for x in np.quantile(finals_arr, [0.25, 0.5, 0.75])]},
        "returns": returns,
        "trajectories": trajs,
    }


# -- comparison -----------------------------------------------------------------------

def read_metrics(run_dir) -> dict[int, list[dict]]:
    """Per-seed lists of metric rows (numbers parsed)."""
    path = Path(run_dir) / "metrics.csv"
    if not path.exists():
        raise ConfigError(f"{run_dir}: no metrics.csv")
    out: dict[int, list[dict]] = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            parsed = {k: float(v) for k, v in row.items()}
            out.setdefault(int(parsed["seed"]), []).append(parsed)
    for rows in out.values():
        rows.sort(key=lambda r: r["episode"])
    return out


def smooth(values, window: int = 5) -> np.ndarray:
    """Trailing moving average (shorter window over the first entries)."""
    v = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def steps_to_threshold(returns, threshold: float, steps_per_episode: int,
                       window: int = 5) -> float:
    """First environment step at which the smoothed return reaches ``threshold``.

    Returns ``inf`` when never reached.
    """
    s = smooth(returns, window)
    hit = np.nonzero(s >= threshold)[0]
    return float((hit[0] + 1) * steps_per_episode) if len(hit) else float("inf")


def threshold_from_curves(curves, fraction: float, window: int = 5) -> float:
    """Threshold a fraction of the way from the worst to the best smoothed return.

    ``curves`` maps a label to a list of per-seed return sequences. The best
    value is the highest final seed-mean smoothed return across labels; the
    worst is the lowest seed-mean smoothed return seen anywhere.
    """
    best, worst = -np.inf, np.inf
    for seqs in curves.values():
        mean_curve = smooth(np.mean(np.asarray(seqs, dtype=float), axis=0), window)
        best = max(best, mean_curve[-1])
        worst = min(worst, mean_curve.min())
    return float(worst + fraction * (best - worst))


@dataclass
class Comparison:
    labels: list[str]
    episodes: int
    mean: dict
    std: dict
    steps: dict          # label -> per-seed steps-to-threshold
    threshold: float

    def median_steps(self, label) -> float:
        return float(np.median(self.steps[label]))

    def format(self) -> str:
        lines = ["episode," + ",".join(f"{l}_mean,{l}_std" for l in self.labels)
                 + ("," + ",".join(f"{a}_minus_{b}" for a, b in zip(self.labels, self.labels[1:]))
                    if len(self.labels) > 1 else "")]
        for e in range(self.episodes):
            cells = [str(e)]
            for l in self.labels:
                cells += [f"{self.mean[l][e]:.6g}", f"{self.std[l][e]:.6g}"]
            for a, b in zip(self.labels, self.labels[1:]):
                cells.append(f"{self.mean[a][e] - self.mean[b][e]:.6g}")
            lines.append(",".join(cells))
        lines.append(f"# threshold {self.threshold:.6g}")
        for l in self.labels:
            med = self.median_steps(l)
            txt = "not reached" if not np.isfinite(med) else f"{med:.0f}"
            lines.append(f"# {l}: median steps-to-threshold {txt}")
        return "\n".join(lines)


def compare(run_dirs, fraction: float = 0.8, window: int = 5, metric: str = "return") -> Comparison:
    if len(run_dirs) < 2:
        raise UsageError("compare needs at least two run directories")
    labels, curves, horizons = [], {}, set()
    for d in run_dirs:
        d = Path(d)
        cfg = json.loads((d / "config.json").read_text()) if (d / "config.json").exists() else {}
        horizons.add(cfg.get("env", {}).get("horizon_steps", E.EnvParams().horizon_steps))
        label = d.name
        while label in curves:
            label += "'"
        rows = read_metrics(d)
        lengths = {len(r) for r in rows.values()}
        if len(lengths) != 1:
            raise ConfigError(f"{d}: seeds have different episode counts")
        labels.append(label)
        curves[label] = [[r[metric] for r in rows[s]] for s in sorted(rows)]
    if len(horizons) != 1:
        raise ConfigError(f"runs have mismatched horizons {sorted(horizons)}")
    episodes = {len(c[0]) for c in curves.values()}
    if len(episodes) != 1:
        raise ConfigError(f"runs have mismatched episode counts {sorted(episodes)}")
    (horizon,) = horizons
    (n_ep,) = episodes
    thr = threshold_from_curves(curves, fraction, window)
    mean, std, steps = {}, {}, {}
    for l in labels:
        arr = np.asarray(curves[l], dtype=float)
        mean[l] = arr.mean(axis=0)
        std[l] = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(n_ep)
        steps[l] = [steps_to_threshold(c, thr, horizon, window) for c in curves[l]]
    return Comparison(labels, n_ep, mean, std, steps, thr)



# ---------------------------------------------------------------- experiment

# radius 3 covers one period's largest storage swing (9 steps at +-0.015)
SCALED_GRID = {"num_levels": 20, "num_periods": 8, "nearby_radius": 3}


def scaled_config(algorithm: str, seeds=(0, 1, 2, 3, 4), episodes: int = 40,
                  env: E.EnvParams | None = None) -> RunConfig:
    """Desk-scale comparison setting: T=72, 20 x 8 goal grid, 40 episodes."""
    return RunConfig(algorithm=algorithm, episodes=episodes, seeds=list(seeds),
                     env=env or E.EnvParams(), gsp=PlannerConfig(**SCALED_GRID),
                     save_checkpoints=False)


def run_scaled_experiment(algorithms=ALGORITHMS, seeds=(0, 1, 2, 3, 4), episodes: int = 40,
                          env: E.EnvParams | None = None, out_dir=None):
    """Train every algorithm on every seed; returns ``{algorithm: [SeedResult]}``.

    With ``out_dir`` each algorithm gets a run directory below it.
    """
    results = {}
    for alg in algorithms:
        cfg = scaled_config(alg, seeds, episodes, env)
        if out_dir is not None:
            results[alg] = train(cfg, Path(out_dir) / alg)
        else:
            profile = cfg.price.profile(cfg.env.horizon_steps)
            results[alg] = [train_seed(cfg, s, profile) for s in seeds]
    return results


@dataclass
class Replicate:
    seeds: list[int]
    threshold: float
    median_steps: dict
    satisfaction: dict
    faster: bool         # Online GSP median steps <= ratio x DDPG's
    safer: bool          # GSP satisfaction >= floor and above DDPG


def final_satisfaction(res: SeedResult, last: int = 10) -> float:
    return float(np.mean([m.satisfied for m in res.metrics[-last:]]))


def bootstrap_replicates(results, n_replicates: int = 5, rng_seed: int = 0,
                         fraction: float = 0.8, step_ratio: float = 0.6,
                         sat_floor: float = 0.8, window: int = 5) -> list[Replicate]:
    """Seed-resampled replicates of the sample-efficiency comparison.

    Each replicate draws seeds with replacement (the same draw for every
    algorithm) and re-derives the threshold, median steps and final
    satisfaction rates from the drawn seeds.
    """
    horizon = results["ddpg"][0].metrics[0].total_steps
    by_seed = {alg: {r.seed: r for r in rs} for alg, rs in results.items()}
    seeds = sorted(by_seed["ddpg"])
    rng = np.random.default_rng(rng_seed)
    out = []
    for _ in range(n_replicates):
        draw = [int(s) for s in rng.choice(seeds, size=len(seeds), replace=True)]
        curves = {alg: [[m.return_ for m in by_seed[alg][s].metrics] for s in draw]
                  for alg in results}
        thr = threshold_from_curves(curves, fraction, window)
        med = {alg: float(np.median([steps_to_threshold(c, thr, horizon, window)
                                     for c in curves[alg]]))
               for alg in results}
        sat = {alg: float(np.mean([final_satisfaction(by_seed[alg][s]) for s in draw]))
               for alg in results}
        faster = bool(np.isfinite(med["gsp_online"])
                      and med["gsp_online"] <= step_ratio * med["ddpg"])
        safer = all(sat[a] >= sat_floor and sat[a] > sat["ddpg"]
                    for a in ("gsp_offline", "gsp_online") if a in sat)
        out.append(Replicate(draw, thr, med, sat, faster, safer))
    return out


def wall_ratio(results, numerator: str = "gsp_online", denominator: str = "ddpg") -> float:
    def mean_wall(alg):
        return float(np.mean([m.wall_seconds for r in results[alg] for m in r.metrics]))
    return mean_wall(numerator) / mean_wall(denominator)


def terminal_values_monotone(graphs, grid: GoalGrid, target: float, band: int = 3) -> bool:
    """Normalized final-period values rise with storage around the target.

    ``graphs`` is one graph or several (one per seed); with several, the
    column-normalized tables are averaged over the graphs containing each cell.
    Values of the levels present within ``band`` levels of the target must be
    non-decreasing, and the lowest-valued present level below the target must
    be strictly below the first present level at or above it.
    """
    if not isinstance(graphs, (list, tuple)):
        graphs = [graphs]
    tables = np.array([normalize_columns(value_table(g, grid))[grid.terminal_period]
                       for g in graphs])
    present = ~np.isnan(tables)
    norm = np.full(grid.num_levels, np.nan)
    hit = present.any(axis=0)
    norm[hit] = np.nansum(tables[:, hit], axis=0) / present[:, hit].sum(axis=0)
    centre = int(grid.nearest_level(np.array([target]))[0])
    lo, hi = max(0, centre - band), min(grid.num_levels - 1, centre + band)
    vals = [norm[l] for l in range(lo, hi + 1) if not np.isnan(norm[l])]
    if any(b < a for a, b in zip(vals, vals[1:])):
        return False
    below = [norm[l] for l in range(centre) if not np.isnan(norm[l])]
    at = [norm[l] for l in range(centre, grid.num_levels) if not np.isnan(norm[l])]
    return bool(below and at and min(below) < at[0])
