"""DDPG: deterministic actor, Q critic, target copies and a replay buffer."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .approximator import (
    MLP,
    AdamState,
    adam_from_arrays,
    adam_step,
    adam_to_arrays,
    init_mlp,
    mlp_from_arrays,
    mlp_to_arrays,
)
from .errors import CheckpointError, NumericError, ShapeError, UsageError
from .gsp import shape_reward

CHECKPOINT_VERSION = 1


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    episode: int = 0
    step: int = 0
    # terminal-bonus part of ``reward`` (nonzero only on the last step)
    terminal_reward: float = 0.0


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    steps: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity FIFO ring buffer backed by preallocated arrays."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int = 1):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.episodes = np.zeros(capacity, dtype=np.int64)
        self.steps = np.zeros(capacity, dtype=np.int64)
        self.terminal_rewards = np.zeros(capacity)
        self.cursor = 0
        self.size = 0
        # bumped on every write; lets callers cache per-slot derived data
        self.writes = 0

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> int:
        i = self.cursor
        self.obs[i] = tr.state
        self.actions[i] = np.asarray(tr.action, dtype=float).reshape(-1)
        self.rewards[i] = tr.reward
        self.next_obs[i] = tr.next_state
        self.dones[i] = tr.done
        self.episodes[i] = tr.episode
        self.steps[i] = tr.step
        self.terminal_rewards[i] = tr.terminal_reward
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.writes += 1
        return i

    def get(self, i: int) -> Transition:
        return Transition(self.obs[i].copy(), self.actions[i].copy(), float(self.rewards[i]),
                          self.next_obs[i].copy(), bool(self.dones[i]),
                          int(self.episodes[i]), int(self.steps[i]),
                          float(self.terminal_rewards[i]))

    def order(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise UsageError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self.batch(idx)

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx],
                     self.next_obs[idx], self.dones[idx], self.steps[idx], idx)

    def trajectories(self) -> list[list[Transition]]:
        """Stored transitions grouped by episode, in time order.

        Episodes whose first steps were evicted are returned truncated.
        """
        groups: dict[int, list[int]] = {}
        for i in self.order():
            groups.setdefault(int(self.episodes[i]), []).append(int(i))
        return [[self.get(i) for i in sorted(ix, key=lambda j: self.steps[j])]
                for _, ix in sorted(groups.items())]


def buffer_push(buffer: ReplayBuffer, tr: Transition) -> int:
    return buffer.push(tr)


def buffer_sample(buffer: ReplayBuffer, batch_size: int, rng) -> Batch:
    return buffer.sample(batch_size, rng)


@dataclass
class AgentParams:
    gamma: float = 0.99
    tau: float = 0.005
    noise_std: float = 0.1
    batch_size: int = 256
    learning_starts: int = 1000
    buffer_size: int = 50_000
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    hidden: tuple[int, ...] = (64, 64)

    def validate(self):
        from .errors import ValidationError
        if not 0 < self.gamma <= 1:
            raise ValidationError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 < self.tau <= 1:
            raise ValidationError(f"tau must be in (0, 1], got {self.tau}")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ValidationError("need 1 <= batch_size <= buffer_size")
        if self.learning_starts < 0:
            raise ValidationError("learning_starts must be >= 0")
        if self.actor_lr < 0 or self.critic_lr < 0:
            raise ValidationError("learning rates must be >= 0")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValidationError("hidden sizes must be positive")


def select_action(actor: MLP, state, noise_std: float, bounds=(-1.0, 1.0),
                  rng: np.random.Generator | None = None) -> np.ndarray:
    a = np.atleast_1d(actor.forward(np.asarray(state, dtype=float)))
    if noise_std > 0:
        if rng is None:
            raise ValueError("rng required when noise_std > 0")
        a = a + rng.normal(0.0, noise_std, size=a.shape)
    return np.clip(a, bounds[0], bounds[1])


def _q(critic: MLP, obs, actions):
    return critic.forward(np.concatenate([obs, actions], axis=1))[:, 0]


def td_target(batch: Batch, target_actor: MLP, target_critic: MLP, gamma: float,
              potentials: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Bootstrapped critic targets; terminal transitions never bootstrap.

    With ``potentials=(phi, phi_next)`` the reward is replaced by its
    potential-shaped version.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    rewards = batch.rewards
    if potentials is not None:
        phi, phi_next = potentials
        rewards = shape_reward(rewards, phi, phi_next, gamma, batch.dones)
    next_q = _q(target_critic, batch.next_obs, target_actor.forward(batch.next_obs))
    return rewards + gamma * np.where(batch.dones, 0.0, next_q)


def critic_update(critic: MLP, batch: Batch, targets, opt: AdamState) -> float:
    """One Adam step on the mean squared Bellman error.

    Returns the loss of the parameters *before* the step.
    """
    X = np.concatenate([batch.obs, batch.actions], axis=1)
    q, cache = critic.forward_cache(X)
    err = q[:, 0] - np.asarray(targets, dtype=float)
    if err.shape != (len(batch),):
        raise ShapeError("targets not aligned with batch")
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericError("non-finite critic loss; update skipped")
    grads, _ = critic.backward_cache(cache, (2.0 / len(err)) * err[:, None], input_grad=False)
    adam_step(critic.params(), grads, opt)
    return loss


def actor_gradient(actor: MLP, critic: MLP, obs):
    """Gradient of ``-mean Q(x, mu(x))`` w.r.t. actor parameters, and mean Q."""
    a, a_cache = actor.forward_cache(obs)
    X = np.concatenate([obs, a], axis=1)
    q, q_cache = critic.forward_cache(X)
    n = len(obs)
    _, dX = critic.backward_cache(q_cache, np.full((n, 1), 1.0 / n))
    dq_da = dX[:, obs.shape[1]:]
    grads, _ = actor.backward_cache(a_cache, -dq_da, input_grad=False)
    return grads, float(q.mean())


def actor_update(actor: MLP, critic: MLP, batch: Batch, opt: AdamState) -> float:
    """Ascend mean Q(x, mu(x)) through the critic's action input; returns mean Q."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    grads, mean_q = actor_gradient(actor, critic, batch.obs)
    adam_step(actor.params(), grads, opt)
    return mean_q


def polyak_update(target: MLP, online: MLP, tau: float) -> MLP:
    tp, op = target.params(), online.params()
    if [p.shape for p in tp] != [p.shape for p in op]:
        raise ShapeError("target and online networks differ in shape")
    for t, o in zip(tp, op):
        t *= 1.0 - tau
        t += tau * o
    return target


@dataclass
class DDPGAgent:
    actor: MLP
    critic: MLP
    target_actor: MLP
    target_critic: MLP
    actor_opt: AdamState
    critic_opt: AdamState
    params: AgentParams = field(default_factory=AgentParams)

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, params: AgentParams,
               rng: np.random.Generator) -> "DDPGAgent":
        actor = init_mlp([obs_dim, *params.hidden, act_dim], rng, output="tanh",
                         final_scale=3e-3)
        critic = init_mlp([obs_dim + act_dim, *params.hidden, 1], rng, final_scale=3e-3)
        return cls(actor, critic, actor.copy(), critic.copy(),
                   AdamState.for_params(actor.params(), lr=params.actor_lr),
                   AdamState.for_params(critic.params(), lr=params.critic_lr),
                   params)

    def act(self, obs, rng=None, noise_std=None):
        sigma = self.params.noise_std if noise_std is None else noise_std
        return select_action(self.actor, obs, sigma, (-1.0, 1.0), rng)

    def q_value(self, obs, action) -> float:
        X = np.concatenate([np.atleast_1d(obs), np.atleast_1d(action)])
        return float(self.critic.forward(X)[0])

    def update(self, batch: Batch, potentials=None) -> dict:
        """One critic step, one actor step, then Polyak on both targets."""
        p = self.params
        y = td_target(batch, self.target_actor, self.target_critic, p.gamma, potentials)
        critic_loss = critic_update(self.critic, batch, y, self.critic_opt)
        mean_q = actor_update(self.actor, self.critic, batch, self.actor_opt)
        polyak_update(self.target_critic, self.critic, p.tau)
        polyak_update(self.target_actor, self.actor, p.tau)
        return {"critic_loss": critic_loss, "mean_q": mean_q}


def save_agent(agent: DDPGAgent, path, meta: dict | None = None,
               buffer: ReplayBuffer | None = None):
    """Write all four networks, both optimizers and metadata to one ``.npz``."""
    arrays = {}
    for name in ("actor", "critic", "target_actor", "target_critic"):
        arrays.update(mlp_to_arrays(getattr(agent, name), name))
    arrays.update(adam_to_arrays(agent.actor_opt, "actor_opt"))
    arrays.update(adam_to_arrays(agent.critic_opt, "critic_opt"))
    info = {
        "format_version": CHECKPOINT_VERSION,
        "agent_params": asdict(agent.params),
        "meta": meta or {},
    }
    if buffer is not None:
        info["buffer"] = {"size": buffer.size, "capacity": buffer.capacity,
                          "cursor": buffer.cursor}
    arrays["info"] = np.array(json.dumps(info, sort_keys=True))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_agent(path) -> tuple[DDPGAgent, dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        info = json.loads(str(arrays["info"]))
        if info.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {info.get('format_version')}")
        nets = {name: mlp_from_arrays(arrays, name)
                for name in ("actor", "critic", "target_actor", "target_critic")}
        ap = dict(info["agent_params"])
        ap["hidden"] = tuple(ap["hidden"])
        params = AgentParams(**ap)
        agent = DDPGAgent(
            nets["actor"], nets["critic"], nets["target_actor"], nets["target_critic"],
            adam_from_arrays(arrays, "actor_opt", len(nets["actor"].params())),
            adam_from_arrays(arrays, "critic_opt", len(nets["critic"].params())),
            params)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} is missing {exc}") from exc
    if agent.actor.sizes[0] + agent.actor.sizes[-1] != agent.critic.sizes[0]:
        raise ShapeError("actor and critic input sizes are inconsistent")
    return agent, info
