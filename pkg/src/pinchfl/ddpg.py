"""DDPG solver for the per-round latency problem.

The environment wraps a :class:`RoundInstance`. A state holds the normalized
dataset sizes and channel gains of the selected clients; an action sets the
pinching abscissa (when the scheme optimizes it), every transmit power and
every CPU frequency. Network outputs live in [-1, 1] and are mapped affinely
onto the constraint boxes, so every emitted action is box-feasible.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nets import Adam, DenseNet, soft_update
from .noma import BatchEvaluator, BatchMetrics, RoundDecision, RoundInstance
from .oracle import BaselineKind, BaselineOutcome


class DivergenceError(RuntimeError):
    """Critic loss blew past the configured cap."""


@dataclass
class Hyperparams:
    discount: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_size: int = 100_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    hidden: tuple[int, int] = (64, 64)
    noise_start: float = 0.2
    noise_end: float = 0.02
    xi1: float = 1.0
    xi2: float = 1.0
    t_cap: float = 100.0
    slots_per_episode: int = 1
    total_steps: int = 20_000
    warmup_steps: int = 1_000
    f_floor_frac: float = 0.01
    loss_cap: float = 1e8
    block_fading: bool = False

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ValueError("need 1 <= batch_size <= buffer_size")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("step sizes must be > 0")
        if self.noise_start < 0 or self.noise_end < 0:
            raise ValueError("noise scales must be >= 0")
        if self.slots_per_episode < 1 or self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("bad episode/step counts")
        if not 0.0 < self.f_floor_frac <= 1.0:
            raise ValueError("f_floor_frac must lie in (0, 1]")
        if self.t_cap <= 0:
            raise ValueError("t_cap must be > 0")


def sgn(x: np.ndarray) -> np.ndarray:
    return np.sign(x)


def reward_from_batch(m: BatchMetrics, xi1: float, xi2: float, t_cap: float,
                      e_max: np.ndarray | None = None) -> np.ndarray:
    """-xi1 * min(T, t_cap) + xi2 * sum_n sgn(E_max - E_n) for each row."""
    t = np.minimum(m.round_latency, t_cap)
    if e_max is None:
        margin = np.where(m.energy_ok, 1.0, -1.0)
    else:
        margin = sgn(e_max - m.energy)
    return -xi1 * t + xi2 * margin.sum(axis=1)


def reward(metrics, xi1: float = 1.0, xi2: float = 1.0, t_cap: float = 100.0) -> float:
    """Reward of a :class:`RoundMetrics`; an unbounded round is clipped to ``t_cap``."""
    t = min(metrics.round_latency, t_cap)
    margin = metrics.e_max - metrics.e_cmp - metrics.e_com
    with np.errstate(invalid="ignore"):
        signs = np.sign(np.nan_to_num(margin, nan=-1.0, neginf=-1.0))
    return float(-xi1 * t + xi2 * signs.sum())


class RoundEnv:
    """MDP view of one round instance for a given scheme."""

    def __init__(self, instance: RoundInstance, kind: BaselineKind | None = None,
                 hyper: Hyperparams | None = None, rng: np.random.Generator | None = None):
        self.kind = kind or BaselineKind.optimized()
        self.hyper = hyper or Hyperparams()
        self.base_instance = instance
        self.rng = rng or np.random.default_rng(0)
        self.n = instance.size
        self.optimize_x = self.kind.name == BaselineKind.OPTIMIZED and instance.use_pinching
        geo = instance.geometry
        if self.kind.name == BaselineKind.FIXED:
            self.default_x = float(self.kind.x_p)
        elif instance.use_pinching:
            self.default_x = geo.area_length / 2.0
        else:
            self.default_x = 0.0
        self.state_dim = 2 * self.n
        self.action_dim = 2 * self.n + (1 if self.optimize_x else 0)
        self._set_instance(instance)
        self.x_prev = self.default_x

    def _set_instance(self, instance: RoundInstance) -> None:
        self.instance = instance
        self.evaluator = BatchEvaluator(instance)
        a = self.evaluator.arr
        self.p_max, self.f_max, self.e_max = a["p_max"], a["f_max"], a["e_max"]
        self.f_floor = self.hyper.f_floor_frac * self.f_max
        sizes = np.array([c.dataset_size for c in instance.clients], dtype=float)
        self.size_feature = sizes / sizes.max()

    def reset(self) -> np.ndarray:
        if self.hyper.block_fading:
            fading = {c.id: float(self.rng.exponential(1.0)) for c in self.base_instance.clients}
            from dataclasses import replace
            self._set_instance(replace(self.base_instance, fading=fading))
        self.x_prev = self.default_x
        return self.state()

    def state(self) -> np.ndarray:
        g = self.evaluator.gains(np.array([self.x_prev]))[0]
        return np.concatenate([self.size_feature, g / g.max()])

    def to_decision(self, raw: np.ndarray) -> RoundDecision:
        """Map a raw action in [-1, 1]^dim onto the constraint boxes."""
        u = (np.clip(raw, -1.0, 1.0) + 1.0) / 2.0
        if self.optimize_x:
            x_p = float(u[0]) * self.instance.geometry.area_length
            u = u[1:]
        else:
            x_p = self.default_x
        power = u[: self.n] * self.p_max
        freq = self.f_floor + u[self.n:] * (self.f_max - self.f_floor)
        return RoundDecision(x_p, power, freq)

    def decisions_batch(self, raw: np.ndarray):
        u = (np.clip(raw, -1.0, 1.0) + 1.0) / 2.0
        if self.optimize_x:
            x_p = u[:, 0] * self.instance.geometry.area_length
            u = u[:, 1:]
        else:
            x_p = np.full(raw.shape[0], self.default_x)
        power = u[:, : self.n] * self.p_max
        freq = self.f_floor + u[:, self.n:] * (self.f_max - self.f_floor)
        return x_p, power, freq

    def evaluate(self, raw: np.ndarray) -> tuple[np.ndarray, BatchMetrics]:
        x_p, power, freq = self.decisions_batch(np.atleast_2d(raw))
        m = self.evaluator(x_p, power, freq)
        h = self.hyper
        return reward_from_batch(m, h.xi1, h.xi2, h.t_cap), m

    def step(self, raw: np.ndarray) -> tuple[float, BatchMetrics, np.ndarray]:
        r, m = self.evaluate(raw)
        if self.optimize_x:
            self.x_prev = float((np.clip(raw[0], -1, 1) + 1) / 2 * self.instance.geometry.area_length)
        return float(r[0]), m, self.state()


class ReplayBuffer:
    """Ring buffer; the oldest transitions are overwritten first."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, done: bool) -> None:
        i = self.ptr
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s2, float(done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]


class DDPGAgent:
    """Online/target actor-critic pair with Adam updates."""

    def __init__(self, state_dim: int, action_dim: int, hyper: Hyperparams,
                 rng: np.random.Generator):
        self.hyper = hyper
        self.state_dim, self.action_dim = state_dim, action_dim
        h1, h2 = hyper.hidden
        self.actor = DenseNet([state_dim, h1, h2, action_dim], ["relu", "relu", "tanh"], rng)
        self.critic = DenseNet([state_dim + action_dim, h1, h2, 1],
                               ["relu", "relu", "linear"], rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(self.actor.params, hyper.actor_lr)
        self.critic_opt = Adam(self.critic.params, hyper.critic_lr)

    def act(self, state: np.ndarray, noise_scale: float = 0.0,
            rng: np.random.Generator | None = None) -> np.ndarray:
        raw = self.actor(state[None])[0]
        if noise_scale > 0.0:
            raw = raw + noise_scale * rng.standard_normal(raw.shape)
        return np.clip(raw, -1.0, 1.0)

    def q_value(self, s: np.ndarray, a: np.ndarray, target: bool = False) -> np.ndarray:
        net = self.critic_target if target else self.critic
        return net(np.concatenate([s, a], axis=1))[:, 0]

    def critic_loss_and_grads(self, s, a, r, s2, done):
        a2 = self.actor_target(s2)
        y = r + self.hyper.discount * (1.0 - done) * self.q_value(s2, a2, target=True)
        q, cache = self.critic.forward(np.concatenate([s, a], axis=1))
        diff = q[:, 0] - y
        loss = float(np.mean(diff ** 2))
        grads, _ = self.critic.backward(cache, (2.0 / len(diff)) * diff[:, None])
        return loss, grads

    def critic_update(self, batch) -> float:
        loss, grads = self.critic_loss_and_grads(*batch)
        self.critic_opt.step(grads)
        return loss

    def actor_objective_and_grads(self, s):
        """Mean critic value of the actor's actions and its gradient (ascent direction)."""
        a, a_cache = self.actor.forward(s)
        q, q_cache = self.critic.forward(np.concatenate([s, a], axis=1))
        objective = float(q.mean())
        _, g_in = self.critic.backward(q_cache, np.full_like(q, 1.0 / len(q)))
        grads, _ = self.actor.backward(a_cache, g_in[:, self.state_dim:])
        return objective, grads

    def actor_update(self, batch) -> float:
        objective, grads = self.actor_objective_and_grads(batch[0])
        self.actor_opt.step([-g for g in grads])
        return objective

    def soft_update(self) -> None:
        soft_update(self.actor, self.actor_target, self.hyper.tau)
        soft_update(self.critic, self.critic_target, self.hyper.tau)

    def save(self, path: str | Path, rng: np.random.Generator | None = None) -> None:
        arrays = {}
        for name in ("actor", "critic", "actor_target", "critic_target"):
            arrays[name] = getattr(self, name).get_flat()
        for name, opt in (("actor_opt", self.actor_opt), ("critic_opt", self.critic_opt)):
            for k, v in opt.state().items():
                arrays[f"{name}.{k}"] = v
        meta = {"hyper": asdict(self.hyper), "state_dim": self.state_dim,
                "action_dim": self.action_dim,
                "rng": rng.bit_generator.state if rng is not None else None}
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> tuple[DDPGAgent, dict | None]:
        data = np.load(path)
        meta = json.loads(bytes(data["meta"]).decode())
        hyper = Hyperparams(**meta["hyper"])
        agent = cls(meta["state_dim"], meta["action_dim"], hyper, np.random.default_rng(0))
        for name in ("actor", "critic", "actor_target", "critic_target"):
            getattr(agent, name).set_flat(data[name])
        for name, opt in (("actor_opt", agent.actor_opt), ("critic_opt", agent.critic_opt)):
            prefix = f"{name}."
            opt.load_state({k[len(prefix):]: data[k] for k in data.files if k.startswith(prefix)})
        return agent, meta["rng"]


@dataclass
class EpisodeRecord:
    episode: int
    mean_reward: float
    best_t: float
    energy_violations: int


@dataclass
class TrainResult:
    agent: DDPGAgent
    episodes: list[EpisodeRecord]
    best_decision: RoundDecision | None
    best_t: float
    best_feasible: bool
    actions: list[tuple[np.ndarray, bool]] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    best_step: int = -1

    @property
    def rewards(self) -> list[float]:
        return [e.mean_reward for e in self.episodes]

    def converged_reward(self, window: int = 100) -> float:
        r = self.rewards[-window:]
        return float(np.mean(r)) if r else math.nan


def train(instance: RoundInstance, hyper: Hyperparams | None = None, seed: int = 0,
          kind: BaselineKind | None = None, record_actions: int = 500) -> TrainResult:
    """Train DDPG on one instance and return the best decision seen.

    "Best" is judged by the true evaluator over every emitted action:
    energy-feasible first, then smallest round latency.
    """
    hyper = hyper or Hyperparams()
    rng = np.random.default_rng(seed)
    env = RoundEnv(instance, kind, hyper, np.random.default_rng(rng.integers(2 ** 63)))
    agent = DDPGAgent(env.state_dim, env.action_dim, hyper, rng)
    buffer = ReplayBuffer(env.state_dim, env.action_dim, hyper.buffer_size)

    episodes: list[EpisodeRecord] = []
    actions: list[tuple[np.ndarray, bool]] = []
    losses: list[float] = []
    best = (1, math.inf, math.inf)  # (infeasible, excess, T)
    best_decision = None
    best_step = -1
    ep_rewards: list[float] = []
    ep_viol = 0
    state = env.reset()

    for step in range(hyper.total_steps):
        frac = step / max(hyper.total_steps - 1, 1)
        sigma = hyper.noise_start + (hyper.noise_end - hyper.noise_start) * frac
        if step < hyper.warmup_steps:
            raw = rng.uniform(-1.0, 1.0, size=env.action_dim)
        else:
            raw = agent.act(state, sigma, rng)
        r, m, next_state = env.step(raw)
        feasible_row = m.energy_ok[0]
        excess = float(np.maximum(m.energy[0] - env.e_max, 0.0).sum())
        t = float(m.round_latency[0])
        key = (0 if feasible_row.all() else 1, 0.0 if feasible_row.all() else excess, t)
        if key < best:
            best = key
            best_decision = env.to_decision(raw)
            best_step = step
        slot = step % hyper.slots_per_episode
        done = slot == hyper.slots_per_episode - 1
        buffer.add(state, raw, r, next_state, done)
        ep_rewards.append(r)
        ep_viol += int((~feasible_row).sum())
        if record_actions:
            actions.append((raw.copy(), bool(feasible_row.all())))
            if len(actions) > record_actions:
                actions.pop(0)

        if len(buffer) >= max(hyper.batch_size, 1) and step >= hyper.warmup_steps // 2:
            batch = buffer.sample(hyper.batch_size, rng)
            loss = agent.critic_update(batch)
            if not math.isfinite(loss) or loss > hyper.loss_cap:
                raise DivergenceError(f"critic loss {loss:.3e} exceeded cap at step {step}")
            losses.append(loss)
            agent.actor_update(batch)
            agent.soft_update()

        if done:
            episodes.append(EpisodeRecord(len(episodes), float(np.mean(ep_rewards)),
                                          best[2], ep_viol))
            ep_rewards, ep_viol = [], 0
            state = env.reset()
        else:
            state = next_state

    return TrainResult(agent, episodes, best_decision, best[2], best[0] == 0, actions, losses,
                       best_step)


def write_reward_csv(path: str | Path, episodes: list[EpisodeRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("episode,mean_reward,best_T,energy_violations\n")
        for e in episodes:
            fh.write(f"{e.episode},{e.mean_reward!r},{e.best_t!r},{e.energy_violations}\n")


def ddpg_solver(hyper: Hyperparams | None = None, seed: int = 0):
    """Solver adaptor running DDPG for a scheme; reward is the converged mean."""

    def solve(instance: RoundInstance, kind: BaselineKind) -> BaselineOutcome:
        res = train(instance, hyper, seed, kind)
        return BaselineOutcome(kind, res.converged_reward(), res.best_t, res.best_decision,
                               res.rewards)

    return solve
