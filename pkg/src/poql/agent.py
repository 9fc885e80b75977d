"""Tabular Q-learning over an extended state space fed by a learned model.

The agent couples epsilon-greedy Q-learning with a tracker that simulates
every environment step on the most recently learned labeled MDP. The Q-table
is keyed by (observation, model state, defined flag). Periodically the model
is relearned from the full episode history, the Q-table is reinitialized over
the grown state space, and all stored episodes are replayed into it; after
the freeze point the model stays fixed and only Q-values keep improving.

A training run is strictly sequential; runs with distinct seeds share nothing.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

from .envs import Environment
from .learn import LearnerConfig, run_ioalergia
from .models import (
    DeterministicLabeledMdp,
    RewardObservationTrace,
    TrackerState,
    discounted_return,
    reset_to_initial,
    step_to,
)


class ExtendedState(NamedTuple):
    """Q-table state: raw observation plus the tracker's (state, defined) pair."""

    obs: str
    state: int
    defined: bool


class QTable:
    """Map from (state key, action) to a real value, 0 for unseen keys.

    Rows materialize lazily, so keys never paired with an action keep the
    default and never appear in exports.
    """

    def __init__(self, actions: Sequence[str]):
        self.actions = tuple(actions)
        self._index = {a: i for i, a in enumerate(self.actions)}
        self._rows: dict[object, list[float]] = {}

    def value(self, state, action: str) -> float:
        row = self._rows.get(state)
        return row[self._index[action]] if row is not None else 0.0

    def best_value(self, state) -> float:
        row = self._rows.get(state)
        return max(row) if row is not None else 0.0

    def row(self, state) -> list[float] | None:
        return self._rows.get(state)

    def states(self) -> Iterable:
        return self._rows.keys()

    def __len__(self) -> int:
        return len(self._rows)


def get_action(
    q: QTable, state, epsilon: float, actions: Sequence[str], rng: random.Random
) -> str:
    """Epsilon-greedy action choice with uniform tie-breaking among maxima."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return actions[rng.randrange(len(actions))]
    row = q.row(state)
    if row is None:
        return actions[rng.randrange(len(actions))]
    best = max(row)
    ties = [i for i, v in enumerate(row) if v == best]
    if len(ties) == 1:
        return actions[ties[0]]
    return actions[ties[rng.randrange(len(ties))]]


def update_q_values(
    q: QTable, state, action: str, reward: float, next_state, alpha: float, gamma: float
) -> None:
    """One temporal-difference backup toward reward + gamma * best next value."""
    row = q._rows.get(state)
    if row is None:
        row = q._rows[state] = [0.0] * len(q.actions)
    i = q._index[action]
    next_row = q._rows.get(next_state)
    max_next = max(next_row) if next_row is not None else 0.0
    row[i] = (1.0 - alpha) * row[i] + alpha * (reward + gamma * max_next)


def replay(
    q: QTable,
    model: DeterministicLabeledMdp,
    history: Iterable[RewardObservationTrace],
    alpha: float,
    gamma: float,
) -> None:
    """Rebuild a fresh Q-table by replaying stored episodes through a model.

    Each episode is traced on the model exactly as it would have been online:
    reset the tracker, then advance it by (action, new observation) and apply
    the same update with the pre- and post-step extended states.
    """
    for episode in history:
        tracker = reset_to_initial(model)
        ext = ExtendedState(episode.initial_obs, tracker.state, tracker.defined)
        for action, reward, obs in episode.steps:
            tracker = step_to(tracker, action, obs, model)
            nxt = ExtendedState(obs, tracker.state, tracker.defined)
            update_q_values(q, ext, action, reward, nxt, alpha, gamma)
            ext = nxt


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters of a training run. None fields derive from max_episodes."""

    alpha: float = 0.1
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_episodes: int | None = None
    update_interval: int = 1000
    freeze_after: int | None = None
    max_episodes: int = 30_000
    eps_al: float = 0.05
    bootstrap_episodes: int = 500
    eval_every: int = 1000
    eval_episodes: int = 100
    target_goal_rate: float = 1.0
    # Expected steps of an optimal policy, when an oracle supplies one; the
    # early stop then additionally requires matching it after rounding.
    oracle_steps: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.update_interval < 1:
            raise ValueError("update_interval must be at least 1")
        if self.freeze_after is not None and self.freeze_after > self.max_episodes:
            raise ValueError("freeze_after cannot exceed max_episodes")
        if self.bootstrap_episodes < 1:
            raise ValueError("bootstrap_episodes must be at least 1")

    def resolved_freeze_after(self) -> int:
        if self.freeze_after is not None:
            return self.freeze_after
        return math.ceil(0.75 * self.max_episodes)

    def epsilon_at(self, episode: int) -> float:
        span = self.epsilon_decay_episodes
        if span is None:
            span = max(1, self.max_episodes // 2)
        if span <= 0 or episode >= span:
            return self.epsilon_end
        frac = episode / span
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


class EvalStats(NamedTuple):
    goal_rate: float
    mean_steps: int | None
    mean_return: float
    mean_steps_exact: float | None


def round_steps(x: float) -> int:
    """Round half up; evaluation reports step counts as integers."""
    return int(math.floor(x + 0.5))


class PoqlAgent:
    """Trained artifact: learned model, extended Q-table, and run history."""

    def __init__(self, model: DeterministicLabeledMdp, q: QTable, config: AgentConfig):
        self.model = model
        self.q = q
        self.config = config
        self.actions = q.actions
        self.gamma = config.gamma
        self.history: list[RewardObservationTrace] = []
        self.relearn_episodes: list[int] = []
        self.eval_rows: list[dict] = []
        self.episodes_trained = 0
        self.stop_episode: int | None = None
        self._tracker: TrackerState | None = None
        self._obs: str | None = None

    @property
    def kind(self) -> str:
        return "poql"

    def extended_state(self) -> ExtendedState:
        return ExtendedState(self._obs, self._tracker.state, self._tracker.defined)

    def begin_episode(self, initial_obs: str) -> None:
        self._tracker = reset_to_initial(self.model)
        self._obs = initial_obs

    def greedy_action(self, rng: random.Random) -> str:
        return get_action(self.q, self.extended_state(), 0.0, self.actions, rng)

    def observe(self, action: str, obs: str) -> None:
        self._tracker = step_to(self._tracker, action, obs, self.model)
        self._obs = obs


class BaselineAgent:
    """Observation-only Q-learner; identical loop, no model and no tracker."""

    def __init__(self, q: QTable, config: AgentConfig):
        self.q = q
        self.config = config
        self.actions = q.actions
        self.gamma = config.gamma
        self.history: list[RewardObservationTrace] = []
        self.eval_rows: list[dict] = []
        self.episodes_trained = 0
        self.stop_episode: int | None = None
        self.model = None
        self._obs: str | None = None

    @property
    def kind(self) -> str:
        return "obs_baseline"

    def begin_episode(self, initial_obs: str) -> None:
        self._obs = initial_obs

    def greedy_action(self, rng: random.Random) -> str:
        return get_action(self.q, self._obs, 0.0, self.actions, rng)

    def observe(self, action: str, obs: str) -> None:
        self._obs = obs


class RandomAgent:
    """Uniform-random policy, for floors and sanity checks."""

    def __init__(self, actions: Sequence[str], gamma: float = 0.99):
        self.actions = tuple(actions)
        self.gamma = gamma
        self.kind = "random"

    def begin_episode(self, initial_obs: str) -> None:
        pass

    def greedy_action(self, rng: random.Random) -> str:
        return self.actions[rng.randrange(len(self.actions))]

    def observe(self, action: str, obs: str) -> None:
        pass


class RepeatActionAgent:
    """Always performs the same action."""

    def __init__(self, action: str, gamma: float = 0.99):
        self.action = action
        self.gamma = gamma
        self.kind = f"repeat_{action}"

    def begin_episode(self, initial_obs: str) -> None:
        pass

    def greedy_action(self, rng: random.Random) -> str:
        return self.action

    def observe(self, action: str, obs: str) -> None:
        pass


def evaluate(agent, env: Environment, n_episodes: int, seed: int | str) -> EvalStats:
    """Run greedy episodes and report goal rate, steps, and discounted return.

    mean_steps averages the step counts of successful episodes and is rounded
    to the closest integer (None when no episode reached the goal).
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    env.reseed(f"{seed}|env")
    rng = random.Random(f"{seed}|ties")
    successes = 0
    success_steps: list[int] = []
    returns: list[float] = []
    for _ in range(n_episodes):
        obs, reward = env.reset()
        agent.begin_episode(obs)
        rewards = [reward]
        done = False
        while not done:
            action = agent.greedy_action(rng)
            obs, reward, done = env.step(action)
            agent.observe(action, obs)
            rewards.append(reward)
        if env.goal_reached:
            successes += 1
            success_steps.append(env.step_count)
        returns.append(discounted_return(rewards, 0, agent.gamma))
    exact = sum(success_steps) / successes if successes else None
    return EvalStats(
        goal_rate=successes / n_episodes,
        mean_steps=round_steps(exact) if exact is not None else None,
        mean_return=sum(returns) / n_episodes,
        mean_steps_exact=exact,
    )


def _bootstrap_history(
    env: Environment, episodes: int, rng: random.Random
) -> list[RewardObservationTrace]:
    history = []
    actions = env.actions
    for _ in range(episodes):
        obs, reward = env.reset()
        steps = []
        done = False
        while not done:
            action = actions[rng.randrange(len(actions))]
            new_obs, r, done = env.step(action)
            steps.append((action, r, new_obs))
        history.append(RewardObservationTrace(obs, reward, tuple(steps)))
    return history


def _stop_reached(stats: EvalStats, config: AgentConfig) -> bool:
    if stats.goal_rate < config.target_goal_rate:
        return False
    if config.oracle_steps is not None:
        if stats.mean_steps is None:
            return False
        return stats.mean_steps <= round_steps(config.oracle_steps)
    return True


def train(
    env: Environment,
    config: AgentConfig = AgentConfig(),
    seed: int | str = 0,
    log: Callable[[str], None] | None = None,
) -> PoqlAgent:
    """Train a poql agent on an environment.

    Bootstraps an initial model from random episodes, then runs epsilon-greedy
    Q-learning over the extended state space. Every update_interval episodes
    before the freeze point the model is relearned from the full history, the
    Q-table is zeroed over the new extended space, and the history is replayed
    into it. Training stops early once a periodic greedy evaluation meets the
    configured target.
    """
    rng = random.Random(f"{seed}|agent")
    learner = LearnerConfig(eps_al=config.eps_al)
    freeze_after = config.resolved_freeze_after()
    alpha, gamma = config.alpha, config.gamma

    history = _bootstrap_history(env, config.bootstrap_episodes, rng)
    model = run_ioalergia([t.observation_part() for t in history], learner)
    agent = PoqlAgent(model, QTable(env.actions), config)
    agent.history = history

    actions = env.actions
    for episode in range(config.max_episodes):
        epsilon = config.epsilon_at(episode)
        obs, reward = env.reset()
        tracker = reset_to_initial(agent.model)
        ext = ExtendedState(obs, tracker.state, tracker.defined)
        steps = []
        done = False
        while not done:
            action = get_action(agent.q, ext, epsilon, actions, rng)
            new_obs, r, done = env.step(action)
            tracker = step_to(tracker, action, new_obs, agent.model)
            nxt = ExtendedState(new_obs, tracker.state, tracker.defined)
            update_q_values(agent.q, ext, action, r, nxt, alpha, gamma)
            steps.append((action, r, new_obs))
            ext = nxt
        agent.history.append(RewardObservationTrace(obs, reward, tuple(steps)))
        agent.episodes_trained = episode + 1

        if episode < freeze_after and episode % config.update_interval == 0:
            agent.model = run_ioalergia(
                [t.observation_part() for t in agent.history], learner
            )
            agent.relearn_episodes.append(episode)
            agent.q = QTable(actions)
            replay(agent.q, agent.model, agent.history, alpha, gamma)
            if log:
                log(
                    f"episode {episode}: relearned model with "
                    f"{len(agent.model.states)} states from {len(agent.history)} traces"
                )

        if (episode + 1) % config.eval_every == 0 or episode + 1 == config.max_episodes:
            stats = evaluate(agent, env, config.eval_episodes, f"{seed}|eval|{episode}")
            agent.eval_rows.append(_eval_row(episode + 1, stats, agent))
            if log:
                log(
                    f"episode {episode + 1}: goal_rate={stats.goal_rate:.2f} "
                    f"mean_steps={stats.mean_steps} states={len(agent.model.states)}"
                )
            if _stop_reached(stats, config):
                agent.stop_episode = episode + 1
                break
    if agent.stop_episode is None:
        agent.stop_episode = agent.episodes_trained
    return agent


def baseline_obs_q(
    env: Environment,
    config: AgentConfig = AgentConfig(),
    seed: int | str = 0,
    log: Callable[[str], None] | None = None,
) -> BaselineAgent:
    """Train the observation-only baseline: the same loop keyed by raw
    observations, with no learned model, tracker, or replay."""
    rng = random.Random(f"{seed}|agent")
    agent = BaselineAgent(QTable(env.actions), config)
    alpha, gamma = config.alpha, config.gamma
    actions = env.actions
    for episode in range(config.max_episodes):
        epsilon = config.epsilon_at(episode)
        obs, reward = env.reset()
        initial_obs, initial_reward = obs, reward
        steps = []
        done = False
        while not done:
            action = get_action(agent.q, obs, epsilon, actions, rng)
            new_obs, r, done = env.step(action)
            update_q_values(agent.q, obs, action, r, new_obs, alpha, gamma)
            steps.append((action, r, new_obs))
            obs = new_obs
        agent.history.append(
            RewardObservationTrace(initial_obs, initial_reward, tuple(steps))
        )
        agent.episodes_trained = episode + 1
        if (episode + 1) % config.eval_every == 0 or episode + 1 == config.max_episodes:
            stats = evaluate(agent, env, config.eval_episodes, f"{seed}|eval|{episode}")
            agent.eval_rows.append(_eval_row(episode + 1, stats, agent))
            if log:
                log(
                    f"episode {episode + 1}: goal_rate={stats.goal_rate:.2f} "
                    f"mean_steps={stats.mean_steps}"
                )
            if _stop_reached(stats, config):
                agent.stop_episode = episode + 1
                break
    if agent.stop_episode is None:
        agent.stop_episode = agent.episodes_trained
    return agent


def _eval_row(episode: int, stats: EvalStats, agent) -> dict:
    return {
        "episode": episode,
        "goal_rate": stats.goal_rate,
        "mean_steps": stats.mean_steps,
        "mean_return": stats.mean_return,
        "model_state_count": len(agent.model.states) if agent.model else 0,
        "q_rows": len(agent.q),
    }
