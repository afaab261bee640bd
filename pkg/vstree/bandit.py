"""
Thompson-sampling contextual bandits over per-arm variational soft trees

Environments expose the same small surface:
    observe(step, rng) -> (context, noise)   one context and one noise draw per step
    expected_rewards(context) -> (k,)          noiseless reward of every arm
    realize(context, arm, noise) -> reward
Regret is measured against the noiseless best arm.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate
from scipy.special import expit

from vstree.constants import (
    BANDIT_BATCH_SIZE,
    BANDIT_TRAIN_STEPS,
    DEFAULT_RETRAIN_EVERY,
    ERROR_DIMENSION_MISMATCH,
    ERROR_EMPTY_DATA,
    ERROR_MALFORMED_TABLE,
    ERROR_UNPARSEABLE_CELL,
    EXPLORATION_ALPHA,
    EXPLORATION_ARMS,
    EXPLORATION_BETA,
    EXPLORATION_DELTA,
    EXPLORATION_OFFSET_RANGE,
    PORTFOLIO_ARMS,
    PORTFOLIO_CONTEXT_STD,
    PORTFOLIO_FEATURE_DIM,
    PORTFOLIO_NOISE_STD,
    REPLAY_REWARD_PREFIX,
)
from vstree.errors import DataError, InvalidArgumentError, VstreeError
from vstree.predictive import draw_predictions
from vstree.seeding import derive_seed, stream
from vstree.vst_training import TrainConfig, VstModel, fit_vst

logger = logging.getLogger(__name__)

RANDOM_POLICY_CONTEXTS = 100_000


# ========================
# Environments
# ========================

class Environment(ABC):
    context_dim: int

    @property
    @abstractmethod
    def num_arms(self) -> int:
        ...

    @abstractmethod
    def observe(self, step: int, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
        ...

    @abstractmethod
    def expected_rewards(self, context: np.ndarray) -> np.ndarray:
        ...

    def realize(self, context: np.ndarray, arm: int, noise: float) -> float:
        return float(self.expected_rewards(context)[self._check_arm(arm)] + noise)

    def _check_arm(self, arm: int) -> int:
        if not 0 <= arm < self.num_arms:
            raise InvalidArgumentError(f"Arm index {arm} out of range [0, {self.num_arms})")
        return int(arm)


@dataclass(frozen=True, eq=False)
class ExplorationEnv(Environment):
    """One smooth unit-height bump per arm over a scalar context in [-1, 1]"""

    alpha: float = EXPLORATION_ALPHA
    beta_env: float = EXPLORATION_BETA
    delta: float = EXPLORATION_DELTA
    offsets: np.ndarray = field(
        default_factory=lambda: np.linspace(*EXPLORATION_OFFSET_RANGE, EXPLORATION_ARMS)
    )
    context_dim: int = 1

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64).ravel()
        if offsets.shape[0] < 1 or np.unique(offsets).shape[0] != offsets.shape[0]:
            raise InvalidArgumentError("Offsets must be non-empty and distinct")
        if self.delta < 0:
            raise InvalidArgumentError(f"delta must be >= 0, got {self.delta}")
        object.__setattr__(self, "offsets", offsets)

    @property
    def num_arms(self) -> int:
        return self.offsets.shape[0]

    def observe(self, step: int, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
        context = np.array([rng.uniform(-1.0, 1.0)])
        return context, float(self.delta * rng.standard_normal())

    def bump(self, x) -> np.ndarray:
        """Noiseless reward of every arm at scalar context(s) x, shape (..., k)"""
        shift = np.asarray(x, dtype=np.float64)[..., None] - self.offsets
        return expit(self.beta_env * (shift + self.alpha)) - expit(self.beta_env * (shift - self.alpha))

    def expected_rewards(self, context: np.ndarray) -> np.ndarray:
        return self.bump(float(np.asarray(context).ravel()[0]))


def exploration_reward(env: ExplorationEnv, x: float, arm: int, noise: float) -> float:
    """sigma(b (x + a - o)) - sigma(b (x - a - o)) + noise for offset o of `arm`"""
    arm = env._check_arm(arm)
    return float(env.bump(float(x))[arm] + noise)


@dataclass(frozen=True, eq=False)
class LinearPortfolioEnv(Environment):
    """Arm rewards are fixed linear combinations of a Gaussian context"""

    weights: np.ndarray
    noise_std: float = PORTFOLIO_NOISE_STD
    context_std: float = PORTFOLIO_CONTEXT_STD

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] < 1:
            raise InvalidArgumentError(f"Arm weights must be (k, d), got {weights.shape}")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def generate(
        cls,
        seed: int,
        feature_dim: int = PORTFOLIO_FEATURE_DIM,
        num_arms: int = PORTFOLIO_ARMS,
        noise_std: float = PORTFOLIO_NOISE_STD,
    ) -> "LinearPortfolioEnv":
        rng = stream(seed, "portfolio-weights")
        weights = rng.standard_normal((num_arms, feature_dim)) / math.sqrt(feature_dim)
        return cls(weights=weights, noise_std=noise_std)

    @property
    def num_arms(self) -> int:
        return self.weights.shape[0]

    @property
    def context_dim(self) -> int:
        return self.weights.shape[1]

    def observe(self, step: int, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
        context = self.context_std * rng.standard_normal(self.context_dim)
        return context, float(self.noise_std * rng.standard_normal())

    def expected_rewards(self, context: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(context, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ReplayEnv(Environment):
    """Contexts and per-arm rewards replayed row by row (cycling) from a table"""

    contexts: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        if self.contexts.shape[0] != self.rewards.shape[0]:
            raise InvalidArgumentError(
                ERROR_DIMENSION_MISMATCH.format(what="replay rows", expected=self.contexts.shape[0], got=self.rewards.shape[0])
            )
        if self.contexts.shape[0] == 0 or self.rewards.shape[1] == 0:
            raise DataError(ERROR_EMPTY_DATA)

    @classmethod
    def from_table(cls, path, reward_prefix: str = REPLAY_REWARD_PREFIX) -> "ReplayEnv":
        try:
            frame = pd.read_csv(path)
        except FileNotFoundError as exc:
            raise DataError(f"File not found: {path}") from exc
        except pd.errors.EmptyDataError as exc:
            raise DataError(f"{ERROR_EMPTY_DATA}: {path}") from exc
        except (pd.errors.ParserError, UnicodeDecodeError) as exc:
            raise DataError(ERROR_MALFORMED_TABLE.format(path=path, reason=exc)) from exc
        reward_columns = [name for name in frame.columns if name.startswith(reward_prefix)]
        context_columns = [name for name in frame.columns if not name.startswith(reward_prefix)]
        if not reward_columns:
            raise DataError(f"No '{reward_prefix}*' reward columns in {path}")
        if not context_columns:
            raise DataError(f"No context columns in {path}; every column starts with '{reward_prefix}'")
        numeric = frame.apply(pd.to_numeric, errors="coerce")
        bad = numeric.isna().to_numpy()
        if bad.any():
            row, column = map(int, np.argwhere(bad)[0])
            raise DataError(
                ERROR_UNPARSEABLE_CELL.format(value=frame.iat[row, column], row=row + 1, column=frame.columns[column])
            )
        logger.info(f"Replay table {path}: {len(frame)} rows, {len(reward_columns)} arms")
        return cls(
            contexts=numeric[context_columns].to_numpy(dtype=np.float64),
            rewards=numeric[reward_columns].to_numpy(dtype=np.float64),
        )

    @property
    def num_arms(self) -> int:
        return self.rewards.shape[1]

    @property
    def context_dim(self) -> int:
        return self.contexts.shape[1]

    def observe(self, step: int, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
        row = step % self.contexts.shape[0]
        return np.append(self.contexts[row], row), 0.0

    def expected_rewards(self, context: np.ndarray) -> np.ndarray:
        return self.rewards[int(context[-1])]

    def features(self, context: np.ndarray) -> np.ndarray:
        return context[:-1]


def agent_features(env: Environment, context: np.ndarray) -> np.ndarray:
    """The part of the observed context the agent is allowed to see"""
    return env.features(context) if isinstance(env, ReplayEnv) else context


# ========================
# Agents
# ========================

class AgentKind(str, Enum):
    VST = "vst"
    RANDOM = "random"
    ORACLE = "oracle"


def default_bandit_train_config() -> TrainConfig:
    return TrainConfig(steps=BANDIT_TRAIN_STEPS, batch_size=BANDIT_BATCH_SIZE, allow_constant_target=True)


@dataclass(frozen=True)
class AgentConfig:
    kind: AgentKind = AgentKind.VST
    retrain_every: int = DEFAULT_RETRAIN_EVERY
    warm_start: bool = True
    train: TrainConfig = field(default_factory=default_bandit_train_config)

    def __post_init__(self):
        object.__setattr__(self, "kind", AgentKind(self.kind))
        if int(self.retrain_every) != self.retrain_every or self.retrain_every < 1:
            raise InvalidArgumentError(f"retrain_every must be a positive integer, got {self.retrain_every}")


def thompson_step(models: Sequence[VstModel], x, seed: int) -> Tuple[int, np.ndarray]:
    """
    Draw one posterior sample per arm and pick the arm with the largest
    predictive mean (lowest index on ties)

    Returns:
        (chosen arm, sampled value of every arm in original reward units)
    """
    if not models:
        raise InvalidArgumentError("Thompson sampling needs at least one arm model")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    values = np.empty(len(models))
    for arm, model in enumerate(models):
        draw = draw_predictions(model, x, 1, derive_seed(seed, f"arm-{arm}"))
        values[arm] = model.standardization.inverse_target(draw.means[0])[0]
    return int(np.argmax(values)), values


@dataclass(frozen=True, eq=False)
class BanditTrace:
    contexts: np.ndarray
    sampled_values: np.ndarray
    arms: np.ndarray
    rewards: np.ndarray
    optimal_rewards: np.ndarray
    regrets: np.ndarray

    @property
    def horizon(self) -> int:
        return self.arms.shape[0]

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.regrets)

    @property
    def final_regret(self) -> float:
        return float(self.cumulative_regret[-1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": np.arange(self.horizon),
                "arm": self.arms,
                "reward": self.rewards,
                "instant_regret": self.regrets,
                "cumulative_regret": self.cumulative_regret,
            }
        )


class ThompsonAgent:
    """One independent VST per arm, retrained on that arm's history"""

    def __init__(self, num_arms: int, config: AgentConfig, seed: int):
        self.config = config
        self.seed = seed
        self.models: List[Optional[VstModel]] = [None] * num_arms
        self.history: List[Tuple[List[np.ndarray], List[float]]] = [([], []) for _ in range(num_arms)]
        self.last_retrain: Optional[int] = None

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(rewards) for _, rewards in self.history])

    def forced_arm(self) -> Optional[int]:
        counts = self.counts
        if np.all(counts >= 2):
            return None
        return int(np.argmin(counts))

    def retrain(self, step: int):
        for arm, (contexts, rewards) in enumerate(self.history):
            config = replace(self.config.train, seed=derive_seed(self.seed, f"train-{step}-arm-{arm}"))
            previous = self.models[arm]
            init = previous.posterior if (self.config.warm_start and previous is not None) else None
            try:
                self.models[arm] = fit_vst(np.vstack(contexts), np.asarray(rewards), config, init)
            except VstreeError as exc:
                raise type(exc)(f"bandit step {step}, arm {arm}: {exc}") from exc
        self.last_retrain = step
        logger.debug(f"Retrained {len(self.models)} arm models at step {step}")

    def choose(self, step: int, features: np.ndarray, rng: np.random.Generator) -> Tuple[int, np.ndarray]:
        forced = self.forced_arm()
        if forced is not None:
            return forced, np.full(len(self.models), np.nan)
        if self.last_retrain is None or step - self.last_retrain >= self.config.retrain_every:
            self.retrain(step)
        return thompson_step(self.models, features, int(rng.integers(0, 2**32 - 1)))

    def observe(self, arm: int, features: np.ndarray, reward: float):
        contexts, rewards = self.history[arm]
        contexts.append(np.asarray(features, dtype=np.float64))
        rewards.append(float(reward))


def run_bandit(env: Environment, agent: AgentConfig, horizon: int, seed: int) -> BanditTrace:
    """
    Play `horizon` steps and record the trace

    The environment draws contexts and noise from its own stream, so every
    agent faces the same sequence under the same seed.
    """
    if int(horizon) != horizon or horizon < 1:
        raise InvalidArgumentError(f"horizon must be a positive integer, got {horizon}")
    env_rng = stream(seed, "env")
    agent_rng = stream(seed, "thompson")
    learner = ThompsonAgent(env.num_arms, agent, seed) if agent.kind is AgentKind.VST else None

    k = env.num_arms
    contexts, sampled = [], np.full((horizon, k), np.nan)
    arms = np.empty(horizon, dtype=np.int64)
    rewards, optimal, regrets = np.empty(horizon), np.empty(horizon), np.empty(horizon)
    for step in range(horizon):
        context, noise = env.observe(step, env_rng)
        features = agent_features(env, context)
        expected = env.expected_rewards(context)
        if agent.kind is AgentKind.ORACLE:
            arm = int(np.argmax(expected))
        elif agent.kind is AgentKind.RANDOM:
            arm = int(agent_rng.integers(0, k))
        else:
            arm, sampled[step] = learner.choose(step, features, agent_rng)
        reward = env.realize(context, arm, noise)
        if learner is not None:
            learner.observe(arm, features, reward)

        contexts.append(features)
        arms[step] = arm
        rewards[step] = reward
        optimal[step] = expected.max()
        regrets[step] = expected.max() - expected[arm]

    trace = BanditTrace(
        contexts=np.vstack(contexts),
        sampled_values=sampled,
        arms=arms,
        rewards=rewards,
        optimal_rewards=optimal,
        regrets=regrets,
    )
    logger.info(f"{agent.kind.value} agent: cumulative regret {trace.final_regret:.2f} after {horizon} steps")
    return trace


@dataclass(frozen=True, eq=False)
class RepeatSummary:
    seeds: Tuple[int, ...]
    final_regrets: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.final_regrets.mean())

    @property
    def std(self) -> float:
        return float(self.final_regrets.std())


def run_bandit_repeats(
    env_factory: Callable[[int], Environment],
    agent: AgentConfig,
    horizon: int,
    seeds: Sequence[int],
) -> RepeatSummary:
    """Final cumulative regret across independent seeds"""
    seeds = tuple(int(seed) for seed in seeds)
    if not seeds:
        raise InvalidArgumentError("At least one seed is required")
    finals = [run_bandit(env_factory(seed), agent, horizon, seed).final_regret for seed in seeds]
    return RepeatSummary(seeds=seeds, final_regrets=np.array(finals))


def random_policy_regret(env: Environment, horizon: int, seed: int = 0) -> float:
    """
    Expected cumulative regret of the uniform random policy

    Quadrature over the context for the exploration environment, Monte
    Carlo over contexts otherwise.
    """
    if isinstance(env, ExplorationEnv):
        def gap(x: float) -> float:
            rewards = env.bump(x)
            return float(rewards.max() - rewards.mean())

        breakpoints = np.unique(np.concatenate([env.offsets - env.alpha, env.offsets + env.alpha]))
        breakpoints = breakpoints[(breakpoints > -1.0) & (breakpoints < 1.0)]
        per_step, _ = integrate.quad(gap, -1.0, 1.0, points=breakpoints, limit=500)
        return horizon * per_step / 2.0

    if isinstance(env, ReplayEnv):
        rows = np.arange(horizon) % env.rewards.shape[0]
        rewards = env.rewards[rows]
        return float(np.sum(rewards.max(axis=1) - rewards.mean(axis=1)))

    rng = stream(seed, "random-policy")
    gaps = []
    for step in range(RANDOM_POLICY_CONTEXTS):
        context, _ = env.observe(step, rng)
        expected = env.expected_rewards(context)
        gaps.append(expected.max() - expected.mean())
    return horizon * float(np.mean(gaps))
