"""
RL Core - Shared-Reward Learners on a Small NumPy Approximator

ARCHITECTURE:
- Approximator: feedforward net, <= 2 hidden tanh layers of <= 64 units,
  linear output, parameters held in one flat float64 vector
- ClippedPG:       on-policy clipped-surrogate policy gradient with GAE
- AdvantageAC:     n-step advantage actor-critic
- DeterministicAC: off-policy deterministic actor, replay buffer, soft
                   target networks, Gaussian exploration noise

Actions are sampled in an unbounded pre-squash space u and handed to the
environment as squash(u): tanh for trading, sigmoid for hedging.

ENVIRONMENT CONTRACT:
    obs = env.reset()
    obs, reward, done, info = env.step(action)
    env.observation_dim, env.squash

DETERMINISM:
All randomness comes from one numpy Generator seeded by the caller; math is
single-threaded, so a fixed seed reproduces parameters bit for bit.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

# Tie-break order used by ensemble selection
LEARNER_KINDS = ('ClippedPG', 'AdvantageAC', 'DeterministicAC')

SHARPE_WINDOW = 60
DEGENERATE_STD = 1e-12
MAX_HIDDEN_LAYERS = 2
MAX_HIDDEN_UNITS = 64
LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_BOUNDS = (-5.0, 2.0)

SQUASHES = {
    'tanh': (np.tanh, lambda y: 1.0 - y ** 2),
    'sigmoid': (expit, lambda y: y * (1.0 - y)),
}


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.99
    clip_range: float = 0.2
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    n_steps: int = 5
    rollout_steps: int = 256
    n_epochs: int = 4
    batch_size: int = 64
    replay_size: int = 10_000
    tau: float = 0.005
    exploration_noise: float = 0.1
    learning_starts: int = 100
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    init_log_std: float = 0.0
    hidden: tuple = (64, 64)


# ========================================
# Approximator
# ========================================

@dataclass(frozen=True)
class Architecture:
    layers: tuple
    activation: str = 'tanh'

    def __post_init__(self):
        layers = tuple(int(n) for n in self.layers)
        object.__setattr__(self, 'layers', layers)
        if len(layers) < 2 or len(layers) - 2 > MAX_HIDDEN_LAYERS:
            raise ValueError(f"architecture needs input, output and <= {MAX_HIDDEN_LAYERS} hidden layers: {layers}")
        if any(n < 1 for n in layers) or any(n > MAX_HIDDEN_UNITS for n in layers[1:-1]):
            raise ValueError(f"hidden layers must have 1..{MAX_HIDDEN_UNITS} units: {layers}")
        if self.activation != 'tanh':
            raise ValueError(f"unsupported activation '{self.activation}'")

    @property
    def n_params(self):
        return sum((n_in + 1) * n_out for n_in, n_out in zip(self.layers[:-1], self.layers[1:]))

    def to_dict(self):
        return {'layers': list(self.layers), 'activation': self.activation}


def _unpack(architecture, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (architecture.n_params,):
        raise ValueError(f"parameter vector has shape {theta.shape}, architecture needs ({architecture.n_params},)")
    out, offset = [], 0
    for n_in, n_out in zip(architecture.layers[:-1], architecture.layers[1:]):
        W = theta[offset:offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = theta[offset:offset + n_out]
        offset += n_out
        out.append((W, b))
    return out


def _forward(architecture, theta, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != architecture.layers[0]:
        raise ValueError(f"input has {h.shape[1]} features, network expects {architecture.layers[0]}")
    layers = _unpack(architecture, theta)
    activations = [h]
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = np.tanh(h)
        activations.append(h)
    return h, activations, single


def approximator_forward(architecture, theta, x):
    """Network output for one input vector or a (batch, features) matrix."""
    out, _, single = _forward(architecture, theta, x)
    return out[0] if single else out


def _backward(architecture, theta, x, upstream):
    out, activations, _ = _forward(architecture, theta, x)
    g = np.asarray(upstream, dtype=np.float64).reshape(out.shape)
    layers = _unpack(architecture, theta)
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if i < len(layers) - 1:
            g = g * (1.0 - activations[i + 1] ** 2)
        grads.append((activations[i].T @ g, g.sum(axis=0)))
        g = g @ W.T
    flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])
    return flat, g


def approximator_gradient(architecture, theta, x, upstream):
    """d(sum(upstream * output)) / d(theta), summed over the batch."""
    return _backward(architecture, theta, x, upstream)[0]


def approximator_input_gradient(architecture, theta, x, upstream):
    """d(sum(upstream * output)) / d(input), one row per batch entry."""
    return _backward(architecture, theta, x, upstream)[1]


def approximator_hidden(architecture, theta, x):
    """Activations of the last hidden layer (the input when there is none)."""
    _, activations, single = _forward(architecture, theta, x)
    hidden = activations[-2]
    return hidden[0] if single else hidden


def init_network(architecture, rng, output_scale=0.01):
    """Glorot-uniform weights, zero biases, shrunken output layer."""
    chunks = []
    pairs = list(zip(architecture.layers[:-1], architecture.layers[1:]))
    for i, (n_in, n_out) in enumerate(pairs):
        limit = math.sqrt(6.0 / (n_in + n_out))
        W = rng.uniform(-limit, limit, size=(n_in, n_out))
        if i == len(pairs) - 1:
            W *= output_scale
        chunks.extend([W.ravel(), np.zeros(n_out)])
    return np.concatenate(chunks)


class Adam:
    def __init__(self, size, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(grad, max_norm):
    norm = float(np.linalg.norm(grad))
    if max_norm and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


# ========================================
# Policy parameters
# ========================================

@dataclass(frozen=True, eq=False)
class PolicyParams:
    """
    Actor, log-std and critic packed into one flat vector:
    theta = [actor | log_std | critic].
    """
    kind: str
    actor: Architecture
    critic: Architecture
    theta: np.ndarray
    squash: str = 'tanh'
    normalizer: Optional[object] = None
    seed: Optional[int] = None
    training_window: Optional[tuple] = None
    include_options: bool = True
    include_context: bool = True

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind '{self.kind}'")
        if self.squash not in SQUASHES:
            raise ValueError(f"unknown squash '{self.squash}'")
        theta = np.asarray(self.theta, dtype=np.float64)
        expected = self.actor.n_params + 1 + self.critic.n_params
        if theta.shape != (expected,):
            raise ValueError(f"{self.kind} parameter count {theta.size} does not match descriptor ({expected})")
        object.__setattr__(self, 'theta', theta)

    @property
    def obs_dim(self):
        return self.actor.layers[0]

    @property
    def actor_slice(self):
        return slice(0, self.actor.n_params)

    @property
    def log_std_index(self):
        return self.actor.n_params

    @property
    def critic_slice(self):
        return slice(self.actor.n_params + 1, self.theta.size)

    @property
    def actor_theta(self):
        return self.theta[self.actor_slice]

    @property
    def log_std(self):
        return float(self.theta[self.log_std_index])

    @property
    def critic_theta(self):
        return self.theta[self.critic_slice]

    def with_theta(self, theta):
        return replace(self, theta=np.array(theta, dtype=np.float64))


def init_policy(kind, obs_dim, squash, rng, config=LearnerConfig(), **extra):
    actor = Architecture((obs_dim, *config.hidden, 1))
    critic_in = obs_dim + 1 if kind == 'DeterministicAC' else obs_dim
    critic = Architecture((critic_in, *config.hidden, 1))
    theta = np.concatenate([
        init_network(actor, rng),
        [config.init_log_std],
        init_network(critic, rng, output_scale=1.0),
    ])
    return PolicyParams(kind, actor, critic, theta, squash, **extra)


def policy_mean(params, obs):
    return approximator_forward(params.actor, params.actor_theta, obs)[..., 0]


def squash_action(params, u):
    return SQUASHES[params.squash][0](u)


def policy_action(params, obs, rng=None, noise=None):
    """
    Squashed action. Deterministic when rng is None; otherwise u is drawn
    around the mean with the learned std (or `noise` for the deterministic
    learner) before squashing.
    """
    u = float(policy_mean(params, obs))
    if rng is not None:
        std = noise if noise is not None else math.exp(params.log_std)
        u += std * float(rng.standard_normal())
    return float(squash_action(params, u))


# ========================================
# Rolling Sharpe reward
# ========================================

class SharpeTracker:
    """Rolling window of daily portfolio returns."""

    def __init__(self, window=SHARPE_WINDOW, rf_daily=0.0):
        if window < 2:
            raise ValueError(f"Sharpe window must be >= 2, got {window}")
        self.window = window
        self.rf_daily = rf_daily
        self.returns = deque(maxlen=window)

    def push(self, r):
        if not math.isfinite(r):
            raise ValueError(f"non-finite return pushed to Sharpe tracker: {r}")
        self.returns.append(float(r))

    def copy(self):
        twin = SharpeTracker(self.window, self.rf_daily)
        twin.returns.extend(self.returns)
        return twin

    def __len__(self):
        return len(self.returns)


def rolling_sharpe(tracker):
    """(mean(r) - r_f) / std(r) over the window; None below 2 returns, 0 when std < 1e-12."""
    if len(tracker.returns) < 2:
        return None
    r = np.fromiter(tracker.returns, dtype=np.float64)
    std = float(np.std(r, ddof=1))
    if std < DEGENERATE_STD:
        return 0.0
    return float((np.mean(r) - tracker.rf_daily) / std)


def reward_step(prev_sr, new_sr):
    """Shared reward R_t = SR_t - SR_{t-1}; an undefined side counts as 0."""
    return (new_sr if new_sr is not None else 0.0) - (prev_sr if prev_sr is not None else 0.0)


# ========================================
# Learners
# ========================================

@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: float
    reward: float
    next_observation: np.ndarray
    terminal: bool

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError(f"non-finite reward {self.reward}")


@dataclass
class Batch:
    obs: np.ndarray
    u: Optional[np.ndarray] = None
    actions: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None
    old_logp: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TrainingLogRow:
    step: int
    episode: int
    reward: float
    sr: Optional[float]


def _gaussian_logp(u, mu, log_std):
    z = (u - mu) / math.exp(log_std)
    return -0.5 * z ** 2 - log_std - 0.5 * LOG_2PI, z


class _Learner:
    kind = None

    def __init__(self, params, config, rng):
        self.params = params
        self.config = config
        self.rng = rng
        self.step_count = 0
        self.episode = 0
        self._obs = None
        self._log = None

    def _theta(self, theta):
        return self.params if theta is None else self.params.with_theta(theta)

    def critic_values(self, obs, theta=None):
        p = self._theta(theta)
        return approximator_forward(p.critic, p.critic_theta, obs)[..., 0]

    def critic_loss(self, theta, batch):
        """0.5 * mean((V(s) - target)^2) against batch.returns."""
        p = self.params.with_theta(theta)
        inputs = self._critic_inputs(batch)
        diff = approximator_forward(p.critic, p.critic_theta, inputs)[:, 0] - batch.returns
        n = len(diff)
        grad = np.zeros_like(p.theta)
        grad[p.critic_slice] = approximator_gradient(p.critic, p.critic_theta, inputs, (diff / n)[:, None])
        return float(0.5 * np.mean(diff ** 2)), grad

    def _critic_inputs(self, batch):
        return batch.obs

    def _env_step(self, env, action):
        obs, reward, done, info = env.step(action)
        if not math.isfinite(reward):
            raise ValueError(f"environment returned non-finite reward {reward}")
        self.step_count += 1
        if self._log is not None:
            self._log.append(TrainingLogRow(self.step_count, self.episode, float(reward),
                                            (info or {}).get('sr')))
        if done:
            self.episode += 1
        return obs, float(reward), bool(done)

    def train(self, env, timesteps, log=None):
        self._log = log
        self._obs = env.reset()
        self._train(env, timesteps)
        return self.params


class _StochasticLearner(_Learner):
    """Gaussian policy over the pre-squash action with a learned log-std."""

    def _rollout(self, env, n):
        p = self.params
        squash = SQUASHES[p.squash][0]
        std = math.exp(p.log_std)
        obs_buf = np.zeros((n, p.obs_dim))
        u_buf = np.zeros(n)
        rewards = np.zeros(n)
        dones = np.zeros(n)
        for t in range(n):
            obs = np.asarray(self._obs, dtype=np.float64)
            u = float(policy_mean(p, obs)) + std * float(self.rng.standard_normal())
            next_obs, reward, done = self._env_step(env, float(squash(u)))
            obs_buf[t], u_buf[t], rewards[t], dones[t] = obs, u, reward, done
            self._obs = env.reset() if done else next_obs
        values = self.critic_values(obs_buf)
        last_value = float(self.critic_values(np.asarray(self._obs, dtype=np.float64)))
        mu = policy_mean(p, obs_buf)
        old_logp, _ = _gaussian_logp(u_buf, mu, p.log_std)
        return obs_buf, u_buf, rewards, dones, values, last_value, old_logp

    def _advantages(self, rewards, dones, values, last_value, lam):
        gamma = self.config.gamma
        advantages = np.zeros_like(rewards)
        running = 0.0
        for t in range(len(rewards) - 1, -1, -1):
            next_value = last_value if t == len(rewards) - 1 else values[t + 1]
            nonterminal = 1.0 - dones[t]
            delta = rewards[t] + gamma * next_value * nonterminal - values[t]
            running = delta + gamma * lam * nonterminal * running
            advantages[t] = running
        return advantages, advantages + values

    def _apply(self, optimizer, batch):
        _, actor_grad = self.actor_loss(self.params.theta, batch)
        _, critic_grad = self.critic_loss(self.params.theta, batch)
        grad = clip_grad_norm(actor_grad + self.config.vf_coef * critic_grad, self.config.max_grad_norm)
        theta = optimizer.step(self.params.theta, grad)
        theta[self.params.log_std_index] = np.clip(theta[self.params.log_std_index], *LOG_STD_BOUNDS)
        self.params = self.params.with_theta(theta)


class ClippedPG(_StochasticLearner):
    kind = 'ClippedPG'

    def actor_loss(self, theta, batch):
        """Negative clipped surrogate (minus entropy bonus) and its gradient."""
        p = self.params.with_theta(theta)
        mu = policy_mean(p, batch.obs)
        logp, z = _gaussian_logp(batch.u, mu, p.log_std)
        ratio = np.exp(logp - batch.old_logp)
        adv = batch.advantages
        eps = self.config.clip_range
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
        n = len(adv)
        entropy = p.log_std + 0.5 * (LOG_2PI + 1.0)
        loss = -float(np.mean(np.minimum(unclipped, clipped))) - self.config.ent_coef * entropy

        g_logp = -np.where(unclipped <= clipped, adv, 0.0) * ratio / n
        grad = np.zeros_like(p.theta)
        g_mu = g_logp * z / math.exp(p.log_std)
        grad[p.actor_slice] = approximator_gradient(p.actor, p.actor_theta, batch.obs, g_mu[:, None])
        grad[p.log_std_index] = float(np.sum(g_logp * (z ** 2 - 1.0))) - self.config.ent_coef
        return loss, grad

    def _train(self, env, timesteps):
        cfg = self.config
        optimizer = Adam(self.params.theta.size, cfg.learning_rate)
        done_steps = 0
        while done_steps < timesteps:
            n = min(cfg.rollout_steps, timesteps - done_steps)
            obs, u, rewards, dones, values, last_value, old_logp = self._rollout(env, n)
            advantages, returns = self._advantages(rewards, dones, values, last_value, cfg.gae_lambda)
            done_steps += n
            for _ in range(cfg.n_epochs):
                order = self.rng.permutation(n)
                for start in range(0, n, cfg.batch_size):
                    idx = order[start:start + cfg.batch_size]
                    adv = advantages[idx]
                    if len(idx) > 1:
                        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
                    batch = Batch(obs=obs[idx], u=u[idx], advantages=adv,
                                  old_logp=old_logp[idx], returns=returns[idx])
                    self._apply(optimizer, batch)


class AdvantageAC(_StochasticLearner):
    kind = 'AdvantageAC'

    def actor_loss(self, theta, batch):
        """-mean(log pi(u|s) * A) minus entropy bonus."""
        p = self.params.with_theta(theta)
        mu = policy_mean(p, batch.obs)
        logp, z = _gaussian_logp(batch.u, mu, p.log_std)
        adv = batch.advantages
        n = len(adv)
        entropy = p.log_std + 0.5 * (LOG_2PI + 1.0)
        loss = -float(np.mean(logp * adv)) - self.config.ent_coef * entropy

        g_logp = -adv / n
        grad = np.zeros_like(p.theta)
        g_mu = g_logp * z / math.exp(p.log_std)
        grad[p.actor_slice] = approximator_gradient(p.actor, p.actor_theta, batch.obs, g_mu[:, None])
        grad[p.log_std_index] = float(np.sum(g_logp * (z ** 2 - 1.0))) - self.config.ent_coef
        return loss, grad

    def _train(self, env, timesteps):
        cfg = self.config
        optimizer = Adam(self.params.theta.size, cfg.learning_rate)
        done_steps = 0
        while done_steps < timesteps:
            n = min(cfg.n_steps, timesteps - done_steps)
            obs, u, rewards, dones, values, last_value, _ = self._rollout(env, n)
            # lambda = 1: plain n-step bootstrapped returns
            advantages, returns = self._advantages(rewards, dones, values, last_value, 1.0)
            done_steps += n
            self._apply(optimizer, Batch(obs=obs, u=u, advantages=advantages, returns=returns))


class ReplayBuffer:
    def __init__(self, capacity, obs_dim):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def add(self, transition):
        i = self.cursor
        self.obs[i] = transition.observation
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.next_obs[i] = transition.next_observation
        self.dones[i] = float(transition.terminal)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self):
        return self.size

    def sample(self, rng, batch_size):
        idx = rng.integers(0, self.size, size=batch_size)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx]


class DeterministicAC(_Learner):
    kind = 'DeterministicAC'

    def __init__(self, params, config, rng):
        super().__init__(params, config, rng)
        self.target_theta = params.theta.copy()

    def _critic_inputs(self, batch):
        return np.column_stack([batch.obs, batch.actions])

    def actor_loss(self, theta, batch):
        """-mean(Q(s, squash(mu(s)))) with the critic held fixed."""
        p = self.params.with_theta(theta)
        squash, dsquash = SQUASHES[p.squash]
        a = squash(policy_mean(p, batch.obs))
        q_in = np.column_stack([batch.obs, a])
        n = len(a)
        q = approximator_forward(p.critic, p.critic_theta, q_in)[:, 0]
        g_in = approximator_input_gradient(p.critic, p.critic_theta, q_in, np.full((n, 1), -1.0 / n))
        g_mu = g_in[:, -1] * dsquash(a)
        grad = np.zeros_like(p.theta)
        grad[p.actor_slice] = approximator_gradient(p.actor, p.actor_theta, batch.obs, g_mu[:, None])
        return -float(np.mean(q)), grad

    def _targets(self, rewards, next_obs, dones):
        target = self.params.with_theta(self.target_theta)
        next_a = squash_action(target, policy_mean(target, next_obs))
        next_q = approximator_forward(target.critic, target.critic_theta,
                                      np.column_stack([next_obs, next_a]))[:, 0]
        return rewards + self.config.gamma * (1.0 - dones) * next_q

    def _train(self, env, timesteps):
        cfg = self.config
        p = self.params
        squash = SQUASHES[p.squash][0]
        buffer = ReplayBuffer(cfg.replay_size, p.obs_dim)
        actor_opt = Adam(p.theta.size, cfg.learning_rate)
        critic_opt = Adam(p.theta.size, cfg.learning_rate)
        for t in range(timesteps):
            obs = np.asarray(self._obs, dtype=np.float64)
            if t < cfg.learning_starts:
                u = float(self.rng.standard_normal())
            else:
                u = float(policy_mean(self.params, obs)) + cfg.exploration_noise * float(self.rng.standard_normal())
            action = float(squash(u))
            next_obs, reward, done = self._env_step(env, action)
            buffer.add(Transition(obs, action, reward, np.asarray(next_obs, dtype=np.float64), done))
            self._obs = env.reset() if done else next_obs

            if t + 1 < cfg.learning_starts or len(buffer) < cfg.batch_size:
                continue
            b_obs, b_act, b_rew, b_next, b_done = buffer.sample(self.rng, cfg.batch_size)
            batch = Batch(obs=b_obs, actions=b_act, returns=self._targets(b_rew, b_next, b_done))
            _, critic_grad = self.critic_loss(self.params.theta, batch)
            self.params = self.params.with_theta(critic_opt.step(self.params.theta, critic_grad))
            _, actor_grad = self.actor_loss(self.params.theta, batch)
            self.params = self.params.with_theta(actor_opt.step(self.params.theta, actor_grad))
            self.target_theta = cfg.tau * self.params.theta + (1.0 - cfg.tau) * self.target_theta


LEARNERS = {cls.kind: cls for cls in (ClippedPG, AdvantageAC, DeterministicAC)}


def make_learner(params, config=LearnerConfig(), seed=0):
    return LEARNERS[params.kind](params, config, np.random.default_rng(seed))


def train_learner(env, kind, timesteps, seed, config=LearnerConfig(), init=None, log=None):
    """
    Train one policy for `timesteps` environment steps.

    `init` warm-starts from existing parameters (same kind); otherwise a
    fresh network is drawn from `seed`. timesteps = 0 returns the
    initialisation untouched.
    """
    if kind not in LEARNERS:
        raise ValueError(f"unknown learner kind '{kind}'")
    if timesteps < 0:
        raise ValueError(f"timesteps must be >= 0, got {timesteps}")
    rng = np.random.default_rng(seed)
    if init is None:
        params = init_policy(kind, env.observation_dim, env.squash, rng, config,
                             normalizer=getattr(env, 'normalizer', None), seed=seed,
                             training_window=getattr(env, 'window', None),
                             include_options=getattr(env, 'include_options', True),
                             include_context=getattr(env, 'include_context', True))
    else:
        if init.kind != kind:
            raise ValueError(f"warm start kind {init.kind} does not match {kind}")
        params = replace(init, seed=seed, training_window=getattr(env, 'window', init.training_window),
                         normalizer=getattr(env, 'normalizer', None) or init.normalizer)
    if params.obs_dim != env.observation_dim:
        raise ValueError(f"policy expects {params.obs_dim} features, environment emits {env.observation_dim}")
    if timesteps == 0:
        return params

    learner = LEARNERS[kind](params, config, rng)
    trained = learner.train(env, timesteps, log)
    logger.info(f"Trained {kind} for {timesteps} steps over {learner.episode} episode(s) (seed={seed})")
    return trained


# ========================================
# Toy environment
# ========================================

class ToyTrendEnv:
    """
    Upward-drifting market with no costs: reward = a * r, r = drift + vol * z.
    Observation [1, previous z]; returns are independent, so always-long wins.
    """
    squash = 'tanh'
    observation_dim = 2

    def __init__(self, seed, episode_length=50, drift=0.01, vol=0.01):
        self.rng = np.random.default_rng(seed)
        self.episode_length = episode_length
        self.drift = drift
        self.vol = vol
        self.t = 0
        self.prev_z = 0.0

    def reset(self):
        self.t = 0
        self.prev_z = 0.0
        return np.array([1.0, self.prev_z])

    def step(self, action):
        z = float(self.rng.standard_normal())
        reward = float(action) * (self.drift + self.vol * z)
        self.t += 1
        self.prev_z = z
        return np.array([1.0, z]), reward, self.t >= self.episode_length, {'sr': None}


def evaluate_policy(env, params, episodes, rng=None):
    """Episode reward totals; deterministic actions unless rng is given."""
    totals = []
    for _ in range(episodes):
        obs, total, done = env.reset(), 0.0, False
        while not done:
            obs, reward, done, _ = env.step(policy_action(params, obs, rng))
            total += reward
        totals.append(total)
    return totals
