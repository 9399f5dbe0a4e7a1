"""Controller layer: state fusion, reward, route selection, TD3 training.

State layout (27 entries)::

    0..6    reasoning telemetry   (u_p, delta_t, recent_quality,
    7..13   generation telemetry   activation_rate, cache_hit_rate,
    14..20  retrieval telemetry    queue_depth_norm, energy_rate_norm)
    21..23  c_semantic, c_length, c_uncertainty
    24      prior-step quality
    25      remaining latency budget, normalized
    26      step index, normalized

Actions live in [0, 1]^3: reasoning cluster fraction, generation budget
fraction, retrieval probe fraction.  Components below the skip threshold
switch the module off entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import AdamState, Mlp
from .tasks import ComplexityVector

STATE_DIM = 27
ACTION_DIM = 3
SKIP_THRESHOLD = 0.05
TELEMETRY_FIELDS = (
    "u_p",
    "delta_t",
    "recent_quality",
    "activation_rate",
    "cache_hit_rate",
    "queue_depth_norm",
    "energy_rate_norm",
)
ROUTING_MODES = ("dynamic", "static", "random", "none")


class ControllerError(ValueError):
    """Raised on contract violations in the controller layer."""


@dataclass(frozen=True)
class ModuleTelemetry:
    """Per-module health metrics fused into the controller state."""

    u_p: float = 0.0
    delta_t: float = 0.0
    recent_quality: float = 0.0
    activation_rate: float = 0.0
    cache_hit_rate: float = 0.0
    queue_depth_norm: float = 0.0
    energy_rate_norm: float = 0.0

    def __post_init__(self) -> None:
        for name in TELEMETRY_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ControllerError(f"telemetry field {name} must be finite")
            if name != "delta_t" and not 0.0 <= value <= 1.0:
                raise ControllerError(f"telemetry field {name} out of [0, 1]: {value}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in TELEMETRY_FIELDS])


def build_state(
    c: ComplexityVector,
    telemetry: tuple[ModuleTelemetry, ModuleTelemetry, ModuleTelemetry],
    prior_q: float,
    budget_remaining_norm: float,
    step_norm: float,
) -> np.ndarray:
    """Concatenate telemetry and task features in the documented layout."""
    if len(telemetry) != 3:
        raise ControllerError("expected telemetry for exactly 3 modules")
    for name, value in (
        ("prior_q", prior_q),
        ("budget_remaining_norm", budget_remaining_norm),
        ("step_norm", step_norm),
    ):
        if not (math.isfinite(value) and 0.0 <= value <= 1.0):
            raise ControllerError(f"{name} out of [0, 1]: {value}")
    state = np.concatenate(
        [t.as_array() for t in telemetry]
        + [c.as_array(), np.array([prior_q, budget_remaining_norm, step_norm])]
    )
    assert state.shape == (STATE_DIM,)
    return state


@dataclass(frozen=True)
class RewardParams:
    """Weights of the three reward terms: 1/delay, quality, delay swing."""

    alpha: float = 2.5
    beta: float = 2.0
    gamma_penalty: float = 0.02

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma_penalty) < 0:
            raise ControllerError("reward weights must be non-negative")
        if self.alpha == self.beta == self.gamma_penalty == 0:
            raise ControllerError("at least one reward weight must be positive")


def reward(
    total_delay_ms: float,
    quality: float,
    delay_swing_ms: float,
    p: RewardParams,
) -> float:
    """alpha / total_delay + beta * quality - gamma * delay_swing (delay in ms)."""
    if total_delay_ms <= 0:
        raise ControllerError("total delay must be positive")
    if not 0.0 <= quality <= 1.0:
        raise ControllerError("quality must be in [0, 1]")
    if delay_swing_ms < 0:
        raise ControllerError("delay swing must be non-negative")
    return (
        p.alpha / total_delay_ms + p.beta * quality - p.gamma_penalty * delay_swing_ms
    )


@dataclass(frozen=True)
class RoutingAction:
    """Activation intensities plus derived skip flags."""

    activation: tuple[float, float, float]
    skip: tuple[bool, bool, bool]

    def __post_init__(self) -> None:
        if any(not 0.0 <= a <= 1.0 for a in self.activation):
            raise ControllerError("activation components must be in [0, 1]")
        if all(self.skip):
            raise ControllerError("at least one module must stay active")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.activation)


def _action_from_vector(values: np.ndarray, allow_skip: bool) -> RoutingAction:
    values = np.clip(values, 0.0, 1.0)
    if allow_skip:
        skip = values < SKIP_THRESHOLD
        if skip.all():  # keep the strongest module alive
            skip[int(np.argmax(values))] = False
    else:
        skip = np.zeros(3, dtype=bool)
    return RoutingAction(
        activation=tuple(float(v) for v in values),
        skip=tuple(bool(s) for s in skip),
    )


def select_route(
    state: np.ndarray,
    policy: Mlp | None,
    mode: str,
    exploration_noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> RoutingAction:
    """Pick the routing action for one task in the given mode.

    dynamic rescales the tanh actor output from (-1, 1) to [0, 1] and adds
    clipped Gaussian exploration noise; static always runs everything;
    random draws a seeded uniform action; none runs everything with skip
    logic disabled (the engine also bypasses cache, pruning, and gating).
    """
    if mode not in ROUTING_MODES:
        raise ControllerError(f"unknown routing mode {mode!r}")
    if mode == "static":
        return _action_from_vector(np.ones(ACTION_DIM), allow_skip=True)
    if mode == "none":
        return _action_from_vector(np.ones(ACTION_DIM), allow_skip=False)
    if mode == "random":
        if rng is None:
            raise ControllerError("random mode needs a seeded generator")
        return _action_from_vector(rng.uniform(0.0, 1.0, ACTION_DIM), allow_skip=True)
    if policy is None:
        raise ControllerError("dynamic mode needs a policy network")
    raw = nn.forward(policy, state)
    action = (raw + 1.0) / 2.0
    if exploration_noise > 0.0:
        if rng is None:
            raise ControllerError("exploration noise needs a seeded generator")
        action = action + rng.normal(0.0, exploration_noise, ACTION_DIM)
    return _action_from_vector(action, allow_skip=True)


@dataclass(frozen=True)
class Transition:
    """One replay-buffer element."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer over flat numpy storage."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM):
        if capacity < 1:
            raise ControllerError("replay capacity must be >= 1")
        self.capacity = capacity
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._terminal = np.zeros(capacity)
        self._size = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self._size

    def add(self, t: Transition) -> None:
        i = self._cursor
        self._states[i] = t.state
        self._actions[i] = t.action
        self._rewards[i] = t.reward
        self._next_states[i] = t.next_state
        self._terminal[i] = float(t.terminal)
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if batch_size > self._size:
            raise ControllerError("not enough transitions to sample a batch")
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "states": self._states[idx],
            "actions": self._actions[idx],
            "rewards": self._rewards[idx],
            "next_states": self._next_states[idx],
            "terminal": self._terminal[idx],
        }


@dataclass(frozen=True)
class Td3Config:
    """Hyper-parameters of the twin-critic delayed policy updater."""

    discount: float = 0.95
    actor_delay: int = 2
    target_noise_std: float = 0.1
    target_noise_clip: float = 0.25
    tau: float = 0.01
    exploration_noise: float = 0.15
    replay_capacity: int = 100_000
    batch_size: int = 128
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    hidden: tuple[int, int] = (64, 64)
    # pre-tanh bias on the actor output layer: starting low lets per-state
    # optima be approached from the steep (under-provisioned) side
    init_action_bias: float = -0.8
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.discount < 1.0:
            raise ControllerError("discount must lie in (0, 1)")
        if self.actor_delay < 1:
            raise ControllerError("actor_delay must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ControllerError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ControllerError("replay capacity must fit at least one batch")


@dataclass
class Td3State:
    """Online networks, frozen targets, and their optimizer states."""

    actor: Mlp
    critic1: Mlp
    critic2: Mlp
    target_actor: Mlp
    target_critic1: Mlp
    target_critic2: Mlp
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    updates: int = 0


def init_td3(
    cfg: Td3Config, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM
) -> Td3State:
    h1, h2 = cfg.hidden
    actor = nn.init_mlp((state_dim, h1, h2, action_dim), "tanh", cfg.seed)
    actor.biases[-1] += cfg.init_action_bias
    critic1 = nn.init_mlp((state_dim + action_dim, h1, h2, 1), "linear", cfg.seed + 1)
    critic2 = nn.init_mlp((state_dim + action_dim, h1, h2, 1), "linear", cfg.seed + 2)
    return Td3State(
        actor=actor,
        critic1=critic1,
        critic2=critic2,
        target_actor=actor.copy(),
        target_critic1=critic1.copy(),
        target_critic2=critic2.copy(),
        actor_opt=nn.init_adam(actor, cfg.actor_lr),
        critic1_opt=nn.init_adam(critic1, cfg.critic_lr),
        critic2_opt=nn.init_adam(critic2, cfg.critic_lr),
    )


def actor_action(actor: Mlp, states: np.ndarray) -> np.ndarray:
    """Deterministic policy output rescaled from (-1, 1) to [0, 1]."""
    return (nn.forward(actor, states) + 1.0) / 2.0


def compute_td_targets(
    batch: dict[str, np.ndarray],
    td3: Td3State,
    cfg: Td3Config,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smoothed twin-critic TD targets: r + gamma * (1 - done) * min(Q1', Q2')."""
    next_states = batch["next_states"]
    target_a = actor_action(td3.target_actor, next_states)
    noise = np.clip(
        rng.normal(0.0, cfg.target_noise_std, target_a.shape),
        -cfg.target_noise_clip,
        cfg.target_noise_clip,
    )
    target_a = np.clip(target_a + noise, 0.0, 1.0)
    sa = np.concatenate([next_states, target_a], axis=1)
    q1 = nn.forward(td3.target_critic1, sa)[:, 0]
    q2 = nn.forward(td3.target_critic2, sa)[:, 0]
    y = batch["rewards"] + cfg.discount * (1.0 - batch["terminal"]) * np.minimum(q1, q2)
    return y, q1, q2


def _polyak(target: Mlp, online: Mlp, tau: float) -> None:
    for tp, p in zip(target.parameters(), online.parameters()):
        tp *= 1.0 - tau
        tp += tau * p


def td3_update(
    buffer: ReplayBuffer,
    td3: Td3State,
    cfg: Td3Config,
    rng: np.random.Generator,
) -> dict[str, float]:
    """One TD3 step: fit both critics, then (every actor_delay) the actor.

    Returns scalar diagnostics; actor_objective is NaN on critic-only steps.
    """
    if len(buffer) < cfg.batch_size:
        raise ControllerError("replay buffer smaller than one batch")
    batch = buffer.sample(cfg.batch_size, rng)
    states, actions = batch["states"], batch["actions"]
    y, _, _ = compute_td_targets(batch, td3, cfg, rng)

    sa = np.concatenate([states, actions], axis=1)
    n = len(states)
    losses = []
    for critic, opt in (
        (td3.critic1, td3.critic1_opt),
        (td3.critic2, td3.critic2_opt),
    ):
        q = nn.forward(critic, sa)[:, 0]
        losses.append(float(np.mean((q - y) ** 2)))
        upstream = (2.0 / n) * (q - y)[:, None]
        grads = nn.backward(critic, sa, upstream)
        nn.adam_step(critic, grads, opt)

    td3.updates += 1
    actor_objective = math.nan
    if td3.updates % cfg.actor_delay == 0:
        a = actor_action(td3.actor, states)
        sa_pi = np.concatenate([states, a], axis=1)
        q = nn.forward(td3.critic1, sa_pi)[:, 0]
        actor_objective = float(np.mean(q))
        critic_grads = nn.backward(td3.critic1, sa_pi, np.full((n, 1), 1.0 / n))
        dq_da = critic_grads["input"][:, states.shape[1]:]
        # ascend: minimize the negated objective; 0.5 chains the rescale
        actor_grads = nn.backward(td3.actor, states, -0.5 * dq_da)
        nn.adam_step(td3.actor, actor_grads, td3.actor_opt)
        _polyak(td3.target_actor, td3.actor, cfg.tau)
        _polyak(td3.target_critic1, td3.critic1, cfg.tau)
        _polyak(td3.target_critic2, td3.critic2, cfg.tau)

    return {
        "critic1_loss": losses[0],
        "critic2_loss": losses[1],
        "actor_objective": actor_objective,
        "td_target_mean": float(np.mean(y)),
    }


def policy_params(actor: Mlp) -> np.ndarray:
    """The policy parameter vector theta, flattened layer by layer."""
    return nn.flatten_params(actor)


def policy_gradient_estimate(
    trajectories: list[list[tuple[np.ndarray, np.ndarray]]],
    actor: Mlp,
    critic_fn,
    discount: float,
    policy_std: float = 0.1,
) -> np.ndarray:
    """Monte-Carlo score-function gradient of the discounted objective.

    The stochastic policy is an isotropic Gaussian centered on the actor
    output; per step the score is weighted by discount**t * Q(s_t, a_t).
    Used for convergence analysis, not the main training path.
    """
    if not trajectories:
        raise ControllerError("need at least one trajectory")
    if policy_std <= 0:
        raise ControllerError("policy_std must be positive")
    states, upstreams = [], []
    for traj in trajectories:
        for t, (s, a) in enumerate(traj):
            mu = actor_action(actor, s)
            q = float(critic_fn(s, a))
            weight = discount**t * q / len(trajectories)
            # d log pi / d mu = (a - mu) / std^2; 0.5 chains the rescale
            upstreams.append(weight * (np.asarray(a) - mu) / policy_std**2 * 0.5)
            states.append(s)
    grads = nn.backward(actor, np.asarray(states), np.asarray(upstreams))
    return nn.flatten_grads(actor, grads)


def log_policy_density(
    actor: Mlp, state: np.ndarray, action: np.ndarray, policy_std: float = 0.1
) -> float:
    """Log-density of the Gaussian exploration policy (oracle for tests)."""
    mu = actor_action(actor, state)
    diff = np.asarray(action) - mu
    dim = diff.size
    return float(
        -0.5 * np.dot(diff, diff) / policy_std**2
        - 0.5 * dim * math.log(2 * math.pi * policy_std**2)
    )


def lipschitz_estimate(
    grad_fn,
    theta0: np.ndarray,
    n_pairs: int,
    perturbation_scale: float,
    seed: int,
) -> float:
    """Empirical lower bound on the gradient's Lipschitz constant.

    Samples seeded parameter pairs around theta0 and reports the largest
    observed ratio ||g(t1) - g(t2)|| / ||t1 - t2||.
    """
    if n_pairs < 1:
        raise ControllerError("need at least one pair")
    if perturbation_scale <= 0:
        raise ControllerError("perturbation scale must be positive")
    theta0 = np.asarray(theta0, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    best = 0.0
    for _ in range(n_pairs):
        t1 = theta0 + perturbation_scale * rng.standard_normal(theta0.shape)
        t2 = t1 + perturbation_scale * rng.standard_normal(theta0.shape)
        denom = float(np.linalg.norm(t1 - t2))
        if denom == 0.0:
            continue
        ratio = float(np.linalg.norm(grad_fn(t1) - grad_fn(t2))) / denom
        best = max(best, ratio)
    return best


def joint_loss(
    lora_losses,
    lambdas,
    mu: float,
    p_dist,
    q_dist,
) -> float:
    """Weighted per-module losses plus a KL(p || q) consistency term (nats)."""
    losses = np.asarray(lora_losses, dtype=np.float64)
    lams = np.asarray(lambdas, dtype=np.float64)
    if losses.shape != (3,) or lams.shape != (3,):
        raise ControllerError("expected 3 per-module losses and 3 weights")
    if np.any(losses < 0) or np.any(lams < 0) or mu < 0:
        raise ControllerError("losses, lambdas, and mu must be non-negative")
    p = np.asarray(p_dist, dtype=np.float64)
    q = np.asarray(q_dist, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ControllerError("p and q must be 1-D and the same length")
    for name, dist in (("p", p), ("q", q)):
        if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
            raise ControllerError(f"{name} is not a probability vector")
    support = p > 0
    if np.any(q[support] == 0):
        raise ControllerError("q must be positive wherever p is")
    kl = float(np.sum(p[support] * np.log(p[support] / q[support])))
    return float(np.dot(lams, losses) + mu * kl)
