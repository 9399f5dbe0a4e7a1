"""Two-state continuous-action benchmark with a value-iteration oracle.

The environment alternates between its two states; the reward for action
``a`` in state ``s`` is 1 - (a - target(s))**2 with targets 0.2 and 0.8.
Because transitions ignore the action, the discounted-optimal policy is
exactly the per-state reward maximizer, which the discretized value
iteration recovers independently of any learned policy.
"""

from __future__ import annotations

import numpy as np

TARGETS = (0.2, 0.8)
N_STATES = 2
STATE_DIM = 2  # one-hot
ACTION_DIM = 1


def encode_state(s: int) -> np.ndarray:
    x = np.zeros(STATE_DIM)
    x[s] = 1.0
    return x


def step_reward(s: int, action: float) -> float:
    return 1.0 - (float(action) - TARGETS[s]) ** 2


def transition(s: int) -> int:
    return 1 - s


class ToyEnv:
    """Deterministic alternating two-state environment."""

    def __init__(self, start_state: int = 0):
        self.state = start_state

    def reset(self, start_state: int = 0) -> int:
        self.state = start_state
        return self.state

    def step(self, action: float) -> tuple[int, float]:
        r = step_reward(self.state, action)
        self.state = transition(self.state)
        return self.state, r


def value_iteration(
    discount: float, action_grid_size: int = 201, iterations: int = 500
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal per-state action (on a grid) and state values."""
    grid = np.linspace(0.0, 1.0, action_grid_size)
    values = np.zeros(N_STATES)
    best_actions = np.zeros(N_STATES)
    for _ in range(iterations):
        new_values = np.empty(N_STATES)
        for s in range(N_STATES):
            returns = np.array(
                [step_reward(s, a) + discount * values[transition(s)] for a in grid]
            )
            best = int(np.argmax(returns))
            new_values[s] = returns[best]
            best_actions[s] = grid[best]
        if np.max(np.abs(new_values - values)) < 1e-12:
            values = new_values
            break
        values = new_values
    return best_actions, values
