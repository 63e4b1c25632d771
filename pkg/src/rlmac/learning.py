"""Tabular learners: hysteretic Q-learning, hysteretic/classical bandits and
epsilon-greedy selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LearningParams:
    alpha: float = 0.9  # rate for non-negative TD errors
    beta: float = 0.1  # rate for negative TD errors
    gamma: float = 0.95
    epsilon0: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.05
    random_init: bool = False  # uniform init in [-0.01, 0.01] instead of zeros

    def __post_init__(self):
        if not 0 < self.beta <= self.alpha <= 1:
            raise ValueError("need 0 < beta <= alpha <= 1")
        if not 0 <= self.gamma < 1:
            raise ValueError("need 0 <= gamma < 1")
        if not 0 <= self.epsilon_min <= self.epsilon0 <= 1:
            raise ValueError("need 0 <= epsilon_min <= epsilon0 <= 1")
        if not 0 < self.epsilon_decay <= 1:
            raise ValueError("epsilon_decay must be in (0, 1]")


def new_qtable(n_states: int, n_actions: int, params: LearningParams | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
    if params is not None and params.random_init:
        return rng.uniform(-0.01, 0.01, size=(n_states, n_actions))
    return np.zeros((n_states, n_actions))


def new_arms(n_arms: int, params: LearningParams | None = None,
             rng: np.random.Generator | None = None) -> np.ndarray:
    if params is not None and params.random_init:
        return rng.uniform(-0.01, 0.01, size=n_arms)
    return np.zeros(n_arms)


def _hysteretic_step(delta: float, p: LearningParams) -> float:
    return (p.alpha if delta >= 0 else p.beta) * delta


def hysteretic_q_update(q: np.ndarray, s: int, a: int, r: float, s_next: int,
                        p: LearningParams) -> float:
    """In-place TD update of ``q[s, a]``; returns the TD error."""
    n_s, n_a = q.shape
    if not (0 <= s < n_s and 0 <= s_next < n_s and 0 <= a < n_a):
        raise IndexError(f"state/action out of range: s={s}, a={a}, s'={s_next}")
    delta = r + p.gamma * q[s_next].max() - q[s, a]
    q[s, a] += _hysteretic_step(delta, p)
    return delta


def hysteretic_bandit_update(b: np.ndarray, a: int, r: float, p: LearningParams) -> float:
    if not 0 <= a < len(b):
        raise IndexError(f"arm {a} out of range")
    delta = r - b[a]
    b[a] += _hysteretic_step(delta, p)
    return delta


def classical_bandit_update(b: np.ndarray, a: int, r: float, alpha: float) -> float:
    if not 0 <= a < len(b):
        raise IndexError(f"arm {a} out of range")
    delta = r - b[a]
    b[a] += alpha * delta
    return delta


def greedy(values, rng: np.random.Generator, mask=None) -> int:
    """Argmax with uniform random tie-breaking; ``mask`` limits the candidates."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no actions to select from")
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    best = np.flatnonzero(v == v.max())
    if len(best) == 1:
        return int(best[0])
    return int(best[rng.integers(len(best))])


def epsilon_greedy_select(values, epsilon: float, rng: np.random.Generator, mask=None) -> int:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no actions to select from")
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        allowed = np.arange(v.size) if mask is None else np.flatnonzero(mask)
        return int(allowed[rng.integers(len(allowed))])
    return greedy(v, rng, mask)


def decay_epsilon(epsilon: float, p: LearningParams) -> float:
    return max(p.epsilon_min, epsilon * p.epsilon_decay)
