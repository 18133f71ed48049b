from __future__ import annotations

import dataclasses

import numpy as np

from logbandit.confidence import build_state
from logbandit.estimation import History


def random_state(seed: int, d: int = 2, s_bound: float = 2.0, beta: float | None = None,
                 rounds: int | None = None, arms: int = 6):
    """History drawn from a random instance and its confidence state.

    With beta set, the level set is tightened so that both the loss and the
    ball constraint can be active.
    """
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=d)
    theta *= rng.uniform(0.3, 1.0) * s_bound / np.linalg.norm(theta)
    pool = rng.normal(size=(arms, d))
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    n = rounds if rounds is not None else int(rng.integers(20, 3000))
    X = pool[rng.integers(0, arms, size=n)]
    r = (rng.random(n) < 1.0 / (1.0 + np.exp(-(X @ theta)))).astype(int)
    h = History(d, X, r)
    st = build_state(h, 0.1, s_bound)
    if beta is not None:
        st = dataclasses.replace(st, beta=beta)
    return h, st
