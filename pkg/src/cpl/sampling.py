"""Action selection from logits, with the optional suggested-edge boost."""
from __future__ import annotations

import numpy as np


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def boosted_logits(logits: np.ndarray, suggested: np.ndarray, boost: float) -> np.ndarray:
    if boost == 0.0 or not suggested.any():
        return logits
    return logits + boost * suggested.astype(np.float64)


def adaptive_sample(logits: np.ndarray, suggested: np.ndarray, boost: float, active: bool,
                    rng: np.random.Generator) -> tuple[int, float]:
    """Sample an action; returns (index, log-prob under the sampled distribution).

    When ``active``, suggested actions get ``boost`` added to their logits
    first, and the returned log-prob is that of the boosted distribution.
    """
    z = boosted_logits(logits, suggested, boost) if active else logits
    logp = log_softmax_np(z)
    p = np.exp(logp)
    idx = int(rng.choice(len(p), p=p / p.sum()))
    return idx, float(logp[idx])


def greedy(logits: np.ndarray) -> tuple[int, float]:
    logp = log_softmax_np(logits)
    idx = int(np.argmax(logp))
    return idx, float(logp[idx])
