"""Entropy of sparsified labels as a function of the labeling rate.

If background is always labeled background and a true nucleus pixel is
labeled nucleus with probability ``eps``, then the label-positive rate is
``eps * x`` where ``x`` is the true nucleus probability, and the label
entropy is

    H = -eps*x*ln(eps) - eps*x*ln(x) - (1 - eps*x)*ln(1 - eps*x).

For small ``eps`` the first term dominates, so ``H ~ -eps*ln(eps) * x`` is
proportional to ``x``. The functions here evaluate both forms, quantify how
dominant the leading term is, and check the labeling model by simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

_MC_BLOCK = 1 << 18


@dataclass(frozen=True)
class TheoryPoint:
    epsilon: float
    x: float
    h_exact: float
    h_approx: float
    dominant_fraction: float


def _check(epsilon: float, x: float) -> None:
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0 <= x <= 1:
        raise ValueError(f"x must lie in [0, 1], got {x}")


def _terms(epsilon: float, x: float) -> Tuple[float, float, float]:
    q = epsilon * x
    if q >= 1:
        raise ValueError("epsilon * x must be < 1")
    lead = -q * math.log(epsilon)
    cross = -q * math.log(x) if x > 0 else 0.0
    tail = -(1.0 - q) * math.log1p(-q)
    return lead, cross, tail


def theory_exact(epsilon: float, x: float) -> float:
    """Exact label entropy in nats for label rate ``epsilon * x``."""
    _check(epsilon, x)
    return math.fsum(_terms(epsilon, x))


def theory_approx(epsilon: float, x: float) -> float:
    """Leading-order entropy ``-eps * ln(eps) * x``."""
    _check(epsilon, x)
    return -(epsilon * x) * math.log(epsilon)


def dominance_report(epsilon: float, x: float) -> TheoryPoint:
    """Share of the exact entropy carried by the leading term."""
    _check(epsilon, x)
    if x <= 0:
        raise ValueError("dominance is undefined for x = 0")
    lead, cross, tail = _terms(epsilon, x)
    exact = math.fsum((lead, cross, tail))
    return TheoryPoint(epsilon, x, exact, lead, lead / exact)


def binary_entropy(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log(p) - (1 - p) * math.log1p(-p)


def monte_carlo_label_sim(p_ct: float, epsilon: float, n_trials: int, seed: int = 0) -> Tuple[float, float]:
    """Simulate the sparse labeling of ``n_trials`` independent pixels.

    Each pixel is a true nucleus with probability ``p_ct``; a nucleus is
    labeled with probability ``epsilon``; background is never labeled.

    Returns
    -------
    rate : float
        Empirical label-positive rate.
    entropy : float
        Plug-in binary entropy of ``rate`` in nats.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if not (0 <= p_ct <= 1 and 0 <= epsilon <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    root = np.random.SeedSequence(seed)
    n_blocks = -(-n_trials // _MC_BLOCK)
    positives = 0
    for block, child in enumerate(root.spawn(n_blocks)):
        n = min(_MC_BLOCK, n_trials - block * _MC_BLOCK)
        rng = np.random.default_rng(child)
        truth = rng.random(n) < p_ct
        labeled = rng.random(n) < epsilon
        positives += int(np.count_nonzero(truth & labeled))
    rate = positives / n_trials
    return rate, binary_entropy(rate)


def theory_grid(epsilons, xs):
    """TheoryPoints over the product of ``epsilons`` and positive ``xs``."""
    return [dominance_report(float(e), float(x)) for e in epsilons for x in xs]
