import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

from entroboot.theory import (binary_entropy, dominance_report, monte_carlo_label_sim, theory_approx,
                              theory_exact, theory_grid)

getcontext().prec = 50


def exact_oracle(eps, x):
    """Label entropy at rate eps*x, evaluated in 50-digit decimal arithmetic."""
    q = Decimal(eps) * Decimal(x)
    return float(-q * q.ln() - (1 - q) * (1 - q).ln())


@pytest.mark.parametrize("eps,x,expected", [(0.05, 1.0, 0.198515), (0.01, 1.0, 0.056002)])
def test_exact_closed_form(eps, x, expected):
    assert theory_exact(eps, x) == pytest.approx(expected, abs=1e-6)
    assert theory_exact(eps, x) == pytest.approx(exact_oracle(eps, x), rel=1e-13)


def test_approx_closed_form():
    assert theory_approx(0.05, 1.0) == pytest.approx(0.149787, abs=1e-6)
    assert theory_approx(math.exp(-1), 1.0) == pytest.approx(math.exp(-1), rel=1e-15)
    assert theory_approx(0.3, 0.0) == 0.0 and theory_exact(0.3, 0.0) == 0.0


def test_exact_matches_decimal_oracle_on_grid():
    for eps in (0.2, 0.05, 1e-3, 1e-6):
        for x in (0.05, 0.3, 0.9):
            assert theory_exact(eps, x) == pytest.approx(exact_oracle(eps, x), rel=1e-12)


def test_domain_errors():
    for eps, x in [(0.0, 0.5), (1.0, 0.5), (0.5, 1.1), (0.5, -0.1)]:
        with pytest.raises(ValueError):
            theory_exact(eps, x)
    with pytest.raises(ValueError):
        dominance_report(0.1, 0.0)


def test_dominance_values():
    assert dominance_report(1e-6, 1.0).dominant_fraction == pytest.approx(0.9325, abs=1e-4)
    assert dominance_report(1e-6, 0.1).dominant_fraction == pytest.approx(0.807, abs=1e-3)
    p = dominance_report(0.05, 0.4)
    assert p.h_exact == theory_exact(0.05, 0.4) and p.h_approx == theory_approx(0.05, 0.4)


def test_dominance_increases_as_epsilon_shrinks():
    eps = [10.0 ** -k for k in range(2, 9)]
    for x in np.round(np.arange(0.1, 1.01, 0.1), 1):
        fr = [dominance_report(e, x).dominant_fraction for e in eps]
        assert all(b > a for a, b in zip(fr, fr[1:]))
        assert all(0 <= f <= 1 for f in fr)


def test_exact_dominates_approx_on_sweep():
    for eps in np.linspace(1e-4, math.exp(-1) - 1e-4, 100):
        for x in np.linspace(0.01, 1.0, 100):
            assert theory_exact(eps, x) >= theory_approx(eps, x) - 1e-15


def test_grid_size_and_order():
    pts = theory_grid([0.1, 0.01], [0.5, 1.0])
    assert [(p.epsilon, p.x) for p in pts] == [(0.1, 0.5), (0.1, 1.0), (0.01, 0.5), (0.01, 1.0)]


def test_monte_carlo_degenerate_cases():
    assert monte_carlo_label_sim(0.3, 0.0, 10_000, 1)[0] == 0.0
    assert monte_carlo_label_sim(1.0, 1.0, 10_000, 1) == (1.0, 0.0)
    assert monte_carlo_label_sim(0.3, 0.05, 1000, 9) == monte_carlo_label_sim(0.3, 0.05, 1000, 9)
    with pytest.raises(ValueError):
        monte_carlo_label_sim(0.3, 0.05, 0)


def test_monte_carlo_rate_near_product():
    rate, h = monte_carlo_label_sim(0.3, 0.05, 1_000_000, 0)
    sigma = math.sqrt(0.015 * 0.985 / 1e6)
    assert abs(rate - 0.015) <= 3 * sigma
    assert h == pytest.approx(binary_entropy(rate))


def test_binary_entropy():
    assert binary_entropy(0.5) == pytest.approx(math.log(2))
    assert binary_entropy(0.0) == binary_entropy(1.0) == 0.0
