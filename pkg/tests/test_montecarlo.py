import json
import math

import numpy as np
import pytest

from riskyderiv.analytic import black_scholes_carry, effective_hazard_price
from riskyderiv.model import CollateralSpec, PayoffSpec
from riskyderiv.montecarlo import (
    BLOCK,
    McConfig,
    block_rng,
    gbm_block,
    mc_effective_discount,
    mc_loss_integral,
    simulate_first_to_default,
    time_grid,
)
from riskyderiv.pde import GridSpec, solve_default_free, solve_default_risky


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(n_paths=0)
    with pytest.raises(ValueError):
        McConfig(n_paths=11, antithetic=True)
    with pytest.raises(ValueError):
        McConfig(seed=-1)


def test_default_free_call_matches_black_scholes(mkt, call, no_default):
    est = mc_effective_discount(mkt, call, no_default, no_default, 0.0, McConfig(100_000, 1, seed=3))
    bs = black_scholes_carry(100, 100, 1.0, 0.2, 0.03, 0.05)
    assert abs(est.mean - bs) < 3 * est.std_error


def test_effective_discount_matches_closed_form(mkt, call, cpty_A, cpty_B):
    est = mc_effective_discount(mkt, call, cpty_A, cpty_B, 0.3, McConfig(100_000, 1, seed=4))
    assert abs(est.mean - effective_hazard_price(mkt, call, cpty_A, cpty_B, 0.3)) < 3 * est.std_error


def test_zero_payoff_has_zero_variance(mkt, cpty_A, cpty_B):
    zero = PayoffSpec.piecewise([(0, 0), (1, 0)], 1.0)
    est = mc_effective_discount(mkt, zero, cpty_A, cpty_B, 0.0, McConfig(5000, 1, seed=1))
    assert est.mean == 0.0 and est.std_error == 0.0


def test_bit_exact_reproducibility(mkt, call, cpty_A, cpty_B):
    cfg = McConfig(10_000, 4, seed=99)
    a = mc_effective_discount(mkt, call, cpty_A, cpty_B, 0.0, cfg)
    b = mc_effective_discount(mkt, call, cpty_A, cpty_B, 0.0, cfg)
    assert a.to_json("x") == b.to_json("x")
    assert json.loads(a.to_json("x"))["estimator"] == "effective_discount"


def test_paths_independent_of_evaluation_order():
    times = time_grid(1.0, 10)
    first = [gbm_block(100, 0.03, 0.2, times, BLOCK, block_rng(5, b), False) for b in (0, 1, 2)]
    reverse = [gbm_block(100, 0.03, 0.2, times, BLOCK, block_rng(5, b), False) for b in (2, 1, 0)][::-1]
    for x, y in zip(first, reverse):
        np.testing.assert_array_equal(x, y)


def test_antithetic_reduces_variance(mkt, call, cpty_A, cpty_B):
    plain = mc_effective_discount(mkt, call, cpty_A, cpty_B, 0.0, McConfig(50_000, 1, seed=8))
    anti = mc_effective_discount(mkt, call, cpty_A, cpty_B, 0.0, McConfig(50_000, 1, seed=8, antithetic=True))
    assert anti.std_error <= plain.std_error


def test_loss_integral_matches_pde(mkt, call, cpty_A, cpty_B):
    surface = solve_default_risky(mkt, call, GridSpec(200, 200), cpty_A, cpty_B)
    est = mc_loss_integral(mkt, call, cpty_A, cpty_B, None, surface, McConfig(20_000, 50, seed=12))
    assert abs(est.mean - surface.value_at(0, 100.0)) < 3 * est.std_error
    assert est.meta["first_interval_collateral"] == "time-0 value"


def test_loss_integral_large_collateral_is_default_free(mkt, call, cpty_A, cpty_B):
    g = GridSpec(200, 200)
    free = solve_default_free(mkt, call, g, mkt.r)
    huge = CollateralSpec.fixed(float(free.values.max()) * 2)
    est = mc_loss_integral(mkt, call, cpty_A, cpty_B, huge, free, McConfig(20_000, 50, seed=13))
    assert abs(est.mean - free.value_at(0, 100.0)) < 3 * est.std_error


def test_loss_integral_initial_margin_monotone(mkt, call, cpty_A, no_default):
    g = GridSpec(150, 150)
    surface = solve_default_risky(mkt, call, g, cpty_A, no_default)
    cfg = McConfig(10_000, 50, seed=14)
    prices = [mc_loss_integral(mkt, call, cpty_A, no_default, CollateralSpec.fixed(0.0, I_A=i), surface, cfg).mean
              for i in (0.0, 3.0, 10.0, 1e4)]
    assert prices == sorted(prices)
    # an unbounded margin removes every loss; same seed means the same paths
    free = mc_effective_discount(mkt, call, no_default, no_default, 0.0, cfg).mean
    assert prices[-1] == pytest.approx(free, rel=1e-12)


def test_loss_integral_off_grid_raises(mkt, call, cpty_A, cpty_B):
    narrow = solve_default_risky(mkt, call, GridSpec(60, 60, domain_mult=0.5), cpty_A, cpty_B)
    with pytest.raises(ValueError, match="outside the PriceSurface domain"):
        mc_loss_integral(mkt, call, cpty_A, cpty_B, None, narrow, McConfig(2000, 20, seed=1))


def test_first_to_default_no_hazard():
    ftd = simulate_first_to_default(0.0, 0.0, 5.0, McConfig(1000, 1, seed=2))
    assert all(w is None for w in ftd.who) and np.all(np.isnan(ftd.when))


def test_first_to_default_laws():
    lam_A, lam_B, T, n = 0.3, 0.2, 2.0, 100_000
    ftd = simulate_first_to_default(lam_A, lam_B, T, McConfig(n, 1, seed=21))
    p = 1 - math.exp(-(lam_A + lam_B) * T)
    frac = ftd.default_fraction()
    assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / n)
    hits = ftd.who[ftd.who != None]  # noqa: E711
    q = lam_A / (lam_A + lam_B)
    share = np.mean(hits == "A")
    assert abs(share - q) < 3 * math.sqrt(q * (1 - q) / len(hits))
    assert np.nanmax(ftd.when) <= T
