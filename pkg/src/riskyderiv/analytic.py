"""Closed-form prices for constant-parameter scenarios.

These are the truth source the PDE and Monte Carlo engines are tested against.
``lognormal_quadrature_price`` is an independent numerical-integration route to
the same expectation and is used to check ``black_scholes_carry`` itself.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .model import (
    CounterpartyParams,
    MarketParams,
    PayoffKind,
    PayoffSpec,
)


def black_scholes_carry(S, K, tau, sigma, carry_b, disc, kind="call"):
    """Generalized Black-Scholes price with separate carry and discount rates.

    Parameters
    ----------
    S, K : float
        Spot and strike, both > 0.
    tau : float
        Time to maturity; ``tau == 0`` returns intrinsic value.
    sigma : float
        Volatility, > 0.
    carry_b : float
        Cost of carry; the forward is ``S * exp(carry_b * tau)``.
    disc : float
        Continuously compounded discount rate.
    kind : {"call", "put"}
    """
    kind = PayoffKind(kind)
    if kind not in (PayoffKind.CALL, PayoffKind.PUT):
        raise ValueError(f"black_scholes_carry prices calls and puts, got {kind.value}")
    if S <= 0 or K <= 0 or sigma <= 0 or tau < 0:
        raise ValueError("need S, K, sigma > 0 and tau >= 0")
    if tau == 0:
        return max(S - K, 0.0) if kind is PayoffKind.CALL else max(K - S, 0.0)
    F = S * math.exp(carry_b * tau)
    vol = sigma * math.sqrt(tau)
    d1 = (math.log(F / K) + 0.5 * vol * vol) / vol
    d2 = d1 - vol
    df = math.exp(-disc * tau)
    if kind is PayoffKind.CALL:
        return df * (F * ndtr(d1) - K * ndtr(d2))
    return df * (K * ndtr(-d2) - F * ndtr(-d1))


def lognormal_quadrature_price(payoff, S, tau, sigma, carry_b, disc, tol=1e-10):
    """Discounted expectation of ``payoff(S_T)`` by adaptive quadrature.

    Integrates over the standard normal driving a lognormal terminal spot. The
    integration range is split at the payoff kinks so each piece is smooth.
    """
    if tau == 0:
        return float(payoff(S))
    vol = sigma * math.sqrt(tau)
    m = math.log(S) + (carry_b - 0.5 * sigma * sigma) * tau

    def integrand(z):
        return float(payoff(math.exp(m + vol * z))) * math.exp(-0.5 * z * z)

    cuts = [-12.0, 12.0]
    if isinstance(payoff, PayoffSpec):
        if payoff.kind is PayoffKind.PIECEWISE_LINEAR:
            kinks = [s for s, _ in payoff.breakpoints if s > 0]
        else:
            kinks = [payoff.strike]
        cuts += [(math.log(k) - m) / vol for k in kinks]
    cuts = sorted(c for c in set(cuts) if -12.0 <= c <= 12.0)
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        val, _ = integrate.quad(integrand, a, b, epsabs=tol, epsrel=tol, limit=200)
        total += val
    return math.exp(-disc * tau) * total / math.sqrt(2.0 * math.pi)


def _vanilla(mkt: MarketParams, payoff: PayoffSpec, tau: float, disc: float) -> float:
    b = mkt.r - mkt.delta
    if payoff.kind is PayoffKind.FORWARD:
        return math.exp(-disc * tau) * (mkt.spot * math.exp(b * tau) - payoff.strike)
    if payoff.kind is PayoffKind.PIECEWISE_LINEAR:
        # y0 + s0 (S - x0) + sum_i (s_i - s_{i-1}) (S - x_i)^+ over interior kinks
        xs = [s for s, _ in payoff.breakpoints]
        ys = [v for _, v in payoff.breakpoints]
        slopes = [(ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) for i in range(len(xs) - 1)]
        df = math.exp(-disc * tau)
        fwd = mkt.spot * math.exp(b * tau)
        value = df * (ys[0] - slopes[0] * xs[0] + slopes[0] * fwd)
        for i in range(1, len(xs) - 1):
            jump = slopes[i] - slopes[i - 1]
            if xs[i] > 0:
                value += jump * black_scholes_carry(mkt.spot, xs[i], tau, mkt.sigma, b, disc, "call")
            else:
                value += jump * df * fwd
        return value
    return black_scholes_carry(mkt.spot, payoff.strike, tau, mkt.sigma, b, disc, payoff.kind)


def effective_hazard_rate(cpty_A: CounterpartyParams, cpty_B: CounterpartyParams, k: float = 0.0) -> float:
    """(1 - k)^+ [(1 - chi_A) lambda_A + (1 - chi_B) lambda_B]."""
    return max(1.0 - k, 0.0) * (cpty_A.loss_rate + cpty_B.loss_rate)


def effective_hazard_price(
    mkt: MarketParams,
    payoff: PayoffSpec,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    k: float = 0.0,
    t: float = 0.0,
) -> float:
    """Default-risky price with the loss intensity folded into the discount rate."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    tau = payoff.maturity - t
    return _vanilla(mkt, payoff, tau, mkt.r + effective_hazard_rate(cpty_A, cpty_B, k))


def unilateral_price(
    mkt: MarketParams,
    payoff: PayoffSpec,
    cpty: CounterpartyParams,
    t: float = 0.0,
) -> float:
    """Price of a payoff owed by ``cpty`` alone, discounted at r + (1 - chi) lambda.

    The payoff must be non-negative: it is a liability of exactly one party.
    """
    if not payoff.is_nonnegative():
        raise ValueError("not unilateral; use bilateral solver")
    tau = payoff.maturity - t
    return _vanilla(mkt, payoff, tau, mkt.r + cpty.loss_rate)


def forward_value(mkt: MarketParams, payoff: PayoffSpec, t: float = 0.0, S=None):
    """S e^{-delta tau} - K e^{-r tau} for the forward payoff."""
    S = mkt.spot if S is None else np.asarray(S, dtype=float)
    tau = payoff.maturity - t
    return S * np.exp(-mkt.delta * tau) - payoff.strike * np.exp(-mkt.r * tau)
