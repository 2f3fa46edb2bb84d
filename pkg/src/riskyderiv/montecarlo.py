"""Monte Carlo estimators for the expectation forms of the pricing equations.

Paths are grouped in fixed-size blocks and block ``b`` draws from the stream
``SeedSequence(seed, spawn_key=(b,))``. A path's random numbers therefore
depend only on (seed, path index), and blocks may be evaluated in any order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    CloseoutRule,
    CollateralMode,
    CollateralSpec,
    CounterpartyParams,
    MarketParams,
    PayoffSpec,
    closeout_residual,
    collateral_adjusted_recovery,
)
from .pde import PriceSurface

BLOCK = 4096
MAX_OFF_GRID = 0.01


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 100_000
    n_steps: int = 250
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")


@dataclass
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    estimator: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def to_record(self, scenario_id: str = "") -> dict:
        return {
            "scenario_id": scenario_id,
            "estimator": self.estimator,
            "mean": self.mean,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }

    def to_json(self, scenario_id: str = "") -> str:
        return json.dumps(self.to_record(scenario_id), sort_keys=True)


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _blocks(n_paths: int):
    for b, start in enumerate(range(0, n_paths, BLOCK)):
        yield b, min(BLOCK, n_paths - start)


def time_grid(T: float, steps_per_year: int) -> np.ndarray:
    n = max(1, math.ceil(round(T * steps_per_year, 9)))
    return np.linspace(0.0, T, n + 1)


def gbm_block(S0: float, drift: float, sigma: float, times: np.ndarray, n: int,
              rng: np.random.Generator, antithetic: bool) -> np.ndarray:
    """Exact lognormal paths, shape (n, len(times)). Antithetic pairs are adjacent."""
    dt = np.diff(times)
    if antithetic:
        half = rng.standard_normal((n // 2, len(dt)))
        z = np.empty((n, len(dt)))
        z[0::2], z[1::2] = half, -half
    else:
        z = rng.standard_normal((n, len(dt)))
    incr = (drift - 0.5 * sigma**2) * dt + sigma * np.sqrt(dt) * z
    logS = np.concatenate([np.zeros((n, 1)), np.cumsum(incr, axis=1)], axis=1)
    return S0 * np.exp(logS)


def _estimate(samples: np.ndarray, cfg: McConfig, estimator: str, **meta) -> McEstimate:
    if cfg.antithetic:
        samples = 0.5 * (samples[0::2] + samples[1::2])
    n = len(samples)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return McEstimate(mean, se, cfg.n_paths, estimator, cfg.seed, meta)


def _run(cfg: McConfig, mkt: MarketParams, T: float, per_block) -> np.ndarray:
    times = time_grid(T, cfg.n_steps)
    out = np.empty(cfg.n_paths)
    pos = 0
    for b, n in _blocks(cfg.n_paths):
        S = gbm_block(mkt.spot, mkt.r - mkt.delta, mkt.sigma, times, n, block_rng(cfg.seed, b),
                      cfg.antithetic)
        out[pos:pos + n] = per_block(times, S)
        pos += n
    return out


def mc_effective_discount(
    mkt: MarketParams,
    payoff: PayoffSpec,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    k: float,
    cfg: McConfig,
) -> McEstimate:
    """E^Q[exp(-(r + (1-k)^+ sum_X (1-chi_X) lambda_X) T) payoff(S_T)]."""
    T = payoff.maturity
    rate = mkt.r + max(1.0 - k, 0.0) * (cpty_A.loss_rate + cpty_B.loss_rate)
    df = math.exp(-rate * T)
    samples = _run(cfg, mkt, T, lambda times, S: df * payoff(S[:, -1]))
    return _estimate(samples, cfg, "effective_discount")


def mc_loss_integral(
    mkt: MarketParams,
    payoff: PayoffSpec,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    collateral: CollateralSpec | None,
    surface: PriceSurface,
    cfg: McConfig,
    rule: CloseoutRule = CloseoutRule.COLLATERALIZED,
) -> McEstimate:
    """Risk-free value minus the expected discounted default losses.

    The loss rate along each path is sum_X lambda_X (V(u) - v_X(u)) with V read
    from ``surface`` and v_X the closeout value under ``rule``; for the
    collateralized rule this is (1 - chi_X) lambda_X (V - C - I_X)^+. The time
    integral uses the trapezoid rule on the path steps. Collateral schedules
    are sampled left-continuously.
    """
    collateral = collateral or CollateralSpec.none()
    rule = CloseoutRule(rule)
    T = payoff.maturity
    if abs(surface.maturity - T) > 1e-12:
        raise ValueError("surface maturity does not match the payoff")
    parties = [(name, c) for name, c in (("A", cpty_A), ("B", cpty_B)) if c.lam > 0]
    off_grid = 0
    total_points = 0

    def residual(name, cpty, u, V):
        if rule is CloseoutRule.PROPORTIONAL:
            chi = cpty.derivative_recovery
            if collateral.mode is CollateralMode.PROPORTIONAL:
                chi = collateral_adjusted_recovery(chi, collateral.k)
            return closeout_residual(rule, V, chi=chi)
        if rule is CloseoutRule.COLLATERALIZED:
            C = collateral.posted(name, u, V, left=True)
            return closeout_residual(rule, V, C, cpty.derivative_recovery)
        return closeout_residual(rule, V, recovery=cpty.bond_recovery, defaulter=name)

    def per_block(times, S):
        nonlocal off_grid, total_points
        disc = np.exp(-mkt.r * times)
        terminal = disc[-1] * payoff(S[:, -1])
        if not parties:
            return terminal
        V = np.empty_like(S)
        for k, uk in enumerate(times[:-1]):
            off_grid += int(np.count_nonzero(~surface.contains(uk, S[:, k])))
            V[:, k] = surface.value_at(uk, S[:, k], clamp=True)
        total_points += S[:, :-1].size
        V[:, -1] = payoff(S[:, -1])
        loss = np.zeros_like(S)
        for name, cpty in parties:
            for k, uk in enumerate(times):
                loss[:, k] += cpty.lam * (V[:, k] - residual(name, cpty, uk, V[:, k]))
        g = loss * disc
        dt = np.diff(times)
        integral = np.sum(0.5 * (g[:, 1:] + g[:, :-1]) * dt, axis=1)
        return terminal - integral

    samples = _run(cfg, mkt, T, per_block)
    frac = off_grid / total_points if total_points else 0.0
    if frac > MAX_OFF_GRID:
        raise ValueError(f"{frac:.2%} of path-steps fall outside the PriceSurface domain")
    return _estimate(samples, cfg, "loss_integral", off_grid_steps=off_grid,
                     off_grid_fraction=frac, first_interval_collateral="time-0 value")


@dataclass
class FirstToDefault:
    """Per-path first default: ``who`` is None, "A" or "B"; ``when`` is NaN if none."""

    who: np.ndarray
    when: np.ndarray

    def default_fraction(self) -> float:
        return float(np.mean(~np.isnan(self.when)))


def simulate_first_to_default(lambda_A: float, lambda_B: float, horizon: float,
                              cfg: McConfig) -> FirstToDefault:
    """Independent exponential default times; the earlier one if before ``horizon``."""
    if lambda_A < 0 or lambda_B < 0:
        raise ValueError("default intensities must be >= 0")
    tau_A = np.empty(cfg.n_paths)
    tau_B = np.empty(cfg.n_paths)
    pos = 0
    for b, n in _blocks(cfg.n_paths):
        e = block_rng(cfg.seed, b).standard_exponential((n, 2))
        with np.errstate(divide="ignore"):
            tau_A[pos:pos + n] = e[:, 0] / lambda_A if lambda_A > 0 else np.inf
            tau_B[pos:pos + n] = e[:, 1] / lambda_B if lambda_B > 0 else np.inf
        pos += n
    first = np.minimum(tau_A, tau_B)
    hit = first <= horizon
    who = np.full(cfg.n_paths, None, dtype=object)
    who[hit & (tau_A <= tau_B)] = "A"
    who[hit & (tau_B < tau_A)] = "B"
    when = np.where(hit, first, np.nan)
    return FirstToDefault(who, when)
