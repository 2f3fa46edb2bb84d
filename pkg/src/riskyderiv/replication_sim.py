"""Discrete-time simulation of the self-financing hedge portfolio.

Each step the portfolio is re-zeroed through the money account, then evolved
under the real-world measure: the underlying follows exact GBM with drift mu,
each counterparty defaults with probability lambda dt, bonds trade at a
constant pre-default price while paying their yield, and each money-account
component accrues at its own rate. The first default ends the path; the jump
of the portfolio at that default is recorded as a residual.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.stats import norm

from .hedge import (
    BondPortfolio,
    ReplicationWeights,
    SurfacePoint,
    bk13_weights,
    collateralized_weights,
)
from .model import (
    CounterpartyParams,
    MarketParams,
    MoneyAccountComponent,
    MoneyAccountStructure,
    PayoffSpec,
    bond_yield,
    collateral_adjusted_recovery,
)
from .montecarlo import BLOCK, MAX_OFF_GRID, block_rng
from .pde import GridSpec, PriceSurface, solve_generalized

MIN_DEFAULTS = 30


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 250
    horizon: float = 1.0
    n_paths: int = 50_000
    seed: int = 0
    trace_paths: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0):
            raise ValueError("dt and horizon must be > 0")
        if self.n_paths < 2:
            raise ValueError("n_paths must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self) -> int:
        return max(1, round(self.horizon / self.dt))

    def check_intensities(self, lam_A: float, lam_B: float) -> None:
        if self.dt * (lam_A + lam_B) >= 0.1:
            raise ValueError("dt (lambda_A + lambda_B) must be < 0.1 for the Bernoulli default step")


class StrategyKind(str, Enum):
    FULL = "full"
    COLLATERALIZED = "collateralized"
    BK13 = "bk13"
    CUSTOM = "custom"


EpsilonRule = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StrategySpec:
    """Hedging strategy driven by the surface value and delta.

    ``k`` is the collateralization level: for the collateralized strategy it
    scales the bond legs and the recoveries; for BK13 the collateral held is
    C = k V accruing at ``r_C`` (defaults to the risk-free rate).
    ``epsilon`` (a number or a function of (t, S, V)) shifts the A-default
    jump: for BK13 it sets the closeout value, for the full strategies it
    under-hedges the A-bond leg by that amount.
    ``bonds_A`` replaces the single A bond by a composition that is rescaled
    every step to the required shortfall.
    """

    kind: StrategyKind = StrategyKind.FULL
    k: float = 0.0
    epsilon: float | EpsilonRule = 0.0
    bonds_A: BondPortfolio | None = None
    r_C: float | None = None
    weights: Callable[[SurfacePoint], ReplicationWeights] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.kind is StrategyKind.CUSTOM and self.weights is None:
            raise ValueError("custom strategy needs a weight function")
        if self.kind is StrategyKind.BK13 and self.bonds_A is not None:
            raise ValueError("BK13 fixes the A-bond position value; bonds_A is not supported")

    @classmethod
    def full(cls, **kw) -> "StrategySpec":
        return cls(StrategyKind.FULL, **kw)

    @classmethod
    def collateralized(cls, k: float, **kw) -> "StrategySpec":
        return cls(StrategyKind.COLLATERALIZED, k=k, **kw)

    @classmethod
    def bk13(cls, epsilon=0.0, k: float = 0.0, r_C: float | None = None) -> "StrategySpec":
        return cls(StrategyKind.BK13, k=k, epsilon=epsilon, r_C=r_C)

    @classmethod
    def custom(cls, weights) -> "StrategySpec":
        return cls(StrategyKind.CUSTOM, weights=weights)

    def eps(self, t: float, S: np.ndarray, V: np.ndarray) -> np.ndarray:
        if callable(self.epsilon):
            return np.broadcast_to(np.asarray(self.epsilon(t, S, V), dtype=float), S.shape)
        return np.full(S.shape, float(self.epsilon))


@dataclass
class SimReport:
    mean_drift: float
    drift_std_error: float
    predicted_drift: float
    excess_drift_std_error: float
    jump_residuals: list
    arbitrage_flag: bool
    n_paths: int
    n_defaults: int
    max_accounting_error: float
    verdict: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)
    path_drifts: np.ndarray | None = field(default=None, repr=False)
    path_predicted: np.ndarray | None = field(default=None, repr=False)
    trace: list = field(default_factory=list, repr=False)

    def to_record(self) -> dict:
        return {
            "mean_drift": self.mean_drift,
            "drift_std_error": self.drift_std_error,
            "predicted_drift": self.predicted_drift,
            "excess_drift_std_error": self.excess_drift_std_error,
            "jump_residuals": [list(r) for r in self.jump_residuals],
            "arbitrage_flag": self.arbitrage_flag,
            "verdict": self.verdict,
            "n_paths": self.n_paths,
            "n_defaults": self.n_defaults,
            "max_accounting_error": self.max_accounting_error,
            "seed": self.seed,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "t", "S", "J_A", "J_B", "Pi", "drift_pred"])
        for row in self.trace:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:3]] + list(row[3:5])
                       + [repr(float(x)) for x in row[5:]])
        return buf.getvalue()


@dataclass
class _Legs:
    """Vectorized positions at step start for the alive paths."""

    h_S: np.ndarray
    M: np.ndarray
    C: np.ndarray
    bond_value: np.ndarray  # sum of bond position values
    coupon: np.ndarray  # bond cash flow per unit time
    res_A: np.ndarray
    res_B: np.ndarray
    val_A: np.ndarray  # A-bond position value
    eps: np.ndarray

    @property
    def val_B(self) -> np.ndarray:
        return self.bond_value - self.val_A


def money_account_spread(ma: MoneyAccountStructure, r: float) -> tuple[float, float]:
    """(rho, rho - r) for a money-account structure.

    The spread is summed as sum_a w_a (r_a - r) so it is exactly zero when
    every component accrues at r.
    """
    spread = math.fsum(c.weight * (c.rate - r) for c in ma.components)
    return r + spread, spread


def _legs(strategy: StrategySpec, mkt: MarketParams, A: CounterpartyParams, B: CounterpartyParams,
          t: float, S: np.ndarray, V: np.ndarray, D: np.ndarray) -> _Legs:
    point = SurfacePoint(t, S, V, D)
    r_A, r_B = bond_yield(mkt, A), bond_yield(mkt, B)
    kind = strategy.kind
    eps = strategy.eps(t, S, V)
    if kind is StrategyKind.BK13:
        R_A, R_B = A.bond_recovery, B.bond_recovery
        if R_A == 1.0:
            raise ValueError("cannot replicate default loss")
        C = strategy.k * V
        pos_A = C - V
        g_A = eps + C - R_A * pos_A
        g_B = B.derivative_recovery * V
        semi = bk13_weights(point, g_A, g_B, A.bond_price, R_A * pos_A, B.bond_price, C, R_B=R_B)
        w = semi.weights
        return _Legs(
            h_S=w.h_S, M=w.M, C=C,
            bond_value=w.h_A * w.P_A + w.h_B * w.P_B,
            coupon=r_A * w.h_A * w.P_A + r_B * w.h_B * w.P_B,
            res_A=semi.epsilon + 0.0 * V,
            res_B=(g_B - V) - w.h_B * (1.0 - R_B) * w.P_B,
            val_A=w.h_A * w.P_A, eps=semi.epsilon + 0.0 * V,
        )
    if kind is StrategyKind.CUSTOM:
        w = strategy.weights(point)
        g_A, g_B = A.derivative_recovery * V, B.derivative_recovery * V
        full = lambda x: np.broadcast_to(np.asarray(x, dtype=float), V.shape)  # noqa: E731
        return _Legs(
            h_S=full(w.h_S / w.h_V), M=full(w.M / w.h_V), C=full(w.collateral / w.h_V),
            bond_value=full((w.h_A * w.P_A + w.h_B * w.P_B) / w.h_V),
            coupon=full((r_A * w.h_A * w.P_A + r_B * w.h_B * w.P_B) / w.h_V),
            res_A=full((g_A - V) - w.h_A * (1.0 - A.bond_recovery) * w.P_A / w.h_V),
            res_B=full((g_B - V) - w.h_B * (1.0 - B.bond_recovery) * w.P_B / w.h_V),
            val_A=full(w.h_A * w.P_A / w.h_V), eps=full(w.epsilon / w.h_V),
        )

    k = strategy.k if kind is StrategyKind.COLLATERALIZED else 0.0
    chi_A = collateral_adjusted_recovery(A.derivative_recovery, k)
    chi_B = collateral_adjusted_recovery(B.derivative_recovery, k)
    w = collateralized_weights(point, A, B, k)
    val_B = w.h_B * w.P_B
    res_B = (chi_B - 1.0) * V - w.h_B * (1.0 - B.bond_recovery) * w.P_B
    target = (1.0 - chi_A) * V + eps  # A-bond loss the hedge must offset
    if strategy.bonds_A is None:
        if A.bond_recovery == 1.0:
            if np.any(target != 0):
                raise ValueError("cannot replicate default loss")
            h_A = np.zeros_like(V)
        else:
            h_A = -target / ((1.0 - A.bond_recovery) * A.bond_price)
        val_A = h_A * A.bond_price
        coupon_A = r_A * val_A
        loss_A = h_A * (1.0 - A.bond_recovery) * A.bond_price
    else:
        issues = strategy.bonds_A.issues
        unit_loss = math.fsum(i.holding * (1.0 - i.recovery) * i.price for i in issues)
        if all(i.recovery == 1.0 for i in issues) or unit_loss == 0.0:
            raise ValueError("cannot replicate default loss")
        scale = -target / unit_loss
        val_A = scale * math.fsum(i.holding * i.price for i in issues)
        coupon_A = scale * math.fsum(
            i.holding * i.price * (mkt.r + (1.0 - i.recovery) * A.lam) for i in issues)
        loss_A = scale * unit_loss
    M = -(w.h_S * S + V + val_A + val_B)
    return _Legs(
        h_S=w.h_S, M=M, C=np.zeros_like(V),
        bond_value=val_A + val_B,
        coupon=coupon_A + r_B * val_B,
        res_A=((chi_A - 1.0) * V) - loss_A,
        res_B=res_B,
        val_A=val_A, eps=eps + 0.0 * V,
    )


def strategy_weights_csv(strategy: StrategySpec, mkt: MarketParams, A: CounterpartyParams,
                         B: CounterpartyParams, surface: PriceSurface, t: float = 0.0) -> str:
    """Positions of ``strategy`` across the surface's spot grid at time ``t``.

    Bond holdings are reported in units of the issuer's bond price.
    """
    S = np.asarray(surface.spots, dtype=float)
    V, D = surface.interpolate(t, S, fields=("values", "deltas"))
    legs = _legs(strategy, mkt, A, B, t, S, V, D)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "S", "h_S", "h_A", "h_B", "M", "epsilon"])
    for row in zip(S, legs.h_S, legs.val_A / A.bond_price, legs.val_B / B.bond_price, legs.M, legs.eps):
        w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    return buf.getvalue()


def simulate(
    mkt: MarketParams,
    payoff: PayoffSpec,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    strategy: StrategySpec,
    ma: MoneyAccountStructure,
    surface: PriceSurface,
    cfg: SimConfig,
    *,
    confidence: float = 0.997,
) -> SimReport:
    """Run the hedge portfolio along simulated paths and collect its P&L.

    The drift statistic is the per-path continuous P&L (jumps excluded)
    divided by the horizon. The predicted drift is the money account's excess
    accrual over the risk-free rate, sum_a w_a (r_a - r) M, accumulated along
    the same path; it is the only drift a correctly priced surface leaves.
    """
    cfg.check_intensities(cpty_A.lam, cpty_B.lam)
    if cfg.horizon > payoff.maturity + 1e-12:
        raise ValueError("horizon exceeds the payoff maturity")
    if surface.times[-1] < cfg.horizon - 1e-12:
        raise ValueError("surface does not cover the simulated horizon")
    n_steps = cfg.n_steps
    dt = cfg.horizon / n_steps
    times = np.linspace(0.0, cfg.horizon, n_steps + 1)
    r_C = mkt.r if strategy.r_C is None else strategy.r_C
    pA, pAB = cpty_A.lam * dt, (cpty_A.lam + cpty_B.lam) * dt
    notional = max(1.0, mkt.spot)
    comps = ma.components
    rho, spread = money_account_spread(ma, mkt.r)

    drifts = np.empty(cfg.n_paths)
    totals = np.empty(cfg.n_paths)
    predicted = np.empty(cfg.n_paths)
    residuals: list[tuple] = []
    trace: list[tuple] = []
    off_grid = total = 0
    max_acc = 0.0

    def mark(t, S):
        nonlocal off_grid, total
        off_grid += int(np.count_nonzero(~surface.contains(t, S)))
        total += S.size
        v, d = surface.interpolate(t, S, clamp=True, fields=("values", "deltas"))
        return v, d

    pos = 0
    for b in range(0, math.ceil(cfg.n_paths / BLOCK)):
        n = min(BLOCK, cfg.n_paths - pos)
        rng = block_rng(cfg.seed, b)
        z = rng.standard_normal((n, n_steps))
        u = rng.random((n, n_steps))
        idx = np.arange(pos, pos + n)
        S = np.full(n, mkt.spot)
        alive = np.ones(n, dtype=bool)
        pnl = np.zeros(n)
        jump = np.zeros(n)
        pred = np.zeros(n)
        V, D = mark(0.0, S)
        for k in range(n_steps):
            t = times[k]
            live = np.flatnonzero(alive)
            if live.size == 0:
                break
            s, v, d = S[live], V[live], D[live]
            legs = _legs(strategy, mkt, cpty_A, cpty_B, t, s, v, d)

            hit_A = u[live, k] < pA
            hit_B = ~hit_A & (u[live, k] < pAB)
            for hit, party, res in ((hit_A, "A", legs.res_A), (hit_B, "B", legs.res_B)):
                for j in np.flatnonzero(hit):
                    residuals.append((int(idx[live[j]]), float(t), party, float(res[j])))
                jump[live[hit]] = res[hit]
            gone = hit_A | hit_B
            alive[live[gone]] = False

            keep = ~gone
            sv = live[keep]
            s0, v0 = s[keep], v[keep]
            h_S, M, C = legs.h_S[keep], legs.M[keep], legs.C[keep]
            bond_value, coupon = legs.bond_value[keep], legs.coupon[keep]
            s1 = s0 * np.exp((mkt.mu - 0.5 * mkt.sigma**2) * dt
                             + mkt.sigma * math.sqrt(dt) * z[sv, k])
            v1, d1 = mark(times[k + 1], s1)

            money = math.fsum(c.weight * c.rate for c in comps) * M * dt
            cash = (money + coupon * dt + h_S * mkt.delta * 0.5 * (s0 + s1) * dt
                    - r_C * C * dt)
            gain = (v1 - v0) + h_S * (s1 - s0) + cash
            # value the re-zeroed portfolio at step end and compare with the gains
            pi_end = v1 + h_S * s1 + bond_value + (M + cash) - C
            pi_start = v0 + h_S * s0 + bond_value + M - C
            if sv.size:
                max_acc = max(max_acc, float(np.max(np.abs(pi_start))),
                              float(np.max(np.abs((pi_end - pi_start) - gain))))
            step_pred = spread * M * dt

            pnl[sv] += gain
            pred[sv] += step_pred
            S[sv], V[sv], D[sv] = s1, v1, d1
            if cfg.trace_paths:
                for j in np.flatnonzero(idx[sv] < cfg.trace_paths):
                    trace.append((int(idx[sv[j]]), times[k + 1], s1[j], 0, 0, gain[j],
                                  step_pred[j] / dt))
                for j in np.flatnonzero(idx[live[gone]] < cfg.trace_paths):
                    p = live[gone][j]
                    ja, jb = (1, 0) if hit_A[gone][j] else (0, 1)
                    res = (legs.res_A if ja else legs.res_B)[gone][j]
                    trace.append((int(idx[p]), t, s[gone][j], ja, jb, res, 0.0))
        drifts[pos:pos + n] = pnl / cfg.horizon
        totals[pos:pos + n] = (pnl + jump) / cfg.horizon
        predicted[pos:pos + n] = pred / cfg.horizon
        pos += n

    frac = off_grid / total if total else 0.0
    if frac > MAX_OFF_GRID:
        raise ValueError(f"{frac:.2%} of path-steps fall outside the PriceSurface domain")
    residuals.sort()
    trace.sort(key=lambda row: (row[0], row[1]))
    sqrt_n = math.sqrt(cfg.n_paths)
    report = SimReport(
        mean_drift=float(np.mean(drifts)),
        drift_std_error=float(np.std(drifts, ddof=1) / sqrt_n),
        predicted_drift=float(np.mean(predicted)),
        excess_drift_std_error=float(np.std(drifts - predicted, ddof=1) / sqrt_n),
        jump_residuals=residuals,
        arbitrage_flag=False,
        n_paths=cfg.n_paths,
        n_defaults=len(residuals),
        max_accounting_error=max_acc / notional,
        seed=cfg.seed,
        meta={"strategy": strategy.kind.value, "dt": dt, "n_steps": n_steps,
              "rho": rho, "off_grid_fraction": frac, "notional": notional,
              "total_drift": float(np.mean(totals)),
              "total_excess_std_error": float(np.std(totals - predicted, ddof=1) / sqrt_n)},
        path_drifts=drifts,
        path_predicted=predicted,
        trace=trace,
    )
    verdict = detect_arbitrage(report, confidence)
    report.verdict = verdict.label
    report.arbitrage_flag = verdict.arbitrage
    return report


@dataclass(frozen=True)
class Verdict:
    label: str  # clean | arbitrage | non_clearing_drift | inconclusive
    arbitrage: bool
    reason: str


def detect_arbitrage(report: SimReport, confidence: float = 0.997) -> Verdict:
    """Classify a simulation report.

    (a) The drift is significantly non-zero, agrees in sign with the predicted
    drift, and does so in both halves of the path sample: the money account
    earns a spread, reported as ``non_clearing_drift``.
    (b) At least 30 non-zero jump residuals, all of one sign, with no
    significant drift of the opposite sign: a one-sided payoff at default,
    reported as ``arbitrage``. If an opposite drift is present and the total
    P&L (jumps included) matches the prediction, the residuals are a fair bet
    and the verdict is ``clean``.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    zq = float(norm.ppf(0.5 + 0.5 * confidence))
    tol = 1e-10 * report.meta.get("notional", 1.0)
    res = np.array([r[3] for r in report.jump_residuals], dtype=float)
    nonzero = res[np.abs(res) > tol]
    drift, se = report.mean_drift, report.drift_std_error
    significant = abs(drift) > zq * se

    if significant and report.predicted_drift != 0.0 and np.sign(drift) == np.sign(report.predicted_drift):
        persistent = True
        if report.path_drifts is not None:
            halves = np.array_split(report.path_drifts, 2)
            persistent = all(np.sign(np.mean(h)) == np.sign(drift) for h in halves)
        if persistent:
            return Verdict("non_clearing_drift", True,
                           f"drift {drift:.6g} exceeds {zq:.2f} std errors and matches the predicted sign")

    if nonzero.size:
        if nonzero.size < MIN_DEFAULTS:
            return Verdict("inconclusive", False,
                           f"only {nonzero.size} non-zero jump residuals (< {MIN_DEFAULTS})")
        sign = np.sign(nonzero[0])
        if np.all(np.sign(nonzero) == sign):
            if not (sign * drift < -zq * se):
                return Verdict("arbitrage", True,
                               f"{nonzero.size} jump residuals all of sign {int(sign):+d} "
                               "with no offsetting drift")
            total = report.meta.get("total_drift")
            total_se = report.meta.get("total_excess_std_error")
            if total is not None and abs(total - report.predicted_drift) <= zq * total_se:
                return Verdict("clean", False,
                               "one-sided jump residuals are paid for by an opposite drift")
    if significant:
        return Verdict("inconclusive", False, "drift is significant but not explained by the money account")
    return Verdict("clean", False, "no significant drift and no one-sided jump residuals")


@dataclass(frozen=True)
class PresetState:
    """Scenario quantities the money-account presets are sized from."""

    V: float
    delta: float
    S: float
    C: float = 0.0
    dV_B: float = 0.0  # derivative value change at B's default
    bond_short: float = 0.0  # value of counterparty bonds shorted through repo


def preset_money_account(name: str, state: PresetState, *, r: float, r_R: float | None = None,
                         r_F: float | None = None, r_C: float | None = None) -> MoneyAccountStructure:
    """Money-account structure of a named funding model, weights normalized by total M.

    ``piterbarg``: M_R = -delta S at r_R, M_F = V - C at r_F, M_C = C at r_C.
    ``burgard_kjaer``: surplus (-V - dV_B)^+ at r, shortfall (-V - dV_B)^- at
    r_F, M_R = -delta S at r_R, repo proceeds of the bond short at r.
    Rates left unset default to r. Zero-amount components are dropped.
    """
    r_R = r if r_R is None else r_R
    r_F = r if r_F is None else r_F
    r_C = r if r_C is None else r_C
    key = name.lower().replace("-", "_")
    if key == "piterbarg":
        parts = [("M_R", -state.delta * state.S, r_R), ("M_F", state.V - state.C, r_F),
                 ("M_C", state.C, r_C)]
    elif key in ("burgard_kjaer", "bk"):
        f = -state.V - state.dV_B
        parts = [("M_F+", max(f, 0.0), r), ("M_F-", min(f, 0.0), r_F),
                 ("M_R", -state.delta * state.S, r_R), ("M_C", state.bond_short, r)]
    else:
        raise ValueError(f"unknown money-account preset {name!r}")
    parts = [p for p in parts if p[1] != 0.0]
    total = math.fsum(p[1] for p in parts)
    if not parts or total == 0.0:
        raise ValueError("weights undefined")
    comps = [MoneyAccountComponent(n, a / total, rate) for n, a, rate in parts]
    # absorb rounding so the weights sum to one exactly
    drift = 1.0 - math.fsum(c.weight for c in comps)
    comps[-1] = MoneyAccountComponent(comps[-1].name, comps[-1].weight + drift, comps[-1].rate)
    return MoneyAccountStructure(tuple(comps), amounts=tuple(p[1] for p in parts))


def bk13_surface(
    mkt: MarketParams,
    payoff: PayoffSpec,
    grid: GridSpec,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    k: float = 0.0,
    r_C: float | None = None,
    q_B: float | None = None,
) -> PriceSurface:
    """Price surface for which the BK13 strategy has zero drift before default.

    With C = k V, g_B = chi_B V and the A-bond position fixed by V + h_A P_A - C = 0:

        L^(r - delta) V - r V = (1 - R_A) lambda_A (V - C) + l_B (V - g_B) + (r_C - r) C

    where l_B = (r_B - q_B) / (1 - R_B) is the B-bond spread over its repo rate
    ``q_B`` (defaults to r, giving l_B = lambda_B).
    """
    r_C = mkt.r if r_C is None else r_C
    q_B = mkt.r if q_B is None else q_B
    R_B = cpty_B.bond_recovery
    if R_B == 1.0:
        l_B = cpty_B.lam if q_B == mkt.r else math.inf
    else:
        l_B = (bond_yield(mkt, cpty_B) - q_B) / (1.0 - R_B)
    if not math.isfinite(l_B):
        raise ValueError("bond loss rate zero, hedge ratio undefined")
    s = ((1.0 - cpty_A.bond_recovery) * cpty_A.lam * (1.0 - k)
         + l_B * (1.0 - cpty_B.derivative_recovery) + (r_C - mkt.r) * k)
    return solve_generalized(mkt, payoff, grid, carry=mkt.r - mkt.delta, discount=mkt.r + s,
                             label="bk13")
