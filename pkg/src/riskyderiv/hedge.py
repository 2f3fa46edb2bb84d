"""Replication weights for the default-risky hedge portfolio.

All weight sets satisfy the zero-initial-investment identity

    h_S S + h_V V + h_A P_A + h_B P_B + M - C = 0

with the money account M sized to close it. ``C`` is collateral held by the
hedger and is zero except for semi-replication.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .model import CounterpartyParams, loss_ratio

ZII_TOL = 1e-10


@dataclass(frozen=True)
class SurfacePoint:
    """(t, S) with the derivative value and delta read off a PriceSurface."""

    t: float
    S: float
    V: float
    delta: float

    @classmethod
    def from_surface(cls, surface, t: float, S: float, *, clamp: bool = False) -> "SurfacePoint":
        v, d = surface.interpolate(t, S, clamp=clamp, fields=("values", "deltas"))
        return cls(float(t), float(S), float(v), float(d))


@dataclass(frozen=True)
class ReplicationWeights:
    """Positions of the hedge portfolio; M is a currency amount, the rest are units."""

    h_S: float
    h_V: float
    h_A: float
    h_B: float
    M: float
    P_A: float = 1.0
    P_B: float = 1.0
    collateral: float = 0.0
    epsilon: float = 0.0
    point: SurfacePoint | None = field(default=None, compare=False)

    def zii_residual(self, S: float, V: float) -> float:
        return (self.h_S * S + self.h_V * V + self.h_A * self.P_A + self.h_B * self.P_B
                + self.M - self.collateral)

    def check_zii(self, S: float, V: float, notional: float = 1.0) -> None:
        res = self.zii_residual(S, V)
        scale = max(abs(notional), abs(V), abs(self.h_S * S), abs(self.M), 1.0)
        if abs(res) > ZII_TOL * scale:
            raise AssertionError(f"z.i.i. violated: residual {res!r}")

    def money_account_split(self, S: float, delta: float, V: float) -> tuple[float, float]:
        """(M_BSM, M_default) with M_BSM = (delta S - V) h_V and the rest default-driven."""
        m_bsm = (delta * S - V) * self.h_V
        return m_bsm, self.M - m_bsm

    def scaled(self, factor: float) -> "ReplicationWeights":
        return replace(self, h_S=self.h_S * factor, h_V=self.h_V * factor, h_A=self.h_A * factor,
                       h_B=self.h_B * factor, M=self.M * factor,
                       collateral=self.collateral * factor, epsilon=self.epsilon * factor)


def _check_prices(*prices: float) -> None:
    for p in prices:
        if not (p > 0 and math.isfinite(p)):
            raise ValueError(f"bond prices must be positive and finite, got {p!r}")


def _close(point: SurfacePoint, h_S, h_V, h_A, h_B, P_A, P_B, collateral=0.0, epsilon=0.0):
    M = -(h_S * point.S + h_V * point.V + h_A * P_A + h_B * P_B - collateral)
    return ReplicationWeights(h_S, h_V, h_A, h_B, M, P_A, P_B, collateral, epsilon, point)


def collateralized_weights(
    point: SurfacePoint,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    k: float,
    h_V: float = 1.0,
) -> ReplicationWeights:
    """Full replication with the bond legs scaled by the unsecured fraction (1 - k)^+.

    h_S = -delta h_V and h_X = -(1 - k)^+ z_X V h_V / P_X. The weights do not
    involve the hazard rates.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    P_A, P_B = cpty_A.bond_price, cpty_B.bond_price
    _check_prices(P_A, P_B)
    u = max(1.0 - k, 0.0)
    h_A = -u * loss_ratio(cpty_A) * point.V * h_V / P_A
    h_B = -u * loss_ratio(cpty_B) * point.V * h_V / P_B
    return _close(point, -point.delta * h_V, h_V, h_A, h_B, P_A, P_B)


def full_replication_weights(
    point: SurfacePoint,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    h_V: float = 1.0,
) -> ReplicationWeights:
    """Delta hedge plus short bond positions that cancel both default jumps.

    M = (delta S - V + z_A V + z_B V) h_V.
    """
    return collateralized_weights(point, cpty_A, cpty_B, 0.0, h_V)


@dataclass(frozen=True)
class SemiReplication:
    weights: ReplicationWeights
    epsilon: float
    gap: float


def bk13_weights(
    point: SurfacePoint,
    g_A: float,
    g_B: float,
    P_A: float,
    P_D_A: float,
    P_B: float,
    C: float,
    R_B: float = 0.0,
) -> SemiReplication:
    """Semi-replication with the own-bond leg fixed by the abridged z.i.i.

    The A-bond position is worth ``C - V`` so that V + h_A P_A - C = 0, and
    ``P_D_A`` is that position's value just after A defaults. The B-bond leg
    cancels the B-default jump: h_B (1 - R_B) P_B = g_B - V. The leftover
    A-default jump is epsilon = P_D_A - C + g_A.

    ``gap`` is the distance of V - g_A from the fully replicating bond loss,
    -(P_A^- - P_D_A) - epsilon; it is zero for any consistent inputs.
    """
    _check_prices(P_A, P_B)
    if not 0.0 <= R_B < 1.0:
        raise ValueError("R_B must lie in [0, 1) for the B-bond leg")
    position_A = C - point.V
    h_A = position_A / P_A
    h_B = (g_B - point.V) / ((1.0 - R_B) * P_B)
    epsilon = P_D_A - C + g_A
    gap = (point.V - g_A) - (-(position_A - P_D_A) - epsilon)
    w = _close(point, -point.delta, 1.0, h_A, h_B, P_A, P_B, collateral=C, epsilon=epsilon)
    return SemiReplication(w, epsilon, gap)


@dataclass(frozen=True)
class BondIssue:
    price: float
    recovery: float
    holding: float = 0.0

    def __post_init__(self):
        _check_prices(self.price)
        if not 0.0 <= self.recovery <= 1.0:
            raise ValueError(f"recovery must lie in [0, 1], got {self.recovery!r}")

    @property
    def loss_on_default(self) -> float:
        """Value lost by this holding when the issuer defaults."""
        return self.holding * (1.0 - self.recovery) * self.price


@dataclass(frozen=True)
class BondPortfolio:
    issues: tuple[BondIssue, ...]

    def __post_init__(self):
        object.__setattr__(self, "issues", tuple(
            i if isinstance(i, BondIssue) else BondIssue(*i) for i in self.issues))
        if not self.issues:
            raise ValueError("bond portfolio needs at least one issue")

    @property
    def shortfall(self) -> float:
        """sum_i h_i (1 - R_i) P_i."""
        return math.fsum(i.loss_on_default for i in self.issues)

    @property
    def market_value(self) -> float:
        return math.fsum(i.holding * i.price for i in self.issues)


def aggregate_bond_portfolio(portfolio: BondPortfolio, target_shortfall: float) -> BondPortfolio:
    """Scale a composition so a default of the issuer offsets ``target_shortfall``.

    The holdings of ``portfolio`` fix the composition. The result satisfies
    sum_i h_i (1 - R_i) P_i = -target_shortfall: a derivative that loses
    ``target_shortfall`` at default is offset by the short bond positions.
    """
    per_unit = math.fsum(i.holding * (1.0 - i.recovery) * i.price for i in portfolio.issues)
    if all(i.recovery == 1.0 for i in portfolio.issues):
        raise ValueError("cannot replicate default loss")
    if per_unit == 0.0:
        raise ValueError("composition has zero aggregate default exposure")
    scale = -target_shortfall / per_unit
    return BondPortfolio(tuple(replace(i, holding=i.holding * scale) for i in portfolio.issues))


def weights_to_csv(rows: Sequence[ReplicationWeights]) -> str:
    """Rows as CSV with header t,S,h_S,h_A,h_B,M,epsilon."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "S", "h_S", "h_A", "h_B", "M", "epsilon"])
    for r in rows:
        p = r.point
        w.writerow([repr(float(x)) for x in (p.t if p else math.nan, p.S if p else math.nan,
                                              r.h_S, r.h_A, r.h_B, r.M, r.epsilon)])
    return buf.getvalue()
