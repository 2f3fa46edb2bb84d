"""Domain types and the recovery / loss-rate formulas shared by every engine.

All types are frozen dataclasses validated on construction. Rates are
annualized continuously-compounded decimals and times are in years.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """Invalid parameter value. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


def _finite(path: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(path, f"must be finite, got {value}")
    return value


def _fraction(path: str, value: float) -> float:
    value = _finite(path, value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(path, f"must lie in [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class MarketParams:
    r: float
    mu: float
    sigma: float
    delta: float
    spot: float

    def __post_init__(self):
        for name in ("r", "mu", "delta"):
            _finite(name, getattr(self, name))
        if not _finite("sigma", self.sigma) > 0:
            raise ValidationError("sigma", f"must be > 0, got {self.sigma}")
        if not _finite("spot", self.spot) > 0:
            raise ValidationError("spot", f"must be > 0, got {self.spot}")


@dataclass(frozen=True)
class CounterpartyParams:
    """One counterparty: flat default intensity, bond and derivative recoveries.

    ``bond_price`` is the pre-default price of the hedge bond.
    """

    lam: float
    bond_recovery: float
    derivative_recovery: float
    bond_price: float = 1.0

    def __post_init__(self):
        if _finite("lambda", self.lam) < 0:
            raise ValidationError("lambda", f"must be >= 0, got {self.lam}")
        _fraction("bond_recovery", self.bond_recovery)
        _fraction("derivative_recovery", self.derivative_recovery)
        if not _finite("bond_price", self.bond_price) > 0:
            raise ValidationError("bond_price", f"must be > 0, got {self.bond_price}")

    @property
    def loss_rate(self) -> float:
        """Derivative loss intensity (1 - chi) * lambda."""
        return (1.0 - self.derivative_recovery) * self.lam


@dataclass(frozen=True)
class PiecewiseConstant:
    """Step function of time.

    ``values[i]`` holds on ``[knots[i], knots[i+1])``; the last value holds
    from the last knot onwards. ``knots[0]`` must be 0.
    """

    knots: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if len(knots) == 0 or len(knots) != len(values):
            raise ValidationError("knots", "knots and values must be non-empty and of equal length")
        if knots[0] != 0.0:
            raise ValidationError("knots", "first knot must be 0")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValidationError("knots", "knots must be strictly increasing")
        for v in values:
            if not math.isfinite(v) or v < 0:
                raise ValidationError("values", f"schedule values must be finite and >= 0, got {v}")

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls((0.0,), (value,))

    def __call__(self, t):
        idx = np.searchsorted(self.knots, t, side="right") - 1
        return np.asarray(self.values)[np.clip(idx, 0, None)]

    def left(self, t):
        """Left limit at ``t``: the value from the previous interval.

        At ``t = 0`` there is no previous interval and the time-0 value is used.
        """
        idx = np.searchsorted(self.knots, t, side="left") - 1
        return np.asarray(self.values)[np.clip(idx, 0, None)]

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)


class CollateralMode(str, Enum):
    NONE = "none"
    PROPORTIONAL = "proportional"
    FIXED = "fixed"


_ZERO = PiecewiseConstant.constant(0.0)


@dataclass(frozen=True)
class CollateralSpec:
    """Collateralization of the trade.

    ``proportional`` posts ``k * V`` (k may exceed 1). ``fixed`` posts the
    variation margin schedule ``C`` plus, when not netted, per-party initial
    margins ``I_A`` / ``I_B``.
    """

    mode: CollateralMode = CollateralMode.NONE
    k: float = 0.0
    C: PiecewiseConstant = _ZERO
    I_A: PiecewiseConstant = _ZERO
    I_B: PiecewiseConstant = _ZERO
    netted: bool = True
    r_C: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", CollateralMode(self.mode))
        if _finite("k", self.k) < 0:
            raise ValidationError("k", f"must be >= 0, got {self.k}")
        _finite("r_C", self.r_C)
        if self.netted and not (self.I_A.is_zero and self.I_B.is_zero):
            raise ValidationError("netted", "initial margins I_A/I_B require netted = false")

    @classmethod
    def none(cls) -> "CollateralSpec":
        return cls()

    @classmethod
    def proportional(cls, k: float, r_C: float = 0.0) -> "CollateralSpec":
        return cls(CollateralMode.PROPORTIONAL, k=k, r_C=r_C)

    @classmethod
    def fixed(cls, C, I_A=None, I_B=None, r_C: float = 0.0) -> "CollateralSpec":
        def sched(x):
            if x is None:
                return _ZERO
            return x if isinstance(x, PiecewiseConstant) else PiecewiseConstant.constant(x)

        I_A, I_B = sched(I_A), sched(I_B)
        netted = I_A.is_zero and I_B.is_zero
        return cls(CollateralMode.FIXED, C=sched(C), I_A=I_A, I_B=I_B, netted=netted, r_C=r_C)

    @property
    def unsecured_fraction(self) -> float:
        """(1 - k)^+ in proportional mode, 1 with no collateral."""
        if self.mode is CollateralMode.PROPORTIONAL:
            return max(1.0 - self.k, 0.0)
        return 1.0

    def posted(self, party: str, t, v_hat=None, *, left: bool = False):
        """Collateral protecting the survivor when ``party`` defaults at ``t``."""
        if self.mode is CollateralMode.NONE:
            return 0.0
        if self.mode is CollateralMode.PROPORTIONAL:
            return self.k * np.abs(v_hat)
        sample = (lambda s: s.left(t)) if left else (lambda s: s(t))
        amount = sample(self.C)
        if not self.netted:
            amount = amount + sample(self.I_A if party == "A" else self.I_B)
        return amount


class PayoffKind(str, Enum):
    CALL = "call"
    PUT = "put"
    FORWARD = "forward"
    PIECEWISE_LINEAR = "piecewise_linear"


@dataclass(frozen=True)
class PayoffSpec:
    """Continuous piecewise-linear terminal payoff.

    For ``piecewise_linear``, ``breakpoints`` is a sequence of ``(S, value)``
    pairs; the end segments are extrapolated linearly.
    """

    kind: PayoffKind
    maturity: float
    strike: float = 0.0
    breakpoints: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", PayoffKind(self.kind))
        if not _finite("maturity", self.maturity) > 0:
            raise ValidationError("maturity", f"must be > 0, got {self.maturity}")
        if self.kind is PayoffKind.PIECEWISE_LINEAR:
            bps = tuple((float(s), float(v)) for s, v in self.breakpoints)
            object.__setattr__(self, "breakpoints", bps)
            if len(bps) < 2:
                raise ValidationError("breakpoints", "need at least two breakpoints")
            xs = [s for s, _ in bps]
            if any(b <= a for a, b in zip(xs, xs[1:])) or xs[0] < 0:
                raise ValidationError("breakpoints", "breakpoint spots must be >= 0 and strictly increasing")
        elif not _finite("strike", self.strike) > 0:
            raise ValidationError("strike", f"must be > 0, got {self.strike}")

    @classmethod
    def call(cls, K: float, T: float) -> "PayoffSpec":
        return cls(PayoffKind.CALL, T, strike=K)

    @classmethod
    def put(cls, K: float, T: float) -> "PayoffSpec":
        return cls(PayoffKind.PUT, T, strike=K)

    @classmethod
    def forward(cls, K: float, T: float) -> "PayoffSpec":
        return cls(PayoffKind.FORWARD, T, strike=K)

    @classmethod
    def piecewise(cls, breakpoints: Sequence[tuple[float, float]], T: float) -> "PayoffSpec":
        return cls(PayoffKind.PIECEWISE_LINEAR, T, breakpoints=tuple(breakpoints))

    def __call__(self, S):
        S = np.asarray(S, dtype=float)
        K = self.strike
        if self.kind is PayoffKind.CALL:
            return np.maximum(S - K, 0.0)
        if self.kind is PayoffKind.PUT:
            return np.maximum(K - S, 0.0)
        if self.kind is PayoffKind.FORWARD:
            return S - K
        xs = np.array([b[0] for b in self.breakpoints])
        ys = np.array([b[1] for b in self.breakpoints])
        out = np.interp(S, xs, ys)
        lo_slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
        hi_slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        out = np.where(S < xs[0], ys[0] + lo_slope * (S - xs[0]), out)
        return np.where(S > xs[-1], ys[-1] + hi_slope * (S - xs[-1]), out)

    def is_nonnegative(self) -> bool:
        """True if the payoff is >= 0 for every S >= 0."""
        if self.kind in (PayoffKind.CALL, PayoffKind.PUT):
            return True
        if self.kind is PayoffKind.FORWARD:
            return False
        ys = [v for _, v in self.breakpoints]
        xs = [s for s, _ in self.breakpoints]
        hi_slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        return min(ys) >= 0 and float(self(0.0)) >= 0 and hi_slope >= 0


@dataclass(frozen=True)
class MoneyAccountComponent:
    name: str
    weight: float
    rate: float


@dataclass(frozen=True)
class MoneyAccountStructure:
    """Money account split into components accruing at their own rates."""

    components: tuple[MoneyAccountComponent, ...]
    amounts: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        comps = tuple(
            c if isinstance(c, MoneyAccountComponent) else MoneyAccountComponent(*c)
            for c in self.components
        )
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValidationError("money_account", "needs at least one component")
        for c in comps:
            _finite(f"money_account.{c.name}.weight", c.weight)
            _finite(f"money_account.{c.name}.rate", c.rate)
        total = math.fsum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError("money_account", f"weights must sum to 1, got {total!r}")

    @classmethod
    def risk_free(cls, r: float) -> "MoneyAccountStructure":
        return cls((MoneyAccountComponent("M", 1.0, r),))

    @property
    def rho(self) -> float:
        """Composite accrual rate sum_a w_a r_a."""
        return math.fsum(c.weight * c.rate for c in self.components)


class CloseoutRule(str, Enum):
    PROPORTIONAL = "proportional"
    PARI_PASSU_NETTED = "pari_passu_netted"
    COLLATERALIZED = "collateralized"


def bond_yield(mkt: MarketParams, cpty: CounterpartyParams) -> float:
    """Yield of the counterparty's bond: r + (1 - R) * lambda."""
    return mkt.r + (1.0 - cpty.bond_recovery) * cpty.lam


def loss_ratio(cpty: CounterpartyParams) -> float:
    """z = (1 - chi) / (1 - R), derivative loss rate over bond loss rate."""
    R, chi = cpty.bond_recovery, cpty.derivative_recovery
    if R == 1.0:
        if chi == 1.0:
            return 0.0
        raise ValueError("bond loss rate zero, hedge ratio undefined")
    return (1.0 - chi) / (1.0 - R)


def collateral_adjusted_recovery(chi: float, k: float) -> float:
    """Recovery once a fraction k of the exposure is collateralized."""
    return 1.0 - max(1.0 - k, 0.0) * (1.0 - chi)


def closeout_residual(
    rule: CloseoutRule,
    v_hat,
    C=0.0,
    chi: float = 0.0,
    *,
    recovery: float | None = None,
    defaulter: str | None = None,
):
    """Residual value of the trade to the surviving party at a default.

    ``v_hat`` is the pre-default value seen from party A. ``Proportional`` and
    ``Collateralized`` recover ``chi`` of the (uncollateralized) value.
    ``PariPassuNetted`` recovers ``recovery`` (the defaulter's senior bond
    recovery) on the part the defaulter owes and pays the other part in full;
    it needs ``defaulter`` in {"A", "B"}.
    """
    rule = CloseoutRule(rule)
    v_hat = np.asarray(v_hat, dtype=float)
    if rule is CloseoutRule.PROPORTIONAL:
        out = chi * v_hat
    elif rule is CloseoutRule.COLLATERALIZED:
        x = v_hat - C
        out = np.minimum(x, 0.0) + chi * np.maximum(x, 0.0) + C
    else:
        if recovery is None or defaulter not in ("A", "B"):
            raise ValueError("pari-passu closeout needs recovery and defaulter 'A' or 'B'")
        pos, neg = np.maximum(v_hat, 0.0), np.minimum(v_hat, 0.0)
        out = neg + recovery * pos if defaulter == "B" else pos + recovery * neg
    return out if out.ndim else float(out)
