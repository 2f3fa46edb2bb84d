"""Finite-difference solvers for the pricing PDEs.

Everything reduces to one backward parabolic problem on (t, S)::

    dV/dt + b(t) S dV/dS + 1/2 sigma^2 S^2 d2V/dS2 - c(t) V = f(t, S, V)

with terminal condition V(T, S) = payoff(S). Nodes are uniform in log S, the
spatial derivatives use non-uniform three-point stencils (exact on quadratics),
time stepping is a theta-scheme with fully implicit Rannacher start-up steps,
and the truncation boundaries impose d2V/dS2 = 0.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.linalg import solve_banded

from .model import (
    CloseoutRule,
    CollateralMode,
    CollateralSpec,
    CounterpartyParams,
    MarketParams,
    MoneyAccountStructure,
    PayoffSpec,
    bond_yield,
    closeout_residual,
    collateral_adjusted_recovery,
    loss_ratio,
)

Rate = Union[float, Callable[[float], float]]
Source = Callable[[float, np.ndarray, np.ndarray], np.ndarray]

PICARD_TOL = 1e-10


class PicardDivergenceError(RuntimeError):
    def __init__(self, t: float, iterations: int, residual: float):
        super().__init__(
            f"Picard iteration did not converge at t={t:.6g} after {iterations} "
            f"sweeps (last sup-norm change {residual:.3e})"
        )
        self.t = t
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class GridSpec:
    n_space: int = 400
    n_time: int = 400
    domain_mult: float = 5.0
    scheme_theta: float = 0.5
    rannacher_steps: int = 4

    def __post_init__(self):
        if self.n_space < 50:
            raise ValueError(f"n_space must be >= 50, got {self.n_space}")
        if self.n_time < 50:
            raise ValueError(f"n_time must be >= 50, got {self.n_time}")
        if not self.domain_mult > 0:
            raise ValueError(f"domain_mult must be > 0, got {self.domain_mult}")
        if not 0.0 <= self.scheme_theta <= 1.0:
            raise ValueError(f"scheme_theta must lie in [0, 1], got {self.scheme_theta}")
        if self.rannacher_steps < 0:
            raise ValueError("rannacher_steps must be >= 0")

    def spots(self, spot: float, sigma: float, T: float) -> np.ndarray:
        """Log-uniform nodes with ``spot`` on a node, spanning +-m sigma sqrt(T)."""
        half = self.domain_mult * sigma * math.sqrt(T)
        dx = 2.0 * half / (self.n_space - 1)
        j0 = (self.n_space - 1) // 2
        S = np.exp(math.log(spot) + (np.arange(self.n_space) - j0) * dx)
        S[j0] = spot
        return S


@dataclass
class PriceSurface:
    """V(t_i, S_j) on the solver grid with its first and second S-derivatives."""

    times: np.ndarray
    spots: np.ndarray
    values: np.ndarray
    deltas: np.ndarray
    gammas: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def maturity(self) -> float:
        return float(self.times[-1])

    def contains(self, t, S) -> np.ndarray:
        t, S = np.asarray(t), np.asarray(S)
        return (
            (t >= self.times[0]) & (t <= self.times[-1])
            & (S >= self.spots[0]) & (S <= self.spots[-1])
        )

    def _weights(self, axis: np.ndarray, x: np.ndarray):
        i = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, len(axis) - 2)
        w = (x - axis[i]) / (axis[i + 1] - axis[i])
        return i, w

    def interpolate(self, t, S, *, clamp: bool = False, fields=("values", "deltas", "gammas")):
        """Bilinear interpolation of (value, delta, gamma) at (t, S).

        Points outside the grid raise ``ValueError`` unless ``clamp`` is set,
        in which case S is clamped to the boundary nodes and the value is
        extrapolated linearly with the boundary delta.
        """
        t = np.asarray(t, dtype=float)
        S = np.asarray(S, dtype=float)
        if not clamp and not np.all(self.contains(t, S)):
            raise ValueError("point outside the PriceSurface domain")
        t = np.clip(t, self.times[0], self.times[-1])
        Sc = np.clip(S, self.spots[0], self.spots[-1])
        i, wt = self._weights(self.times, t)
        j, ws = self._weights(self.spots, Sc)

        def blend(a):
            lo = a[i, j] * (1 - ws) + a[i, j + 1] * ws
            hi = a[i + 1, j] * (1 - ws) + a[i + 1, j + 1] * ws
            return lo * (1 - wt) + hi * wt

        out = [blend(getattr(self, f)) for f in fields]
        if clamp and "values" in fields:
            d = out[fields.index("deltas")] if "deltas" in fields else blend(self.deltas)
            k = fields.index("values")
            out[k] = out[k] + d * (S - Sc)
        return tuple(out)

    def value_at(self, t, S, *, clamp: bool = False):
        return self.interpolate(t, S, clamp=clamp, fields=("values",))[0]

    def to_csv(self, path=None) -> str:
        """Row-major by time, header ``t,S,V,delta,gamma``. Returns the text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "S", "V", "delta", "gamma"])
        for i, t in enumerate(self.times):
            for j, s in enumerate(self.spots):
                w.writerow([repr(float(t)), repr(float(s)), repr(float(self.values[i, j])),
                            repr(float(self.deltas[i, j])), repr(float(self.gammas[i, j]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "PriceSurface":
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
        times = np.unique(data[:, 0])
        spots = data[: len(data) // len(times), 1]
        shape = (len(times), len(spots))
        return cls(times, spots, data[:, 2].reshape(shape), data[:, 3].reshape(shape),
                   data[:, 4].reshape(shape))


def _rate(rate: Rate) -> Callable[[float], float]:
    if callable(rate):
        return rate
    value = float(rate)
    return lambda t: value


def _stencils(S: np.ndarray):
    """First- and second-derivative stencils (lower, diag, upper) on the nodes."""
    n = len(S)
    d1 = np.zeros((3, n))
    d2 = np.zeros((3, n))
    hm = S[1:-1] - S[:-2]
    hp = S[2:] - S[1:-1]
    d1[0, 1:-1] = -hp / (hm * (hm + hp))
    d1[1, 1:-1] = (hp - hm) / (hm * hp)
    d1[2, 1:-1] = hm / (hp * (hm + hp))
    d2[0, 1:-1] = 2.0 / (hm * (hm + hp))
    d2[1, 1:-1] = -2.0 / (hm * hp)
    d2[2, 1:-1] = 2.0 / (hp * (hm + hp))
    # one-sided first derivative at the ends; d2V/dS2 = 0 there
    h0, hn = S[1] - S[0], S[-1] - S[-2]
    d1[1, 0], d1[2, 0] = -1.0 / h0, 1.0 / h0
    d1[0, -1], d1[1, -1] = -1.0 / hn, 1.0 / hn
    return d1, d2


def _derivatives(S: np.ndarray, V: np.ndarray):
    """Delta and gamma along the last axis: central inside, one-sided at the ends."""
    hm = S[1:-1] - S[:-2]
    hp = S[2:] - S[1:-1]
    Vm, V0, Vp = V[..., :-2], V[..., 1:-1], V[..., 2:]
    delta = np.empty_like(V)
    gamma = np.empty_like(V)
    delta[..., 1:-1] = (-hp / (hm * (hm + hp))) * Vm + ((hp - hm) / (hm * hp)) * V0 + (hm / (hp * (hm + hp))) * Vp
    gamma[..., 1:-1] = 2.0 * (Vm / (hm * (hm + hp)) - V0 / (hm * hp) + Vp / (hp * (hm + hp)))
    delta[..., 0] = (V[..., 1] - V[..., 0]) / (S[1] - S[0])
    delta[..., -1] = (V[..., -1] - V[..., -2]) / (S[-1] - S[-2])
    gamma[..., 0] = gamma[..., 1]
    gamma[..., -1] = gamma[..., -2]
    return delta, gamma


def _tri_matvec(band: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = band[1] * v
    out[1:] += band[0, 1:] * v[:-1]
    out[:-1] += band[2, :-1] * v[1:]
    return out


def solve_generalized(
    mkt: MarketParams,
    payoff: PayoffSpec,
    grid: GridSpec,
    carry: Rate,
    discount: Rate,
    source: Source | None = None,
    *,
    max_iters: int = 50,
    label: str = "",
) -> PriceSurface:
    """Solve dV/dt + L^(carry) V - discount * V = source(t, S, V) backwards from T.

    ``carry`` and ``discount`` are constants or functions of t, sampled at slab
    midpoints. A non-None ``source`` is iterated to a fixed point (Picard) in
    each implicit step; convergence is declared when successive sweeps differ
    by less than 1e-10 * max(1, |V|) in the sup norm.
    """
    T = payoff.maturity
    N = grid.n_time
    S = grid.spots(mkt.spot, mkt.sigma, T)
    n = len(S)
    dt = T / N
    times = np.linspace(0.0, T, N + 1)
    carry_fn, disc_fn = _rate(carry), _rate(discount)

    d1, d2 = _stencils(S)
    drift_band = d1 * S  # S dV/dS
    diff_band = 0.5 * mkt.sigma**2 * d2 * S**2

    values = np.empty((N + 1, n))
    V = payoff(S).astype(float)
    values[N] = V
    for step in range(N - 1, -1, -1):
        tm = 0.5 * (times[step] + times[step + 1])
        b, c = carry_fn(tm), disc_fn(tm)
        A = b * drift_band + diff_band
        A[1] -= c
        theta = 1.0 if (N - 1 - step) < grid.rannacher_steps else grid.scheme_theta

        rhs = V + (1.0 - theta) * dt * _tri_matvec(A, V)
        if source is not None and theta < 1.0:
            rhs -= (1.0 - theta) * dt * source(tm, S, V)
        lhs = -theta * dt * A
        lhs[1] += 1.0
        # solve_banded wants the upper diagonal shifted right, lower shifted left
        ab = np.zeros_like(lhs)
        ab[0, 1:] = lhs[2, :-1]
        ab[1] = lhs[1]
        ab[2, :-1] = lhs[0, 1:]

        if source is not None and theta > 0.0:
            V_new = solve_banded((1, 1), ab, rhs - theta * dt * source(tm, S, V))
            change = np.inf
            for it in range(1, max_iters + 1):
                V_iter = solve_banded((1, 1), ab, rhs - theta * dt * source(tm, S, V_new))
                change = float(np.max(np.abs(V_iter - V_new)))
                V_new = V_iter
                if change < PICARD_TOL * max(1.0, float(np.max(np.abs(V_new)))):
                    break
            else:
                raise PicardDivergenceError(times[step], max_iters, change)
        else:
            V_new = solve_banded((1, 1), ab, rhs)
        V = V_new
        values[step] = V

    deltas, gammas = _derivatives(S, values)
    return PriceSurface(times, S, values, deltas, gammas, label=label,
                        meta={"grid": grid, "maturity": T})


def solve_default_free(mkt: MarketParams, payoff: PayoffSpec, grid: GridSpec, rho: Rate) -> PriceSurface:
    """Black-Scholes-Merton with the money account accruing at ``rho``."""
    rho_fn = _rate(rho)
    return solve_generalized(
        mkt, payoff, grid,
        carry=lambda t: rho_fn(t) - mkt.delta,
        discount=rho_fn,
        label="default-free",
    )


def solve_default_risky(
    mkt: MarketParams,
    payoff: PayoffSpec,
    grid: GridSpec,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    collateral: CollateralSpec | None = None,
) -> PriceSurface:
    """Recovery-proportional default-risky price, optionally k-collateralized.

    The loss term (1 - k)^+ [(1 - chi_A) lambda_A + (1 - chi_B) lambda_B] V is
    linear in V and is folded into the discount rate.
    """
    collateral = collateral or CollateralSpec.none()
    if collateral.mode is CollateralMode.FIXED:
        raise ValueError("fixed collateral schedules make the PDE nonlinear; use solve_general_closeout")
    s = collateral.unsecured_fraction * (cpty_A.loss_rate + cpty_B.loss_rate)
    return solve_generalized(
        mkt, payoff, grid,
        carry=mkt.r - mkt.delta,
        discount=mkt.r + s,
        label="default-risky",
    )


def closeout_source(
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    rule: CloseoutRule,
    collateral: CollateralSpec | None = None,
) -> Source:
    """lambda_A (V - v_A) + lambda_B (V - v_B) for a closeout rule and collateral."""
    rule = CloseoutRule(rule)
    collateral = collateral or CollateralSpec.none()
    if rule is CloseoutRule.PARI_PASSU_NETTED and collateral.mode is not CollateralMode.NONE:
        raise ValueError("pari-passu netted closeout is defined without collateral")
    parties = (("A", cpty_A), ("B", cpty_B))

    def residual(name, cpty, t, V):
        if rule is CloseoutRule.PROPORTIONAL:
            chi = cpty.derivative_recovery
            if collateral.mode is CollateralMode.PROPORTIONAL:
                chi = collateral_adjusted_recovery(chi, collateral.k)
            return closeout_residual(rule, V, chi=chi)
        if rule is CloseoutRule.COLLATERALIZED:
            C = collateral.posted(name, t, V)
            return closeout_residual(rule, V, C, cpty.derivative_recovery)
        return closeout_residual(rule, V, recovery=cpty.bond_recovery, defaulter=name)

    def source(t, S, V):
        out = np.zeros_like(V)
        for name, cpty in parties:
            if cpty.lam:
                out += cpty.lam * (V - residual(name, cpty, t, V))
        return out

    return source


def solve_general_closeout(
    mkt: MarketParams,
    payoff: PayoffSpec,
    grid: GridSpec,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    rule: CloseoutRule,
    collateral: CollateralSpec | None = None,
    *,
    max_iters: int = 50,
) -> PriceSurface:
    """Default-risky price with a general (possibly nonlinear) closeout value."""
    dt = payoff.maturity / grid.n_time
    if (cpty_A.lam + cpty_B.lam) * dt >= 1.0:
        raise ValueError("Picard iteration needs (lambda_A + lambda_B) dt < 1; refine n_time")
    return solve_generalized(
        mkt, payoff, grid,
        carry=mkt.r - mkt.delta,
        discount=mkt.r,
        source=closeout_source(cpty_A, cpty_B, rule, collateral),
        max_iters=max_iters,
        label=f"closeout:{CloseoutRule(rule).value}",
    )


def solve_rho_structured(
    mkt: MarketParams,
    payoff: PayoffSpec,
    grid: GridSpec,
    cpty_A: CounterpartyParams,
    cpty_B: CounterpartyParams,
    ma: MoneyAccountStructure,
) -> PriceSurface:
    """Price implied by a structured money account accruing at rho != r.

    Solves L^(rho - delta) V - rho V = [z_B (r_B - rho) + z_A (r_A - rho)] V.
    The result is not a market-clearing price; it measures the wedge against
    ``solve_default_risky``.
    """
    rho = ma.rho
    wedge = (loss_ratio(cpty_B) * (bond_yield(mkt, cpty_B) - rho)
             + loss_ratio(cpty_A) * (bond_yield(mkt, cpty_A) - rho))
    return solve_generalized(
        mkt, payoff, grid,
        carry=rho - mkt.delta,
        discount=rho + wedge,
        label="not market-cleared",
    )


def greeks(surface: PriceSurface, t: float, S: float) -> tuple[float, float, float]:
    """(value, delta, gamma) at an in-domain point."""
    v, d, g = surface.interpolate(t, S)
    return float(v), float(d), float(g)
