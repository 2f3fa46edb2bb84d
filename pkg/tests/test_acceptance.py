"""End-to-end acceptance checks, one test per criterion.

Each test prints ``ACCEPTANCE <n> PASS|FAIL: <detail>``; the same lines are
repeated in the terminal summary.
"""
import itertools
import json
import math
import time

import numpy as np
import pytest

from riskyderiv.analytic import (
    black_scholes_carry,
    effective_hazard_price,
    lognormal_quadrature_price,
    unilateral_price,
)
from riskyderiv.cli import parse_scenario, run_engines
from riskyderiv.hedge import BondPortfolio
from riskyderiv.model import (
    CloseoutRule,
    CollateralSpec,
    CounterpartyParams,
    MarketParams,
    MoneyAccountStructure,
    PayoffSpec,
)
from riskyderiv.montecarlo import McConfig, mc_effective_discount, mc_loss_integral
from riskyderiv.pde import (
    GridSpec,
    solve_default_free,
    solve_default_risky,
    solve_general_closeout,
)
from riskyderiv.replication_sim import (
    PresetState,
    SimConfig,
    StrategySpec,
    bk13_surface,
    detect_arbitrage,
    money_account_spread,
    preset_money_account,
    simulate,
)

MKT = MarketParams(r=0.05, mu=0.08, sigma=0.2, delta=0.02, spot=100.0)
CALL = PayoffSpec.call(100.0, 1.0)
GRID = GridSpec(400, 400)
A = CounterpartyParams(0.05, 0.4, 0.4)
B = CounterpartyParams(0.03, 0.4, 0.2)


def report(n, ok, detail):
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    return ok


def test_criterion_01_oracle_chain():
    t0 = time.perf_counter()
    free = CounterpartyParams(0.0, 0.4, 0.4)
    pde = solve_default_risky(MKT, CALL, GRID, free, free).value_at(0.0, MKT.spot)
    elapsed = time.perf_counter() - t0
    b = MKT.r - MKT.delta
    bs = black_scholes_carry(MKT.spot, CALL.strike, 1.0, MKT.sigma, b, MKT.r)
    quad = lognormal_quadrature_price(CALL, MKT.spot, 1.0, MKT.sigma, b, MKT.r)
    rel = abs(pde - bs) / bs
    ok = rel < 1e-3 and abs(bs - quad) < 1e-6 and elapsed < 5.0
    assert report(1, ok, f"pde rel err {rel:.2e}, |bs-quad| {abs(bs - quad):.1e}, {elapsed:.2f}s")


def test_criterion_02_effective_hazard_lattice():
    t0 = time.perf_counter()
    worst = 0.0
    lams, chis, ks = (0.0, 0.02, 0.05), (0.0, 0.4, 1.0), (0.0, 0.5, 1.0)
    for lA, lB, cA, cB, k in itertools.product(lams, lams, chis, chis, ks):
        a, b = CounterpartyParams(lA, 0.4, cA), CounterpartyParams(lB, 0.4, cB)
        pde = solve_default_risky(MKT, CALL, GRID, a, b, CollateralSpec.proportional(k)).value_at(0.0, MKT.spot)
        closed = effective_hazard_price(MKT, CALL, a, b, k)
        worst = max(worst, abs(pde - closed) / closed)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and elapsed < 120.0
    assert report(2, ok, f"243 lattice points, worst rel err {worst:.2e}, {elapsed:.1f}s")


@pytest.mark.parametrize("k", [0.0, 0.5])
def test_criterion_03_two_expectation_forms(k):
    coll = CollateralSpec.proportional(k)
    surface = solve_default_risky(MKT, CALL, GridSpec(200, 200), A, B, coll)
    loss = mc_loss_integral(MKT, CALL, A, B, coll, surface, McConfig(100_000, 100, seed=31),
                            CloseoutRule.PROPORTIONAL)
    disc = mc_effective_discount(MKT, CALL, A, B, k, McConfig(100_000, 1, seed=32))
    joint = math.hypot(loss.std_error, disc.std_error)
    diff = abs(loss.mean - disc.mean)
    ok = diff < 3 * joint
    assert report(3, ok, f"k={k}: |loss - discount| {diff:.4f} vs 3 SE {3 * joint:.4f}")


def test_criterion_04_collateral_limits():
    free = solve_default_free(MKT, CALL, GRID, MKT.r)
    v_free = free.value_at(0.0, MKT.spot)
    full = solve_default_risky(MKT, CALL, GRID, A, B, CollateralSpec.proportional(1.0)).value_at(0.0, MKT.spot)
    over = solve_default_risky(MKT, CALL, GRID, A, B, CollateralSpec.proportional(1.5)).value_at(0.0, MKT.spot)
    big = CollateralSpec.fixed(2.0 * float(free.values.max()))
    fixed = solve_general_closeout(MKT, CALL, GridSpec(200, 200), A, B, CloseoutRule.COLLATERALIZED,
                                   big).value_at(0.0, MKT.spot)
    v_free_200 = solve_default_free(MKT, CALL, GridSpec(200, 200), MKT.r).value_at(0.0, MKT.spot)
    sweep = [solve_default_risky(MKT, CALL, GRID, A, B, CollateralSpec.proportional(k)).value_at(0.0, MKT.spot)
             for k in np.linspace(0.0, 1.5, 16)]
    monotone = all(b >= a for a, b in zip(sweep, sweep[1:]))
    errs = (abs(full - v_free), abs(over - v_free), abs(fixed - v_free_200))
    ok = max(errs) < 1e-10 * v_free and monotone
    assert report(4, ok, f"limit errors {max(errs):.1e}, k-sweep monotone={monotone}")


def test_criterion_05_unilateral_separability():
    a = CounterpartyParams(0.02, 0.4, 0.4)
    b = CounterpartyParams(0.03, 0.4, 0.4)
    fwd = PayoffSpec.forward(100.0, 1.0)
    bilateral = solve_general_closeout(MKT, fwd, GRID, a, b, CloseoutRule.PARI_PASSU_NETTED).value_at(0.0, MKT.spot)
    # a positive value is owed by B, a negative one by A
    split = (unilateral_price(MKT, PayoffSpec.call(100.0, 1.0), b)
             - unilateral_price(MKT, PayoffSpec.put(100.0, 1.0), a))
    notional = fwd.strike
    gap = abs(bilateral - split)
    ok = gap < 2e-3 * notional
    assert report(5, ok, f"|bilateral - (call - put)| {gap:.4f} vs {2e-3 * notional:.2f}")


def test_criterion_06_no_arbitrage_drift():
    mkt = MarketParams(r=0.03, mu=0.08, sigma=0.2, delta=0.01, spot=100.0)
    a, b = CounterpartyParams(0.03, 0.4, 0.4), CounterpartyParams(0.02, 0.4, 0.2)
    surface = solve_default_risky(mkt, CALL, GridSpec(200, 200), a, b)
    cfg = SimConfig(dt=1 / 250, n_paths=50_000, seed=61)
    base = simulate(mkt, CALL, a, b, StrategySpec.full(), MoneyAccountStructure.risk_free(mkt.r), surface, cfg)
    zero_ok = abs(base.mean_drift) < 3 * base.drift_std_error
    spreads, drifts, match = (0.0025, 0.005, 0.01), [], []
    for s in spreads:
        ma = MoneyAccountStructure((("M", 0.5, mkt.r), ("F", 0.5, mkt.r + s)))
        rep = simulate(mkt, CALL, a, b, StrategySpec.full(), ma, surface, cfg)
        drifts.append(rep.mean_drift)
        match.append(abs(rep.mean_drift - rep.predicted_drift) < 3 * rep.excess_drift_std_error)
    slope, intercept = np.polyfit(spreads, drifts, 1)
    fit = slope * np.asarray(spreads) + intercept
    r2 = 1.0 - np.sum((drifts - fit) ** 2) / np.sum((drifts - np.mean(drifts)) ** 2)
    ok = zero_ok and all(match) and r2 > 0.99
    assert report(6, ok, f"zero-spread drift {base.mean_drift:.4f} +/- {base.drift_std_error:.4f}, "
                         f"spread drifts match prediction={all(match)}, R^2 {r2:.6f}")


def test_criterion_07_semi_replication_arbitrage():
    mkt = MarketParams(r=0.03, mu=0.08, sigma=0.2, delta=0.01, spot=100.0)
    a, b = CounterpartyParams(0.05, 0.4, 0.4), CounterpartyParams(0.02, 0.4, 0.2)
    surface = bk13_surface(mkt, CALL, GridSpec(200, 200), a, b)
    cfg = SimConfig(dt=1 / 250, n_paths=20_000, seed=71)
    eps = lambda t, S, V: 0.25 + 0.5 * t + 0.0 * S  # noqa: E731
    rep = simulate(mkt, CALL, a, b, StrategySpec.bk13(eps), MoneyAccountStructure.risk_free(mkt.r), surface, cfg)
    a_jumps = [r for r in rep.jump_residuals if r[2] == "A"]
    # residual records carry the step-start time at which epsilon is evaluated
    worst = max(abs(res - (0.25 + 0.5 * t)) for _, t, _, res in a_jumps)
    constant = simulate(mkt, CALL, a, b, StrategySpec.bk13(0.5), MoneyAccountStructure.risk_free(mkt.r),
                        surface, cfg)
    exact = max(abs(r[3] - 0.5) for r in constant.jump_residuals if r[2] == "A")
    verdict = detect_arbitrage(constant).label
    clean = simulate(mkt, CALL, a, b, StrategySpec.bk13(0.0), MoneyAccountStructure.risk_free(mkt.r),
                     surface, cfg)
    tol = cfg.dt * 0.5  # one-step accrual allowance on epsilon
    ok = (max(exact, worst) <= tol and len(a_jumps) > 0 and verdict == "arbitrage"
          and rep.verdict == "arbitrage" and clean.verdict == "clean"
          and max(abs(r[3]) for r in clean.jump_residuals) < 1e-10)
    assert report(7, ok, f"{len(a_jumps)} A-defaults, |residual - eps| max {max(exact, worst):.1e}, "
                         f"verdict {verdict}, eps=0 verdict {clean.verdict}")


def _preset_scenario(preset, **rates):
    return {
        "schema_version": 1,
        "id": f"preset-{preset}",
        "market": {"r": 0.03, "mu": 0.08, "sigma": 0.2, "delta": 0.01, "spot": 100.0},
        "payoff": {"kind": "put", "strike": 100.0, "maturity": 1.0},
        "parties": {
            "A": {"lambda": 0.03, "bond_recovery": 0.4, "derivative_recovery": 0.4},
            "B": {"lambda": 0.02, "bond_recovery": 0.4, "derivative_recovery": 0.2},
        },
        "money_account": {"preset": preset, **rates},
        "engines": ["sim"],
        "grid": {"n_space": 200, "n_time": 200},
        "sim": {"dt": 0.004, "n_paths": 100_000, "seed": 91},
    }


def test_criterion_08_aggregate_invariance():
    mkt = MarketParams(r=0.03, mu=0.08, sigma=0.2, delta=0.01, spot=100.0)
    a, b = CounterpartyParams(0.05, 0.4, 0.4), CounterpartyParams(0.02, 0.4, 0.2)
    surface = solve_default_risky(mkt, CALL, GridSpec(200, 200), a, b)
    cfg = SimConfig(dt=1 / 250, n_paths=20_000, seed=81)
    ma = MoneyAccountStructure.risk_free(mkt.r)
    one = BondPortfolio(((1.0, 0.4, 1.0),))
    many = BondPortfolio(((1.0, 0.4, 0.3), (0.9, 0.1, 0.3), (1.05, 0.7, 0.4)))
    r1 = simulate(mkt, CALL, a, b, StrategySpec.full(bonds_A=one, epsilon=0.3), ma, surface, cfg)
    r2 = simulate(mkt, CALL, a, b, StrategySpec.full(bonds_A=many, epsilon=0.3), ma, surface, cfg)
    same_events = [r[:3] for r in r1.jump_residuals] == [r[:3] for r in r2.jump_residuals]
    diff = max(abs(x[3] - y[3]) for x, y in zip(r1.jump_residuals, r2.jump_residuals))
    notional = mkt.spot
    ok = same_events and len(r1.jump_residuals) > 0 and diff <= 1e-10 * notional
    assert report(8, ok, f"{len(r1.jump_residuals)} defaults, max residual difference {diff:.1e}")


def test_criterion_09_money_account_condition():
    state = PresetState(V=8.0, delta=-0.4, S=100.0, C=2.0, dV_B=-6.4, bond_short=10.7)
    r = 0.03
    iff = []
    for preset in ("piterbarg", "burgard_kjaer"):
        for rates in ({}, {"r_R": r, "r_F": r, "r_C": r}, {"r_F": r + 0.005}, {"r_R": r - 0.002},
                      {"r_C": r + 0.01}):
            ma = preset_money_account(preset, state, r=r, **rates)
            zero = money_account_spread(ma, r)[1] == 0.0
            all_r = all(c.rate == r for c in ma.components)
            iff.append(zero == all_r)
    agree = []
    details = []
    for preset, rates in (("piterbarg", {}), ("piterbarg", {"r_F": 0.035}),
                          ("burgard_kjaer", {}), ("burgard_kjaer", {"r_F": 0.035})):
        raw = _preset_scenario(preset, **rates)
        sc = parse_scenario(raw, json.dumps(raw))
        res = run_engines(sc)[0]["results"]["sim"]
        spread = res["spread"]
        agree.append((res["verdict"] == "clean") == (spread == 0.0))
        details.append(f"{preset}{rates or ''}:{spread * 1e4:.1f}bp->{res['verdict']}")
    ok = all(iff) and all(agree)
    assert report(9, ok, "; ".join(details))


def test_criterion_10_determinism(tmp_path):
    from riskyderiv.cli import main

    raw = _preset_scenario("piterbarg", r_F=0.035)
    raw["engines"] = ["pde", "analytic", "mc", "sim"]
    raw["mc"] = {"n_paths": 20000, "n_steps": 1, "seed": 101}
    raw["sim"]["n_paths"] = 5000
    raw["sim"]["trace_paths"] = 2
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(raw, indent=2))
    outs = []
    for name in ("a", "b"):
        main(["price", str(path), "--out", str(tmp_path / name)])
        outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    ok = outs[0] == outs[1] and "report.json" in outs[0]
    assert report(10, ok, f"{len(outs[0])} output files byte-identical={outs[0] == outs[1]}")
