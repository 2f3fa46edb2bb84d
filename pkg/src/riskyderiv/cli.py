"""Scenario runner.

    riskyderiv price scenario.json [--out DIR] [--format json|csv]
    riskyderiv sweep scenario.json --param parties.B.lambda --values 0,0.02,0.05
    riskyderiv simulate scenario.json [--out DIR]

Exit codes: 0 all cross-checks pass, 1 a cross-check failed, 2 the scenario
did not parse or validate.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analytic import effective_hazard_price
from .hedge import SurfacePoint, collateralized_weights, weights_to_csv
from .model import (
    CloseoutRule,
    CollateralMode,
    CollateralSpec,
    CounterpartyParams,
    MarketParams,
    MoneyAccountStructure,
    PayoffSpec,
    PiecewiseConstant,
    ValidationError,
)
from .montecarlo import McConfig, mc_effective_discount, mc_loss_integral
from .pde import GridSpec, solve_default_risky, solve_general_closeout
from .replication_sim import (
    PresetState,
    SimConfig,
    StrategySpec,
    bk13_surface,
    money_account_spread,
    preset_money_account,
    simulate,
    strategy_weights_csv,
)

SCHEMA_VERSION = 1
ENGINES = ("pde", "analytic", "mc", "sim")

_FIELDS = {
    "": {"schema_version", "id", "market", "payoff", "parties", "collateral", "closeout",
         "money_account", "strategy", "engines", "grid", "mc", "sim", "tolerances"},
    "market": {"r", "mu", "sigma", "delta", "spot"},
    "payoff": {"kind", "strike", "maturity", "breakpoints"},
    "parties": {"A", "B"},
    "parties.A": {"lambda", "bond_recovery", "derivative_recovery", "bond_price"},
    "parties.B": {"lambda", "bond_recovery", "derivative_recovery", "bond_price"},
    "collateral": {"mode", "k", "C", "I_A", "I_B", "netted", "r_C"},
    "money_account": {"components", "preset", "r_R", "r_F", "r_C"},
    "strategy": {"kind", "k", "epsilon", "r_C"},
    "grid": {"n_space", "n_time", "domain_mult", "scheme_theta", "rannacher_steps"},
    "mc": {"n_paths", "n_steps", "seed", "antithetic"},
    "sim": {"dt", "horizon", "n_paths", "seed", "trace_paths"},
    "tolerances": {"pde_rel", "mc_sigmas"},
}
_REQUIRED = {
    "": ("schema_version", "id", "market", "payoff", "parties", "engines"),
    "market": ("r", "mu", "sigma", "delta", "spot"),
    "payoff": ("kind", "maturity"),
    "parties.A": ("lambda", "bond_recovery", "derivative_recovery"),
    "parties.B": ("lambda", "bond_recovery", "derivative_recovery"),
}


class ScenarioError(Exception):
    """Parse or validation failure, anchored to a field path and source line."""

    def __init__(self, path: str, message: str, line: int | None = None):
        where = f" (line {line})" if line else ""
        super().__init__(f"{path or '<root>'}{where}: {message}")
        self.path = path
        self.line = line


@dataclass
class Scenario:
    id: str
    market: MarketParams
    payoff: PayoffSpec
    cpty_A: CounterpartyParams
    cpty_B: CounterpartyParams
    collateral: CollateralSpec
    closeout: CloseoutRule
    money_account: MoneyAccountStructure | None
    ma_spec: dict
    strategy: StrategySpec
    engines: tuple[str, ...]
    grid: GridSpec | None
    mc: McConfig | None
    sim: SimConfig | None
    pde_rel: float = 1e-3
    mc_sigmas: float = 3.0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        return scenario_hash(self.raw)


def scenario_hash(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _line_of(text: str, path: str) -> int | None:
    """Best-effort source line of a dotted field path in the JSON text."""
    if not text or not path:
        return None
    pos = 0
    for part in path.split("."):
        if part.isdigit():
            continue
        hit = text.find(f'"{part}"', pos)
        if hit < 0:
            break
        pos = hit
    return text.count("\n", 0, pos) + 1


def _section(raw: dict, name: str, required: bool = False) -> dict:
    sec = raw
    for part in name.split("."):
        if not isinstance(sec, dict) or part not in sec:
            if required:
                raise ScenarioError(name, "missing section")
            return {}
        sec = sec[part]
    if not isinstance(sec, dict):
        raise ScenarioError(name, "must be an object")
    return sec


def _check_fields(raw: dict) -> None:
    for sec, allowed in _FIELDS.items():
        obj = raw if sec == "" else _section(raw, sec)
        for key in obj:
            if key not in allowed:
                raise ScenarioError(f"{sec}.{key}" if sec else key, "unknown field")
        for key in _REQUIRED.get(sec, ()):
            if (sec == "" or obj) and key not in obj:
                raise ScenarioError(f"{sec}.{key}" if sec else key, "missing required field")


def _build(path: str, fn, *args, **kwargs):
    """Construct a model object, prefixing validation errors with ``path``."""
    try:
        return fn(*args, **kwargs)
    except ValidationError as exc:
        raise ScenarioError(f"{path}.{exc.path}", exc.message) from None
    except (TypeError, ValueError) as exc:
        raise ScenarioError(path, str(exc)) from None


def _schedule(path: str, x):
    if x is None:
        return None
    if isinstance(x, (int, float)):
        return PiecewiseConstant.constant(float(x))
    if isinstance(x, dict) and set(x) <= {"knots", "values"}:
        return _build(path, PiecewiseConstant, tuple(x.get("knots", ())), tuple(x.get("values", ())))
    raise ScenarioError(path, "schedule must be a number or {knots, values}")


def parse_scenario(raw: dict, text: str = "") -> Scenario:
    """Validate a decoded scenario document. Errors carry the field path."""
    try:
        return _parse(raw)
    except ScenarioError as exc:
        if exc.line is None and text:
            raise ScenarioError(exc.path, str(exc).split(": ", 1)[-1], _line_of(text, exc.path)) from None
        raise


def _parse(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    _check_fields(raw)
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {raw['schema_version']!r}")

    m = raw["market"]
    market = _build("market", MarketParams, m["r"], m["mu"], m["sigma"], m["delta"], m["spot"])

    p = raw["payoff"]
    payoff = _build("payoff", PayoffSpec, p["kind"], p["maturity"], strike=p.get("strike", 0.0),
                    breakpoints=tuple(tuple(b) for b in p.get("breakpoints", ())))

    def party(name):
        q = raw["parties"][name]
        return _build(f"parties.{name}", CounterpartyParams, q["lambda"], q["bond_recovery"],
                      q["derivative_recovery"], q.get("bond_price", 1.0))

    if set(raw["parties"]) != {"A", "B"}:
        raise ScenarioError("parties", "need both A and B")
    cpty_A, cpty_B = party("A"), party("B")

    c = _section(raw, "collateral")
    mode = c.get("mode", "none")
    if mode not in [m.value for m in CollateralMode]:
        raise ScenarioError("collateral.mode", f"unknown mode {mode!r}")
    if mode == "fixed":
        collateral = _build("collateral", CollateralSpec.fixed, _schedule("collateral.C", c.get("C", 0.0)),
                            _schedule("collateral.I_A", c.get("I_A")),
                            _schedule("collateral.I_B", c.get("I_B")), r_C=c.get("r_C", 0.0))
        if "netted" in c and c["netted"] != collateral.netted:
            raise ScenarioError("collateral.netted", "netted must be false exactly when initial margins are set")
    else:
        collateral = _build("collateral", CollateralSpec, mode, k=c.get("k", 0.0), r_C=c.get("r_C", 0.0))

    closeout_name = raw.get("closeout", "proportional")
    try:
        closeout = CloseoutRule(closeout_name)
    except ValueError:
        raise ScenarioError("closeout", f"unknown closeout rule {closeout_name!r}") from None

    engines = raw["engines"]
    if not isinstance(engines, list) or not engines:
        raise ScenarioError("engines", "must be a non-empty list")
    for i, e in enumerate(engines):
        if e not in ENGINES:
            raise ScenarioError(f"engines.{i}", f"unknown engine {e!r}")
    linear = _linear(closeout, collateral, payoff)
    if "analytic" in engines and not linear:
        raise ScenarioError("engines", "analytic engine needs a recovery-proportional closeout")

    def config(name, cls, needed):
        sec = _section(raw, name)
        if not sec and name not in raw:
            if needed:
                raise ScenarioError(name, f"section required by engine {needed}")
            return None
        return _build(name, cls, **sec)

    grid = config("grid", GridSpec, "pde" if "pde" in engines else None)
    mc = config("mc", McConfig, "mc" if "mc" in engines else None)
    sim = config("sim", SimConfig, "sim" if "sim" in engines else None)
    if grid is None and ("sim" in engines or ("mc" in engines and not linear)):
        raise ScenarioError("grid", "section required to build the price surface")

    s = _section(raw, "strategy")
    kind = s.get("kind", "full")
    if kind not in ("full", "collateralized", "bk13"):
        raise ScenarioError("strategy.kind", f"unknown strategy {kind!r}")
    strategy = _build("strategy", StrategySpec, kind, k=s.get("k", 0.0), epsilon=s.get("epsilon", 0.0),
                      r_C=s.get("r_C"))

    ma_spec = _section(raw, "money_account")
    money_account = None
    if "preset" in ma_spec and "components" in ma_spec:
        raise ScenarioError("money_account", "give either components or preset")
    if "components" in ma_spec:
        comps = ma_spec["components"]
        for i, comp in enumerate(comps):
            if set(comp) - {"name", "weight", "rate"}:
                raise ScenarioError(f"money_account.components.{i}", "unknown field")
        money_account = _build("money_account", MoneyAccountStructure,
                               tuple((q["name"], q["weight"], q["rate"]) for q in comps))
    elif "preset" in ma_spec:
        if ma_spec["preset"] not in ("piterbarg", "burgard_kjaer"):
            raise ScenarioError("money_account.preset", f"unknown preset {ma_spec['preset']!r}")
    elif ma_spec:
        raise ScenarioError("money_account", "needs components or preset")

    tol = _section(raw, "tolerances")
    return Scenario(
        id=str(raw["id"]), market=market, payoff=payoff, cpty_A=cpty_A, cpty_B=cpty_B,
        collateral=collateral, closeout=closeout, money_account=money_account, ma_spec=ma_spec,
        strategy=strategy, engines=tuple(engines), grid=grid, mc=mc, sim=sim,
        pde_rel=float(tol.get("pde_rel", 1e-3)), mc_sigmas=float(tol.get("mc_sigmas", 3.0)),
        raw=raw,
    )


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"invalid JSON: {exc.msg}", exc.lineno) from None
    return parse_scenario(raw, text)


def _linear(closeout: CloseoutRule, collateral: CollateralSpec, payoff: PayoffSpec) -> bool:
    """True if the default loss is proportional to V, so the price has a closed form."""
    if collateral.mode is CollateralMode.FIXED:
        return False
    if closeout is CloseoutRule.PROPORTIONAL:
        return True
    if closeout is CloseoutRule.COLLATERALIZED:
        return collateral.mode is CollateralMode.NONE or payoff.is_nonnegative()
    return False


def _is_linear(sc: Scenario) -> bool:
    return _linear(sc.closeout, sc.collateral, sc.payoff)


def _surface(sc: Scenario):
    if _is_linear(sc):
        return solve_default_risky(sc.market, sc.payoff, sc.grid, sc.cpty_A, sc.cpty_B, sc.collateral)
    return solve_general_closeout(sc.market, sc.payoff, sc.grid, sc.cpty_A, sc.cpty_B, sc.closeout,
                                  sc.collateral)


def _money_account(sc: Scenario, surface) -> MoneyAccountStructure:
    if sc.money_account is not None:
        return sc.money_account
    r = sc.market.r
    if not sc.ma_spec:
        return MoneyAccountStructure.risk_free(r)
    S = sc.market.spot
    v, d = surface.interpolate(0.0, S, fields=("values", "deltas"))
    V, D = float(v), float(d)
    C = float(sc.collateral.posted("A", 0.0, V))
    z_B = (1 - sc.cpty_B.derivative_recovery) / max(1 - sc.cpty_B.bond_recovery, 1e-300)
    state = PresetState(V=V, delta=D, S=S, C=C, dV_B=(sc.cpty_B.derivative_recovery - 1.0) * V,
                        bond_short=z_B * V)
    try:
        return preset_money_account(sc.ma_spec["preset"], state, r=r, r_R=sc.ma_spec.get("r_R"),
                                    r_F=sc.ma_spec.get("r_F"), r_C=sc.ma_spec.get("r_C"))
    except ValueError as exc:
        raise ScenarioError("money_account", str(exc)) from None


def run_engines(sc: Scenario, engines=None) -> tuple[dict, dict]:
    """Run the requested engines; returns (report, artifacts)."""
    engines = tuple(engines or sc.engines)
    results: dict = {}
    artifacts: dict = {}
    surface = None
    S0, T = sc.market.spot, sc.payoff.maturity

    bk13 = sc.strategy.kind.value == "bk13"
    if ("pde" in engines or ("sim" in engines and not bk13)
            or ("mc" in engines and not _is_linear(sc))):
        surface = _surface(sc)
    if "pde" in engines:
        results["pde"] = {"price": float(surface.value_at(0.0, S0)), "stderr": 0.0,
                          "method": surface.label}
        artifacts["surface.csv"] = surface.to_csv()
        pts = [SurfacePoint(0.0, float(s), float(v), float(d))
               for s, v, d in zip(surface.spots, surface.values[0], surface.deltas[0])]
        k = sc.collateral.k if sc.collateral.mode is CollateralMode.PROPORTIONAL else 0.0
        artifacts["weights.csv"] = weights_to_csv(
            [collateralized_weights(p, sc.cpty_A, sc.cpty_B, k) for p in pts])
    if "analytic" in engines:
        k = sc.collateral.k if sc.collateral.mode is CollateralMode.PROPORTIONAL else 0.0
        results["analytic"] = {"price": float(effective_hazard_price(sc.market, sc.payoff, sc.cpty_A,
                                                                     sc.cpty_B, k)),
                               "stderr": 0.0, "method": "effective_hazard"}
    if "mc" in engines:
        if _is_linear(sc):
            k = sc.collateral.k if sc.collateral.mode is CollateralMode.PROPORTIONAL else 0.0
            est = mc_effective_discount(sc.market, sc.payoff, sc.cpty_A, sc.cpty_B, k, sc.mc)
        else:
            est = mc_loss_integral(sc.market, sc.payoff, sc.cpty_A, sc.cpty_B, sc.collateral, surface,
                                   sc.mc, sc.closeout)
        results["mc"] = {"price": est.mean, "stderr": est.std_error, "method": est.estimator,
                         "n_paths": est.n_paths, "seed": est.seed}
    if "sim" in engines:
        if bk13:
            sim_surface = bk13_surface(sc.market, sc.payoff, sc.grid, sc.cpty_A, sc.cpty_B,
                                       k=sc.strategy.k, r_C=sc.strategy.r_C)
        else:
            sim_surface = surface
        ma = _money_account(sc, sim_surface)
        rep = simulate(sc.market, sc.payoff, sc.cpty_A, sc.cpty_B, sc.strategy, ma, sim_surface, sc.sim)
        rec = rep.to_record()
        rec["money_account"] = [[c.name, c.weight, c.rate] for c in ma.components]
        rec["spread"] = money_account_spread(ma, sc.market.r)[1]
        results["sim"] = rec
        if sc.sim.trace_paths:
            artifacts["sim_trace.csv"] = rep.trace_csv()
        # the simulated strategy's positions take precedence over the pricing hedge
        artifacts.setdefault("surface.csv", sim_surface.to_csv())
        artifacts["weights.csv"] = strategy_weights_csv(sc.strategy, sc.market, sc.cpty_A, sc.cpty_B,
                                                        sim_surface)

    report = {
        "schema_version": SCHEMA_VERSION,
        "scenario_id": sc.id,
        "scenario_hash": sc.hash,
        "version": __version__,
        "engines": {e: __version__ for e in engines},
        "seeds": {"mc": sc.mc.seed if sc.mc else None, "sim": sc.sim.seed if sc.sim else None},
        "results": results,
    }
    report["comparison"] = compare(results, sc.pde_rel, sc.mc_sigmas)
    return report, artifacts


def compare(results: dict, pde_rel: float = 1e-3, mc_sigmas: float = 3.0) -> dict:
    """Pairwise price deviations in units of the combined tolerance."""
    priced = [e for e in ("pde", "analytic", "mc") if e in results]
    pairs = []
    for i, a in enumerate(priced):
        for b in priced[i + 1:]:
            pa, pb = results[a]["price"], results[b]["price"]
            ref = max(abs(pa), abs(pb), 1e-12)
            tol = 0.0
            if "pde" in (a, b):
                tol += pde_rel * ref
            if "mc" in (a, b):
                tol += mc_sigmas * results["mc"]["stderr"]
            if tol == 0.0:
                tol = 1e-10 * max(ref, 1.0)
            pairs.append({"a": a, "b": b, "deviation": abs(pa - pb), "tolerance": tol,
                          "ratio": abs(pa - pb) / tol})
    worst = max((p["ratio"] for p in pairs), default=0.0)
    return {"pairs": pairs, "max_ratio": worst, "pass": worst <= 1.0}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _table_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["engine", "price", "stderr"])
    for e, r in sorted(report["results"].items()):
        if "price" in r:
            w.writerow([e, repr(r["price"]), repr(r["stderr"])])
        else:
            w.writerow([e, repr(r["mean_drift"]), repr(r["drift_std_error"])])
    return buf.getvalue()


def _emit(report: dict, artifacts: dict, out: str | None, fmt: str) -> None:
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(_dumps(report))
        for name, text in artifacts.items():
            (d / name).write_text(text)
    sys.stdout.write(_dumps(report) if fmt == "json" else _table_csv(report))


def _set_path(raw: dict, path: str, value: float) -> dict:
    raw = copy.deepcopy(raw)
    parts = path.split(".")
    obj = raw
    try:
        for part in parts[:-1]:
            obj = obj[int(part)] if isinstance(obj, list) else obj[part]
        last = int(parts[-1]) if isinstance(obj, list) else parts[-1]
        old = obj[last]
    except (KeyError, IndexError, ValueError, TypeError):
        raise ScenarioError(path, "parameter path does not exist") from None
    if isinstance(old, bool) or not isinstance(old, (int, float)):
        raise ScenarioError(path, "parameter path does not address a numeric field")
    obj[last] = value
    return raw


def _sweep(path: str, param: str, values: list[float], out: str | None) -> int:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"invalid JSON: {exc.msg}", exc.lineno) from None
    parse_scenario(raw, text)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "engine", "price", "stderr"])
    ok = True
    for v in values:
        sc = parse_scenario(_set_path(raw, param, v), text)
        report, _ = run_engines(sc)
        ok &= report["comparison"]["pass"]
        for e, r in sorted(report["results"].items()):
            price, se = (r["price"], r["stderr"]) if "price" in r else (r["mean_drift"], r["drift_std_error"])
            w.writerow([param, repr(float(v)), e, repr(price), repr(se)])
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "sweep.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskyderiv", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("price", "run the scenario's engines"), ("simulate", "run the replication simulator")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("scenario")
        p.add_argument("--out")
        p.add_argument("--format", choices=("json", "csv"), default="json")
    p = sub.add_parser("sweep", help="rerun the scenario over values of one parameter")
    p.add_argument("scenario")
    p.add_argument("--param", required=True, help="dotted path, e.g. collateral.k")
    p.add_argument("--values", required=True, help="comma-separated numbers")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv",), default="csv")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            try:
                values = [float(x) for x in args.values.split(",") if x.strip()]
            except ValueError:
                raise ScenarioError("--values", "must be comma-separated numbers") from None
            if not values or not all(math.isfinite(x) for x in values):
                raise ScenarioError("--values", "must be finite numbers")
            return _sweep(args.scenario, args.param, values, args.out)
        sc = load_scenario(args.scenario)
        if args.command == "simulate":
            if sc.sim is None:
                raise ScenarioError("sim", "section required by engine sim")
            if sc.grid is None:
                raise ScenarioError("grid", "section required to build the price surface")
            report, artifacts = run_engines(sc, ("sim",))
        else:
            report, artifacts = run_engines(sc)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(report, artifacts, args.out, args.format)
    return 0 if report["comparison"]["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
