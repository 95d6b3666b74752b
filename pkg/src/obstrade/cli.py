"""Command-line front end: `obstrade <command> [options]`.

Every command writes a CSV table whose first line is a schema header
(`# schema: obstrade.<command>/1`); floats carry 12 significant digits.
Exit codes: 0 success, 2 invalid input, 3 solver failure.

Tables
  bound          index,param,value_param,method,value
  measure-optimal  JSON {"povm": ..., "report": {...}} (CSV report with --output *.csv)
  metrology      index,param,value_param,quantity,value
  experiment     index,param,value_param,repeat,observable,eps,eps_sq_raw,eps_min,eps_max,eps_direct,e0,relaxation,radius,clipped
  oracle         index,param,value_param,e0,oracle,gap,restarts
  sdp-selftest   case,value,expected,error,kkt,status
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import analytic, core, experiment, io, metrology, sdp, sdpbounds
from .core import ValidationError
from .models import MODELS, Problem
from .sdp import SdpSettings, SolverError

SCHEMA_VERSION = 1


@dataclass
class Sweep:
    name: str
    start: float
    stop: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("sweep steps must be >= 1")

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)

    @classmethod
    def parse(cls, text: str) -> "Sweep":
        parts = text.split(":")
        if len(parts) != 4:
            raise ValidationError("--sweep takes NAME:START:STOP:STEPS")
        try:
            return cls(parts[0], float(parts[1]), float(parts[2]), int(parts[3]))
        except ValueError as exc:
            raise ValidationError(f"bad --sweep value: {exc}") from exc


@dataclass
class RunConfig:
    command: str
    input: Optional[str] = None
    output: Optional[str] = None
    methods: list = field(default_factory=list)
    sweep: Optional[Sweep] = None
    seed: int = 0
    settings: SdpSettings = field(default_factory=SdpSettings)
    restarts: int = 32
    shots: int = 2000
    repeats: int = 20
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input is not None and not self.input:
            raise ValidationError("input path is empty")
        if self.output is not None and not self.output:
            raise ValidationError("output path is empty")


# ------------------------------------------------------------------ helpers

def _schema(cmd: str) -> str:
    return f"obstrade.{cmd}/{SCHEMA_VERSION}"


def _load_problem_spec(cfg: RunConfig) -> dict:
    if cfg.input is None:
        raise ValidationError(f"{cfg.command} needs --input")
    return io.load_json(cfg.input)


def _points(cfg: RunConfig, spec: dict):
    """[(index, param name, value or None)] for the sweep (single point without one)."""
    if cfg.sweep is None:
        return [(0, "", None)]
    return [(i, cfg.sweep.name, float(v)) for i, v in enumerate(cfg.sweep.values())]


def _check_sweep_name(spec: dict, sweep: Optional[Sweep]):
    if sweep is None:
        return
    if "model" not in spec:
        raise ValidationError("sweeps need a named model problem ({\"model\": ...})")
    want = MODELS[spec["model"]].param if spec["model"] in MODELS else None
    if want is not None and sweep.name != want:
        raise ValidationError(f"model {spec['model']} sweeps parameter {want!r}, not {sweep.name!r}")


def _select(problem: Problem, spec: dict) -> Problem:
    sel = spec.get("select")
    if sel is None:
        return problem
    try:
        xs = tuple(problem.observables[int(i)] for i in sel)
    except (IndexError, ValueError, TypeError) as exc:
        raise ValidationError(f"bad observable selection {sel!r}") from exc
    w = None if problem.weights is None else problem.weights[np.ix_(sel, sel)]
    return Problem(problem.rho, xs, w, problem.label)


def _map(cfg: RunConfig, fn: Callable, items: list) -> list:
    """Evaluate sweep points on a worker pool; results keep the input order."""
    if cfg.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _emit(cfg: RunConfig, text: str):
    if cfg.output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(cfg.output, "w") as fh:
            fh.write(text)


def _pv(v):
    return "" if v is None else v


# ------------------------------------------------------------------ bound

BOUND_METHODS = ("E0", "analytic", "EA", "Ozawa", "Branciard", "closed-form",
                 "pairwise-EA", "pairwise-Ozawa", "pairwise-Branciard", "pairwise-E0")


_METHOD_ALIASES = {m.lower(): m for m in BOUND_METHODS}


def canonical_method(name: str) -> str:
    try:
        return _METHOD_ALIASES[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown method {name!r}; choose from {', '.join(BOUND_METHODS)}") from None


def bound_value(problem: Problem, method: str, settings: SdpSettings) -> float:
    method = canonical_method(method)
    rho, xs, w = problem.rho, problem.observables, problem.weights
    n = len(xs)
    if method == "E0":
        return sdpbounds.bound_e0(rho, xs, w, settings).value
    if method == "analytic":
        return analytic.bound_multi(rho, xs, None, w).value
    if method.startswith("pairwise-"):
        pm = {"EA": "EA", "Ozawa": "ozawa", "Branciard": "branciard", "E0": "E0"}[method.split("-", 1)[1]]
        return analytic.pairwise_sum_bound(rho, xs, w, pm, settings).value
    if n != 2:
        raise ValidationError(f"method {method} needs exactly two observables (use \"select\")")
    wd = np.diag(core.weight_matrix(w, 2))
    if method == "EA":
        return analytic.bound_mixed_pair_EA(rho, xs[0], xs[1], wd[0], wd[1]).value
    if method == "Ozawa":
        return analytic.bound_ozawa_pair(rho, xs[0], xs[1], wd[0], wd[1]).value
    if method == "Branciard":
        return analytic.bound_branciard_pair(rho, xs[0], xs[1], wd[0], wd[1]).value
    if method == "closed-form":
        st = core.as_state(rho)
        if not st.is_pure():
            raise ValidationError("closed-form needs a pure state")
        return analytic.bound_pure_pair_closed_form(st.ket(), xs[0], xs[1], wd[0], wd[1]).value
    raise ValidationError(f"unknown method {method!r}; choose from {', '.join(BOUND_METHODS)}")


def cmd_bound(cfg: RunConfig) -> str:
    spec = _load_problem_spec(cfg)
    _check_sweep_name(spec, cfg.sweep)
    methods = [canonical_method(m) for m in (cfg.methods or ["E0", "analytic"])]

    def point(pt):
        i, name, v = pt
        prob = _select(io.problem_from_json(spec, v), spec)
        return [(i, name, _pv(v), m, bound_value(prob, m, cfg.settings)) for m in methods]

    rows = [r for blk in _map(cfg, point, _points(cfg, spec)) for r in blk]
    return io.csv_text(_schema("bound"), ["index", "param", "value_param", "method", "value"], rows)


# ------------------------------------------------------------------ measure-optimal

def cmd_measure_optimal(cfg: RunConfig) -> str:
    spec = _load_problem_spec(cfg)
    if cfg.sweep is not None:
        raise ValidationError("measure-optimal does not sweep")
    prob = _select(io.problem_from_json(spec), spec)
    st = core.as_state(prob.rho)
    if not st.is_pure():
        raise ValidationError("measure-optimal needs a pure state: for mixed states E_0 is not attained "
                              "in general; use the oracle command for a best-found measurement")
    method = (cfg.methods or ["sdp"])[0]
    wit = sdpbounds.bound_e0(st.rho, prob.observables, prob.weights, cfg.settings)
    if method == "closed-form":
        if len(prob.observables) != 2:
            raise ValidationError("closed-form construction needs two observables")
        wd = np.diag(core.weight_matrix(prob.weights, 2))
        am = sdpbounds.optimal_povm_pure_two(st.ket(), prob.observables[0], prob.observables[1], wd[0], wd[1])
    elif method == "sdp":
        am = sdpbounds.optimal_povm_pure(st.ket(), prob.observables, prob.weights, wit, cfg.settings)
    else:
        raise ValidationError("measure-optimal methods: sdp, closed-form")
    achieved = sdpbounds.achieved_error(st.rho, prob.observables, am, prob.weights)
    report = {"method": method, "bound": wit.value, "achieved": achieved,
              "difference": achieved - wit.value, "outcomes": len(am.povm)}
    if cfg.output and cfg.output.endswith(".csv"):
        return io.csv_text(_schema("measure-optimal"), ["method", "bound", "achieved", "difference", "outcomes"],
                           [[method, wit.value, achieved, achieved - wit.value, len(am.povm)]])
    return io.dumps({"povm": io.povm_to_json(am.povm, am.values), "report": report}) + "\n"


# ------------------------------------------------------------------ metrology

METROLOGY_QUANTITIES = ("analytic", "comparison", "pairwise-Ozawa", "pairwise-EA", "sdp", "norm", "gill-massar")


def _family(spec: dict):
    fams = metrology.builtin_families()
    name = spec.get("family")
    if name not in fams:
        raise ValidationError(f"unknown family {name!r}; choose from {sorted(fams)}")
    fam = fams[name]()
    params = np.asarray(spec.get("params", []), dtype=float)
    if params.size != fam.n_params:
        raise ValidationError(f"{name} takes {fam.n_params} params, got {params.size}")
    free = spec.get("free")
    copies = int(spec.get("copies", 1))
    return fam, params, free, copies


def metrology_rows(spec: dict, quantities, settings: SdpSettings, sweep_name: str = "", value=None):
    fam, params, free, copies = _family(spec)
    if sweep_name:
        if not (sweep_name.startswith("x") and sweep_name[1:].isdigit()):
            raise ValidationError("metrology sweeps name a parameter as x<index>, e.g. x0")
        j = int(sweep_name[1:])
        if j >= params.size:
            raise ValidationError(f"parameter index {j} out of range")
        params = params.copy()
        params[j] = value
    if free is not None:
        fam = metrology.restrict(fam, [int(i) for i in free], params)
        point = params[[int(i) for i in free]]
    else:
        point = params
    fam = metrology.collectivize(fam, copies)
    rho = fam.state(point).rho
    slds = fam.slds(point)
    f_q = metrology.qfi_matrix(rho, slds)
    out = []
    norm_cache = {}

    def analytic_parts():
        if not norm_cache:
            b, t, _ = metrology.metrology_analytic_for_state(rho, slds)
            norm_cache.update(bound=b, norm=t)
        return norm_cache

    for q in quantities:
        if q == "analytic":
            out.append((q, analytic_parts()["bound"]))
        elif q == "norm":
            out.append((q, analytic_parts()["norm"]))
        elif q == "comparison":
            n = len(slds)
            t = analytic_parts()["norm"]
            out.append((q, float(n - t ** 2 / (2 * (n - 1))) if n > 1 else float(n)))
        elif q == "pairwise-Ozawa":
            out.append((q, metrology.metrology_pairwise_bound(rho, slds, "ozawa")))
        elif q == "pairwise-EA":
            out.append((q, metrology.metrology_pairwise_bound(rho, slds, "EA")))
        elif q == "sdp":
            out.append((q, metrology.metrology_bound_sdp(rho, slds, settings)))
        elif q == "gill-massar":
            out.append((q, float(rho.shape[0] - 1)))
        elif q == "qfi":
            out.extend((f"qfi[{a},{b}]", float(f_q[a, b])) for a in range(len(slds)) for b in range(len(slds)))
        else:
            raise ValidationError(f"unknown metrology quantity {q!r}; choose from "
                                  f"{', '.join(METROLOGY_QUANTITIES + ('qfi',))}")
    return out


def cmd_metrology(cfg: RunConfig) -> str:
    spec = _load_problem_spec(cfg)
    quantities = cfg.methods or ["analytic", "comparison", "sdp"]

    def point(pt):
        i, name, v = pt
        return [(i, name, _pv(v), q, val) for q, val in metrology_rows(spec, quantities, cfg.settings, name, v)]

    rows = [r for blk in _map(cfg, point, _points(cfg, spec)) for r in blk]
    return io.csv_text(_schema("metrology"), ["index", "param", "value_param", "quantity", "value"], rows)


# ------------------------------------------------------------------ experiment

def cmd_experiment(cfg: RunConfig) -> str:
    spec = _load_problem_spec(cfg)
    _check_sweep_name(spec, cfg.sweep)
    counts_out = []
    cols = ["index", "param", "value_param", "repeat", "observable", "eps", "eps_sq_raw", "eps_min", "eps_max",
            "eps_direct", "e0", "relaxation", "radius", "clipped"]
    if "counts" in spec:
        # externally produced data: estimate only
        table = experiment.CountTable.from_json(spec["counts"])
        xs = io.observables_from_json(spec["observables"])
        ei = experiment.estimate_errors(table, xs, settings=cfg.settings)
        nan = float("nan")
        rows = [(0, "", "", 0, j + 1, ei.eps[j], ei.eps_sq_raw[j], ei.eps_min[j], ei.eps_max[j], nan, nan,
                 ei.relaxation[j], ei.radius[j], bool(ei.clipped[j])) for j in range(table.n)]
        return io.csv_text(_schema("experiment"), cols, rows)

    pts = _points(cfg, spec)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(pts))

    def point(arg):
        (i, name, v), ss = arg
        prob = _select(io.problem_from_json(spec, v), spec)
        if "povm" in spec:
            povm, _ = io.povm_from_json(spec["povm"])
        else:
            povm = experiment.setting_povm(prob.rho, prob.observables, prob.weights,
                                           restarts=min(cfg.restarts, 8), seed=cfg.seed, settings=cfg.settings)
        e0 = sdpbounds.bound_e0(prob.rho, prob.observables, prob.weights, cfg.settings).value
        direct = experiment.direct_errors(prob.rho, prob.observables, povm)
        out, tabs = [], []
        for r, rs in enumerate(ss.spawn(cfg.repeats)):
            tab = experiment.simulate_table(prob.rho, prob.observables, povm, cfg.shots, rs)
            tabs.append(tab.to_json())
            ei = experiment.estimate_errors(tab, prob.observables, settings=cfg.settings)
            for j in range(tab.n):
                out.append((i, name, _pv(v), r, j + 1, ei.eps[j], ei.eps_sq_raw[j], ei.eps_min[j], ei.eps_max[j], direct[j], e0,
                            ei.relaxation[j], ei.radius[j], bool(ei.clipped[j])))
        return out, tabs

    results = _map(cfg, point, list(zip(pts, seeds)))
    rows = [r for blk, _ in results for r in blk]
    for _, tabs in results:
        counts_out.extend(tabs)
    if cfg.extra.get("counts_output"):
        with open(cfg.extra["counts_output"], "w") as fh:
            json.dump(counts_out, fh)
    return io.csv_text(_schema("experiment"), cols, rows)


# ------------------------------------------------------------------ oracle

def cmd_oracle(cfg: RunConfig) -> str:
    spec = _load_problem_spec(cfg)
    _check_sweep_name(spec, cfg.sweep)
    k = spec.get("num_outcomes")

    def point(pt):
        i, name, v = pt
        prob = _select(io.problem_from_json(spec, v), spec)
        e0 = sdpbounds.bound_e0(prob.rho, prob.observables, prob.weights, cfg.settings).value
        res = sdpbounds.brute_force_min_error(prob.rho, prob.observables, prob.weights, k,
                                              restarts=cfg.restarts, seed=cfg.seed)
        return (i, name, _pv(v), e0, res.best_error, res.best_error - e0, cfg.restarts), res

    results = _map(cfg, point, _points(cfg, spec))
    if cfg.extra.get("povm_output"):
        with open(cfg.extra["povm_output"], "w") as fh:
            json.dump([io.povm_to_json(r.best_povm, r.best_assignment) for _, r in results], fh)
    return io.csv_text(_schema("oracle"), ["index", "param", "value_param", "e0", "oracle", "gap", "restarts"],
                       [row for row, _ in results])


# ------------------------------------------------------------------ sdp-selftest

def cmd_sdp_selftest(cfg: RunConfig) -> str:
    rows = sdp.self_test(int(cfg.extra.get("count", 50)), cfg.seed, cfg.settings)
    bad = [r for r in rows if r[5] != "optimal" or r[4] >= 1e-7 or (r[3] == r[3] and r[3] >= 1e-8)]
    text = io.csv_text(_schema("sdp-selftest"), ["case", "value", "expected", "error", "kkt", "status"], rows)
    if bad:
        cfg.extra["failed"] = [r[0] for r in bad]
    return text


COMMANDS = {
    "bound": cmd_bound,
    "measure-optimal": cmd_measure_optimal,
    "metrology": cmd_metrology,
    "experiment": cmd_experiment,
    "oracle": cmd_oracle,
    "sdp-selftest": cmd_sdp_selftest,
}


# ------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="obstrade", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--input", help="problem / family / count-table JSON")
    p.add_argument("--output", help="output path (default stdout)")
    p.add_argument("--method", help="comma-separated methods or quantities")
    p.add_argument("--sweep", help="NAME:START:STOP:STEPS")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol-gap", type=float, default=SdpSettings.tol_gap)
    p.add_argument("--tol-feas", type=float, default=SdpSettings.tol_feas)
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--shots", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--count", type=int, default=50, help="random problems for sdp-selftest")
    p.add_argument("--counts-output", help="experiment: write sampled count tables (JSON)")
    p.add_argument("--povm-output", help="oracle: write best POVMs (JSON)")
    p.add_argument("--plot-script", help="write a gnuplot script for the emitted CSV")
    return p


def config_from_args(ns) -> RunConfig:
    if ns.restarts < 1 or ns.shots < 1 or ns.repeats < 1:
        raise ValidationError("--restarts, --shots and --repeats must be >= 1")
    return RunConfig(
        command=ns.command, input=ns.input, output=ns.output,
        methods=[m.strip() for m in ns.method.split(",") if m.strip()] if ns.method else [],
        sweep=Sweep.parse(ns.sweep) if ns.sweep else None, seed=ns.seed,
        settings=SdpSettings(tol_feas=ns.tol_feas, tol_gap=ns.tol_gap),
        restarts=ns.restarts, shots=ns.shots, repeats=ns.repeats,
        workers=experiment.worker_count(),
        extra={"count": ns.count, "counts_output": ns.counts_output, "povm_output": ns.povm_output},
    )


def gnuplot_script(cfg: RunConfig) -> str:
    data = cfg.output or "data.csv"
    key = {"bound": "method", "metrology": "quantity"}.get(cfg.command)
    col = {"bound": 5, "metrology": 5, "oracle": 5, "experiment": 6}.get(cfg.command, 2)
    lines = ["set datafile separator ','", "set key autotitle columnhead", "set xlabel 'parameter'"]
    if key:
        lines.append(f"# one curve per {key}; filter rows with awk or edit below")
    lines.append(f"plot '{data}' every ::2 using 3:{col} with linespoints")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns)
        text = COMMANDS[cfg.command](cfg)
        _emit(cfg, text)
        if ns.plot_script:
            with open(ns.plot_script, "w") as fh:
                fh.write(gnuplot_script(cfg))
    except ValidationError as exc:
        print(f"obstrade: invalid input: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"obstrade: solver failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"obstrade: {exc}", file=sys.stderr)
        return 2
    if cfg.extra.get("failed"):
        print(f"obstrade: self-test failures: {', '.join(cfg.extra['failed'])}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
