"""Scenario runner.

    cohomlab run <scenario.json | preset> [--out DIR] [--seed N] [--threads K]
    cohomlab validate <scenario.json | preset>
    cohomlab list-presets

Reports are JSON with sorted keys and no wall-clock data, so two runs with
the same scenario and seed are byte-identical; timings go to a separate
``<name>.timing.json``.  Series are written as CSV with columns
(n, value, tail_bound).  Exit codes: 0 success, 2 when a scenario expecting
a coboundary gets the verdict NotACoboundary, 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import CohomlabError, InvalidParameter, NotACoboundary, SchemaError

OUT_ENV = "COHOMLAB_OUT"
COMMANDS = ["solve", "detect", "decompose-seq", "gibbs", "sinai-reduce", "triplet",
            "signature", "counterexample", "verify"]

_FN = {
    "type": "object",
    "properties": {
        "const": {"type": "number"},
        "cos": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                           "minItems": 2, "maxItems": 2}},
        "sin": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                           "minItems": 2, "maxItems": 2}},
    },
    "additionalProperties": False,
}
_MAP = {
    "type": "object",
    "properties": {
        "type": {"enum": ["linear", "piecewise_linear"]},
        "k": {"type": "integer", "minimum": 2},
        "b": {"type": ["number", "string"]},
        "branches": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                "minItems": 4, "maxItems": 4}},
    },
    "required": ["type"],
    "additionalProperties": False,
}
_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "expect": {"enum": ["Coboundary", "NotACoboundary", None]},
        "base": {"type": "object", "properties": {"kind": {"enum": [
            "FiniteCycle", "CircleRotation", "IidSymbols", "MarkovSymbols"]}},
                 "required": ["kind"]},
        "window": {"type": "integer", "minimum": 1},
        "maps": {
            "type": "object",
            "properties": {
                "backend": {"enum": ["fourier", "ulam"]},
                "N": {"type": "integer", "minimum": 8},
                "family": {"type": "object", "additionalProperties": _MAP},
                "threshold": {"type": "number"},
            },
            "required": ["family"],
            "additionalProperties": False,
        },
        "observable": {
            "type": "object",
            "properties": {
                "type": {"enum": ["planted", "explicit"]},
                "functions": {"type": "object", "additionalProperties": _FN},
            },
            "required": ["type", "functions"],
            "additionalProperties": False,
        },
        "sft": {
            "type": "object",
            "properties": {
                "matrices": {"type": "object", "additionalProperties": _MATRIX},
                "potentials": {"type": "object", "additionalProperties": _MATRIX},
                "window": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "M": {"type": "integer", "minimum": 1},
            },
            "required": ["potentials", "window"],
            "additionalProperties": False,
        },
        "tolerances": {"type": "object", "additionalProperties": {"type": "number", "exclusiveMinimum": 0}},
        "pipeline": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"command": {"enum": COMMANDS}, "params": {"type": "object"}},
                "required": ["command"],
                "additionalProperties": False,
            },
        },
        "outputs": {"type": "object", "properties": {"dir": {"type": "string"}}},
    },
    "required": ["name", "pipeline"],
    "additionalProperties": False,
}


# ----------------------------------------------------------------------------
# loading and validation


def preset_names() -> list[str]:
    d = resources.files("cohomlab") / "presets"
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".json"))


def _resolve(path_or_name: str) -> Path | None:
    p = Path(path_or_name)
    if p.exists():
        return p
    name = path_or_name[:-5] if path_or_name.endswith(".json") else path_or_name
    if name in preset_names():
        return Path(str(resources.files("cohomlab") / "presets" / f"{name}.json"))
    return None


def load_scenario(path_or_name: str) -> dict:
    p = _resolve(path_or_name)
    if p is None:
        raise SchemaError(f"no scenario file or preset named {path_or_name!r}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON in {p}: {exc}") from exc
    validate_scenario(data)
    return data


def validate_scenario(data) -> None:
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise SchemaError(f"field {where}: {exc.message}") from exc
    needs_interval = {"solve", "detect", "decompose-seq", "triplet", "signature", "verify"}
    cmds = {s["command"] for s in data["pipeline"]}
    if cmds & needs_interval:
        for key in ("base", "maps", "observable"):
            if key not in data:
                raise SchemaError(f"field {key}: required by {sorted(cmds & needs_interval)}")
    if cmds & {"gibbs", "sinai-reduce"} and "sft" not in data:
        raise SchemaError("field sft: required by gibbs/sinai-reduce")


# ----------------------------------------------------------------------------
# building objects from the scenario


def _function(spec: dict, backend: str, N: int):
    from .fiberspace import FourierFunction, UlamFunction

    const = float(spec.get("const", 0.0))
    cos = [(int(k), float(a)) for k, a in spec.get("cos", [])]
    sin = [(int(k), float(a)) for k, a in spec.get("sin", [])]
    if backend == "fourier":
        f = FourierFunction.constant(const)
        for k, a in cos:
            f = f + FourierFunction.cos(k, a)
        for k, a in sin:
            f = f + FourierFunction.sin(k, a)
        return f

    def fn(x):
        out = np.full_like(x, const, dtype=float)
        for k, a in cos:
            out += a * np.cos(2 * np.pi * k * x)
        for k, a in sin:
            out += a * np.sin(2 * np.pi * k * x)
        return out

    return UlamFunction.from_function(fn, N)


def _map(spec: dict):
    from .transfer import LinearFullBranch, PiecewiseLinearMap

    if spec["type"] == "linear":
        b = spec.get("b", 0)
        return LinearFullBranch(int(spec["k"]), Fraction(b) if isinstance(b, str) else b)
    return PiecewiseLinearMap([tuple(br) for br in spec["branches"]])


def _keyed(table: dict, label, threshold=None):
    """Look up a per-label entry; continuous labels use 'below'/'above' a threshold."""
    if threshold is not None:
        key = "below" if float(label) < threshold else "above"
        return table[key]
    key = str(label)
    if key in table:
        return table[key]
    if "default" in table:
        return table["default"]
    raise InvalidParameter(f"no entry for fiber label {label!r}")


class Context:
    """Objects shared by the steps of one scenario."""

    def __init__(self, sc: dict, seed: int):
        self.sc = sc
        self.seed = seed
        self._problem = None
        self._solution = None
        self._state = None

    # interval systems -------------------------------------------------------
    @property
    def backend(self):
        return self.sc.get("maps", {}).get("backend", "fourier")

    @property
    def N(self):
        return int(self.sc.get("maps", {}).get("N", 1024))

    def orbit(self, N):
        from .driving import base_from_config, materialize

        return materialize(base_from_config(self.sc["base"]), 0, N)

    def family(self):
        from .transfer import MapFamily

        m = self.sc["maps"]
        thr = m.get("threshold")
        maps = {}

        def get(label):
            key = ("below" if float(label) < thr else "above") if thr is not None else label
            if key not in maps:
                maps[key] = _map(_keyed(m["family"], label, thr))
            return maps[key]

        return MapFamily(get, self.backend, self.N)

    def H_fn(self, system):
        obs = self.sc["observable"]
        thr = self.sc["maps"].get("threshold")
        cache = {}

        def H(i):
            if i not in cache:
                spec = _keyed(obs["functions"], system.label(i), thr)
                cache[i] = _function(spec, self.backend, self.N)
            return cache[i]

        return H

    def observable(self, system):
        from .livsic import planted_observable

        H = self.H_fn(system)
        if self.sc["observable"]["type"] == "planted":
            return planted_observable(system, H), H
        return H, None

    def problem(self):
        from .livsic import CoboundaryProblem
        from .transfer import FiberedSystem

        if self._problem is None:
            window = int(self.sc.get("window", 200))
            system = FiberedSystem.from_orbit(self.orbit(window), self.family())
            F, H = self.observable(system)
            self._problem = (CoboundaryProblem(system, F), H)
        return self._problem

    # symbolic systems -------------------------------------------------------
    def state(self):
        from .symbolic import SftSpec, gibbs

        if self._state is None:
            s = self.sc["sft"]
            lo, hi = s["window"]
            pots = {k: np.asarray(v, dtype=float) for k, v in s["potentials"].items()}
            mats = {k: np.asarray(v, dtype=np.int8) for k, v in s.get("matrices", {}).items()}
            if "base" in self.sc:
                orbit = self.orbit(max(abs(lo), abs(hi)) + 400)
                label = lambda t: str(orbit.label(t))  # noqa: E731
            else:
                label = lambda t: "default"  # noqa: E731
            d = len(next(iter(pots.values())))

            def matrix(t):
                return _keyed(mats, label(t)) if mats else np.ones((d, d), dtype=np.int8)

            spec = SftSpec(matrix, None, None, int(s.get("M", 1)))
            self._state = gibbs(spec, lambda t: _keyed(pots, label(t)), lo, hi)
        return self._state


# ----------------------------------------------------------------------------
# steps


def _csv(path: Path, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "value", "tail_bound"])
        for n, v, t in rows:
            w.writerow([int(n), repr(float(v)), repr(float(t))])


def step_solve(ctx: Context, params: dict, out: dict):
    from .livsic import solve

    problem, H = ctx.problem()
    fibers = params.get("fibers")
    res = solve(problem, fibers=fibers, n_var=int(params.get("n_var", 40)), raise_on_failure=False,
                birkhoff=params.get("birkhoff", "auto"), tolerances=ctx.sc.get("tolerances"))
    ctx._solution = res
    d = res.as_dict()
    if H is not None:
        errs = []
        for i, Hi in res.H.items():
            diff = (Hi - H(i))
            errs.append((diff - diff.integral()).sup() if problem.cocycle.trivial
                        else (diff - problem.cocycle.equivariant_integral(i, diff)).sup())
        d["planted_recovery_sup_error"] = float(max(errs))
    out["verdict"] = res.verdict
    return d


def step_detect(ctx: Context, params: dict, out: dict):
    from .livsic import detector_functional

    problem, _ = ctx.problem()
    if ctx._solution is None:
        step_solve(ctx, {}, out)
    res = ctx._solution
    i = int(params.get("fiber", min(res.H)))
    Hc = {k: v for k, v in res.H.items()}
    from .livsic import chi

    return detector_functional(problem, lambda k: Hc[k] if k in Hc else chi(problem, k),
                               float(params.get("t", 0.1)), i, int(params.get("n", 1)))


def step_verify(ctx: Context, params: dict, out: dict):
    from .cocycle import random_corpus

    problem, _ = ctx.problem()
    s = problem.system
    n = int(params.get("fibers", 8))
    rng = np.random.default_rng(ctx.seed)
    worst = 0.0
    for i in range(n):
        op = s.op(i)
        phi, psi = random_corpus(ctx.backend, 2, rng, N=ctx.N, mean_zero=False)
        lhs = (op.apply(phi) * psi).integral()
        rhs = (phi * op.koopman(psi)).integral()
        worst = max(worst, abs(lhs - rhs))
    rep = problem.cocycle.report(range(n))
    rep["duality_max_error"] = float(worst)
    return rep


def step_triplet(ctx: Context, params: dict, out: dict):
    from .spectral import TwistedCocycle, dlambda_dtheta

    problem, _ = ctx.problem()
    i = int(params.get("fiber", 0))
    thetas = params.get("thetas", [0.0, [0.0, 0.1]])
    res = []
    for th in thetas:
        theta = complex(th[0], th[1]) if isinstance(th, list) else float(th)
        res.append(TwistedCocycle(problem, theta).triplet(i).as_dict())
    return {"triplets": res, "dlambda_dtheta_at_0": dlambda_dtheta(problem, i),
            "mean_F": float(np.real(problem.c(i)))}


def step_signature(ctx: Context, params: dict, out: dict, outdir: Path, tag: str):
    from .spectral import coboundary_signature

    problem, _ = ctx.problem()
    t_grid = params.get("t_grid", [0.05, 0.1, 0.2])
    n_max = int(params.get("n_max", 100))
    sig = coboundary_signature(problem, t_grid, n_max, i0=int(params.get("fiber", 0)))
    for t, curve in sig.pop("curves").items():
        _csv(outdir / f"{tag}_t{t:g}.csv", [(n, v, 0.0) for n, v in enumerate(curve)])
    return sig


def step_decompose_seq(ctx: Context, params: dict, out: dict, outdir: Path, tag: str):
    from .livsic import planted_observable
    from .sequential import (SequentialProblem, decompose, limexp_curve, martingale_orthogonality,
                             reconstruct_H, variance_sup_probe)
    from .transfer import FiberedSystem

    J = int(params.get("J", 64))
    orbit = ctx.orbit(J + 2)
    fam = ctx.family()
    system = FiberedSystem.sequential([fam.operator(orbit.label(j)) for j in range(J + 1)])
    system.orbit = orbit
    H = ctx.H_fn(system)
    planted = ctx.sc["observable"]["type"] == "planted"
    F = planted_observable(system, H) if planted else H
    prob = SequentialProblem(system, F, J=J, rebase=bool(params.get("rebase", False)))
    dec = decompose(prob)
    n_var = int(params.get("n_var", J))
    probe = variance_sup_probe(prob, n_var, dec=dec)
    _csv(outdir / f"{tag}_variance.csv", [(n, v, 0.0) for n, v in zip(probe["n"], probe["variance"])])
    res = {"decomposition": dec.as_dict(), "orthogonality": martingale_orthogonality(prob, dec, 2),
           "variance_slope": probe["slope"], "variance_verdict": probe["verdict"],
           "variance_max": max(probe["variance"])}
    if planted:
        n_r, K = int(params.get("reconstruct_at", 5)), int(params.get("K", J - 7))
        if ctx.backend == "fourier":
            pts = (np.arange(256) + 0.5) / 256
            rec = reconstruct_H(prob, dec, n_r, K, pts)
            diff = rec.values - np.real(H(n_r).evaluate(pts))
            res["reconstruction"] = rec.as_dict()
            res["reconstruction_sup_error"] = float(np.max(np.abs(diff - diff.mean())))
        curve = limexp_curve(prob, dec, H, range(0, min(J, 31)))
        res["limexp"] = curve.tolist()
    return res


def step_counterexample(ctx: Context, params: dict, out: dict, outdir: Path, tag: str):
    from .sequential import counterexample_scenario

    r = counterexample_scenario(n=int(params.get("n", 200)), depth=int(params.get("depth", 16)),
                                seed=ctx.seed)
    _csv(outdir / f"{tag}_variation.csv",
         [(n + 1, v, 0.0) for n, v in enumerate(r.pop("variation_curve"))])
    _csv(outdir / f"{tag}_sup.csv", [(n + 1, v, 0.0) for n, v in enumerate(r.pop("sup_curve"))])
    out["verdict"] = r["verdict"]
    return r


def step_gibbs(ctx: Context, params: dict, out: dict):
    from .symbolic import cylinder_mass

    st = ctx.state()
    depth = int(params.get("depth", 8))
    lo, hi = st.req_lo, st.req_hi
    sums = [abs(float(st.measure(t, depth).sum()) - 1) for t in range(lo, hi - depth)]
    eq = []
    for t in range(lo, hi - depth - 1):
        pushed = st.measure(t, depth + 1).sum(axis=0)
        eq.append(float(np.max(np.abs(pushed - st.measure(t + 1, depth)))))
    return {
        "window": [lo, hi],
        "burn_window": [st.lo, st.hi],
        "certificate": st.certificate,
        "max_mass_defect": max(sums),
        "max_equivariance_defect": max(eq),
        "max_eigen_residual": max(st.eigen_residual(t) for t in range(lo, hi)),
        "p0": st.p[lo].tolist(),
        "mass_of_first_word": cylinder_mass(st, lo, [0] * depth),
    }


def step_sinai(ctx: Context, params: dict, out: dict):
    from .symbolic import (holder_test_observable, past_independence, sample_points, sinai_reduce,
                           solve_sft, weighted_symbol_observable)

    st = ctx.state()
    tol = float(params.get("tol", 1e-9))
    spec_f = params.get("observable", "holder_test")
    if spec_f == "holder_test":
        f = holder_test_observable(int(params.get("R", 40)))
    else:
        f = weighted_symbol_observable({int(k): float(v) for k, v in spec_f["weights"].items()},
                                       float(spec_f.get("centre", 0.5)))
    red = sinai_reduce(st.spec, f, tol)
    rng = np.random.default_rng(ctx.seed)
    t = (st.req_lo + st.req_hi) // 2
    pts = sample_points(st, int(params.get("samples", 1000)), t, red.R + 2,
                        red.future_needed + 2, rng)
    resid = red.residual(pts)
    res = red.report()
    res["max_residual"] = float(resid.max())
    res["past_independence"] = past_independence(red, st, pts[:int(params.get("past_points", 20))],
                                                 int(params.get("resamples", 100)), rng)
    if params.get("solve", False):
        try:
            sol = solve_sft(st, f, tol, seed=ctx.seed)
            res["solve"] = sol.diagnostics
            out["verdict"] = "Coboundary"
        except NotACoboundary as exc:
            res["solve"] = {"verdict": "NotACoboundary", "failing": exc.diagnostic,
                            "sigma2": exc.result.solve_result.sigma2}
            out["verdict"] = "NotACoboundary"
    return res


STEPS = {
    "solve": step_solve, "detect": step_detect, "verify": step_verify, "triplet": step_triplet,
    "signature": step_signature, "decompose-seq": step_decompose_seq,
    "counterexample": step_counterexample, "gibbs": step_gibbs, "sinai-reduce": step_sinai,
}
WITH_FILES = {"signature", "decompose-seq", "counterexample"}


# ----------------------------------------------------------------------------
# reports


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if x is None or isinstance(x, (str, int)):
        return x
    return repr(x)


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def run(path_or_name: str, out_dir: str | None = None, seed: int | None = None,
        threads: int | None = None) -> tuple[dict, int]:
    """Run a scenario; returns (report, exit code)."""
    sc = load_scenario(path_or_name)
    seed = int(seed if seed is not None else sc.get("seed", 0))
    outdir = Path(out_dir or sc.get("outputs", {}).get("dir") or os.environ.get(OUT_ENV) or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    ctx = Context(sc, seed)
    report = {
        "scenario": sc,
        "provenance": {"seed": seed, "backend": ctx.backend if "maps" in sc else None,
                       "resolution": ctx.N if ctx.backend == "ulam" else None,
                       "version": __version__, "threads": threads},
        "steps": [],
    }
    timing = {}
    code = 0
    for k, step in enumerate(sc["pipeline"]):
        cmd, params = step["command"], step.get("params", {})
        tag = f"{sc['name']}_{k}_{cmd}"
        meta: dict = {}
        t0 = time.perf_counter()
        fn = STEPS[cmd]
        result = fn(ctx, params, meta, outdir, tag) if cmd in WITH_FILES else fn(ctx, params, meta)
        timing[tag] = time.perf_counter() - t0
        entry = {"command": cmd, "params": params, "result": result}
        if "verdict" in meta:
            entry["verdict"] = meta["verdict"]
            if sc.get("expect") == "Coboundary" and meta["verdict"] == "NotACoboundary":
                code = 2
        report["steps"].append(entry)
    (outdir / f"{sc['name']}.report.json").write_text(dumps(report))
    (outdir / f"{sc['name']}.timing.json").write_text(dumps(timing))
    return report, code


# ----------------------------------------------------------------------------
# entry point


def _parser():
    ap = argparse.ArgumentParser(prog="cohomlab", description="Cohomological-equation laboratory")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario file or preset")
    r.add_argument("scenario")
    r.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--threads", type=int, default=None, help="recorded in the provenance block")
    v = sub.add_parser("validate", help="check a scenario against the schema")
    v.add_argument("scenario")
    sub.add_parser("list-presets", help="list bundled scenarios")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "list-presets":
            for name in preset_names():
                print(name)
            return 0
        if args.cmd == "validate":
            sc = load_scenario(args.scenario)
            print(f"{sc['name']}: ok ({len(sc['pipeline'])} steps)")
            return 0
        report, code = run(args.scenario, args.out, args.seed, args.threads)
        for s in report["steps"]:
            print(f"{s['command']}: {s.get('verdict', 'done')}")
        return code
    except CohomlabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
