"""Command line front end: ``nullot check <config> [--out DIR] [--seed S] ...``.

Exit codes: 0 all strict checks pass, 1 a check failed, 2 numerical abort,
3 configuration error.  The JSON report is byte-identical for a fixed
(config, seed); wall-clock timings go to a separate ``timing.json``.
"""

import argparse
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import apps, nec
from .config import parse_config
from .errors import ConfigError, NumericalError, WeightNotSmooth
from .expr import parse_expression
from .hypersurface import (build_cone_patch, build_patch, box_quadrature, dump_patch_csv,
                           lemaitre_horizon_section, product_horizon_section,
                           section_from_embedding)
from .io import to_jsonable, write_csv, write_json
from .spacetime import WeightField, default_point, make_metric

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_FAIL, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2, 3
STRICT = ("nc1", "nce", "riccati", "lightcone", "hawking", "stability", "rescaling")


def report_schema():
    text = resources.files("nullot").joinpath("schemas/report-v1.json").read_text()
    return json.loads(text)


def validate_report(report):
    jsonschema.validate(report, report_schema())


class Scenario:
    """Model, weight and patch built from a config (patch built lazily)."""

    def __init__(self, cfg, threads=1, tol_scale=1.0):
        self.cfg = cfg
        self.threads = threads
        self.tol_scale = tol_scale
        self.model = make_metric(cfg.metric["name"], cfg.metric.get("params", {}))
        self.weight = (WeightField.zero(self.model.coords) if cfg.weight == "zero"
                       else WeightField(self.model.coords, cfg.weight))
        self.spu = cfg.numerics["steps_per_unit"]
        self._patch = None

    def tol(self, key):
        return self.cfg.tolerances[key] * self.tol_scale

    def section_fn(self, key):
        hs = self.cfg.hypersurface
        names = [f"u{i + 1}" for i in range(self.model.n - 2)]
        f = parse_expression(str(hs["sections"].get(key, 0)), names).lambdify()
        return lambda u: np.broadcast_to(np.asarray(f(*u.T), float), (len(u),))

    def build(self, model=None, weight=None, spu=None):
        model = model or self.model
        weight = weight or self.weight
        spu = spu or self.spu
        hs = self.cfg.hypersurface
        kind = hs["kind"]
        if kind == "cone":
            tip = np.asarray(hs.get("tip") or default_point(model), float)
            s_ref = hs.get("s_ref", min(1.0 * model.scale, hs["s_max"]))
            s_ref = min(max(s_ref, hs["s_min"]), hs["s_max"])
            return build_cone_patch(model, tip, hs["s_min"], hs["s_max"], s_ref=s_ref,
                                    n_lat=hs["grid"][0], n_lon=hs["grid"][-1], weight=weight,
                                    steps_per_unit=spu, threads=self.threads)
        if kind == "horizon":
            base = model.base if model.kind == "perturbed" else model
            if base.kind == "schwarzschild-lemaitre":
                sec = lemaitre_horizon_section(model, hs["grid"][0], hs["grid"][-1])
            else:
                sec = product_horizon_section(model, hs["grid"][0], hs["grid"][-1])
        else:
            names = [f"u{i + 1}" for i in range(model.n - 2)]
            emb = [parse_expression(str(e), names).lambdify() for e in hs["embedding"]]
            nor = [parse_expression(str(e), names).lambdify() for e in hs["normal"]]
            u, w, shape = box_quadrature(hs["box"], hs["grid"])
            col = lambda fs: (lambda uu: np.stack(
                [np.broadcast_to(np.asarray(f(*uu.T), float), (len(uu),)) for f in fs], axis=1))
            sec = section_from_embedding(model, col(emb), col(nor), u, w, shape, kind="custom")
        return build_patch(model, sec, hs["window"], weight, steps_per_unit=spu,
                           store_every=self.cfg.numerics["store_every"], threads=self.threads)

    @property
    def patch(self):
        if self._patch is None:
            self._patch = self.build()
        return self._patch


def _report_dict(rep):
    d = rep.to_dict()
    d.pop("extra", None)
    d["extra"] = {k: v for k, v in rep.extra.items() if k != "curves"}
    return d


def _run_checks(sc, cfg, rng, out_dir, artifacts):
    checks = {}
    N = cfg.N
    conf = nec.CheckConfig(N=N, tol_c=sc.tol("tol_c"), tol_e=sc.tol("tol_e"))
    nc1_rep = None

    def need_nc1():
        nonlocal nc1_rep
        if nc1_rep is None:
            nc1_rep = nec.nc1_check(sc.patch, conf)
        return nc1_rep

    for name in cfg.checks:
        if name == "nc1":
            rep = need_nc1()
            checks["nc1"] = _report_dict(rep)
            write_csv(out_dir / "nc1.csv", ["node", "worst_margin", "t", "samples"],
                      [[r["node"], r["worst_margin"], r["t"], r["samples"]] for r in rep.per_generator])
            artifacts.append("nc1.csv")
        elif name == "nce":
            pairs = nec.random_null_connected_pairs(sc.patch, cfg.nce["pairs"], rng)
            thin = cfg.nce["thin_window"]
            base = need_nc1()
            if thin is True or (thin == "auto" and not base.passed):
                loc = base.worst_location
                if loc["node"] is not None:
                    pairs += nec.thin_window_pairs(sc.patch, N, loc["node"], loc["t"])
            rep = nec.nce_check(sc.patch, conf, pairs)
            checks["nce"] = _report_dict(rep)
            rows = []
            for j, (ts, ent, u) in enumerate(rep.extra["curves"]):
                rows += [[j, t, e, v] for t, e, v in zip(ts, ent, u)]
            write_csv(out_dir / "nce.csv", ["pair", "t", "entropy", "entropy_power"], rows)
            artifacts.append("nce.csv")
        elif name == "riccati":
            try:
                d = nec.riccati_diagnostic(sc.patch, conf)
            except WeightNotSmooth as exc:
                checks["riccati"] = {"verdict": "unavailable", "reason": str(exc)}
                continue
            tol = sc.tol("riccati")
            checks["riccati"] = {"verdict": "pass" if d["max"] <= tol else "fail",
                                 "worst_margin": -d["max"], "worst_location": d["location"],
                                 "tolerance": tol}
            rows = [[z, float(t[i]), float(v[i])] for z, (t, v) in enumerate(d["curves"])
                    for i in range(0, len(t), 8)]
            write_csv(out_dir / "riccati.csv", ["node", "t", "d"], rows)
            artifacts.append("riccati.csv")
        elif name == "lightcone":
            hs = cfg.hypersurface
            scen = apps.ConeScenario(sc.model, np.asarray(hs.get("tip") or default_point(sc.model)),
                                     hs["s_max"], N=N, weight=sc.weight, n_lat=hs["grid"][0],
                                     n_lon=hs["grid"][-1], s_min=hs["s_min"],
                                     steps_per_unit=sc.spu)
            res = apps.lightcone_comparison(scen, tol=sc.tol("lightcone"), policy="margin-report",
                                            patch=sc.patch)
            d = res.to_dict()
            d["worst_margin"] = res.monotone_margin
            checks["lightcone"] = d
            write_csv(out_dir / "lightcone.csv", ["s", "A"], res.rows())
            artifacts.append("lightcone.csv")
        elif name == "hawking":
            scen = apps.HorizonScenario(sc.patch, sc.section_fn("t1"), sc.section_fn("t2"), N=N)
            res = apps.hawking_area(scen, tol=sc.tol("hawking"))
            res["worst_margin"] = (res["area2"] - res["area1"]) / abs(res["area2"])
            checks["hawking"] = res
        elif name == "rigidity":
            kind = "cone" if cfg.hypersurface["kind"] == "cone" else "hawking"
            d = apps.rigidity_diagnostic(sc.patch, kind, N)
            d["verdict"] = "info"
            checks["rigidity"] = d
        elif name == "rescaling":
            phis = [_random_phi(rng, sc.model.n - 2) for _ in range(cfg.rescaling["samples"])]
            res = nec.rescaling_invariance_check(sc.patch, conf, phis)
            checks["rescaling"] = {"verdict": "pass" if res["invariant"] else "fail",
                                   "base_verdict": res["base"].verdict, "runs": res["runs"]}
        elif name == "stability":
            st = cfg.stability
            eps = sorted(float(e) for e in st["eps"])
            res = apps.stability_experiment(
                sc.model, st["perturbation"], eps, lambda m, w, spu: sc.build(m, None, spu), N,
                resolutions=tuple(st["resolutions"]), tol=sc.tol("tol_c"))
            # the limit may only fail when some approximant already fails
            ok = not (res["all_pass"] and res["limit_passes"] is False)
            res["verdict"] = "pass" if ok else "fail"
            res["worst_margin"] = float(min(res["margins"]))
            checks["stability"] = res
            write_csv(out_dir / "stability.csv", ["eps", "steps_per_unit", "margin", "verdict"], res["rows"])
            artifacts.append("stability.csv")
    return checks


def _random_phi(rng, m):
    """Smooth positive transverse factor with values in [0.5, 2]."""
    amp = rng.uniform(0.1, 0.69)
    freq = rng.integers(1, 3, size=m)
    phase = rng.uniform(0, 2 * np.pi, size=m)
    return lambda u: np.exp(amp * np.sin(u @ freq + phase.sum()) * 1.0)


def run(cfg, out_dir, seed=None, threads=1, tol_scale=1.0):
    """Execute the checks of ``cfg``; returns (report dict, exit code)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else int(seed)
    rng = np.random.default_rng(seed)
    echo = cfg.as_dict()
    echo["seed"] = seed
    echo["tolerance_scale"] = tol_scale
    artifacts = []
    checks = {}
    integ = {"steps_per_unit": int(cfg.numerics["steps_per_unit"]), "max_null_defect": None,
             "max_gauss_drift": None, "focal_generators": 0}
    error = None
    t0 = time.perf_counter()
    sc = None
    try:
        sc = Scenario(cfg, threads, tol_scale)
        checks = _run_checks(sc, cfg, rng, out_dir, artifacts)
        code = EXIT_OK if all(checks[c]["verdict"] != "fail" for c in checks if c in STRICT) else EXIT_FAIL
    except NumericalError as exc:
        code, error = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
    except ConfigError as exc:
        code, error = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    if sc is not None and sc._patch is not None:
        r = sc._patch.rays
        integ["max_null_defect"] = float(np.max(r.null_defect))
        g = r.gauss
        integ["max_gauss_drift"] = float(np.max(np.abs(g - g[..., :1]))) if g is not None and g.size else None
        integ["focal_generators"] = int(np.sum(np.isfinite(r.focal)))
        if cfg.output.get("patch_csv"):
            dump_patch_csv(sc._patch, out_dir / "patch.csv")
            artifacts.append("patch.csv")
    report = {"schema_version": SCHEMA_VERSION, "config": echo, "checks": checks,
              "integrator": integ, "artifacts": sorted(artifacts),
              "status": {"exit_code": code, "passed": code == EXIT_OK, "error": error}}
    report = to_jsonable(report)
    validate_report(report)
    write_json(out_dir / "report.json", report)
    write_json(out_dir / "timing.json", {"wall_clock_seconds": time.perf_counter() - t0})
    return report, code


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("NULLOT_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def main(argv=None):
    ap = argparse.ArgumentParser(prog="nullot", description="Synthetic null energy condition checks.")
    sub = ap.add_subparsers(dest="command", required=True)
    c = sub.add_parser("check", help="run the checks of one scenario config")
    c.add_argument("config", help="path to a YAML scenario file")
    c.add_argument("--out", default=None, help="output directory (default: config output.dir)")
    c.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    c.add_argument("--threads", type=int, default=None, help="worker threads (env NULLOT_THREADS)")
    c.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply all tolerances")
    args = ap.parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    if not args.tolerance_scale > 0:
        print("error: --tolerance-scale must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output["dir"]
    report, code = run(cfg, out, args.seed, _threads(args.threads), args.tolerance_scale)
    summary = ", ".join(f"{k}={v['verdict']}" for k, v in report["checks"].items())
    print(f"{summary or 'no checks'}; exit {code}")
    if report["status"]["error"]:
        print(report["status"]["error"], file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
