"""Command-line entry point: run one experiment and export its artifacts.

Exit codes: 0 when every requested certificate passes, 1 when one does not
(or the run aborted), 2 on configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .certificates import FAIL, PASS, Certificate
from .config import ExperimentConfig, canonical_json, make_witness, parse_config
from .diagnostics import (
    cluster_inclusion_check,
    contraction_check,
    distance_bound_certificate,
    gppa_descent_certificate,
    linear_rate_certificate,
    linear_rate_estimate,
    quasi_fejer_certificate,
    scaled_residual_monotone_check,
)
from .engines import Trace, run_gppa, run_km, stability_harness, trace_to_csv, trace_to_json
from .errors import AbortedTrace, ConfigError, ConfigParseError, KMLabError
from .operators import perturb, relax
from .schedules import SummabilityReport, summability_probe

OUT_ENV = "KMLAB_OUT"
DEFAULT_OUT = "kmlab-out"


def _with_tolerance(cert: Certificate, tol: float) -> Certificate:
    if cert.verdict not in (PASS, FAIL) or cert.worst_slack is None:
        return dataclasses.replace(cert, tolerance=tol)
    ok = not math.isnan(cert.worst_slack) and cert.worst_slack >= -tol
    return dataclasses.replace(cert, tolerance=tol, verdict=PASS if ok else FAIL)


def _certificate(name: str, cfg: ExperimentConfig, t: Trace) -> Certificate:
    s, xbar = cfg.schedule, cfg.reference
    if name == "quasi-fejer":
        return quasi_fejer_certificate(t, xbar, cfg.alpha_at, s)
    if name == "distance-bound":
        return distance_bound_certificate(t, xbar, s)
    if name == "gppa-descent":
        return gppa_descent_certificate(t, xbar)
    if name == "scaled-residual":
        return scaled_residual_monotone_check(t, s)
    if name == "cluster-inclusion":
        if "cluster-inclusion" in cfg.tolerances:
            return cluster_inclusion_check(t, cfg.monotone, cfg.tolerances["cluster-inclusion"])
        return cluster_inclusion_check(t, cfg.monotone)
    if name == "contraction":
        return contraction_check(t, cfg.fixed_set, cfg.alpha_at, s, make_witness(cfg))
    if name == "linear-rate":
        xhat = cfg.fixed_set.project(t.records[-1].x)
        return linear_rate_certificate(linear_rate_estimate(t, xhat, cfg.fixed_set))
    if name == "stability":
        fam = cfg.family

        def step(k, x):
            return relax(x, fam.at(k)(x), s.lambda_at(k))

        st = cfg.stability
        return stability_harness(cfg.exact_family, step, s, cfg.x0, cfg.horizon, cfg.probes,
                                 st.get("horizon"), int(st.get("tail", 10)))
    raise ConfigError(f"unknown certificate '{name}'")


def run_experiment(cfg: ExperimentConfig) -> tuple[Trace, list[Certificate], SummabilityReport | None]:
    """Run the configured method, then every requested certificate and the summability probe.

    An :class:`AbortedTrace` from the engine propagates unchanged; its
    ``trace`` attribute carries the partial run.
    """
    if cfg.method == "gppa":
        t = run_gppa(cfg.monotone, cfg.schedule, cfg.x0, cfg.horizon, anchor=cfg.reference)
    else:
        t = run_km(cfg.family, cfg.schedule, cfg.x0, cfg.horizon, anchor=cfg.reference)
    certs = []
    for name in cfg.certificates:
        cert = _certificate(name, cfg, t)
        if name in cfg.tolerances and name != "cluster-inclusion":
            cert = _with_tolerance(cert, cfg.tolerances[name])
        certs.append(cert)
    report = summability_probe(cfg.schedule, cfg.alpha_at, cfg.horizon) if cfg.horizon >= 1 else None
    return t, certs, report


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _dump(doc: Any) -> str:
    return json.dumps(_jsonable(doc), indent=2, allow_nan=False) + "\n"


def export(t: Trace, certs: list[Certificate], report: SummabilityReport | None, cfg: ExperimentConfig,
           out_dir: str | os.PathLike) -> dict[str, Path]:
    """Write trace.csv, certificates.json, summability.json and manifest.json (plus trace.json on request).

    Contents depend only on (config, seed), so repeated runs are byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {"trace.csv": trace_to_csv(t)}
    if "json" in cfg.output.get("formats", ["csv"]):
        files["trace.json"] = _dump(trace_to_json(t))
    files["certificates.json"] = _dump({
        "aborted": t.aborted,
        "all_passed": (not t.aborted) and all(c.passed for c in certs),
        "certificates": [dict(c.to_json_dict(), requested=n) for n, c in zip(cfg.certificates, certs)],
    })
    files["summability.json"] = _dump(report.to_json_dict() if report is not None else {"horizon": 0})
    manifest = {
        "config_sha256": cfg.config_hash(),
        "seed": cfg.seed,
        "horizon": cfg.horizon,
        "aborted": t.aborted,
        "warnings": list(t.warnings),
        "kmlab_version": __version__,
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in files.items()},
        "config": json.loads(canonical_json(cfg.document)),
    }
    files["manifest.json"] = _dump(manifest)
    paths = {}
    for name, text in files.items():
        p = out / name
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths[name] = p
    return paths


def _out_dir(arg: str | None, cfg: ExperimentConfig) -> str:
    return arg or cfg.output.get("dir") or os.environ.get(OUT_ENV) or DEFAULT_OUT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kmlab", description="Run a KM/GPPA experiment and certify it.")
    p.add_argument("config", help="YAML experiment file (or an exported manifest.json to replay)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--horizon", type=int, help="override the iteration horizon K")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else print
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text, seed=args.seed, horizon=args.horizon)
    except ConfigParseError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for m in dict.fromkeys(exc.errors):
            print(f"{args.config}: {m}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2

    out = _out_dir(args.out, cfg)
    aborted = False
    try:
        t, certs, report = run_experiment(cfg)
    except AbortedTrace as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        t, certs, report, aborted = exc.trace, [], None, True
    except KMLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        export(t, certs, report, cfg, out)
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return 2

    for w in t.warnings:
        say(f"warning: {w}")
    for name, c in zip(cfg.certificates, certs):
        extra = "" if c.worst_slack is None else f" worst_slack={c.worst_slack:.3e} at k={c.k_of_worst}"
        if c.unmet_hypothesis:
            extra = f" unmet: {c.unmet_hypothesis}"
        say(f"{name}: {c.verdict}{extra}")
    say(f"outputs written to {out}")
    return 1 if aborted or not all(c.passed for c in certs) else 0


if __name__ == "__main__":
    sys.exit(main())
