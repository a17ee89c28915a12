"""Command-line front end.

Every experiment is driven by a JSON config (see README for the keys) and
writes three files into the output directory: ``<name>.json`` (summary,
config echo and seed), ``<name>.csv`` (long-format per-point table) and
``<name>.txt`` (human-readable report).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import experiments as ex
from .detect import DetectionConfig
from .params import ConstructionError
from .potential import potential_stats, reconstruct_potential, write_series_csv
from .linalg import BranchCutError
from .walk import WalkConfig, WalkError, run_walk, write_trajectory_csv

log = logging.getLogger("bornwalk")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

OUT_DIR_ENV = "BORNWALK_OUT_DIR"

KINDS = ("first-hit", "ensemble", "p1", "p-phi", "scaling", "haar", "last-row",
         "short-time", "reconstruct")

TOP_KEYS = {"experiment", "N", "c0", "c0_squared", "detection", "walk", "samples", "trials",
            "eps_grid", "t_grid", "c_mag", "epsilon", "theta_target", "out_dir", "name", "seed",
            "threads", "write_trajectory"}
DETECTION_KEYS = {"epsilon", "criterion", "per_eigenstate_epsilon", "zero_policy"}
WALK_KEYS = {"dt", "sigma", "t_max"}

NORM_WARN = 1e-9
NORM_FAIL = 1e-3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str
    seed: int
    N: int | None = None
    c0: np.ndarray | None = None
    detection: DetectionConfig | None = None
    walk: WalkConfig | None = None
    samples: int | None = None
    trials: int | None = None
    eps_grid: list[float] | None = None
    t_grid: list[float] | None = None
    c_mag: float | None = None
    epsilon: float | None = None
    theta_target: float = 0.0
    out_dir: str = "."
    name: str | None = None
    threads: int = 1
    write_trajectory: bool = False
    raw: dict[str, Any] = field(default_factory=dict)

    def echo(self) -> dict[str, Any]:
        """Config as written to outputs; the seed is always explicit."""
        out = dict(self.raw)
        out["experiment"] = self.experiment
        out["seed"] = self.seed
        for key in ("samples", "trials"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.c0 is not None:
            out["c0"] = [[float(z.real), float(z.imag)] for z in self.c0]
            out.pop("c0_squared", None)
        out.pop("out_dir", None)
        out.pop("threads", None)
        return out


def _strict(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def parse_c0(raw: dict) -> np.ndarray | None:
    """Amplitudes from ``c0`` ([re, im] pairs) or ``c0_squared`` (zero phases).

    A normalization error up to ``1e-3`` is corrected with a warning;
    anything larger is a config error.
    """
    if "c0" in raw and "c0_squared" in raw:
        raise ConfigError("give either c0 or c0_squared, not both")
    if "c0" in raw:
        try:
            c = np.array([complex(float(a), float(b)) for a, b in raw["c0"]])
        except (TypeError, ValueError) as exc:
            raise ConfigError("c0 must be a list of [re, im] pairs") from exc
    elif "c0_squared" in raw:
        sq = np.asarray(raw["c0_squared"], dtype=float)
        if sq.ndim != 1 or np.any(sq < 0):
            raise ConfigError("c0_squared must be a list of non-negative numbers")
        c = np.sqrt(sq).astype(complex)
    else:
        return None
    if c.size < 2:
        raise ConfigError("c0 needs at least two components")
    dev = abs(float(np.vdot(c, c).real) - 1.0)
    if dev > NORM_FAIL:
        raise ConfigError(f"c0 is not normalized (|sum |c|^2 - 1| = {dev:.3g})")
    if dev > NORM_WARN:
        log.warning("c0 off normalization by %.3g; renormalizing", dev)
        c = c / np.linalg.norm(c)
    return c


def load_config(source: dict | str | Path, overrides: dict | None = None) -> RunConfig:
    """Validate a config mapping (or JSON file) into a :class:`RunConfig`."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    else:
        raw = dict(source)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    _strict(raw, TOP_KEYS, "config")
    kind = raw.get("experiment")
    if kind not in KINDS:
        raise ConfigError(f"experiment must be one of {KINDS}, got {kind!r}")
    seed = raw.get("seed")
    if seed is None:
        seed = int(np.random.SeedSequence().generate_state(1, np.uint64)[0] >> 1)
        log.info("no seed given; generated %d", seed)
    try:
        c0 = parse_c0(raw)
        det = None
        if "detection" in raw:
            _strict(raw["detection"], DETECTION_KEYS, "detection")
            d = dict(raw["detection"])
            if d.get("per_eigenstate_epsilon") is not None:
                d["per_eigenstate_epsilon"] = tuple(d["per_eigenstate_epsilon"])
            det = DetectionConfig(**d)
        walk = None
        if "walk" in raw or kind in ("first-hit", "short-time", "reconstruct"):
            w = raw.get("walk", {})
            _strict(w, WALK_KEYS, "walk")
            walk = WalkConfig(seed=int(seed), **w)
        cfg = RunConfig(
            experiment=kind, seed=int(seed), N=raw.get("N"), c0=c0, detection=det, walk=walk,
            samples=raw.get("samples"), trials=raw.get("trials"), eps_grid=raw.get("eps_grid"),
            t_grid=raw.get("t_grid"), c_mag=raw.get("c_mag"), epsilon=raw.get("epsilon"),
            theta_target=float(raw.get("theta_target", 0.0)), out_dir=raw.get("out_dir", "."),
            name=raw.get("name"), threads=int(raw.get("threads", 1)),
            write_trajectory=bool(raw.get("write_trajectory", False)), raw=raw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if c0 is not None:
        if cfg.N is None:
            cfg.N = c0.size
        elif cfg.N != c0.size:
            raise ConfigError("N does not match the length of c0")
    _require(cfg)
    return cfg


def _require(cfg: RunConfig):
    need = {
        "first-hit": ("c0", "detection", "trials"),
        "ensemble": ("c0", "detection", "samples"),
        "p1": ("c_mag", "epsilon", "samples"),
        "p-phi": ("c_mag", "epsilon", "samples"),
        "scaling": ("c0", "eps_grid", "samples"),
        "haar": ("N", "samples"),
        "last-row": ("N", "samples"),
        "short-time": ("c0", "detection", "t_grid", "trials"),
        "reconstruct": ("N",),
    }[cfg.experiment]
    missing = [k for k in need if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"{cfg.experiment} needs {missing}")


# ----------------------------------------------------------------------------
# execution

def _summary_rows(kind: str, summaries: Sequence[dict]) -> list[dict]:
    rows = []
    for s in summaries:
        for p in s["probabilities"]:
            rows.append({"experiment": kind, "N": s["N"], "epsilon": s["epsilon"],
                         "horizon": s.get("extra", {}).get("horizon", ""), "k": p["k"],
                         "probability": p["p"], "ci_low": p["ci_low"], "ci_high": p["ci_high"]})
    return rows


def execute(cfg: RunConfig) -> dict[str, Any]:
    """Run the configured experiment and return the JSON body (without ``meta``)."""
    kind = cfg.experiment
    body: dict[str, Any] = {"schema_version": ex.SCHEMA_VERSION, "experiment": kind,
                            "seed": cfg.seed, "config": cfg.echo()}
    summaries: list[ex.ExperimentSummary] = []
    if kind == "ensemble":
        summaries = [ex.run_ensemble(cfg.c0, cfg.detection, cfg.samples, cfg.seed, cfg.threads)]
    elif kind == "first-hit":
        summaries = [ex.run_first_hit(cfg.c0, cfg.walk, cfg.detection, cfg.trials, cfg.threads)]
    elif kind == "short-time":
        summaries = ex.short_time_profile(cfg.c0, cfg.walk, cfg.detection, cfg.t_grid,
                                          cfg.trials, cfg.threads)
    elif kind == "scaling":
        rep = ex.scaling_study(cfg.c0, cfg.eps_grid, cfg.samples, cfg.seed, cfg.threads)
        summaries = rep.pop("summaries")
        body["result"] = rep
    elif kind in ("p1", "p-phi"):
        if kind == "p1":
            est = ex.estimate_p1(cfg.c_mag, cfg.epsilon, cfg.samples, cfg.seed)
        else:
            est = ex.estimate_p_phi(cfg.c_mag, cfg.epsilon, cfg.samples, cfg.seed,
                                    cfg.theta_target)
        body["result"] = asdict(est) | {"z_score": est.z_score}
    elif kind == "haar":
        body["result"] = ex.haar_compare(cfg.N, cfg.samples, cfg.seed)
    elif kind == "last-row":
        body["result"] = ex.last_row_stats(cfg.N, cfg.samples, cfg.seed)
    elif kind == "reconstruct":
        traj = run_walk(cfg.N, cfg.walk, materialize=True)
        series = reconstruct_potential(traj)
        body["result"] = potential_stats(series)
        body["_series"] = series
        body["_trajectory"] = traj
    if summaries:
        body["summaries"] = [s.to_dict() for s in summaries]
    return body


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _report(body: dict) -> str:
    lines = [f"experiment: {body['experiment']}", f"seed: {body['seed']}"]
    for s in body.get("summaries", []):
        head = f"N={s['N']} eps={s['epsilon']} mode={s['mode']} total={s['total']} " \
               f"no_hit={s['no_hit']} failed={s['failed']}"
        if "horizon" in s.get("extra", {}):
            head += f" horizon={s['extra']['horizon']}"
        lines.append(head)
        for p in s["probabilities"]:
            lines.append(f"  P({p['k']}) = {p['p']:.6g}  [{p['ci_low']:.6g}, {p['ci_high']:.6g}]"
                         f"  born={p['born']:.4g}")
        for r in s["ratios"]:
            ratio = r["ratio"]
            txt = "nan" if ratio is None else f"{ratio:.4g} +- {r['stderr']:.2g}" \
                if r["stderr"] is not None else f"{ratio:.4g}"
            lines.append(f"  P({r['m']})/P({r['n']}) = {txt}  born={r['born']:.4g}")
    if "result" in body:
        lines.append("result:")
        lines.append(json.dumps(_jsonable(body["result"]), indent=2))
    return "\n".join(lines) + "\n"


def write_outputs(body: dict, cfg: RunConfig) -> dict[str, Path]:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.name or f"{cfg.experiment}_seed{cfg.seed}"
    paths = {"json": out / f"{name}.json", "csv": out / f"{name}.csv", "txt": out / f"{name}.txt"}
    doc = _jsonable(body)
    doc["meta"] = {"created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    config_line = "# config: " + json.dumps(doc["config"], sort_keys=True)
    if "_series" in body:
        write_series_csv(body["_series"], paths["csv"])
        _prepend(paths["csv"], config_line)
        if cfg.write_trajectory:
            paths["trajectory"] = out / f"{name}_trajectory.csv"
            write_trajectory_csv(body["_trajectory"], paths["trajectory"])
            _prepend(paths["trajectory"], config_line)
    else:
        rows = _summary_rows(cfg.experiment, doc.get("summaries", []))
        if not rows and "result" in doc:
            rows = [{"experiment": cfg.experiment, "key": k, "value": json.dumps(v)}
                    for k, v in doc["result"].items()]
        with open(paths["csv"], "w", newline="") as fh:
            fh.write(config_line + "\n")
            if rows:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
    paths["txt"].write_text(config_line + "\n" + _report(doc))
    return paths


def _prepend(path: Path, line: str):
    text = path.read_text()
    path.write_text(line + "\n" + text)


def run(config: dict | str | Path, overrides: dict | None = None) -> int:
    """Load, execute and write one experiment; returns the process exit code."""
    try:
        cfg = load_config(config, overrides)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        body = execute(cfg)
    except (ConstructionError, WalkError, BranchCutError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    paths = write_outputs(body, cfg)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


# ----------------------------------------------------------------------------
# plot data

PLOT_FIELDS = ["experiment", "N", "epsilon", "horizon", "k", "probability", "ci_low", "ci_high"]


def emit_plot_data(paths: Sequence[str | Path], out_csv: str | Path) -> int:
    """Merge summary JSONs into one long-format CSV, descending in ``epsilon``.

    Returns the number of data rows written.  Files with another schema
    version are rejected with :class:`ConfigError`.
    """
    rows = []
    for i, p in enumerate(paths):
        doc = json.loads(Path(p).read_text())
        if doc.get("schema_version") != ex.SCHEMA_VERSION:
            raise ConfigError(f"{p}: schema version {doc.get('schema_version')!r} "
                              f"!= {ex.SCHEMA_VERSION}")
        for j, r in enumerate(_summary_rows(doc["experiment"], doc.get("summaries", []))):
            rows.append((-float(r["epsilon"]), i, j, r))
    rows.sort(key=lambda t: t[:3])
    with open(out_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PLOT_FIELDS)
        w.writeheader()
        w.writerows(r for *_, r in rows)
    return len(rows)


# ----------------------------------------------------------------------------
# argument parsing

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bornwalk", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (default ${OUT_DIR_ENV} or .)")
        p.add_argument("--threads", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--name")

    common(sub.add_parser("run", help="run the experiment named in the config"))
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        common(p)
        p.add_argument("--N", type=int)
        p.add_argument("--c0-squared", type=float, nargs="+")
        p.add_argument("--epsilon", type=float)
    pd = sub.add_parser("plot-data", help="merge summary JSONs into a long CSV")
    pd.add_argument("inputs", nargs="+")
    pd.add_argument("-o", "--output", required=True)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "plot-data":
        try:
            n = emit_plot_data(args.inputs, args.output)
        except (ConfigError, OSError, json.JSONDecodeError, KeyError) as exc:
            log.error("%s", exc)
            return EXIT_CONFIG
        log.info("wrote %d rows", n)
        return EXIT_OK

    raw: dict[str, Any] = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            log.error("config error: cannot read %s: %s", args.config, exc)
            return EXIT_CONFIG
    if args.command != "run":
        if raw.get("experiment", args.command) != args.command:
            log.error("config error: config is for %r, not %r", raw["experiment"], args.command)
            return EXIT_CONFIG
        raw["experiment"] = args.command
        if args.N is not None:
            raw["N"] = args.N
        if args.c0_squared is not None:
            raw["c0_squared"] = args.c0_squared
            raw.pop("c0", None)
        if args.epsilon is not None:
            if args.command in ("p1", "p-phi"):
                raw["epsilon"] = args.epsilon
            else:
                raw.setdefault("detection", {})["epsilon"] = args.epsilon
    out_dir = args.out_dir or raw.get("out_dir") or os.environ.get(OUT_DIR_ENV) or "."
    overrides = {"seed": args.seed, "threads": args.threads, "samples": args.samples,
                 "trials": args.trials, "name": args.name, "out_dir": out_dir}
    return run(raw, overrides)


if __name__ == "__main__":
    sys.exit(main())
