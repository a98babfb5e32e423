"""Command-line entry point.

Every invocation becomes an :class:`ExperimentSpec` (subcommand, arguments,
root seed, output directory), is validated against the shipped JSON schema,
and writes its result files plus ``manifest.json`` into the output directory.
Failures print a JSON error object and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np

from . import bench
from ._rng import child_seed, make_rng
from .certificate import certify
from .dlt import TrainConfig, TrainingError, train
from .entropic import EntropicConfig, softmax_conjugate
from .functions import Sampler, default_sampler, make_builtin
from .grid import GridConjugate, GridMemoryError
from .hopf import exponential_problem, hj_metrics, quadratic_problem, train_time_dlt
from .inverse import InverseGradientSampler, inverse_quality
from .nn import ArchSpec, load_checkpoint, save_checkpoint

ENV_OUT = "DEEP_LEGENDRE_OUT"
ENV_THREADS = "DEEP_LEGENDRE_THREADS"

COMMANDS = ("transform-grid", "transform-entropic", "train-dlt", "certify", "inverse-train", "hj",
            "bench-table", "plot-data")

EXIT_CONFIG, EXIT_MEMORY, EXIT_TRAINING, EXIT_OTHER = 2, 3, 4, 1


class ConfigError(ValueError):
    pass


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def load_schema() -> dict:
    return json.loads(resources.files("deep_legendre").joinpath("schema/experiment.schema.json").read_text())


def validate_config(obj) -> None:
    """Raise ``ConfigError`` if ``obj`` violates the experiment schema."""
    try:
        jsonschema.validate(obj, load_schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}") from None


@dataclass
class ExperimentSpec:
    command: str
    args: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "results"

    def to_dict(self) -> dict:
        return {"command": self.command, "args": self.args, "seed": self.seed, "out": self.out}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        validate_config(d)
        return cls(d["command"], dict(d.get("args", {})), int(d.get("seed", 0)), d.get("out", "results"))

    def config_hash(self) -> str:
        """Hash of everything that determines the results; the output path is excluded."""
        payload = json.dumps({"command": self.command, "args": self.args, "seed": self.seed}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


# -- result persistence ----------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if not bench.is_timing_column(k)}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def content_hash(path: Path) -> str:
    """SHA-256 of a result file with timing fields removed.

    CSV columns and JSON keys named ``t_solve`` or ending in ``seconds``, and
    the checkpoint creation time, are dropped first, so reruns of one spec
    hash identically.
    """
    data = path.read_bytes()
    if path.suffix == ".csv":
        rows = list(csv.reader(io.StringIO(data.decode())))
        if rows:
            keep = [i for i, name in enumerate(rows[0]) if not bench.is_timing_column(name)]
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            for r in rows:
                w.writerow([r[i] for i in keep if i < len(r)])
            data = buf.getvalue().encode()
    elif path.suffix == ".json":
        data = json.dumps(_strip_timing(json.loads(data)), sort_keys=True).encode()
    elif path.suffix == ".ckpt":
        nl = data.index(b"\n")
        header = json.loads(data[:nl])
        header.pop("created", None)
        data = json.dumps(header, sort_keys=True).encode() + data[nl:]
    return hashlib.sha256(data).hexdigest()


class Output:
    """Tracks files written by one experiment."""

    def __init__(self, directory: Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])

    def checkpoint(self, name: str, model) -> None:
        save_checkpoint(model, self.path(name))


def write_manifest(out: Output, spec: ExperimentSpec, seconds: float) -> Path:
    files = [{"path": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest(), "content_sha256": content_hash(p)}
             for p in out.files]
    manifest = {
        "command": spec.command,
        "seed": spec.seed,
        "config": spec.to_dict(),
        "config_hash": spec.config_hash(),
        "version": version(),
        "started": datetime.now(timezone.utc).isoformat(),
        "wall_clock_seconds": seconds,
        "files": files,
    }
    path = out.dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# -- subcommands -------------------------------------------------------------------------------------


def _function(a, seed):
    return make_builtin(a.get("function", "quadratic"), int(a.get("dim", 2)), a.get("params") or {}, seed)


def _sampler(a, key, f, seed):
    if a.get(key):
        return Sampler.from_dict({"dim": f.dim, "seed": seed, **a[key]})
    return default_sampler(f, seed)


def _box(a, f):
    lo, hi = bench.default_box(f)
    return (lo if a.get("lo") is None else float(a["lo"])), (hi if a.get("hi") is None else float(a["hi"]))


def cmd_transform_grid(a, seed, out: Output, threads):
    f = _function(a, seed)
    lo, hi = _box(a, f)
    kw = {"memory_cap": a["memory_cap"]} if a.get("memory_cap") else {}
    est = GridConjugate(f, lo, hi, int(a.get("grid_n", 10)), a.get("n_dual"), a.get("method", "llt"), **kw)
    t0 = time.perf_counter()
    est.fit()
    seconds = time.perf_counter() - t0
    est.field_.to_csv(out.path("conjugate.csv"))
    result = {"function": f.spec(), "method": est.method, "grid_n": est.n_points, "dual_bounds": est.dual_bounds_,
              "t_solve": seconds}
    if f.has_conjugate:
        blo, bhi = np.array(est.dual_bounds_).T
        Y = blo + (bhi - blo) * make_rng(seed, "grid-eval").random((int(a.get("eval_n", 1000)), f.dim))
        result["rmse"] = math.sqrt(float(np.mean((est.predict(Y) - f.conjugate(Y)) ** 2)))
    out.json("result.json", result)


def cmd_transform_entropic(a, seed, out: Output, threads):
    f = _function({"dim": 1, **a}, seed)
    lo, hi = _box(a, f)
    header, rows = _entropic_rows(f, lo, hi, a, seed)
    out.csv("entropic.csv", header, rows)


def _entropic_rows(f, lo, hi, a, seed):
    mid, half = 0.5 * (lo + hi), 0.25 * (hi - lo)
    Y = f.gradient(make_rng(seed, "entropic-eval").uniform(mid - half, mid + half, (int(a.get("eval_n", 50)), f.dim)))
    truth = f.conjugate(Y) if f.has_conjugate else None
    rows = []
    for eps in a.get("epsilon", [0.5, 0.1, 0.01]):
        cfg = EntropicConfig(float(eps), int(a.get("n_samples", 65536)), a.get("sequence", "low-discrepancy"), seed)
        t0 = time.perf_counter()
        v = softmax_conjugate(f, (lo, hi), Y, cfg)
        err = float(np.mean(np.abs(v - truth))) if truth is not None else math.nan
        rows.append([f.name, f.dim, float(eps), err, time.perf_counter() - t0])
    return ["function", "d", "epsilon", "mean_abs_error", "seconds"], rows


def _check_divergence(rep, out: Output, result: dict) -> None:
    """Write the partial result and raise when training stopped on a non-finite loss."""
    if rep.stop_reason == "divergence":
        out.json("result.json", result)
        raise TrainingError(f"training diverged after {rep.steps} steps")


def cmd_train_dlt(a, seed, out: Output, threads):
    f = _function(a, seed)
    loss = a.get("loss", "implicit")
    cfg = TrainConfig(a.get("batch"), int(a.get("steps", 2000)), float(a.get("tol", 1e-6)), float(a.get("lr", 1e-3)),
                      seed, loss, 100, a.get("lr_decay_every"))
    spec = ArchSpec(a.get("arch", "resnet"), f.dim, int(a.get("width", 128)))
    primal = _sampler(a, "sampler", f, seed)
    inverse = load_checkpoint(a["inverse"]) if a.get("inverse") else None
    dual = bench.PushForwardSampler(f, primal) if loss != "implicit" else None
    rep = train(f, primal if loss == "implicit" else None, spec, cfg, dual_sampler=dual, inverse=inverse,
                standardize=a.get("standardize", True))
    rep.write_history_csv(out.path("history.csv"))
    report = rep.to_dict()
    report.pop("history")
    _check_divergence(rep, out, {"function": f.spec(), "arch": spec.to_dict(), "train": report})
    out.checkpoint("model.ckpt", rep.model)
    test = _sampler(a, "sampler", f, child_seed(seed, "test"))
    cert = certify(rep.model, f, test, int(a.get("test_n", 4096)), float(a.get("level", 0.95)))
    out.json("result.json", {"function": f.spec(), "arch": spec.to_dict(), "train": report,
                             "certificate": cert.to_dict()})


def cmd_certify(a, seed, out: Output, threads):
    f = _function(a, seed)
    if a.get("model"):
        g = load_checkpoint(a["model"])
    else:
        if not f.has_conjugate:
            raise ConfigError("certify without --model needs a closed-form conjugate")
        offset = float(a.get("offset", 0.0))
        g = lambda Y: f.conjugate(Y) + offset
    cert = certify(g, f, _sampler(a, "sampler", f, seed), int(a.get("n", 10000)), float(a.get("level", 0.95)))
    out.json("certificate.json", cert.to_dict())


def cmd_inverse_train(a, seed, out: Output, threads):
    f = _function({"function": "neg-log", **a}, seed)
    dlo, dhi = float(a.get("dual_lo", -1000.0)), float(a.get("dual_hi", -10.0))
    dual = Sampler("uniform-box", f.dim, child_seed(seed, "dual"), lo=dlo, hi=dhi)
    primal = _sampler(a, "primal_sampler", f, seed)
    est = InverseGradientSampler(f, dual, primal, hidden_width=int(a.get("width", 128)),
                                 pretrain_steps=int(a.get("pretrain_steps", 20000)),
                                 refine_steps=int(a.get("refine_steps", 40000)),
                                 mix_lambda=float(a.get("mix_lambda", 0.5)), learning_rate=float(a.get("lr", 1e-3)),
                                 lr_decay_every=a.get("lr_decay_every", 20000), batch_size=int(a.get("batch", 256)),
                                 random_state=seed).fit()
    out.checkpoint("inverse.ckpt", est.model_)
    est.pretrain_report_.write_history_csv(out.path("pretrain_history.csv"))
    est.refine_report_.write_history_csv(out.path("refine_history.csv"))
    Y = Sampler("uniform-box", f.dim, child_seed(seed, "test"), lo=dlo, hi=dhi).draw(int(a.get("test_n", 4096)))
    q, excluded = inverse_quality(est.model_, f, Y, dhi - dlo, return_excluded=True)
    out.json("result.json", {"function": f.spec(), "inverse_quality": q, "excluded": excluded, "test_n": len(Y),
                             "omitted": est.refine_report_.extra.get("omitted", []),
                             "pretrain_seconds": est.pretrain_report_.seconds,
                             "refine_seconds": est.refine_report_.seconds})


def cmd_hj(a, seed, out: Output, threads):
    d = int(a.get("dim", 2))
    build = quadratic_problem if a.get("problem", "quadratic") == "quadratic" else exponential_problem
    prob = build(d, float(a.get("a", 2.0)), float(a.get("T", 2.0)))
    if prob.name != "quadratic":
        raise ConfigError("Time-DLT training is available for the quadratic problem only")
    cfg = TrainConfig(a.get("batch"), int(a.get("steps", 2000)), 1e-12, float(a.get("lr", 1e-3)), seed)
    rep = train_time_dlt(prob, ArchSpec("resnet", d + 1, int(a.get("width", 64))), cfg)
    rep.write_history_csv(out.path("history.csv"))
    _check_divergence(rep, out, {"problem": prob.name, "dim": d, "train": rep.to_dict()})
    out.checkpoint("model.ckpt", rep.model)
    X = make_rng(seed, "hj-eval").uniform(-prob.a, prob.a, (int(a.get("eval_n", 1000)), d))
    ts = [float(t) for t in a.get("t_slices", [0.5, 1.0, 1.5, 2.0])]
    m = hj_metrics(rep.model, prob, X, ts, threads=threads)
    rows = [[d, t, m["l2_error"][t], m["pde_residual"][t], m["ic_error"], rep.seconds] for t in ts]
    out.csv("hj.csv", ["d", "t", "l2_error", "pde_residual", "ic_error", "seconds"], rows)


def cmd_bench_table(a, seed, out: Output, threads):
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in a.items() if k != "table"}
    header, rows = bench.build_table(a["table"], seed=seed, **kw)
    out.csv(f"{a['table']}.csv", header, rows)


def emit_plot_data(series: dict, path) -> int:
    """Long-format CSV ``series, x, y[, z]``; returns the number of data rows."""
    dims = {np.atleast_2d(v).shape[1] for v in series.values() if len(v)}
    cols = ["x", "y", "z"][: max(dims | {2})]
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", *cols])
        for name, pts in series.items():
            pts = np.atleast_2d(np.asarray(pts, dtype=float)) if len(pts) else np.empty((0, len(cols)))
            for row in pts:
                w.writerow([name, *[repr(float(v)) for v in row[: len(cols)]]])
                n += 1
    return n


def _read_points(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing input {p}")
    if p.suffix == ".npy":
        return np.atleast_2d(np.load(p))
    data = np.loadtxt(p, delimiter=",", ndmin=2, skiprows=1) if p.stat().st_size else np.empty((0, 2))
    return data


def cmd_plot_data(a, seed, out: Output, threads):
    mode = a["mode"]
    n = int(a.get("n", 500))
    if mode == "points":
        series = {Path(p).stem: _read_points(p) for p in a.get("inputs", [])}
    else:
        name = "quadratic-over-linear" if mode == "fig1" else "neg-log"
        params = {} if mode == "fig1" else {"box": [1e-3, 1e-1]}
        f = make_builtin(a.get("function", name), int(a.get("dim", 2)), a.get("params", params), seed)
        X = _sampler(a, "sampler", f, seed).draw(n)
        series = {"primal": X, "gradient": f.gradient(X)}
    emit_plot_data(series, out.path(f"plot_{mode}.csv"))


HANDLERS = {
    "transform-grid": cmd_transform_grid,
    "transform-entropic": cmd_transform_entropic,
    "train-dlt": cmd_train_dlt,
    "certify": cmd_certify,
    "inverse-train": cmd_inverse_train,
    "hj": cmd_hj,
    "bench-table": cmd_bench_table,
    "plot-data": cmd_plot_data,
}


def error_payload(exc: BaseException, spec: ExperimentSpec | None = None) -> tuple[int, dict]:
    if isinstance(exc, (ConfigError, jsonschema.ValidationError)):
        code, kind = EXIT_CONFIG, "invalid-config"
    elif isinstance(exc, GridMemoryError):
        code, kind = EXIT_MEMORY, "memory"
    elif isinstance(exc, (TrainingError, FloatingPointError)):
        code, kind = EXIT_TRAINING, "divergence"
    elif isinstance(exc, (ValueError, KeyError, FileNotFoundError)):
        code, kind = EXIT_CONFIG, "invalid-input"
    else:
        code, kind = EXIT_OTHER, "internal"
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, GridMemoryError):
        payload.update(exc.to_dict())
    if spec is not None:
        payload["command"] = spec.command
    if kind == "internal":
        payload["traceback"] = traceback.format_exc()
    return code, payload


def run(spec: ExperimentSpec, threads: int = 1) -> Path:
    """Run one experiment and return the manifest path; exceptions propagate."""
    validate_config(spec.to_dict())
    out = Output(Path(spec.out))
    start = time.perf_counter()
    HANDLERS[spec.command](dict(spec.args), spec.seed, out, threads)
    return write_manifest(out, spec, time.perf_counter() - start)


def run_many(specs: list[ExperimentSpec], threads: int = 1) -> list[dict]:
    """Independent experiments, concurrently when ``threads > 1``."""

    def one(spec):
        try:
            return {"out": spec.out, "manifest": str(run(spec)), "status": 0}
        except Exception as exc:  # noqa: BLE001 - reported per experiment
            code, payload = error_payload(exc, spec)
            return {"out": spec.out, "status": code, **payload}

    if threads > 1 and len(specs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, specs))
    return [one(s) for s in specs]


# -- argument parsing --------------------------------------------------------------------------------


def _json_arg(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise argparse.ArgumentTypeError(f"invalid JSON: {e}") from None


def _function_args(p, default="quadratic", dim=2):
    p.add_argument("--function", default=default)
    p.add_argument("--dim", type=int, default=dim)
    p.add_argument("--params", type=_json_arg, default=None, help="JSON object of function parameters")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deep-legendre", description="Convex conjugates by grids, smoothing and DLT.")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help=f"output directory (env {ENV_OUT}, default ./results)")
    ap.add_argument("--threads", type=int, default=None, help=f"worker threads (env {ENV_THREADS}, default 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform-grid", help="discrete conjugate on a Cartesian grid")
    _function_args(p)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--grid-n", type=int, default=10)
    p.add_argument("--n-dual", type=int)
    p.add_argument("--method", choices=["llt", "brute"], default="llt")
    p.add_argument("--eval-n", type=int, default=1000)
    p.add_argument("--memory-cap", type=int)

    p = sub.add_parser("transform-entropic", help="softmax-smoothed conjugate")
    _function_args(p, dim=1)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--epsilon", type=float, nargs="+", default=[0.5, 0.1, 0.01])
    p.add_argument("--n-samples", type=int, default=65536)
    p.add_argument("--sequence", choices=["low-discrepancy", "pseudo-random"], default="low-discrepancy")
    p.add_argument("--eval-n", type=int, default=50)

    p = sub.add_parser("train-dlt", help="train a network on the implicit Legendre target")
    _function_args(p)
    p.add_argument("--arch", choices=["mlp", "resnet", "mlp-icnn", "icnn"], default="resnet")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--loss", choices=["implicit", "direct", "proxy"], default="implicit")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--lr-decay-every", type=int)
    p.add_argument("--sampler", type=_json_arg, help="JSON sampler, e.g. '{\"kind\": \"uniform-box\", \"lo\": 0, \"hi\": 1}'")
    p.add_argument("--inverse", help="inverse-network checkpoint for --loss proxy")
    p.add_argument("--test-n", type=int, default=4096)
    p.add_argument("--level", type=float, default=0.95)

    p = sub.add_parser("certify", help="Monte-Carlo error certificate")
    _function_args(p)
    p.add_argument("--model", help="checkpoint of g; omit to certify the closed form")
    p.add_argument("--offset", type=float, default=0.0, help="constant added to the closed form")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--sampler", type=_json_arg)

    p = sub.add_parser("inverse-train", help="learn an inverse gradient map for a uniform dual target")
    _function_args(p, default="neg-log")
    p.add_argument("--dual-lo", type=float, default=-1000.0)
    p.add_argument("--dual-hi", type=float, default=-10.0)
    p.add_argument("--primal-sampler", type=_json_arg)
    p.add_argument("--pretrain-steps", type=int, default=20000)
    p.add_argument("--refine-steps", type=int, default=40000)
    p.add_argument("--mix-lambda", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay-every", type=int, default=20000)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--test-n", type=int, default=4096)

    p = sub.add_parser("hj", help="Time-DLT for a Hamilton-Jacobi problem")
    p.add_argument("--problem", choices=["quadratic", "exponential"], default="quadratic")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--t-slices", type=float, nargs="+", default=[0.5, 1.0, 1.5, 2.0])
    p.add_argument("--eval-n", type=int, default=1000)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--T", type=float, default=2.0)

    p = sub.add_parser("bench-table", help="desk-scale benchmark table as CSV")
    p.add_argument("table", choices=sorted(bench.TABLES))
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--functions", nargs="+")
    p.add_argument("--archs", nargs="+")
    p.add_argument("--grid-n", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--pretrain-steps", type=int)
    p.add_argument("--refine-steps", type=int)
    p.add_argument("--epsilons", type=float, nargs="+")
    p.add_argument("--t-slices", type=float, nargs="+")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--eval-n", type=int)
    p.add_argument("--test-n", type=int)

    p = sub.add_parser("plot-data", help="long-format scatter data for external plotting")
    p.add_argument("mode", choices=["fig1", "fig2", "points"])
    p.add_argument("--function")
    p.add_argument("--dim", type=int)
    p.add_argument("--params", type=_json_arg)
    p.add_argument("--n", type=int)
    p.add_argument("--inputs", nargs="*", help="point files (.csv with header or .npy) for 'points' mode")

    p = sub.add_parser("run", help="run one or more experiments from a JSON config")
    p.add_argument("config", help="JSON file holding an experiment object or a list of them")
    return ap


_GLOBAL = {"command", "seed", "out", "threads", "config"}


def _resolve(ns) -> tuple[str, int]:
    out = ns.out or os.environ.get(ENV_OUT) or "results"
    threads = ns.threads or int(os.environ.get(ENV_THREADS, "1") or 1)
    return out, max(1, threads)


def _emit_error(code: int, payload: dict) -> int:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    out, threads = _resolve(ns)
    if ns.command == "run":
        try:
            cfg = json.loads(Path(ns.config).read_text())
            validate_config(cfg)
        except (OSError, json.JSONDecodeError, ConfigError) as exc:
            return _emit_error(*error_payload(ConfigError(str(exc))))
        items = cfg if isinstance(cfg, list) else [cfg]
        specs = []
        for i, item in enumerate(items):
            sub_out = item.get("out") or f"{i:03d}-{item['command']}"
            path = sub_out if os.path.isabs(sub_out) else os.path.join(out, sub_out)
            specs.append(ExperimentSpec(item["command"], item.get("args", {}), item.get("seed", ns.seed), path))
        results = run_many(specs, threads)
        print(json.dumps(results, sort_keys=True))
        return max((r["status"] for r in results), default=0)
    args = {k: v for k, v in vars(ns).items() if k not in _GLOBAL and v is not None}
    spec = ExperimentSpec(ns.command, args, ns.seed, out)
    try:
        manifest = run(spec, threads)
    except Exception as exc:  # noqa: BLE001 - converted to a structured error
        return _emit_error(*error_payload(exc, spec))
    print(json.dumps({"manifest": str(manifest), "status": 0}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
