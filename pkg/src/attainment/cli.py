"""Command-line front end: sample -> fit -> predict / region / solve, plus calibrate.

Exit codes: 0 ok, 2 configuration or bounds error, 3 I/O or file-format
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .calibration import FEATURE_DIMS, FeatureCalibrator, calibrated_predict, decode_binary
from .core import (
    DIM_NAMES,
    BoundsError,
    ConfigError,
    DatasetError,
    DomainBounds,
    FeatureParameterPoint,
    GainVector,
    dim_index,
    read_dataset,
    save_dataset,
)
from .gp import FitError, OptConfig, fit, load_model, save_model
from .region import UNRESTRICTED, AttainmentQuery, SliceSpec, slice_grid, success_probability
from .simulator import SimConfig, grid_plan, reference_plan, run_trial, sample_dataset
from .solver import FreezeMask, SolverConfig, solve

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
SEED_ENV = "ATTAINMENT_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _default_seed() -> int:
    value = os.environ.get(SEED_ENV, "0")
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from None


# -- argument parsing helpers ------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _assignments(text: str) -> dict[int, str]:
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"expected name=value, got {part!r}")
        name, value = part.split("=", 1)
        out[dim_index(name)] = value.strip()
    return out


def _point_values(text: str) -> np.ndarray:
    """``ice=0,angle=10,kp=1`` (missing dims are 0) or five plain numbers."""
    if "=" in text:
        values = np.zeros(len(DIM_NAMES))
        for i, v in _assignments(text).items():
            try:
                values[i] = float(v)
            except ValueError:
                raise ConfigError(f"{DIM_NAMES[i]} needs a number, got {v!r}") from None
        return values
    values = np.array(_floats(text))
    if len(values) != len(DIM_NAMES):
        raise ConfigError(f"a point needs {len(DIM_NAMES)} values ({','.join(DIM_NAMES)})")
    return values


def _parse_point(text: str, bounds: DomainBounds) -> np.ndarray:
    return bounds.check(_point_values(text))[0]


def _parse_query(text: str, bounds: DomainBounds) -> tuple[np.ndarray, list[str]]:
    """Like :func:`_parse_point`, but feature coordinates are clamped into bounds.

    Queries usually come from calibrated readings, which can overshoot the
    feature range slightly; gains outside their bounds are still an error.
    """
    values = _point_values(text)
    clamped = []
    for d in FEATURE_DIMS:
        v = min(bounds.hi[d], max(bounds.lo[d], values[d]))
        if v != values[d]:
            print(f"warning: {DIM_NAMES[d]}={values[d]:g} clamped to {v:g}", file=sys.stderr)
            clamped.append(DIM_NAMES[d])
            values[d] = v
    return bounds.check(values)[0], clamped


def _parse_grid(text: str) -> dict[str, list[float]]:
    """``ice=0|1;angle=0|10|20;kp=0.5|1``."""
    grid = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"expected dim=v1|v2|..., got {part!r}")
        name, values = part.split("=", 1)
        grid[DIM_NAMES[dim_index(name)]] = [float(v) for v in values.split("|")]
    return grid


def _parse_endpoints(text: str) -> tuple[tuple[float, float], tuple[float, float]]:
    """``raw:feature,raw:feature``."""
    try:
        pairs = [tuple(float(v) for v in p.split(":")) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected raw:feature,raw:feature, got {text!r}") from None
    if len(pairs) != 2 or any(len(p) != 2 for p in pairs):
        raise ConfigError(f"expected exactly two raw:feature pairs, got {text!r}")
    return pairs[0], pairs[1]


# -- manifests and locking ---------------------------------------------------------------


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@contextmanager
def _locked(path):
    lock_path = Path(str(path) + ".lock")
    lock_path.parent.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(lock_path), timeout=0)
    try:
        lock.acquire()
    except Timeout:
        raise OSError(f"{path} is being written by another invocation") from None
    try:
        yield
    finally:
        lock.release()
        lock_path.unlink(missing_ok=True)


def _write_manifest(args, argv, started, inputs, outputs, extra=None):
    if not outputs:
        return
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "tool_version": __version__,
        "seed": getattr(args, "seed", None),
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest(),
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in outputs],
        "duration_s": round(time.perf_counter() - started, 6),
    }
    manifest.update(extra or {})
    path = Path(str(outputs[0]) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n")


# -- commands ----------------------------------------------------------------------------


def cmd_sample(args, argv, started):
    bounds = DomainBounds()
    if args.reference_plan:
        plan = reference_plan()
    elif args.point:
        plan = []
        for text in args.point:
            x = FeatureParameterPoint.from_array(_parse_point(text, bounds))
            plan.append((x.z, x.theta))
    elif args.grid:
        plan = grid_plan(_parse_grid(args.grid))
    else:
        raise ConfigError("choose one of --reference-plan, --point or --grid")
    seeds = [int(s) for s in _floats(args.seeds)] if args.seeds else [args.seed]
    cfg = SimConfig() if args.noise_std is None else SimConfig(friction_noise_std=args.noise_std)
    records = sample_dataset(plan, seeds, cfg, bounds)
    with _locked(args.output):
        save_dataset(records, args.output, bounds)
    outputs = [args.output]
    if args.trace_dir:
        for k, rec in enumerate(records):
            _, trace = run_trial(rec.x.z, rec.x.theta, rec.seed, cfg, trace=True)
            path = Path(args.trace_dir) / f"trial_{k:05d}.csv"
            trace.to_csv(path)
    n_ok = sum(r.y for r in records)
    print(f"wrote {len(records)} records ({n_ok} successes) to {args.output}")
    _write_manifest(args, argv, started, [], outputs)
    return EXIT_OK


def cmd_fit(args, argv, started):
    records, bounds = read_dataset(args.dataset)
    if not records:
        raise ConfigError(f"{args.dataset} contains no records")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit(records, bounds, OptConfig(n_starts=args.starts, max_iter=args.max_iter, seed=args.seed))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    with _locked(args.output):
        save_model(model, args.output)
    h = model.hyperparams_
    print(
        f"fitted {len(records)} records: prior_mean={model.prior_mean_:.4f} "
        f"lengthscales=[{', '.join(f'{v:.3g}' for v in h.lengthscales)}] "
        f"signal_variance={h.signal_variance:.3g} noise_variance={h.noise_variance:.3g}"
    )
    _write_manifest(args, argv, started, [args.dataset], [args.output], {"degenerate": model.degenerate_})
    return EXIT_OK


def cmd_predict(args, argv, started):
    model = load_model(args.model)
    x, clamped = _parse_query(args.x, model.bounds_)
    q = AttainmentQuery(model, args.eta)
    p = success_probability(q, x)
    print(f"p={p:.6f}")
    if args.output:
        with _locked(args.output):
            Path(args.output).write_text(
                json.dumps({"x": x.tolist(), "probability": p, "attainable": p >= q.eta_p, "eta_p": q.eta_p}, indent=2)
                + "\n"
            )
        _write_manifest(args, argv, started, [args.model], [args.output], {"clamped": clamped})
    return EXIT_OK


def cmd_region(args, argv, started):
    free = [d.strip() for d in args.free.split(",")]
    fixed = {}
    for text in args.fix or []:
        for i, v in _assignments(text).items():
            fixed[i] = UNRESTRICTED if v == UNRESTRICTED else float(v)
    spec = SliceSpec(tuple(free), fixed, args.resolution)
    model = load_model(args.model)
    grid = slice_grid(AttainmentQuery(model, args.eta), spec)
    outputs = [args.output]
    with _locked(args.output):
        grid.to_csv(args.output)
    inputs = [args.model]
    if args.svg:
        records = read_dataset(args.data)[0] if args.data else None
        grid.to_svg(args.svg, records=records)
        outputs.append(args.svg)
        if args.data:
            inputs.append(args.data)
    n = int(grid.attainable.sum())
    print(f"{grid.shape[0]}x{grid.shape[1]} grid, {n} attainable cells at eta_p={args.eta}")
    _write_manifest(args, argv, started, inputs, outputs)
    return EXIT_OK


def cmd_solve(args, argv, started):
    model = load_model(args.model)
    x, clamped = _parse_query(args.x, model.bounds_)
    if args.mask:
        mask = FreezeMask.freezing(*[d for d in args.mask.split(",") if d.strip()])
    elif args.mode == "adaptive":
        mask = FreezeMask.adaptive()
    elif args.mode == "counterfactual":
        mask = FreezeMask.counterfactual()
    else:
        raise ConfigError("choose --mode adaptive|counterfactual or --mask")
    cfg = SolverConfig(population=args.population, max_iterations=args.max_iterations, seed=args.seed)
    result = solve(AttainmentQuery(model, args.eta), x, mask, cfg)
    print(result.summary())
    if args.output:
        with _locked(args.output):
            result.save(args.output)
        _write_manifest(args, argv, started, [args.model], [args.output], {"clamped": clamped})
    return EXIT_OK


def _read_raw(args) -> list[tuple[float, float]]:
    raws = []
    for text in args.raw or []:
        values = _floats(text)
        if len(values) != 2:
            raise ConfigError("--raw takes ice_raw,angle_raw")
        raws.append((values[0], values[1]))
    if args.raw_file:
        for lineno, line in enumerate(Path(args.raw_file).read_text().splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                values = [float(v) for v in line.replace(",", " ").split()]
            except ValueError:
                raise DatasetError("expected two numbers", line=lineno) from None
            if len(values) != 2:
                raise DatasetError("expected two numbers", line=lineno)
            raws.append((values[0], values[1]))
    return raws


def cmd_calibrate(args, argv, started):
    if args.calibration:
        cal = FeatureCalibrator.load(args.calibration)
    elif args.ice_endpoints and args.angle_endpoints:
        cal = FeatureCalibrator.from_endpoints(_parse_endpoints(args.ice_endpoints), _parse_endpoints(args.angle_endpoints))
    else:
        raise ConfigError("give --ice-endpoints and --angle-endpoints, or --calibration")
    inputs, outputs = [], []
    if args.calibration:
        inputs.append(args.calibration)
    for m in cal.maps_:
        print(f"{DIM_NAMES[m.feature_dim]}: feature = {m.slope:.4f} * raw + {m.intercept:.4f}")
    if args.output:
        with _locked(args.output):
            cal.save(args.output)
        outputs.append(args.output)

    raws = _read_raw(args)
    if args.raw_file:
        inputs.append(args.raw_file)
    model = None
    if args.model:
        if not args.theta:
            raise ConfigError("--model needs --theta kp,ki,kd")
        model = load_model(args.model)
        inputs.append(args.model)
        theta = GainVector(*_floats(args.theta))
    for raw in raws:
        ice, angle = cal.transform(np.array([raw]))[0]
        line = f"raw={raw[0]:g},{raw[1]:g} ice={ice:.4f} ({decode_binary(ice)}) angle={angle:.4f}"
        if model is not None:
            p, ok = calibrated_predict(model, cal.maps_, raw, theta, args.eta)
            line += f" p={p:.6f} attainable={ok}"
        print(line)
    _write_manifest(args, argv, started, inputs, outputs)
    return EXIT_OK


def cmd_replay(args, argv, started):
    manifest = json.loads(Path(args.manifest).read_text())
    replay_argv = list(manifest["argv"])
    expected = {o["path"]: o["sha256"] for o in manifest["outputs"]}
    cwd = os.getcwd()
    os.chdir(manifest.get("cwd", cwd))
    try:
        code = main(replay_argv)
        mismatched = [p for p, digest in expected.items() if _sha256(p) != digest]
    finally:
        os.chdir(cwd)
    if code != EXIT_OK:
        return code
    if mismatched:
        print(f"replay differs for: {', '.join(mismatched)}", file=sys.stderr)
        return 1
    print(f"replayed {manifest['command']}: {len(expected)} output(s) identical")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attainment", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seed = _default_seed()

    p = sub.add_parser("sample", help="run simulated trials")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--reference-plan", action="store_true", help="the default ~420-point plan")
    src.add_argument("--point", action="append", help="ice=..,angle=..,kp=..,ki=..,kd=.. (repeatable)")
    src.add_argument("--grid", help="product plan, e.g. 'ice=0|1;angle=0|15|30;kp=0.5|1'")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--seeds", help="comma-separated seeds; one trial per point and seed")
    p.add_argument("--noise-std", type=float, help="override the friction noise std")
    p.add_argument("--trace-dir", help="also write per-trial trace CSVs here")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="fit the GP success model")
    p.add_argument("dataset")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="success probability at one point")
    p.add_argument("model")
    p.add_argument("-x", required=True, help="five values or name=value pairs")
    p.add_argument("--eta", type=float, default=0.8)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("region", help="2-D slice of the attainment region as CSV (and SVG)")
    p.add_argument("model")
    p.add_argument("--free", required=True, help="two dimensions, e.g. angle,kp")
    p.add_argument("--fix", action="append", help="name=value or name=unrestricted (default for unlisted dims)")
    p.add_argument("--eta", type=float, default=0.8)
    p.add_argument("--resolution", type=int, default=100)
    p.add_argument("--svg")
    p.add_argument("--data", help="dataset to overlay in the SVG")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("solve", help="nearest attainable point")
    p.add_argument("model")
    p.add_argument("-x", required=True)
    p.add_argument("--mode", choices=("adaptive", "counterfactual"))
    p.add_argument("--mask", help="comma-separated dimensions to freeze")
    p.add_argument("--eta", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--population", type=int, default=512)
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("calibrate", help="fit or apply raw-latent to feature maps")
    p.add_argument("--ice-endpoints", help="raw:0,raw:1 (absent, present)")
    p.add_argument("--angle-endpoints", help="raw:0,raw:30 (use --angle-endpoints=... for negative raws)")
    p.add_argument("--calibration", help="existing calibration JSON")
    p.add_argument("--raw", action="append", help="ice_raw,angle_raw reading (repeatable)")
    p.add_argument("--raw-file", help="file with one 'ice_raw angle_raw' reading per line")
    p.add_argument("--model", help="model JSON for calibrated predictions")
    p.add_argument("--theta", help="kp,ki,kd used with --model")
    p.add_argument("--eta", type=float, default=0.8)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.perf_counter()
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args, argv, started)
    except (ConfigError, BoundsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FitError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
