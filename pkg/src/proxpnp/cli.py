"""Command-line driver: degrade, restore, verify, spectral-report, batch.

Exit codes: 0 success, 1 usage error, 2 failed hypothesis or audit,
3 numeric abort. Settings resolve as defaults < flags < ``--config`` file,
and every summary embeds the resolved experiment spec.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .core import make_kernel, psnr, read_image, synthetic_image, write_image
from .denoiser import make_denoiser
from .fidelity import MaskModel, model_from_dict, synthesize
from .solver import HypothesisError, NumericAbort, SolverConfig, effective_denoiser, solve, validate
from .spectral import along_trajectory_check, max_spectral_over_corpus, spectral_table_csv

log = logging.getLogger("proxpnp")

EXIT_OK, EXIT_USAGE, EXIT_HYPOTHESIS, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "PNPPROX_OUTPUT_ROOT"

# noise level -> (lam / nu^2, sigma / nu)
DEFAULT_TABLE = {
    "pgd": {2.55 / 255: (0.99, 0.75), 7.65 / 255: (0.99, 0.5), 12.75 / 255: (0.99, 0.5)},
    "drs": {2.55 / 255: (5.0, 2.0), 7.65 / 255: (1.5, 1.0), 12.75 / 255: (0.75, 0.5)},
}
DEFAULT_TABLE["drs_diff"] = DEFAULT_TABLE["admm"] = DEFAULT_TABLE["pgd"]
INPAINT_DEFAULTS = {"lam": 2.0, "sigma": 15 / 255, "warmup_sigma": 50 / 255, "warmup_iters": 10,
                    "max_iter": 200}


class UsageError(Exception):
    pass


def default_params(algorithm, nu, task="deblur", interpolate=False):
    """Default ``(lam, sigma, interpolated)`` for an algorithm and noise level.

    Tabulated levels return their exact entries. Other levels need
    ``interpolate``: the ratios ``lam / nu^2`` and ``sigma / nu`` are
    interpolated linearly in ``nu`` and held constant outside the table.
    Inpainting uses fixed values independent of ``nu``.
    """
    algorithm = algorithm.lower().replace("-", "_")
    if algorithm not in DEFAULT_TABLE:
        raise ValueError(f"unsupported algorithm {algorithm!r}")
    if task == "inpaint":
        return INPAINT_DEFAULTS["lam"], INPAINT_DEFAULTS["sigma"], False
    table = DEFAULT_TABLE[algorithm]
    for level, (lr, sr) in table.items():
        if math.isclose(nu, level, rel_tol=1e-9):
            return lr * nu**2, sr * nu, False
    if not interpolate:
        raise ValueError(f"noise level {nu} is not tabulated; pass the interpolation flag")
    levels = sorted(table)
    lr = float(np.interp(nu, levels, [table[v][0] for v in levels]))
    sr = float(np.interp(nu, levels, [table[v][1] for v in levels]))
    return lr * nu**2, sr * nu, True


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one run.

    ``image`` is a file path or ``synthetic:SIZE``. Solver fields left as
    ``None`` are filled from :func:`default_params` at resolution time.
    """

    task: str = "deblur"
    image: str = "synthetic:64"
    observation: str | None = None
    mask: str | None = None
    kernel: str = "gaussian"
    kernel_size: int | None = None
    kernel_std: float = 1.6
    scale: int = 2
    nu: float = 7.65 / 255
    p: float = 0.5
    seed: int = 0
    algorithm: str = "pgd"
    lam: float | None = None
    sigma: float | None = None
    alpha: float | None = None
    max_iter: int | None = None
    rel_tol: float = 1e-8
    gamma: float = 0.0
    denoiser: str | None = None
    lipschitz: float = 0.9
    warmup_iters: int | None = None
    warmup_sigma: float | None = None
    interpolate: bool = False
    override: bool = False
    snapshot_every: int = 0
    output: str | None = None
    name: str = "run"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**data)

    def resolved(self):
        """Copy with every default filled in; raises :class:`UsageError` on bad values."""
        if self.task not in ("deblur", "sr", "inpaint"):
            raise UsageError(f"unknown task {self.task!r}")
        d = self.to_dict()
        algo = d["algorithm"].lower().replace("-", "_")
        d["algorithm"] = algo
        try:
            lam, sigma, flagged = default_params(algo, self.nu, self.task, self.interpolate)
        except ValueError as exc:
            if self.lam is None or self.sigma is None:
                raise UsageError(str(exc)) from exc
            lam, sigma, flagged = self.lam, self.sigma, False
        if flagged:
            log.warning("noise level %g not tabulated; interpolated defaults used", self.nu)
        d["lam"] = lam if self.lam is None else self.lam
        d["sigma"] = sigma if self.sigma is None else self.sigma
        if d["alpha"] is None:
            d["alpha"] = 0.5 if algo == "drs" else 1.0
        if d["max_iter"] is None:
            d["max_iter"] = INPAINT_DEFAULTS["max_iter"] if self.task == "inpaint" else 1000
        if d["denoiser"] is None:
            d["denoiser"] = "linear" if self.task == "inpaint" else "pointwise"
        if self.task == "inpaint":
            if d["warmup_iters"] is None:
                d["warmup_iters"] = INPAINT_DEFAULTS["warmup_iters"]
            if d["warmup_sigma"] is None:
                d["warmup_sigma"] = INPAINT_DEFAULTS["warmup_sigma"]
        else:
            d["warmup_iters"] = d["warmup_iters"] or 0
        if d["kernel_size"] is None and d["kernel"] == "uniform":
            d["kernel_size"] = 9
        return ExperimentSpec(**d)

    def solver_config(self, **extra):
        return SolverConfig(algorithm=self.algorithm, lam=self.lam, sigma=self.sigma, alpha=self.alpha,
                            max_iter=self.max_iter, rel_tol=self.rel_tol, gamma=self.gamma, seed=self.seed,
                            override=self.override, snapshot_every=self.snapshot_every, **extra)


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "pnp_runs"))


def load_ground_truth(spec):
    if spec.image.startswith("synthetic:"):
        size = int(spec.image.split(":", 1)[1])
        return synthetic_image(size, seed=spec.seed)
    path = Path(spec.image)
    if not path.exists():
        raise UsageError(f"image {path} does not exist")
    return read_image(path)


def build_kernel(spec):
    if spec.kernel == "uniform":
        return make_kernel("uniform", size=spec.kernel_size)
    if spec.kernel == "gaussian":
        return make_kernel("gaussian", std=spec.kernel_std, size=spec.kernel_size)
    raise UsageError(f"unknown kernel {spec.kernel!r}")


def build_model(spec, x_true):
    variant = {"deblur": "blur", "sr": "downsample", "inpaint": "mask"}[spec.task]
    kernel = None if variant == "mask" else build_kernel(spec)
    return synthesize(variant, x_true, spec.nu, seed=spec.seed, kernel=kernel, scale=spec.scale, p=spec.p)


def load_model(spec):
    """Model from a pre-degraded observation; no ground truth is available."""
    y = read_image(spec.observation) if not spec.observation.endswith(".npy") else np.load(spec.observation)
    variant = {"deblur": "blur", "sr": "downsample", "inpaint": "mask"}[spec.task]
    data = {"variant": variant, "nu": spec.nu, "scale": spec.scale}
    mask = None
    if variant == "mask":
        if spec.mask is None:
            raise UsageError("inpainting from an observation needs --mask")
        mask = (read_image(spec.mask) > 0.5).astype(np.float64)
    else:
        data["kernel"] = build_kernel(spec).taps
    return model_from_dict(data, y, mask)


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _finite_or_str(v):
    return v if math.isfinite(v) else str(v)


def degrade(spec, out):
    """Synthesize the observation and write it next to the ground truth."""
    out.mkdir(parents=True, exist_ok=True)
    x_true = load_ground_truth(spec)
    m = build_model(spec, x_true)
    write_image(out / "ground_truth.png", x_true)
    write_image(out / "degraded.png", m.y)
    np.save(out / "observation.npy", m.y)
    if isinstance(m, MaskModel):
        write_image(out / "mask.png", m.mask)
    _dump_json(out / "degradation.json", {"spec": spec.to_dict(), "degradation": m.to_dict(), "seed": spec.seed})
    return x_true, m


def run_experiment(spec):
    """Degrade (or load), restore, and write images, trace and summary.

    Returns the process exit status.
    """
    spec = spec.resolved()
    out = Path(spec.output) if spec.output else output_root() / spec.name
    out.mkdir(parents=True, exist_ok=True)
    log.info("resolved spec: %s", json.dumps(spec.to_dict(), sort_keys=True))
    if spec.observation:
        x_true, m = None, load_model(spec)
        write_image(out / "degraded.png", m.y)
    else:
        x_true, m = degrade(spec, out)
    shape = m.shape
    D = make_denoiser(spec.denoiser, spec.sigma, shape, spec.lipschitz)
    cfg = spec.solver_config()
    report = validate(cfg, D, m)
    summary = {"spec": spec.to_dict(), "hypotheses": report.to_dict(), "denoiser": D.to_dict(),
               "degradation": m.to_dict()}
    if not report.passed and not cfg.override:
        summary["status"] = "hypothesis failure"
        _dump_json(out / "summary.json", summary)
        log.error("hypothesis check failed; rerun with --override to proceed")
        return EXIT_HYPOTHESIS
    x0 = m.initial_guess()
    try:
        if spec.warmup_iters:
            D_warm = make_denoiser(spec.denoiser, spec.warmup_sigma, shape, spec.lipschitz)
            warm_cfg = spec.solver_config()
            warm_cfg.max_iter = spec.warmup_iters
            warm_cfg.override = True
            _, warm = solve(warm_cfg, D_warm, m, x0)
            x0 = warm.state
        x, trace = solve(cfg, D, m, x0, x_true)
    except NumericAbort as exc:
        summary["status"] = f"numeric abort: {exc}"
        (out / "trace.csv").write_text(exc.trace.to_csv())
        _dump_json(out / "summary.json", summary)
        log.error("numeric abort: %s", exc)
        return EXIT_NUMERIC
    except HypothesisError as exc:
        summary["status"] = str(exc)
        _dump_json(out / "summary.json", summary)
        return EXIT_HYPOTHESIS
    write_image(out / "restored.png", x)
    np.save(out / "restored.npy", x)
    (out / "trace.csv").write_text(trace.to_csv())
    summary["result"] = trace.summary()
    summary["status"] = "ok"
    if trace.snapshots:
        Deff = effective_denoiser(cfg, D, int(np.prod(shape)))
        summary["trajectory_spectral"] = along_trajectory_check(trace.snapshots, Deff)
    if x_true is not None:
        x_in = m.initial_guess()
        summary["psnr_input"] = _finite_or_str(psnr(x_in, x_true))
        summary["psnr_output"] = _finite_or_str(psnr(x, x_true))
    _dump_json(out / "summary.json", summary)
    log.info("%s: %s after %d iterations", spec.name, trace.stop_reason, len(trace))
    return EXIT_OK


# --------------------------------------------------------------------------
# verify and spectral report
# --------------------------------------------------------------------------


def run_verify(out, seed=0, quick=True):
    """Small-scale oracle suite; returns ``(all_passed, report)``."""
    from . import verify_suite

    report = verify_suite.run_all(seed=seed, quick=quick)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "verify.json", report)
    return all(item["passed"] for item in report["checks"]), report


def run_spectral_report(denoisers, sigmas, images, iters, seed):
    rows = {}
    for kind in denoisers:
        def factory(sigma, shape, kind=kind):
            return make_denoiser(kind, sigma, shape)

        rows[kind] = max_spectral_over_corpus(factory, images, sigmas, iters=iters, seed=seed)
    return spectral_table_csv(rows)


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


SPEC_FLAGS = [
    ("--task", str, "deblur, sr or inpaint"),
    ("--image", str, "ground-truth image path or synthetic:SIZE"),
    ("--observation", str, "pre-degraded image (.png/.pgm/.npy); disables synthesis and PSNR"),
    ("--mask", str, "mask image for inpainting from an observation"),
    ("--kernel", str, "gaussian or uniform"),
    ("--kernel-size", int, "odd kernel support"),
    ("--kernel-std", float, "gaussian standard deviation"),
    ("--scale", int, "super-resolution factor"),
    ("--nu", float, "noise standard deviation"),
    ("--p", float, "observed fraction for inpainting"),
    ("--seed", int, "seed for noise and mask"),
    ("--algorithm", str, "pgd, drs-diff, drs or admm"),
    ("--lam", float, "regularization trade-off lambda"),
    ("--sigma", float, "denoiser noise level"),
    ("--alpha", float, "denoiser relaxation in (0, 1]"),
    ("--max-iter", int, "iteration cap"),
    ("--rel-tol", float, "relative objective change for stopping"),
    ("--gamma", float, "coercivity penalty strength"),
    ("--denoiser", str, "pointwise or linear"),
    ("--lipschitz", float, "certified Lipschitz constant of the denoiser residual"),
    ("--warmup-iters", int, "warm-up iterations at a larger noise level"),
    ("--warmup-sigma", float, "noise level of the warm-up denoiser"),
    ("--snapshot-every", int, "store denoiser inputs every N iterations for the spectral check"),
    ("--output", str, "output directory"),
    ("--name", str, "run name under the output root"),
]


def _add_spec_flags(p):
    for flag, typ, help_ in SPEC_FLAGS:
        p.add_argument(flag, type=typ, default=argparse.SUPPRESS, help=help_)
    p.add_argument("--interpolate", action="store_true", default=argparse.SUPPRESS,
                   help="allow interpolated defaults for untabulated noise levels")
    p.add_argument("--override", action="store_true", default=argparse.SUPPRESS,
                   help="run even if a checked hypothesis fails")
    p.add_argument("--config", type=str, default=None, help="JSON spec; its values take precedence over flags")


def _spec_from_args(args):
    data = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose", "func")}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        data.update(json.loads(path.read_text()))
    return ExperimentSpec.from_dict(data)


def build_parser():
    p = _Parser(prog="proxpnp", description="Plug-and-play restoration with an explicit regularizer.")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("degrade", help="synthesize a degraded observation")
    _add_spec_flags(d)
    r = sub.add_parser("restore", help="degrade (or load) and restore, writing trace and summary")
    _add_spec_flags(r)

    v = sub.add_parser("verify", help="run the oracle suite")
    v.add_argument("--output", type=str, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--full", action="store_true", help="larger instances")

    s = sub.add_parser("spectral-report", help="max Jacobian norm per noise level over a corpus")
    s.add_argument("--denoisers", type=str, default="pointwise,linear")
    s.add_argument("--sigmas", type=str, default="0.01,0.03,0.05")
    s.add_argument("--images", type=str, nargs="*", default=None)
    s.add_argument("--corpus-size", type=int, default=3)
    s.add_argument("--image-size", type=int, default=32)
    s.add_argument("--iters", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", type=str, default=None, help="CSV path; stdout when omitted")

    b = sub.add_parser("batch", help="run a JSON list of experiment specs on worker threads")
    b.add_argument("specs", type=str)
    b.add_argument("--workers", type=int, default=4)
    b.add_argument("--output", type=str, default=None, help="root for runs without an explicit output")
    return p


def _cmd_degrade(args):
    spec = _spec_from_args(args).resolved()
    out = Path(spec.output) if spec.output else output_root() / spec.name
    degrade(spec, out)
    return EXIT_OK


def _cmd_restore(args):
    return run_experiment(_spec_from_args(args))


def _cmd_verify(args):
    out = Path(args.output) if args.output else output_root() / "verify"
    ok, report = run_verify(out, seed=args.seed, quick=not args.full)
    for item in report["checks"]:
        print(f"{'PASS' if item['passed'] else 'FAIL'} {item['name']}")
    return EXIT_OK if ok else EXIT_HYPOTHESIS


def _cmd_spectral(args):
    sigmas = [float(s) for s in args.sigmas.split(",")]
    if args.images:
        images = [read_image(p) for p in args.images]
    else:
        images = [synthetic_image(args.image_size, seed=args.seed + i) for i in range(args.corpus_size)]
    text = run_spectral_report(args.denoisers.split(","), sigmas, images, args.iters, args.seed)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_batch(args):
    path = Path(args.specs)
    if not path.exists():
        raise UsageError(f"batch file {path} does not exist")
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise UsageError("batch file must hold a JSON list of specs")
    root = Path(args.output) if args.output else output_root()
    specs = []
    for i, entry in enumerate(entries):
        spec = ExperimentSpec.from_dict(entry)
        if spec.name == "run":
            spec.name = f"run{i:03d}"
        if spec.output is None:
            spec.output = str(root / spec.name)
        specs.append(spec)
    names = [s.output for s in specs]
    if len(set(names)) != len(names):
        raise UsageError("batch specs write to the same output directory")
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        codes = list(pool.map(run_experiment, specs))
    for spec, code in zip(specs, codes):
        print(f"{spec.name}: exit {code}")
    return max(codes) if codes else EXIT_OK


COMMANDS = {"degrade": _cmd_degrade, "restore": _cmd_restore, "verify": _cmd_verify,
            "spectral-report": _cmd_spectral, "batch": _cmd_batch}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
