"""Command-line front end: ``lfkit <verb> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("lfkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _set_threads(n: int | None) -> None:
    # must run before numpy's BLAS spins up its pool to have any effect
    if n is None:
        env = os.environ.get("LFKIT_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be at least 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        os.environ.setdefault("OPENBLAS_NUM_THREADS", str(n))
        os.environ.setdefault("OMP_NUM_THREADS", str(n))
        return
    threadpool_limits(n)


def parse_pattern(text: str):
    from .core import SamplingPattern

    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    elif Path(text).is_file():
        text = Path(text).read_text()
    try:
        return SamplingPattern.parse(text)
    except ValueError as exc:
        raise UsageError(f"bad pattern {text!r}: {exc}") from None


def parse_grid(text: str):
    from .core import AngularGrid

    try:
        return AngularGrid.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(result: dict, args) -> None:
    if not args.deterministic:
        result = {**result, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.json_out:
        Path(args.json_out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_model(path):
    from .model import ModelConfig
    from .nn import load_checkpoint

    store, meta = load_checkpoint(path)
    return store, ModelConfig.from_dict(meta.get("model_config", {}))


# --- verbs -----------------------------------------------------------------


def cmd_reconstruct(args) -> dict:
    from .container import load_lightfield, save_lightfield
    from .model import reconstruct

    grid = parse_grid(args.grid)
    pattern = parse_pattern(args.pattern)
    pattern.validate(grid)
    src = load_lightfield(args.input)
    if src.grid == grid:
        sparse = src.views(pattern.coords)
    elif src.grid.rows == len(pattern) and src.grid.cols == 1:
        # container holding only the inputs, stacked in pattern order
        sparse = src.data[:, 0]
    else:
        raise RuntimeError(f"input grid {src.grid} matches neither {grid} nor a {len(pattern)}x1 input stack")
    store, config = _load_model(args.model)
    out = reconstruct(sparse, pattern, grid, config, store)
    save_lightfield(out, args.out, args.format)
    return {"command": "reconstruct", "grid": str(grid), "pattern": [list(c) for c in pattern],
            "output": str(args.out)}


def cmd_train(args) -> dict:
    from .container import load_lightfield
    from .loss import LossWeights
    from .model import ModelConfig
    from .nn import save_checkpoint
    from .scene import SceneSpec, make_synthetic_scene
    from .trainer import TrainConfig, train, write_trace

    data = [load_lightfield(p) for p in args.data]
    for i, spec_path in enumerate(args.scene or []):
        spec = SceneSpec.from_json(Path(spec_path).read_text())
        data.append(make_synthetic_scene(spec, args.seed + i).lightfield)
    if not data:
        raise UsageError("train needs --data or --scene")
    config = ModelConfig.toy() if args.toy else ModelConfig()
    if args.model_config:
        config = ModelConfig.from_dict({**config.to_dict(), **json.loads(Path(args.model_config).read_text())})
    pattern = parse_pattern(args.pattern) if args.pattern else None
    policy = args.policy or ("fixed" if pattern is not None else "random")
    cfg = TrainConfig(patch_size=args.patch_size, lr=args.lr, max_iterations=args.iterations,
                      seed=args.seed, policy=policy, pattern=pattern, k=args.k,
                      grad_accum=args.grad_accum, precision=args.precision)
    weights = LossWeights(*args.weights)
    result = train(data, cfg, weights, config)
    meta = {"model_config": config.to_dict(), "iterations": len(result.trace)}
    save_checkpoint(args.out, result.store, meta)
    trace_path = Path(args.out) / "loss.csv"
    write_trace(trace_path, result.trace)
    out = {"command": "train", "checkpoint": str(args.out), "trace": str(trace_path),
           "iterations": len(result.trace), "final_loss": result.trace[-1][1],
           "final_lr": result.trace[-1][2]}
    if args.figures:
        from .plotting import plot_loss_curve

        out["figures"] = [str(plot_loss_curve(result.trace, Path(args.figures) / "loss.png"))]
    return out


def cmd_optimize_pattern(args) -> dict:
    from .pattern import min_distance_metric, optimize_pattern, pattern_objective

    grid = parse_grid(args.grid)
    if not 1 <= args.k < grid.size:
        raise UsageError(f"--k must be in 1..{grid.size - 1}")
    pat = optimize_pattern(grid, args.k, restarts=args.restarts, seed=args.seed)
    out = {"command": "optimize-pattern", "grid": str(grid), "k": args.k,
           "pattern": [list(c) for c in pat], "objective": pattern_objective(pat, grid),
           "min_distance": min_distance_metric(pat, grid)}
    if args.pattern_out:
        Path(args.pattern_out).write_text(pat.to_text())
    if args.figures:
        from .plotting import plot_pattern

        out["figures"] = [str(plot_pattern(pat, grid, Path(args.figures) / "pattern.png",
                                           f"K={args.k}, objective {out['objective']}"))]
    return out


def cmd_evaluate(args) -> dict:
    from .container import load_lightfield
    from .metrics import evaluate

    recon = load_lightfield(args.recon)
    gt = load_lightfield(args.gt)
    pattern = parse_pattern(args.pattern)
    if recon.grid != gt.grid:
        raise RuntimeError(f"grid mismatch: reconstruction {recon.grid}, ground truth {gt.grid}")
    pattern.validate(gt.grid)
    report = evaluate(recon, gt, pattern)
    out = {"command": "evaluate", **report.to_dict()}
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
        out["csv"] = str(args.csv)
    if args.figures:
        from .core import extract_epi
        from .plotting import plot_epi, plot_view_psnr

        fig_dir = Path(args.figures)
        mid_u = (gt.grid.rows + 1) // 2
        row = gt.height // 2
        epis = [extract_epi(gt, "h", mid_u, row), extract_epi(recon, "h", mid_u, row)]
        out["figures"] = [
            str(plot_view_psnr(report, gt.grid, pattern, fig_dir / "view_psnr.png")),
            str(plot_epi(epis, fig_dir / "epi.png", ["ground truth", "reconstruction"])),
        ]
    return out


def cmd_synth(args) -> dict:
    from .container import save_lightfield
    from .scene import SceneSpec, make_synthetic_scene

    spec = SceneSpec.from_json(Path(args.spec).read_text())
    scene = make_synthetic_scene(spec, args.seed)
    save_lightfield(scene.lightfield, args.out, args.format)
    out = {"command": "synth", "output": str(args.out), "grid": str(spec.grid),
           "height": spec.height, "width": spec.width,
           "layers": [layer.disparity for layer in spec.layers]}
    if args.disparity:
        center = ((spec.grid.rows + 1) // 2, (spec.grid.cols + 1) // 2)
        np.save(args.disparity, scene.disparity_map(center).values)
        out["disparity"] = str(args.disparity)
    return out


def cmd_epi(args) -> dict:
    from .container import load_lightfield
    from .core import extract_epi
    from .plotting import plot_epi

    lf = load_lightfield(args.input)
    epi = extract_epi(lf, args.orientation, args.angular, args.spatial)
    out = {"command": "epi", "orientation": args.orientation, "shape": list(epi.image.shape),
           "axes": list(epi.axes)}
    if args.csv:
        np.savetxt(args.csv, epi.image, delimiter=",", fmt="%.6f")
        out["csv"] = str(args.csv)
    if args.figures:
        out["figures"] = [str(plot_epi(epi, Path(args.figures) / "epi.png"))]
    return out


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json-out", help="write the JSON result here instead of stdout")
    common.add_argument("--deterministic", action="store_true",
                        help="omit timestamps and force single-threaded reductions")
    common.add_argument("--threads", type=int, help="BLAS threads (default: LFKIT_THREADS or all cores)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="lfkit", description="Sparse-to-dense light field reconstruction toolkit.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("reconstruct", parents=[common], help="densify a sparse light field")
    s.add_argument("--input", required=True, help="light field container (full grid or input stack)")
    s.add_argument("--pattern", required=True, help='"u,v;u,v;..." or @file')
    s.add_argument("--grid", required=True, help="output grid, e.g. 7x7")
    s.add_argument("--model", required=True, help="checkpoint directory")
    s.add_argument("--out", required=True, help="output container directory")
    s.add_argument("--format", choices=("png", "pfm"), default="png")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", nargs="*", default=[], help="light field containers")
    s.add_argument("--scene", nargs="*", help="synthetic scene JSON specs")
    s.add_argument("--pattern", help="fixed training pattern")
    s.add_argument("--policy", choices=("fixed", "random", "range"))
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--iterations", type=int, default=1000)
    s.add_argument("--patch-size", type=int, default=32)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--grad-accum", type=int, default=1)
    s.add_argument("--weights", type=float, nargs=3, default=(1.0, 0.001, 1.0),
                   metavar=("COARSE", "SMOOTH", "REFINED"))
    s.add_argument("--precision", choices=("single", "double"), default="single")
    s.add_argument("--toy", action="store_true", help="use the small model configuration")
    s.add_argument("--model-config", help="JSON file overriding model configuration fields")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--figures", help="directory for the loss-curve figure")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("optimize-pattern", parents=[common], help="optimize a sampling pattern")
    s.add_argument("--grid", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--restarts", type=int, default=5)
    s.add_argument("--pattern-out", help="also write the pattern as text")
    s.add_argument("--figures", help="directory for the pattern figure")
    s.set_defaults(func=cmd_optimize_pattern)

    s = sub.add_parser("evaluate", parents=[common], help="score a reconstruction")
    s.add_argument("--recon", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--pattern", required=True)
    s.add_argument("--csv", help="per-view CSV report path")
    s.add_argument("--figures", help="directory for PSNR heatmap and EPI figures")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic scene")
    s.add_argument("--spec", required=True, help="scene JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("png", "pfm"), default="pfm")
    s.add_argument("--disparity", help="save the central view's disparity as .npy")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("epi", parents=[common], help="extract an epipolar-plane image")
    s.add_argument("--input", required=True)
    s.add_argument("--orientation", choices=("horizontal", "vertical", "h", "v"), default="horizontal")
    s.add_argument("--angular", type=int, required=True, help="fixed u (horizontal) or v (vertical), 1-based")
    s.add_argument("--spatial", type=int, required=True, help="fixed y or x, 0-based")
    s.add_argument("--csv")
    s.add_argument("--figures")
    s.set_defaults(func=cmd_epi)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        _set_threads(1 if args.deterministic and args.threads is None else args.threads)
        result = args.func(args)
    except UsageError as exc:
        print(f"lfkit: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:  # noqa: BLE001
        log.debug("command failed", exc_info=True)
        print(f"lfkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    _emit(result, args)
    return 0


def main() -> None:
    sys.exit(run())
