"""``occflow`` command line: estimate, evaluate, visualize, gradcheck, synth.

Exit codes: 0 ok, 1 gradcheck failure, 2 usage or I/O error, 3 dimension
mismatch, 4 solver divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import flowio, kernels
from .core import format_directions, parse_directions
from .errors import DimMismatch, FormatError, ImageTooSmall, NocNotSubset, NonFiniteGradient, NonFiniteLoss
from .loss import LossConfig
from .solve import SolveConfig

FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_IO = 2
EXIT_DIMS = 3
EXIT_DIVERGED = 4

_IO_KEYS = ("prev", "curr", "next", "out_fwd", "out_bwd")


@dataclass
class RunConfig:
    """Loss and solver settings plus I/O paths, as one flat key=value namespace."""

    loss: LossConfig = field(default_factory=LossConfig)
    solve: SolveConfig = field(default_factory=SolveConfig)
    io: dict = field(default_factory=dict)

    def items(self):
        for f in dataclasses.fields(self.loss):
            v = getattr(self.loss, f.name)
            if f.name in ("directions", "smooth_directions"):
                v = "" if v is None else format_directions(v)
            yield f.name, v
        for f in dataclasses.fields(self.solve):
            yield f.name, getattr(self.solve, f.name)
        for k in _IO_KEYS:
            if self.io.get(k) is not None:
                yield k, self.io[k]

    def dumps(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())


def _coerce(cls, name: str, raw: str):
    if name in ("directions",):
        return parse_directions(raw)
    if name == "smooth_directions":
        return None if raw.strip() in ("", "none", "None") else parse_directions(raw)
    default = getattr(cls(), name)
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment.  Returns raw strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def build_config(file_values: dict[str, str] | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults < ``file_values`` (raw strings) < ``overrides`` (typed or raw)."""
    loss_keys = {f.name for f in dataclasses.fields(LossConfig)}
    solve_keys = {f.name for f in dataclasses.fields(SolveConfig)}
    loss_kw, solve_kw, io = {}, {}, {}
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(merged) - loss_keys - solve_keys - set(_IO_KEYS))
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    for k, v in merged.items():
        if k in loss_keys:
            loss_kw[k] = _coerce(LossConfig, k, v) if isinstance(v, str) else v
        elif k in solve_keys:
            solve_kw[k] = _coerce(SolveConfig, k, v) if isinstance(v, str) else v
        else:
            io[k] = v
    return RunConfig(LossConfig(**loss_kw), SolveConfig(**solve_kw), io)


def _emit(key: str, value) -> None:
    if isinstance(value, float):
        value = repr(value)
    print(f"{key}={value}")


def _fail(code: int, msg: str) -> int:
    print(f"occflow: error: {msg}", file=sys.stderr)
    return code


# -- commands -------------------------------------------------------------------

def cmd_estimate(args) -> int:
    from .solve import estimate_flow

    try:
        file_values = {}
        if args.config:
            with open(args.config) as fh:
                file_values = parse_config_text(fh.read(), args.config)
        cfg = build_config(file_values, {
            "prev": args.prev, "curr": args.curr, "next": args.next,
            "out_fwd": args.out_fwd, "out_bwd": args.out_bwd,
            "levels": args.levels, "iterations_per_level": args.iters, "step_size": args.step,
            "occlusion_mode": args.occlusion_mode,
            "directions": parse_directions(args.directions) if args.directions else None,
            "seed": args.seed,
        })
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read config: {exc}")
    except ValueError as exc:
        return _fail(EXIT_IO, f"bad configuration: {exc}")
    missing = [k for k in _IO_KEYS if not cfg.io.get(k)]
    if missing:
        return _fail(EXIT_IO, "missing required path(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    for key in ("out_fwd", "out_bwd"):
        ext = os.path.splitext(cfg.io[key])[1].lower()
        if ext not in (".flo", ".png"):
            return _fail(EXIT_IO, f"{cfg.io[key]}: output extension must be .flo or .png")

    try:
        frames = [flowio.read_image(cfg.io[k]) for k in ("prev", "curr", "next")]
    except (OSError, FormatError) as exc:
        return _fail(EXIT_IO, str(exc))

    every = max(int(args.trace_every), 1)

    def trace(level, it, br):
        if args.quiet or it % every:
            return
        print(f"{level}\t{it}\t{br.total:.9g}\t{br.p1st:.9g}\t{br.p2nd:.9g}\t{br.smooth:.9g}")

    print(f"format_version={FORMAT_VERSION}")
    if not args.quiet:
        print("level\titeration\ttotal\tp1st\tp2nd\tsmooth")
    try:
        F_b, F_f, report = estimate_flow(*frames, cfg.solve, cfg.loss, callback=trace)
    except (DimMismatch, ImageTooSmall) as exc:
        return _fail(EXIT_DIMS, str(exc))
    except (NonFiniteLoss, NonFiniteGradient) as exc:
        return _fail(EXIT_DIVERGED, f"solver diverged: {exc}")

    outputs = [(cfg.io["out_fwd"], lambda p: flowio.write_flow(F_f, p)),
               (cfg.io["out_bwd"], lambda p: flowio.write_flow(F_b, p))]
    if args.out_weights_fwd or args.out_weights_bwd:
        from .loss import FlowObjective

        br = FlowObjective(frames[0], frames[1], frames[2], cfg.loss).evaluate(F_b, F_f)
        if args.out_weights_fwd:
            outputs.append((args.out_weights_fwd, lambda p: flowio.write_image(br.w_f, p)))
        if args.out_weights_bwd:
            outputs.append((args.out_weights_bwd, lambda p: flowio.write_image(br.w_b, p)))
    if args.out_color_fwd:
        outputs.append((args.out_color_fwd, lambda p: flowio.write_image(flowio.flow_to_color(F_f), p)))
    if args.out_color_bwd:
        outputs.append((args.out_color_bwd, lambda p: flowio.write_image(flowio.flow_to_color(F_b), p)))

    written = []
    try:
        for path, write in outputs:
            write(path)
            written.append(path)
    except (OSError, FormatError) as exc:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        return _fail(EXIT_IO, f"cannot write outputs: {exc}")

    for trace_ in report.levels:
        _emit(f"level{trace_.level_index}_iterations", trace_.iterations)
        _emit(f"level{trace_.level_index}_loss", float(trace_.losses[-1]))
    _emit("final_loss", float(report.final_loss))
    _emit("backend", kernels.BACKEND)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evalkit import evaluate, format_report

    try:
        est = flowio.read_flow(args.est)
        gt_occ = flowio.read_flow(args.gt_occ)
        gt_noc = flowio.read_flow(args.gt_noc)
    except (OSError, FormatError) as exc:
        return _fail(EXIT_IO, str(exc))
    try:
        report = evaluate(est, gt_occ, gt_noc)
    except (DimMismatch, NocNotSubset) as exc:
        return _fail(EXIT_DIMS, f"{type(exc).__name__}: {exc}")
    print(format_report(report))
    print(f"format_version={FORMAT_VERSION}")
    for k, v in report.as_dict().items():
        _emit(k, v)
    if report.empty_regions:
        print("warning: empty region(s): " + ", ".join(report.empty_regions), file=sys.stderr)
    return EXIT_OK


def cmd_visualize(args) -> int:
    try:
        ff = flowio.read_flow(args.flow)
    except (OSError, FormatError) as exc:
        return _fail(EXIT_IO, str(exc))
    flow = np.where(ff.valid[:, :, None], ff.flow, 0.0)
    try:
        flowio.write_image(flowio.flow_to_color(flow, args.max_radius), args.out)
    except (OSError, FormatError) as exc:
        return _fail(EXIT_IO, str(exc))
    print(f"format_version={FORMAT_VERSION}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .solve import gradcheck_all_modes

    try:
        file_values = {}
        if args.config:
            with open(args.config) as fh:
                file_values = parse_config_text(fh.read(), args.config)
        cfg = build_config(file_values, {
            "directions": parse_directions(args.directions) if args.directions else None,
            "seed": args.seed,
        })
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read config: {exc}")
    except ValueError as exc:
        return _fail(EXIT_IO, f"bad configuration: {exc}")
    reports = gradcheck_all_modes(cfg.solve, cfg.loss, size=args.size, trials=args.trials,
                                  corrupt=args.corrupt_gradient)
    print(f"format_version={FORMAT_VERSION}")
    for r in reports:
        _emit(f"max_rel_error_{r.occlusion_mode}", r.max_rel_error)
    worst = max(r.max_rel_error for r in reports)
    _emit("max_rel_error", worst)
    _emit("trials", args.trials)
    ok = all(r.ok for r in reports)
    _emit("status", "ok" if ok else "fail")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_synth(args) -> int:
    from .synth import make_scene, write_scene

    params = {"seed": args.seed, "size": args.size, "channels": args.channels}
    if args.scene == "translate":
        params.update(dx=args.dx, dy=args.dy)
    elif args.scene == "occluder":
        params.update(speed=args.speed, block=args.block)
    else:
        params.update(speed=args.speed)
    try:
        scene = make_scene(args.scene, **params)
    except ValueError as exc:
        return _fail(EXIT_IO, str(exc))
    try:
        paths = write_scene(scene, args.out)
    except (OSError, FormatError) as exc:
        return _fail(EXIT_IO, str(exc))
    print(f"format_version={FORMAT_VERSION}")
    for k, p in paths.items():
        _emit(k, p)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occflow", description="Occlusion-aware optical flow by direct optimization.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate forward and backward flow for the middle frame")
    e.add_argument("--prev")
    e.add_argument("--curr")
    e.add_argument("--next")
    e.add_argument("--out-fwd", help=".flo or KITTI .png")
    e.add_argument("--out-bwd", help=".flo or KITTI .png")
    e.add_argument("--config", help="key=value file; flags override it")
    e.add_argument("--levels", type=int)
    e.add_argument("--iters", type=int, help="iterations per pyramid level")
    e.add_argument("--step", type=float, help="Adam step size in px")
    e.add_argument("--occlusion-mode", choices=("soft", "hard_min", "off"))
    e.add_argument("--directions", help="4, paper, axis or dx,dy;dx,dy;...")
    e.add_argument("--seed", type=int)
    e.add_argument("--out-weights-fwd", help="PNG of the forward occlusion weights")
    e.add_argument("--out-weights-bwd", help="PNG of the backward occlusion weights")
    e.add_argument("--out-color-fwd", help="color-coded forward flow PNG")
    e.add_argument("--out-color-bwd", help="color-coded backward flow PNG")
    e.add_argument("--trace-every", type=int, default=1, help="print every n-th iteration of the loss trace")
    e.add_argument("--quiet", action="store_true", help="suppress the loss trace")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", help="EPE over ALL / NOC / OCC regions")
    v.add_argument("--est", required=True)
    v.add_argument("--gt-occ", required=True)
    v.add_argument("--gt-noc", required=True)
    v.set_defaults(func=cmd_evaluate)

    z = sub.add_parser("visualize", help="color-code a flow file")
    z.add_argument("--flow", required=True)
    z.add_argument("--out", required=True)
    z.add_argument("--max-radius", type=float, help="saturation radius in px (default: 99th percentile)")
    z.set_defaults(func=cmd_visualize)

    g = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    g.add_argument("--size", type=int, default=8)
    g.add_argument("--trials", type=_positive_int, default=100)
    g.add_argument("--seed", type=int)
    g.add_argument("--config")
    g.add_argument("--directions")
    g.add_argument("--corrupt-gradient", action="store_true", help="inject a unit error (tests the checker)")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic triplet with ground truth")
    s.add_argument("scene", choices=("translate", "occluder", "diagonal"))
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--dx", type=float, default=2.0)
    s.add_argument("--dy", type=float, default=0.0)
    s.add_argument("--speed", type=int, default=3)
    s.add_argument("--block", type=int, default=20)
    s.add_argument("--channels", type=int, choices=(1, 3), default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gradcheck" and args.size < 4:
        parser.error("--size must be >= 4")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
