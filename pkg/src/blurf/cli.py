"""Command-line entry point: synth / train / render / eval / check."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

USAGE_EXIT = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blurf", description="Deblurring dynamic radiance fields.")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics for byte-identical outputs")
        return sp

    s = common(sub.add_parser("synth", help="generate a synthetic blurry sequence"))
    s.add_argument("--scene", default="moving-square", help="preset name")
    s.add_argument("--script", default=None, help="scene script JSON (overrides --scene)")
    s.add_argument("--prior-dilation", type=int, default=None,
                   help="fatten foreground in the depth/flow priors by this many pixels")

    t = common(sub.add_parser("train", help="optimise a model on a dataset"))
    t.add_argument("--data", default=None, help="dataset directory (manifest.json)")
    t.add_argument("--scene", default=None, help="generate this preset instead of --data")
    t.add_argument("--config", default=None, help="TrainConfig JSON")
    t.add_argument("--preset", default="compact", help="config preset when --config is absent")
    t.add_argument("--steps", type=int, default=None)

    r = common(sub.add_parser("render", help="render sharp views from a checkpoint"))
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--config", default=None)
    r.add_argument("--frame", type=int, default=None)
    r.add_argument("--fraction", type=float, default=0.5, help="exposure fraction in [0, 1]")
    r.add_argument("--samples", type=int, default=64)

    e = common(sub.add_parser("eval", help="score mid-exposure renders against sharp frames"))
    e.add_argument("--ckpt", default=None, help="checkpoint; omit to score the blurry inputs")
    e.add_argument("--data", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--samples", type=int, default=64)

    c = common(sub.add_parser("check", help="run the numerical property suite"))
    c.add_argument("--fast", action="store_true", help="smaller sample counts")
    return p


def git_describe() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_provenance(out: str, command: str, config: dict, seed, wall: float, argv) -> str:
    blob = json.dumps(config, sort_keys=True).encode()
    record = {
        "command": command,
        "argv": list(argv),
        "config_hash": hashlib.sha256(blob).hexdigest()[:16],
        "seed": seed,
        "git_describe": git_describe(),
        "wall_time_s": round(wall, 3),
    }
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "run.json")
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
    return path


def _limit_threads(args) -> None:
    """Honour BLURF_THREADS; deterministic runs default to one thread."""
    n = os.environ.get("BLURF_THREADS") or ("1" if args.deterministic else None)
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)


def _synth(args) -> tuple:
    from . import synthdata as sd
    if args.script:
        with open(args.script) as fh:
            script = sd.SceneScript.from_dict(json.load(fh))
    else:
        if args.scene not in sd.PRESETS:
            raise SystemExit(f"unknown scene {args.scene!r}; choose from {sorted(sd.PRESETS)}")
        kw = {} if args.seed is None else {"seed": args.seed}
        script = sd.PRESETS[args.scene](**kw)
    if args.prior_dilation is not None:
        script.prior_dilation = args.prior_dilation
    out = args.out or "data"
    sd.write_dataset(sd.generate(script), out)
    print(f"wrote {out}/manifest.json")
    return out, script.to_dict(), args.seed


def _load_config(args, ckpt_dir=None):
    from .training import PRESETS, TrainConfig
    if args.config:
        return TrainConfig.load(args.config)
    if ckpt_dir and os.path.exists(os.path.join(ckpt_dir, "config.json")):
        return TrainConfig.load(os.path.join(ckpt_dir, "config.json"))
    preset = getattr(args, "preset", "compact")
    if preset not in PRESETS:
        raise SystemExit(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return PRESETS[preset]()


def _dataset(args):
    from . import synthdata as sd
    if getattr(args, "data", None):
        return sd.read_dataset(args.data)
    scene = getattr(args, "scene", None) or "moving-square"
    return sd.generate(sd.PRESETS[scene]())


def _train(args) -> tuple:
    from dataclasses import replace
    from .evaluation import evaluate
    from .training import train
    config = _load_config(args)
    if args.steps is not None:
        config = replace(config, steps=args.steps)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.deterministic:
        config = replace(config, deterministic=True)
    ds = _dataset(args)
    out = args.out or "run"
    t0 = time.time()

    def progress(step, report, model):
        if (step + 1) % 500 == 0:
            print(f"step {step + 1}: loss {report.total:.5f} "
                  f"({time.time() - t0:.0f}s)", flush=True)

    res = train(ds, config, out, progress)
    rep = evaluate(res.model, ds, os.path.join(out, "eval"))
    rep.write(out)
    print(f"mean PSNR {rep.mean_psnr:.3f} dB, SSIM {rep.mean_ssim:.4f}")
    return out, config.to_dict(), config.seed


def _render(args) -> tuple:
    import numpy as np
    from .imageio import write_pfm, write_png
    from .renderer import render_image
    from .training import load_model
    ds = _dataset(args)
    config = _load_config(args, os.path.dirname(args.ckpt))
    model = load_model(ds, args.ckpt, config)
    out = args.out or "renders"
    os.makedirs(out, exist_ok=True)
    frames = [args.frame] if args.frame else range(1, model.N + 1)
    for i in frames:
        img, depth = render_image(model, i, args.fraction, "combined", args.samples)
        write_png(os.path.join(out, f"render_{i:03d}.png"), img)
        write_pfm(os.path.join(out, f"depth_{i:03d}.pfm"), depth.astype(np.float32))
    print(f"wrote {len(list(frames))} renders to {out}")
    return out, config.to_dict(), config.seed


def _eval(args) -> tuple:
    from .evaluation import blurry_baseline, evaluate
    from .training import load_model
    ds = _dataset(args)
    out = args.out or "eval"
    os.makedirs(out, exist_ok=True)
    if args.ckpt is None:
        rep = blurry_baseline(ds)
        cfg = {"baseline": True}
        seed = None
    else:
        config = _load_config(args, os.path.dirname(args.ckpt))
        model = load_model(ds, args.ckpt, config)
        rep = evaluate(model, ds, out, args.samples)
        cfg, seed = config.to_dict(), config.seed
    rep.write(out)
    print(f"{rep.label}: mean PSNR {rep.mean_psnr:.3f} dB, SSIM {rep.mean_ssim:.4f}")
    return out, cfg, seed


def _check(args) -> tuple:
    from .checks import run_all
    results = run_all(fast=args.fast)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    out = args.out
    return out, {"fast": args.fast}, None, 1 if failed else 0


COMMANDS = {"synth": _synth, "train": _train, "render": _render, "eval": _eval, "check": _check}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _parser()
    if not argv or argv[0] not in COMMANDS:
        parser.print_usage(sys.stderr)
        if argv and argv[0] not in ("-h", "--help"):
            print(f"unknown command {argv[0]!r}; choose from {', '.join(COMMANDS)}",
                  file=sys.stderr)
        return USAGE_EXIT
    args = parser.parse_args(argv)
    _limit_threads(args)
    t0 = time.time()
    result = COMMANDS[args.command](args)
    out, config, seed = result[:3]
    code = result[3] if len(result) > 3 else 0
    if out is not None:
        write_provenance(out, args.command, config, seed, time.time() - t0, argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
