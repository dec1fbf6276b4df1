"""Command-line entry point: ``evdepth {synth,repr,eval,fit,gradcheck}``.

Exit codes: 0 success, 1 invalid configuration, 2 bad or missing data,
3 a check failed (gradient check, divergent fit).

Every subcommand accepts ``--config FILE`` with ``key=value`` lines that
supply defaults; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigError, Divergence, EvdepthError, FormatError
from .events import read_events, save_events, window_events, event_mask
from .metrics import DEFAULT_FRACTIONS, DEFAULT_RETAIN, evaluate
from .representations import (
    DEFAULT_DOWNSAMPLE_MODE,
    ToreConfig,
    build_cstr,
    build_tore,
    build_voxel_grid,
    downsample,
    downsample_array,
    hflip,
    normalize_nonzero,
)
from .synthgen import GenConfig, generate_events, ground_truth_at, noisy_prediction, render_sequence
from .tensorio import format_kv, load_tensor, parse_kv, read_meta, save_tensor
from .uncertainty import DEFAULT_LAMBDA, MODELS, PARAM_NAMES, fit_pointwise, gradient_check

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
DEFAULT_DT_US = 50_000


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)
    config_path: Optional[str] = None

    def __getattr__(self, name):
        try:
            return self.__dict__["options"][name]
        except KeyError:
            raise AttributeError(name) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evdepth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key=value file with defaults for this command")
        return p

    p = add("synth", "render a synthetic sequence and its events")
    p.add_argument("--out", required=True)
    p.add_argument("--scene", default="translating-texture")
    p.add_argument("--threshold", type=float, default=0.2, help="contrast threshold C (log units)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--frame-rate", dest="frame_rate", type=float, default=200.0)
    p.add_argument("--duration", type=float, default=1.0, help="seconds")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--velocity", type=int, default=1)
    p.add_argument("--jitter-us", dest="jitter_us", type=int, default=0)
    p.add_argument("--dt", type=int, default=DEFAULT_DT_US, help="window length (us)")
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--emit-predictions", dest="emit_predictions", action="store_true",
                   help="also write noisy depth predictions and their variance per window")

    p = add("repr", "convert event windows into dense tensors")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="window list written by synth")
    p.add_argument("--kind", choices=("voxel", "cstr", "tore"), default="voxel")
    p.add_argument("--bins", type=int, default=None, help="voxel bins (default 5)")
    p.add_argument("--K", dest="K", type=int, default=None, help="TORE depth (default 3)")
    p.add_argument("--tau", type=float, default=None, help="TORE upper horizon, us (default 5e4)")
    p.add_argument("--tau-prime", dest="tau_prime", type=float, default=None,
                   help="TORE lower horizon, us (default 150)")
    p.add_argument("--dt", type=int, default=DEFAULT_DT_US)
    p.add_argument("--width", type=int, default=None, help="sensor width for CSV input")
    p.add_argument("--height", type=int, default=None, help="sensor height for CSV input")
    p.add_argument("--normalize", choices=("auto", "on", "off"), default="auto",
                   help="nonzero standardization; auto = voxel grids only")
    p.add_argument("--per-channel", dest="per_channel", action="store_true")
    p.add_argument("--downsample", type=int, default=1)
    p.add_argument("--mode", choices=("nearest", "bilinear", "minpool"), default=None)
    p.add_argument("--hflip", action="store_true")
    p.add_argument("--workers", type=int, default=1)

    p = add("eval", "score depth and uncertainty against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--uncertainty", required=True, help="ranking plane (variance or epistemic variance)")
    p.add_argument("--event-mask", dest="event_mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--retain", type=float, default=DEFAULT_RETAIN)
    p.add_argument("--fractions", type=int, default=DEFAULT_FRACTIONS)

    p = add("fit", "fit one depth distribution to samples by gradient descent")
    p.add_argument("--samples", required=True, help="text file, one depth per line")
    p.add_argument("--model", choices=MODELS, default="gaussian")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--step-size", dest="step_size", type=float, default=0.05)
    p.add_argument("--lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--out", required=True)

    p = add("gradcheck", "compare analytic gradients with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--lam", type=float, default=DEFAULT_LAMBDA)
    return parser


def parse_run_config(argv) -> RunConfig:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            defaults = parse_kv(Path(args.config).read_text())
        except (OSError, FormatError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        typed = {}
        for k, v in defaults.items():
            dest = k.replace("-", "_")
            if dest not in known or dest in ("help", "config"):
                raise ConfigError(f"unknown key {k!r} in {args.config}")
            action = known[dest]
            if isinstance(action, argparse._StoreTrueAction):
                typed[dest] = v.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    typed[dest] = action.type(v) if action.type else v
                except ValueError:
                    raise ConfigError(f"bad value for {k}: {v!r}") from None
        sub.set_defaults(**typed)
        args = parser.parse_args(argv)
    opts = vars(args)
    cfg = RunConfig(opts.pop("command"), opts, opts.pop("config"))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    o = cfg.options
    if cfg.command == "repr":
        kind = o["kind"]
        if o["bins"] is not None and kind != "voxel":
            raise ConfigError("--bins only applies to --kind voxel")
        if kind != "tore" and any(o[k] is not None for k in ("K", "tau", "tau_prime")):
            raise ConfigError("--K/--tau/--tau-prime only apply to --kind tore")
        if o["bins"] is not None and o["bins"] < 1:
            raise ConfigError("--bins must be >= 1")
        if o["downsample"] < 1:
            raise ConfigError("--downsample must be >= 1")
        if o["dt"] <= 0:
            raise ConfigError("--dt must be positive")
        if o["workers"] < 1:
            raise ConfigError("--workers must be >= 1")
    elif cfg.command == "synth":
        if o["dt"] <= 0:
            raise ConfigError("--dt must be positive")
    elif cfg.command == "eval":
        if not 0 < o["retain"] <= 1:
            raise ConfigError("--retain must lie in (0, 1]")
        if o["fractions"] < 1:
            raise ConfigError("--fractions must be >= 1")
    elif cfg.command == "fit":
        if o["steps"] < 1 or o["step_size"] <= 0 or o["lam"] < 0:
            raise ConfigError("--steps, --step-size must be positive and --lam >= 0")
    elif cfg.command == "gradcheck":
        if o["draws"] < 1 or o["h"] <= 0:
            raise ConfigError("--draws and --h must be positive")


# -- manifest -----------------------------------------------------------------

MANIFEST_COLUMNS = "window,t0,t1,partial,events,gt"


def write_manifest(path, meta: dict, rows) -> None:
    lines = ["# evdepth synth manifest", format_kv(meta).rstrip("\n"), MANIFEST_COLUMNS]
    lines += [",".join(str(v) for v in r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    meta, rows, in_table = {}, [], False
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        if line == MANIFEST_COLUMNS:
            in_table = True
            continue
        if in_table:
            idx, t0, t1, partial, n, gt = line.split(",")
            rows.append({"window": int(idx), "t0": int(t0), "t1": int(t1),
                         "partial": partial == "1", "events": int(n), "gt": gt})
        else:
            meta.update(parse_kv(line))
    if not in_table:
        raise FormatError(f"{path}: manifest table missing")
    return meta, rows


# -- subcommands ------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    o = cfg.options
    gen = GenConfig(threshold=o["threshold"], seed=o["seed"], scene=o["scene"],
                    frame_rate=o["frame_rate"], duration=o["duration"], width=o["width"],
                    height=o["height"], velocity=o["velocity"], jitter_us=o["jitter_us"])
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    frames = render_sequence(gen)
    stream = generate_events(frames, gen.threshold, gen.jitter_us, gen.seed)
    ext = "csv" if o["format"] == "csv" else "evt"
    save_events(out / f"events.{ext}", stream, o["format"])
    t_end = frames[-1].t
    wins = window_events(stream, o["dt"], t_start=frames[0].t, t_end=t_end)
    rows = []
    for i, w in enumerate(wins):
        gt = ground_truth_at(frames, min(w.t1, t_end))
        name = f"gt_{i:04d}.tsr"
        save_tensor(out / name, gt, {"kind": "depth", "units": "m", "t": min(w.t1, t_end)})
        if o["emit_predictions"]:
            rng = np.random.default_rng([gen.seed, i])
            pred, std = noisy_prediction(gt, rng)
            save_tensor(out / f"pred_{i:04d}.tsr", pred, {"kind": "depth", "units": "m"})
            save_tensor(out / f"unc_{i:04d}.tsr", std**2,
                        {"kind": "variance", "model": "gaussian", "units": "m^2"})
        rows.append((i, w.t0, w.t1, int(w.partial), len(w), name))
    meta = dict(width=gen.width, height=gen.height, dt=o["dt"], t_start=frames[0].t,
                t_end=t_end, events=len(stream), format=o["format"])
    meta.update({f"gen.{k}": v for k, v in gen.to_dict().items()})
    write_manifest(out / "manifest.txt", meta, rows)
    full = sum(1 for r in rows if not r[3])
    print(f"wrote {len(stream)} events, {len(rows)} windows ({full} full) to {out}")
    return EXIT_OK


def _repr_one(window, stream, o):
    kind = o["kind"]
    if kind == "voxel":
        bins = o["bins"] or 5
        t = build_voxel_grid(window, bins)
    elif kind == "cstr":
        t = build_cstr(window)
    else:
        tcfg = ToreConfig(K=o["K"] or 3, tau=o["tau"] or 5e4, tau_prime=o["tau_prime"] or 150.0)
        t = build_tore(stream, window.t1 - 1, tcfg)
    norm = o["normalize"]
    if norm == "on" or (norm == "auto" and kind == "voxel"):
        t = normalize_nonzero(t, per_channel=o["per_channel"])
    mask = event_mask(window)
    if o["downsample"] > 1:
        t = downsample(t, o["downsample"], o["mode"] or DEFAULT_DOWNSAMPLE_MODE[kind])
        mask = downsample_array(mask, o["downsample"], "maxpool")
    if o["hflip"]:
        t = hflip(t)
        mask = mask[:, ::-1]
    return t, mask


def cmd_repr(cfg: RunConfig) -> int:
    o = cfg.options
    stream = read_events(o["events"], width=o["width"], height=o["height"])
    if o["manifest"]:
        meta, _ = read_manifest(o["manifest"])
        windows = window_events(stream, int(meta["dt"]), t_start=int(meta["t_start"]),
                                t_end=int(meta["t_end"]))
    else:
        windows = window_events(stream, o["dt"])
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=o["workers"]) as pool:
        results = list(pool.map(lambda w: _repr_one(w, stream, o), windows))
    for i, (t, mask) in enumerate(results):
        meta = {"kind": t.kind, "param": t.param, "t0": windows[i].t0, "dt": windows[i].dt,
                "partial": int(windows[i].partial)}
        save_tensor(out / f"repr_{i:04d}.tsr", t.data, meta)
        save_tensor(out / f"mask_{i:04d}.tsr", mask.astype(np.float32), {"kind": "event_mask"})
    shape = "x".join(str(d) for d in results[0][0].shape) if results else "-"
    print(f"wrote {len(results)} {o['kind']} tensors of shape {shape} to {out}")
    return EXIT_OK


def _plane(path):
    a = load_tensor(path)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise FormatError(f"{path}: expected an H x W plane, got shape {a.shape}")
    return a.astype(np.float64)


def cmd_eval(cfg: RunConfig) -> int:
    o = cfg.options
    gt = _plane(o["gt"])
    pred = _plane(o["pred"])
    unc = _plane(o["uncertainty"])
    mask = _plane(o["event_mask"]) != 0
    report, curve = evaluate(gt, pred, unc, mask, o["retain"], o["fractions"], return_curve=True)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    (out / "report.csv").write_text(report.to_csv())
    (out / "sparsification.csv").write_text(curve.to_csv() if curve else "alpha,pred,oracle\n")
    print(report.to_text(), end="")
    return EXIT_OK


def _read_samples(path):
    vals = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            vals.append(float(line))
        except ValueError:
            raise FormatError(f"{path}:{n}: not a number: {line!r}") from None
    return np.array(vals)


def cmd_fit(cfg: RunConfig) -> int:
    o = cfg.options
    samples = _read_samples(o["samples"])
    try:
        res = fit_pointwise(samples, o["model"], o["steps"], o["step_size"], o["lam"])
    except Divergence as exc:
        print(f"fit diverged: {exc}", file=sys.stderr)
        for i, v in enumerate(exc.trace):
            print(f"  step -{len(exc.trace) - i}: loss={v!r}", file=sys.stderr)
        return EXIT_CHECK
    out = {"model": res.model}
    out.update({n: repr(float(getattr(res.params, n))) for n in PARAM_NAMES[res.model]})
    out.update({"nll": repr(res.nll), "steps": res.steps, "samples": samples.size})
    if res.model == "evidential":
        out["lambda"] = o["lam"]
    Path(o["out"]).write_text(format_kv(out))
    print(format_kv(out), end="")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    o = cfg.options
    ok = True
    for model in MODELS:
        err = gradient_check(model, o["draws"], o["seed"], o["h"], o["lam"])
        passed = err < o["tol"]
        ok &= passed
        print(f"{model} max_rel_err={err:.3e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"synth": cmd_synth, "repr": cmd_repr, "eval": cmd_eval, "fit": cmd_fit,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        cfg = parse_run_config(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"evdepth: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"evdepth: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvdepthError, OSError, ValueError) as exc:
        print(f"evdepth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
