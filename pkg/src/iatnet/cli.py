"""``iatnet`` command line.

Exit codes: 0 success, 1 training diverged or a check failed, 2 usage error,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, gdnn, svg
from .basis import BasisFamily, make_basis
from .net import (
    Arch,
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    grad_check,
    init_network,
    load_checkpoint,
    save_checkpoint,
    state_margin,
    stream,
    train,
)

log = logging.getLogger("iatnet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
DEFAULT_M = 500
GRADCHECK_TOL = 1e-5
EQUIV_TOL = 1e-10


class UsageError(Exception):
    pass


def _default_seed() -> int:
    env = os.environ.get("IATNET_SEED")
    if env is None:
        return 1
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"IATNET_SEED must be an integer, got {env!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _family(text: str) -> str:
    try:
        return BasisFamily.parse(text).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(kind):
    def conv(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return conv


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (default: $IATNET_SEED, else 1)")
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (default: ./runs/<timestamp>)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _add_model(p: argparse.ArgumentParser, width: int, activation: bool = True) -> None:
    p.add_argument("--basis-in", type=_family, default="fourier", help="input basis family (default: fourier)")
    p.add_argument("--basis-out", type=_family, default="pwq", help="output basis family (default: pwq)")
    p.add_argument("--sigma", choices=["relu", "tanh", "sigmoid"], default="relu",
                   help="pointwise nonlinearity inside the IAT (default: relu)")
    p.add_argument("--mode", choices=["disc", "analytic"], default="disc",
                   help="IAT evaluation: midpoint discretisation or exact root finding (default: disc)")
    p.add_argument("--m", type=_positive(int), default=None,
                   help=f"mesh size M for --mode disc (default: {DEFAULT_M}); not allowed with analytic")
    p.add_argument("--width", type=_positive(int), default=width, help=f"hidden width d (default: {width})")
    p.add_argument("--depth", type=_positive(int), default=3,
                   help="number of affine layers; depth-1 activation layers (default: 3)")
    if activation:
        p.add_argument("--activation", choices=["iat", "relu", "tanh", "sigmoid"], default="iat",
                       help="iat or a scalar baseline (default: iat)")


def _add_task(p: argparse.ArgumentParser, default: str = "fit1d") -> None:
    p.add_argument("--task", choices=[k.value for k in bench.TaskKind], default=default,
                   help=f"task (default: {default})")
    p.add_argument("--grid", type=int, default=20, help="mesh points per side for 2-D tasks (default: 20)")
    p.add_argument("--n", dest="n_points", type=int, default=200, help="points for fit1d (default: 200)")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=_positive(float), default=1e-3, help="Adam learning rate (default: 1e-3)")
    p.add_argument("--epochs", type=_positive(int), default=3000, help="full-batch epochs (default: 3000)")


class _Help(argparse.ArgumentDefaultsHelpFormatter):
    # leave helps that already state their default alone
    def _get_help_string(self, action):
        text = action.help or ""
        if action.default in (None, argparse.SUPPRESS) or "default" in text:
            return text
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iatnet", description="Integral activation transform experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    fmt = _Help

    p = sub.add_parser("gradcheck", help="finite-difference check of a random network", formatter_class=fmt)
    _add_model(p, width=8)
    p.add_argument("--dim", dest="width", type=_positive(int), default=argparse.SUPPRESS, help="alias for --width")
    p.add_argument("--samples", type=_positive(int), default=8, help="input rows")
    p.add_argument("--d-in", type=_positive(int), default=2, help="input dimension")
    _add_common(p)

    p = sub.add_parser("train", help="train one network", formatter_class=fmt)
    _add_task(p)
    _add_model(p, width=10)
    _add_training(p)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam", help="optimizer")
    p.add_argument("--batch-size", type=_positive(int), default=None, help="mini-batch size (default: full batch)")
    p.add_argument("--standardize", action="store_true", help="standardise after each activation")
    _add_common(p)

    p = sub.add_parser("sweep-basis", help="all input/output basis pairs plus scalar baselines",
                       formatter_class=fmt)
    _add_task(p, default="memorize")
    p.add_argument("--m", type=_positive(int), default=None, help=f"mesh size M for disc mode (default: {DEFAULT_M})")
    p.add_argument("--mode", choices=["disc", "analytic"], default="disc", help="IAT evaluation")
    p.add_argument("--width", type=_positive(int), default=50, help="hidden width")
    p.add_argument("--depth", type=_positive(int), default=3, help="number of affine layers")
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3], help="comma-separated seeds")
    _add_training(p)
    p.add_argument("--jobs", type=_positive(int), default=1, help="parallel training jobs")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column (breaks byte-identity)")
    _add_common(p)

    p = sub.add_parser("sweep-mesh", help="performance against mesh ratio M/d", formatter_class=fmt)
    _add_task(p)
    p.add_argument("--ratios", type=_int_list, default=[1, 2, 5, 10, 20], help="comma-separated mesh ratios")
    p.add_argument("--basis-in", type=_family, default="fourier", help="input basis family")
    p.add_argument("--basis-out", type=_family, default="pwq", help="output basis family")
    p.add_argument("--width", type=_positive(int), default=50, help="hidden width")
    p.add_argument("--depth", type=_positive(int), default=3, help="number of affine layers")
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3], help="comma-separated seeds")
    _add_training(p)
    p.add_argument("--jobs", type=_positive(int), default=1, help="parallel training jobs")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column (breaks byte-identity)")
    _add_common(p)

    p = sub.add_parser("pattern", help="activation-pattern trace along an input segment", formatter_class=fmt)
    _add_model(p, width=10, activation=False)
    p.add_argument("--ckpt", type=Path, default=None, help="trained checkpoint (default: fresh network)")
    p.add_argument("--d-in", type=_positive(int), default=1, help="input dimension of a fresh network")
    p.add_argument("--x-start", type=float, default=-1.0, help="segment start (every coordinate)")
    p.add_argument("--x-end", type=float, default=1.0, help="segment end (every coordinate)")
    p.add_argument("--points", type=_positive(int), default=200, help="sweep points")
    _add_common(p)

    p = sub.add_parser("decouple", help="patterns from one parameter set, linear pieces from another",
                       formatter_class=fmt)
    _add_task(p)
    _add_model(p, width=10, activation=False)
    _add_training(p)
    p.add_argument("--ckpt", type=Path, default=None, help="pattern network checkpoint (default: train one)")
    p.add_argument("--how", choices=["reuse", "refit"], default="refit",
                   help="linear parameters: trained weights (reuse) or retrained with frozen patterns (refit)")
    p.add_argument("--lin-seed", type=int, default=None, help="seed for the refit initialisation (default: seed+1)")
    p.add_argument("--points", type=_positive(int), default=400, help="probe points along [-1, 1]")
    _add_common(p)

    p = sub.add_parser("equiv-gdnn", help="GDNN vs IAT-network equivalence gap", formatter_class=fmt)
    p.add_argument("--dim", type=_positive(int), default=8, help="hidden width d")
    p.add_argument("--m", type=_positive(int), default=64, help="mesh size M")
    p.add_argument("--trials", type=_positive(int), default=100, help="random inputs per family")
    p.add_argument("--d-in", type=_positive(int), default=3, help="input dimension")
    p.add_argument("--basis", type=_family, action="append", default=None,
                   help="family to test (repeatable; default: all six)")
    _add_common(p)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _out_dir(args) -> Path:
    out = args.out or Path("runs") / time.strftime("%Y%m%d-%H%M%S")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _mesh(args) -> int:
    if args.mode == "analytic":
        if args.m is not None:
            raise UsageError("--m only applies to --mode disc")
        if args.sigma != "relu":
            raise UsageError("--mode analytic requires --sigma relu")
        return DEFAULT_M
    return DEFAULT_M if args.m is None else args.m


def _arch(args, d_in: int, d_out: int) -> Arch:
    M = _mesh(args)
    try:
        return Arch(d_in, d_out, args.width, args.depth, getattr(args, "activation", "iat"),
                    args.basis_in, args.basis_out, args.sigma, args.mode, M,
                    getattr(args, "standardize", False))
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _task(args, seed: int) -> bench.Dataset:
    if args.grid < 2 or args.n_points < 2:
        raise UsageError("--grid and --n must be at least 2")
    return bench.make_task(args.task, grid=args.grid, n=args.n_points, seed=seed)


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _g(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# commands


def cmd_gradcheck(args) -> int:
    seed = args.seed
    arch = _arch(args, args.d_in, 1)
    net = init_network(arch, seed)
    g = stream(seed, "gradcheck/inputs")
    # redraw inputs that sit on a pattern switch; finite differences are meaningless there
    for _ in range(100):
        X = g.uniform(-1.0, 1.0, size=(args.samples, args.d_in))
        if state_margin(net, X) > 1e-7:
            break
    else:
        log.warning("could not find inputs away from pattern switches")
    T = g.uniform(-1.0, 1.0, size=(args.samples, 1))
    err = grad_check(net, X, T)
    ok = err < GRADCHECK_TOL
    print(f"gradcheck {arch.label} width={arch.width} depth={arch.depth}: max rel err {err:.3e} "
          f"({'ok' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_train(args) -> int:
    seed = args.seed
    data = _task(args, seed)
    arch = _arch(args, data.inputs.shape[1], data.targets.shape[1])
    try:
        cfg = TrainConfig(args.optimizer, args.lr, args.epochs, args.batch_size, seed)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    net = init_network(arch, seed)
    _, rep = train(net, data, cfg)
    save_checkpoint(net, out / "model.ckpt")
    _write_rows(out / "loss.csv", ["epoch", "loss"], [(i + 1, _g(v)) for i, v in enumerate(rep.loss_curve)])
    run = bench.RunRecord(data.kind.value, arch.basis_in if arch.activation == "iat" else "scalar",
                          arch.basis_out if arch.activation == "iat" else arch.activation,
                          arch.mode if arch.activation == "iat" else "scalar",
                          arch.M if arch.activation == "iat" and arch.mode == "disc" else None,
                          arch.width, arch.depth, seed, cfg.epochs, rep.final_loss, rep.final_accuracy, 0.0)
    bench.write_csv(out / "summary.csv", [bench._row(
        run, final_accuracy="" if rep.final_accuracy is None else _g(rep.final_accuracy))])
    svg.write(out / "loss.svg", svg.loss_curves({arch.label: rep.loss_curve}, f"{data.kind.value} training loss"))
    acc = "" if rep.final_accuracy is None else f" accuracy {rep.final_accuracy:.4f}"
    print(f"train {data.kind.value} {arch.label}: final mse {rep.final_loss:.6e}{acc} -> {out}")
    return EXIT_OK


def _sweep_cfg(args) -> bench.SweepConfig:
    return bench.SweepConfig(width=args.width, depth=args.depth, epochs=args.epochs, lr=args.lr,
                             mode=getattr(args, "mode", "disc"), jobs=args.jobs)


def _emit_table(tab: bench.SweepTable, out: Path, name: str, timing: bool) -> None:
    tab.to_csv(out / f"{name}.csv", timing=timing)
    tab.to_csv(out / "runs.csv", timing=timing, per_run=True)
    (out / f"{name}.txt").write_text(tab.format() + "\n", encoding="utf-8")
    curves = {f"{r.input_basis}/{r.output_basis} s{r.seed}" + (f" M={r.M}" if tab.axis == "ratio" else ""):
              r.loss_curve for r in tab.runs if r.loss_curve}
    if len(curves) <= 24:
        svg.write(out / f"{name}_loss.svg", svg.loss_curves(curves, f"{tab.task} training loss"))


def cmd_sweep_basis(args) -> int:
    args.sigma = "relu"
    M = _mesh(args)
    data = _task(args, args.seed)
    out = _out_dir(args)
    tab = bench.run_basis_sweep(data, M, args.seeds, _sweep_cfg(args))
    _emit_table(tab, out, "sweep", args.timing)
    div = sum(c.n_diverged for c in tab.cells.values())
    print(f"sweep-basis {tab.task}: {len(tab)} cells x {len(args.seeds)} seeds, {div} diverged runs -> {out}")
    return EXIT_FAIL if div else EXIT_OK


def cmd_sweep_mesh(args) -> int:
    data = _task(args, args.seed)
    out = _out_dir(args)
    tab = bench.run_mesh_sweep(data, args.ratios, _sweep_cfg(args), args.seeds, args.basis_in, args.basis_out)
    _emit_table(tab, out, "mesh", args.timing)
    summary = ", ".join(f"r={c}: {tab.mean(tab.rows[0], c):.3e}" for c in tab.cols)
    div = sum(c.n_diverged for c in tab.cells.values())
    print(f"sweep-mesh {tab.task} seed-mean {tab.metric}: {summary} -> {out}")
    return EXIT_FAIL if div else EXIT_OK


def cmd_pattern(args) -> int:
    if args.ckpt is not None:
        net = load_checkpoint(args.ckpt)
    else:
        net = init_network(_arch(args, args.d_in, 1), args.seed)
    out = _out_dir(args)
    rows = bench.pattern_trace(net, args.x_start, args.x_end, args.points)
    _write_rows(out / "pattern.csv", ["x", "layer", "lo", "hi"],
                [(_g(x), k, _g(lo), _g(hi)) for x, k, lo, hi in rows])
    n_layers = len(net.iat_layers())
    x_range = (args.x_start, args.x_end) if net.d_in == 1 else (0.0, 1.0)
    svg.write(out / "pattern.svg", svg.pattern_diagram(rows, n_layers, x_range))
    print(f"pattern: {len(rows)} intervals over {args.points} points, {n_layers} IAT layers -> {out}")
    return EXIT_OK


def cmd_decouple(args) -> int:
    seed = args.seed
    data = _task(args, seed)
    if data.inputs.shape[1] != 1:
        raise UsageError("decouple probes a 1-D input segment; use --task fit1d")
    cfg = TrainConfig("adam", args.lr, args.epochs, None, seed)
    out = _out_dir(args)
    if args.ckpt is not None:
        pat = load_checkpoint(args.ckpt)
    else:
        pat = init_network(_arch(args, 1, 1), seed)
        train(pat, data, cfg)
        save_checkpoint(pat, out / "pattern_model.ckpt")
    if args.how == "reuse":
        lin = pat.copy()
    else:
        lin_seed = seed + 1 if args.lin_seed is None else args.lin_seed
        lin, _ = gdnn.refit_linear(pat, data, TrainConfig("adam", args.lr, args.epochs, None, lin_seed))
        save_checkpoint(lin, out / "linear_model.ckpt")

    def decoupled(X):
        return gdnn.decoupled_net_forward(X, lin, pat)

    xs = np.linspace(-1.0, 1.0, args.points)[:, None]
    y_cpl, y_dec = pat(xs)[:, 0], decoupled(xs)[:, 0]
    _write_rows(out / "decouple.csv", ["x", "coupled", "decoupled"],
                [(_g(x), _g(a), _g(b)) for x, a, b in zip(xs[:, 0], y_cpl, y_dec)])
    jumps = [gdnn.continuity_probe(decoupled, -1.0, 1.0, n) for n in (args.points, 2 * args.points)]
    mse = float(np.mean((decoupled(data.inputs) - data.targets) ** 2))
    print(f"decouple ({args.how}): train mse {mse:.3e}, max jump {jumps[0]:.3e} -> {jumps[1]:.3e} "
          f"when points double -> {out}")
    return EXIT_OK


def cmd_equiv_gdnn(args) -> int:
    families = args.basis or [f.value for f in BasisFamily]
    X = stream(args.seed, "equiv/inputs").uniform(-1.0, 1.0, size=(args.trials, args.d_in))
    rows, worst = [], 0.0
    for fam in families:
        pair = (make_basis(fam, args.dim, "input"), make_basis(fam, args.dim, "output"))
        params = gdnn.GDNNParams.random([args.d_in, args.dim, args.dim, 1], [pair, pair], args.seed)
        gap = gdnn.equivalence_gap(params, args.m, X)
        worst = max(worst, gap)
        rows.append((fam, args.dim, args.m, args.trials, _g(gap)))
    out = _out_dir(args)
    _write_rows(out / "equiv.csv", ["basis", "d", "M", "trials", "gap"], rows)
    ok = worst < EQUIV_TOL
    print(f"equiv-gdnn d={args.dim} M={args.m} trials={args.trials}: max gap {worst:.3e} "
          f"({'ok' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "sweep-basis": cmd_sweep_basis,
    "sweep-mesh": cmd_sweep_mesh,
    "pattern": cmd_pattern,
    "decouple": cmd_decouple,
    "equiv-gdnn": cmd_equiv_gdnn,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _default_seed()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
