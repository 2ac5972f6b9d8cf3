"""Command-line interface.

Exit codes: 0 success, 1 a check reported FAIL, 2 numeric divergence,
64 usage error, 66 unreadable input.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import itertools
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .io import CsvFormatError, read_csv, read_manifest, write_csv, write_manifest
from .kernels import KernelSpec, dhsic, dhsic_subsets, hsic, mean_pairwise_hsic, permutation_test
from .lemmas import lemma1_residual, lemma2_residual, orthonormalize_rows
from .numerics import RNG_ALGORITHM, make_rng, whiten
from .projectors import uniform_weights
from .ica.sources import generate_synthetic_sources, make_pnl_mixing, mix_linear, mix_pnl
from .ica.metrics import max_correlation
from .ica.train import IcaDivergenceError, IcaRunConfig, recover, train_linear_ica, train_pnl_ica

EXIT_OK, EXIT_FAIL, EXIT_DIVERGED, EXIT_USAGE, EXIT_NOINPUT = 0, 1, 2, 64, 66
LEMMA_TOL = 1e-10

# per-mode defaults for flags left unset on the command line
MODE_DEFAULTS = {
    "linear": {"lr": 100.0, "var_w": 100.0, "cov_w": 1.0, "rec_w": 1.0},
    "pnl": {"lr": 10.0, "var_w": 100.0, "cov_w": 1.0, "rec_w": 1e4},
}


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _mixing_rng(seed: int):
    return make_rng(np.random.SeedSequence([seed, 1]))


def synthetic_data(kind: str, n: int, seed: int) -> dict:
    """Sources, mixtures and mixing description for ``gen-data`` and ``ica --data synthetic``."""
    sources = generate_synthetic_sources(n, seed)
    if kind == "linear":
        Y, A = mix_linear(sources.S, rng=_mixing_rng(seed))
        mixing = {"kind": "linear", "A": A, "nonlinearities": []}
    else:
        spec = make_pnl_mixing(sources.S.shape[1], _mixing_rng(seed))
        Y, A = mix_pnl(sources.S, spec), spec.A
        mixing = spec.to_dict()
    return {"S": sources.S, "Y": Y, "A": A, "mixing": mixing, "sources": sources}


def _read_table(path):
    try:
        return read_csv(path)
    except (OSError, CsvFormatError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _manifest(command, args, started, outputs, metrics, **extra) -> dict:
    recorded = {k: v for k, v in vars(args).items() if not callable(v)}
    return {"command": command, "args": recorded,
            "version": __version__, "rng": RNG_ALGORITHM, "started": started, "ended": _now(),
            "outputs": [str(p) for p in outputs], "metrics": metrics, **extra}


def cmd_gen_data(args) -> int:
    started = _now()
    out = _out_dir(args.out)
    data = synthetic_data(args.kind, args.n, args.seed)
    S, Y, A = data["S"], data["Y"], data["A"]
    D = S.shape[1]
    names = [f"s{i}" for i in range(D)]
    files = [out / "sources.csv", out / "mixtures.csv", out / "mixing.csv"]
    try:
        write_csv(files[0], names, S)
        write_csv(files[1], [f"y{i}" for i in range(D)], Y)
        write_csv(files[2], [f"a{i}" for i in range(D)], A)
        write_manifest(out / "manifest.json", _manifest(
            "gen-data", args, started, files, {},
            seeds={"sources": args.seed, "mixing": [args.seed, 1]},
            mixing=data["mixing"], tags=data["sources"].tags, generators=data["sources"].generators))
    except OSError as exc:
        raise InputError(f"cannot write to {out}: {exc}") from exc
    print(f"wrote {len(S)} rows to {out}")
    return EXIT_OK


def _ica_config(args) -> IcaRunConfig:
    return IcaRunConfig(
        encoder="linear" if args.mode == "linear" else "mlp",
        projector=args.projector, width=args.width, layers=args.layers, with_bn=args.bn == "on",
        resample_every_step=args.resample == "on", variance_weight=args.var_w,
        covariance_weight=args.cov_w, reconstruction_weight=args.rec_w,
        scale_covariance=args.scale_cov == "on", optimizer=args.optimizer, lr=args.lr,
        schedule=args.schedule, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
        selection="dhsic" if args.select == "dhsic" else "last", eval_samples=args.eval_samples)


def _load_ica_data(args):
    if args.data == "synthetic":
        data = synthetic_data(args.mode, args.n, args.data_seed if args.data_seed is not None else args.seed)
        return data["Y"], data["S"], [i for i, t in enumerate(data["sources"].tags) if t == "signal"]
    _, Y = _read_table(args.data)
    S, signal = None, None
    if args.truth:
        _, S = _read_table(args.truth)
        signal = _parse_index_list(args.signal_cols) if args.signal_cols else None
    return Y, S, signal


def _resolve_mode_defaults(args):
    for key, value in MODE_DEFAULTS[args.mode].items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    return args


def run_ica(args, out: Path):
    """Train one configuration and write its outputs; returns (exit code, metrics)."""
    started = _now()
    _resolve_mode_defaults(args)
    Y, S, signal = _load_ica_data(args)
    if Y.shape[1] < 2:
        raise UsageError("data needs at least 2 channels")
    if args.batch > Y.shape[0]:
        raise UsageError(f"--batch {args.batch} exceeds the {Y.shape[0]} data rows")
    try:
        cfg = _ica_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    W, transform, mean = whiten(Y)
    train = train_linear_ica if args.mode == "linear" else train_pnl_ica
    code = EXIT_OK
    try:
        encoder, history = train(W, cfg, S, signal)
        record = history.selected_record()
        metrics = {"dhsic": record["dhsic"], "selected_epoch": history.selected}
    except IcaDivergenceError as exc:
        code, history = EXIT_DIVERGED, exc.history
        encoder = exc.state["M"] if args.mode == "linear" else None
        metrics = {"dhsic": None, "selected_epoch": None, "diverged": str(exc)}
    outputs = []
    if encoder is not None:
        R = recover(encoder, W)
        write_csv(out / "recovered.csv", [f"x{i}" for i in range(R.shape[1])], R)
        outputs.append(out / "recovered.csv")
        if S is not None:
            metrics["max_correlation"] = max_correlation(S, R, signal)
    if history.steps:
        keys = list(history.steps[0])
        write_csv(out / "history.csv", keys, [[r[k] for k in keys] for r in history.steps])
        outputs.append(out / "history.csv")
    if history.epochs:
        keys = ["epoch", "dhsic"] + (["max_correlation"] if S is not None else [])
        rows = [[r[k] if np.isfinite(r[k]) else np.finfo(float).max for k in keys] for r in history.epochs]
        write_csv(out / "epochs.csv", keys, rows)
        outputs.append(out / "epochs.csv")
    write_manifest(out / "manifest.json", _manifest(
        "ica", args, started, outputs, metrics, config=cfg.to_dict(),
        seeds={"train": args.seed, "data": args.data_seed if args.data_seed is not None else args.seed},
        whitening={"transform": transform, "mean": mean}, params=history.params if args.mode == "linear" else None))
    return code, metrics


def _summary(metrics) -> str:
    parts = []
    if "max_correlation" in metrics:
        parts.append(f"max_corr={metrics['max_correlation']:.6g}")
    dh = metrics.get("dhsic")
    parts.append(f"dhsic={dh:.6g}" if dh is not None else "dhsic=nan")
    return " ".join(parts)


def _apply_manifest(args):
    manifest = read_manifest(args.from_manifest)
    if manifest.get("command") != "ica":
        raise UsageError("--from-manifest needs a manifest written by the ica command")
    recorded = dict(manifest["args"])
    for key in ("out", "from_manifest", "func"):
        recorded.pop(key, None)
    for key, value in recorded.items():
        setattr(args, key, value)
    return args


def cmd_ica(args) -> int:
    if args.from_manifest:
        try:
            _apply_manifest(args)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot read manifest {args.from_manifest}: {exc}") from exc
    code, metrics = run_ica(args, _out_dir(args.out))
    if code == EXIT_DIVERGED:
        print(f"diverged: {metrics['diverged']}", file=sys.stderr)
    print(_summary(metrics))
    return code


def _parse_floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _parse_index_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated column indices, got {text!r}") from None


def cmd_grid(args) -> int:
    started = _now()
    _resolve_mode_defaults(args)
    out = _out_dir(args.out)
    axes = {"lr": args.lr_grid, "var_w": args.var_w_grid, "cov_w": args.cov_w_grid, "rec_w": args.rec_w_grid}
    axes = {k: (_parse_floats(v) if v else [getattr(args, k)]) for k, v in axes.items()}
    points = [dict(zip(axes, values)) for values in itertools.product(*axes.values())]
    results = []
    for i, point in enumerate(points):
        run_args = argparse.Namespace(**vars(args))
        for k, v in point.items():
            setattr(run_args, k, v)
        run_dir = _out_dir(out / f"run_{i:03d}")
        code, metrics = run_ica(run_args, run_dir)
        dh = metrics.get("dhsic")
        results.append({"run": i, **point, "dhsic": dh if dh is not None else np.inf,
                        "max_correlation": metrics.get("max_correlation", np.nan), "exit": code})
    ranked = sorted(results, key=lambda r: (r["dhsic"], r["run"]))
    keys = ["run", "lr", "var_w", "cov_w", "rec_w", "dhsic", "max_correlation", "exit"]
    print(" ".join(f"{k:>15}" for k in ["rank"] + keys))
    for rank, r in enumerate(ranked, start=1):
        print(" ".join(f"{v:>15.6g}" if isinstance(v, float) else f"{v:>15}" for v in [rank] + [r[k] for k in keys]))
    finite = np.finfo(float).max
    table = [[(r[k] if np.isfinite(r[k]) else (finite if k == "dhsic" else -1.0)) for k in keys] for r in ranked]
    write_csv(out / "grid.csv", keys, table)
    best = ranked[0]
    write_manifest(out / "manifest.json", _manifest(
        "grid", args, started, [out / "grid.csv"] + [out / f"run_{r['run']:03d}" for r in results],
        {"best_run": best["run"], "dhsic": best["dhsic"], "max_correlation": best["max_correlation"]},
        axes=axes))
    print(f"best run_{best['run']:03d} " + _summary(
        {"dhsic": best["dhsic"] if np.isfinite(best["dhsic"]) else None,
         **({"max_correlation": best["max_correlation"]} if np.isfinite(best["max_correlation"]) else {})}))
    return EXIT_OK if any(r["exit"] == EXIT_OK for r in results) else EXIT_DIVERGED


def _kernel(args) -> KernelSpec:
    if args.kernel == "linear":
        return KernelSpec("linear")
    if args.sigma == "median":
        return KernelSpec("gaussian", "median")
    try:
        return KernelSpec("gaussian", float(args.sigma))
    except ValueError as exc:
        raise UsageError(f"--sigma must be 'median' or a positive number: {exc}") from exc


def _select_columns(header, M, spec: str) -> np.ndarray:
    cols = []
    for token in spec.split(","):
        token = token.strip()
        if token in header:
            cols.append(header.index(token))
        else:
            try:
                cols.append(int(token))
            except ValueError:
                raise UsageError(f"unknown column {token!r}") from None
    if any(not 0 <= c < M.shape[1] for c in cols):
        raise UsageError(f"column index out of range for {M.shape[1]} columns")
    return M[:, cols]


def cmd_hsic(args) -> int:
    header, M = _read_table(args.data)
    k = _kernel(args)
    try:
        if args.n_first is not None:
            value = mean_pairwise_hsic(M, args.n_first, k)
            print(f"mean_hsic={value!r}")
            if args.out:
                n = args.n_first
                P = np.zeros((n, n))
                for i, j in itertools.combinations(range(n), 2):
                    P[i, j] = P[j, i] = hsic(M[:, i], M[:, j], k, k, args.normalization).value
                write_csv(args.out, header[:n], P)
            return EXIT_OK
        if not (args.col_a and args.col_b):
            raise UsageError("give --col-a and --col-b, or --n-first")
        X1 = _select_columns(header, M, args.col_a)
        X2 = _select_columns(header, M, args.col_b)
        result = hsic(X1, X2, k, k, args.normalization)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"hsic={result.value!r}")
    if args.out:
        write_csv(args.out, ["hsic"], [[result.value]])
    return EXIT_OK


def cmd_dhsic(args) -> int:
    header, M = _read_table(args.data)
    k = _kernel(args)
    try:
        if args.cols:
            X = _select_columns(header, M, args.cols)
        else:
            n = args.n_first if args.n_first is not None else M.shape[1]
            if not 2 <= n <= M.shape[1]:
                raise UsageError(f"--n-first must lie in [2, {M.shape[1]}]")
            X = M[:, :n]
        if args.subsets:
            res = dhsic_subsets(X, args.subset_size or X.shape[1], args.subsets, args.seed, k)
            for subset, value in zip(res.subsets, res.values):
                print(f"subset={'-'.join(map(str, subset))} dhsic={value!r}")
            print(f"mean_dhsic={float(np.mean(res.values))!r}")
            if args.out:
                write_csv(args.out, ["set", "dhsic"], [[i, v] for i, v in enumerate(res.values)])
            return EXIT_OK
        value = dhsic(X, [k] * X.shape[1])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"dhsic={value!r}")
    if args.out:
        write_csv(args.out, ["dhsic"], [[value]])
    return EXIT_OK


def cmd_hsic_test(args) -> int:
    header, M = _read_table(args.data)
    k = _kernel(args)
    try:
        res = permutation_test(_select_columns(header, M, args.col_a), _select_columns(header, M, args.col_b),
                               k, k, num_permutations=args.permutations, alpha=args.alpha, rng=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"p={res.p_value!r} reject={str(res.reject).lower()}")
    return EXIT_OK


def _shifted_relu(rng):
    shift = float(rng.normal())
    return lambda x: np.maximum(x - shift, 0.0)


def lemma1_trials(n: int, d: int, trials: int, seed: int) -> list:
    rng = make_rng(seed)
    rows = []
    for _ in range(trials):
        X = rng.standard_normal((n, d))
        rows.append(lemma1_residual(X, _shifted_relu(rng)))
    return rows


def _equal_variance_data(rng, n, d):
    X = rng.standard_normal((n, d))
    X = X - X.mean(axis=0)
    return X / X.std(axis=0, ddof=1)


def lemma2_exact_trials(n: int, d: int, p: int, trials: int, seed: int) -> list:
    rng = make_rng(seed)
    rows = []
    for _ in range(trials):
        X = _equal_variance_data(rng, n, d)
        W = orthonormalize_rows(uniform_weights(d, p, rng))
        rows.append(lemma2_residual(X, W).exact)
    return rows


def lemma2_random_trend(n: int, d: int, widths, trials: int, seed: int) -> dict:
    """Median relative deviation of the raw random projector from the identity, per width."""
    out = {}
    for p in widths:
        rng = make_rng(np.random.SeedSequence([seed, p]))
        devs = []
        for _ in range(trials):
            X = _equal_variance_data(rng, n, d)
            devs.append(lemma2_residual(X, uniform_weights(d, p, rng)).deviation)
        out[p] = float(np.median(devs))
    return out


def cmd_lemma_check(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if args.lemma == 1:
        rows = lemma1_trials(args.n, args.d, args.trials, args.seed)
    elif args.mode == "exact":
        rows = lemma2_exact_trials(args.n, args.d, args.p, args.trials, args.seed)
    else:
        widths = [int(v) for v in _parse_floats(args.widths)]
        trend = lemma2_random_trend(args.n, args.d, widths, args.trials, args.seed)
        print(f"{'P':>8} {'median_deviation':>20}")
        for p, v in trend.items():
            print(f"{p:>8} {v:>20.6e}")
        meds = list(trend.values())
        ok = all(b < a for a, b in zip(meds, meds[1:]))
        print("PASS" if ok else "FAIL", "strictly decreasing" if ok else "not strictly decreasing")
        return EXIT_OK if ok else EXIT_FAIL
    print(f"{'trial':>6} {'hsic_side':>24} {'covariance_side':>24} {'relative':>12}")
    for i, r in enumerate(rows):
        print(f"{i:>6} {r.hsic_side:>24.16e} {r.covariance_side:>24.16e} {r.relative:>12.3e}")
    worst = max(r.relative for r in rows)
    ok = worst < LEMMA_TOL
    print(f"{'PASS' if ok else 'FAIL'} max_relative={worst:.3e} tol={LEMMA_TOL:g}")
    return EXIT_OK if ok else EXIT_FAIL


def _add_ica_args(p):
    p.add_argument("--mode", choices=["linear", "pnl"], default="linear")
    p.add_argument("--data", default="synthetic", help="'synthetic' or a CSV of mixtures")
    p.add_argument("--truth", help="CSV of true sources, enables max_corr for CSV data")
    p.add_argument("--signal-cols", help="comma-separated true-source columns to score")
    p.add_argument("--n", type=int, default=4000, help="samples for synthetic data")
    p.add_argument("--data-seed", type=int, help="synthetic data seed (defaults to --seed)")
    p.add_argument("--projector", choices=["mlp", "linear", "identity"], default="mlp")
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--bn", choices=["on", "off"], default="on")
    p.add_argument("--resample", choices=["on", "off"], default="on")
    p.add_argument("--var-w", type=float, help="variance weight (default 100)")
    p.add_argument("--cov-w", type=float, help="covariance weight (default 1)")
    p.add_argument("--rec-w", type=float, help="reconstruction weight, pnl only (default 1e4)")
    p.add_argument("--scale-cov", choices=["on", "off"], default="off",
                   help="divide the covariance weight by sqrt(width)")
    p.add_argument("--optimizer", choices=["lars", "sgd", "adam"], default="lars")
    p.add_argument("--lr", type=float, help="base lr, scaled by batch/256 (default 100 linear, 10 pnl)")
    p.add_argument("--schedule", choices=["cosine", "constant"], default="cosine")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--select", choices=["last", "dhsic"], default="dhsic")
    p.add_argument("--eval-samples", type=int, default=500)
    p.add_argument("--out", required=True)


def _add_kernel_args(p):
    p.add_argument("--kernel", choices=["gaussian", "linear"], default="gaussian")
    p.add_argument("--sigma", default="median")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vcreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vcreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write synthetic sources and mixtures")
    p.add_argument("--kind", choices=["linear", "pnl"], default="linear")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ica", help="train one ICA model")
    _add_ica_args(p)
    p.add_argument("--from-manifest", help="rerun with the arguments recorded in a manifest")
    p.set_defaults(func=cmd_ica)

    p = sub.add_parser("grid", help="grid search ranked by dHSIC")
    _add_ica_args(p)
    p.add_argument("--lr-grid", help="e.g. 1,10,100")
    p.add_argument("--var-w-grid")
    p.add_argument("--cov-w-grid")
    p.add_argument("--rec-w-grid")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("hsic", help="HSIC between two column groups")
    p.add_argument("--data", required=True)
    p.add_argument("--col-a")
    p.add_argument("--col-b")
    p.add_argument("--n-first", type=int, help="mean pairwise HSIC over the first n columns")
    _add_kernel_args(p)
    p.add_argument("--normalization", choices=["unbiased", "biased"], default="unbiased")
    p.add_argument("--out")
    p.set_defaults(func=cmd_hsic)

    p = sub.add_parser("dhsic", help="joint independence of several columns")
    p.add_argument("--data", required=True)
    p.add_argument("--cols")
    p.add_argument("--n-first", type=int)
    p.add_argument("--subsets", type=int, help="number of random column subsets")
    p.add_argument("--subset-size", type=int)
    p.add_argument("--seed", type=int, default=0)
    _add_kernel_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dhsic)

    p = sub.add_parser("hsic-test", help="permutation test of pairwise independence")
    p.add_argument("--data", required=True)
    p.add_argument("--col-a", required=True)
    p.add_argument("--col-b", required=True)
    p.add_argument("--permutations", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    _add_kernel_args(p)
    p.set_defaults(func=cmd_hsic_test)

    p = sub.add_parser("lemma-check", help="numerically verify the HSIC / covariance identities")
    p.add_argument("--lemma", type=int, choices=[1, 2], default=1)
    p.add_argument("--mode", choices=["exact", "random"], default="exact")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--p", type=int, default=64)
    p.add_argument("--widths", default="64,512,4096")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_lemma_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(exc, file=sys.stderr)
        return EXIT_NOINPUT
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
