"""Command-line entry point: ``eftci state gen`` and ``eftci ef ...``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .analysis import EFRecord, bond_scan, distance_matrix, ef_spectrum_study, learn_ef, loglog_slope, scan_csv, stress_layout
from .cross import TciOptions
from .disentangle import disentangle
from .oracles import (
    MPS,
    DensePurity,
    DenseState,
    FermionPurity,
    FermionState,
    HaarAnalyticPurity,
    MPSPurity,
    load_dense_state,
    load_mps,
    save_dense_state,
    save_mps,
)
from .seeds import substream
from .states import TFIM_PRESETS, ModelSpec, make_state
from .tt import save_tt

logger = logging.getLogger("eftci")


class CliError(Exception):
    """A user-facing failure reported on stderr with exit code 1."""


def _threads(args) -> int:
    env = os.environ.get("EFTCI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"EFTCI_THREADS must be an integer, got {env!r}") from None
    return max(1, args.threads)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _write_config(out_dir: Path, args, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    config["threads"] = _threads(args)
    config.update(extra or {})
    (out_dir / "resolved-config.json").write_text(json.dumps(config, indent=2, sort_keys=True, default=str) + "\n")


def _write_table(path: Path, header: list[str], rows: list[list], fmt: str) -> None:
    if fmt == "json":
        path.write_text(json.dumps([dict(zip(header, r)) for r in rows], indent=2) + "\n")
        return
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow([format(x, ".17g") if isinstance(x, float) else x for x in r])
    path.write_text(buf.getvalue())


# --------------------------------------------------------------------------
# oracle specs


def load_backend(spec: str):
    """Purity backend from ``haar-analytic:L``, ``dense:PATH``, ``fermion:PATH`` or ``mps:PATH``."""
    kind, _, arg = spec.partition(":")
    if not arg:
        raise CliError(f"oracle spec {spec!r} must look like kind:argument")
    if kind == "haar-analytic":
        return HaarAnalyticPurity(int(arg))
    path = Path(arg)
    if not path.exists():
        raise CliError(f"no such file: {path}")
    if kind == "dense":
        meta = _read_meta(path)
        state = load_dense_state(path)
        if meta.get("fermionic"):
            return FermionPurity(FermionState(state.L, state.amps))
        return DensePurity(state)
    if kind == "fermion":
        state = load_dense_state(path)
        return FermionPurity(FermionState(state.L, state.amps))
    if kind == "mps":
        return MPSPurity(load_mps(path))
    raise CliError(f"unknown oracle kind {kind!r}")


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def _read_meta(path: Path) -> dict:
    meta = _meta_path(Path(path))
    return json.loads(meta.read_text()) if meta.exists() else {}


def _tci_options(args, seed_key: str = "tci") -> TciOptions:
    return TciOptions(
        tolerance=args.tol,
        max_rank=args.chi_max,
        max_sweeps=args.max_sweeps,
        seed=substream(args.seed, seed_key),
    )


# --------------------------------------------------------------------------
# commands


def _model_spec(args) -> ModelSpec:
    params = {}
    for name in ("J", "g", "h", "W", "phi", "colors", "target"):
        val = getattr(args, name, None)
        if val is not None:
            params[name] = val
    return ModelSpec(args.family, args.L, params)


def cmd_state_gen(args) -> int:
    spec = _model_spec(args)
    if spec.family == "haar_analytic":
        raise CliError("haar_analytic has no state; use the oracle spec haar-analytic:L")
    state_seed = substream(args.seed, "state")
    state, meta = make_state(spec, state_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta.update(root_seed=args.seed, fermionic=isinstance(state, FermionState))
    if isinstance(state, MPS):
        save_mps(state, out)
        meta["format"] = "tt-json-complex"
    else:
        if isinstance(state, FermionState):
            state = DenseState((2,) * state.n_modes, state.amps)
        save_dense_state(state, out)
        meta["format"] = "dense-binary"
    _meta_path(out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _write_config(out.parent, args, {"state_seed": state_seed})
    return 0


def cmd_ef_learn(args) -> int:
    backend = load_backend(args.oracle)
    opts = _tci_options(args)
    mode = "fixed_rank" if args.mode == 1 else "adaptive"
    if mode == "fixed_rank" and opts.max_rank is None:
        raise CliError("--mode 1 needs --chi-max")
    rec = learn_ef(backend, args.basis, opts, args.eps_th, mode=mode, state_meta={"oracle": args.oracle})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tt(rec.tt, out / "ef.tt")
    (out / "ef.json").write_text(json.dumps(rec.sidecar(), indent=2, default=str) + "\n")
    _write_config(out, args)
    return 0 if rec.converged else 1


def _parse_named(items: list[str]) -> list[tuple[str, str]]:
    named = []
    for item in items:
        name, sep, spec = item.partition("=")
        if not sep:
            raise CliError(f"expected NAME=ORACLE, got {item!r}")
        named.append((name, spec))
    return named


def cmd_ef_distmatrix(args) -> int:
    named = _parse_named(args.oracle)
    backends = [(name, load_backend(spec)) for name, spec in named]
    mats = []
    for r in range(args.resamples):
        records: list[EFRecord] = []
        for i, (name, backend) in enumerate(backends):
            opts = TciOptions(tolerance=args.tol, max_rank=args.chi_max, max_sweeps=args.max_sweeps,
                              seed=substream(args.seed, "tci", i, r))
            records.append(learn_ef(backend, args.basis, opts, args.eps_th))
        mats.append(distance_matrix(records))
    mats = np.array(mats)
    mean, std = mats.mean(axis=0), mats.std(axis=0)
    rows = [[named[i][0], named[j][0], float(mean[i, j]), float(std[i, j])]
            for i in range(len(named)) for j in range(i + 1, len(named))]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "json" if args.format == "json" else "csv"
    _write_table(out / f"distances.{ext}", ["name_a", "name_b", "mean", "std"], rows, args.format)
    _write_config(out, args)
    return 0


def _read_distances(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names: list[str] = []
    for r in rows:
        for key in ("name_a", "name_b"):
            if r[key] not in names:
                names.append(r[key])
    dist = np.zeros((len(names), len(names)))
    for r in rows:
        i, j = names.index(r["name_a"]), names.index(r["name_b"])
        dist[i, j] = dist[j, i] = float(r["mean"])
    return names, dist


def cmd_ef_map(args) -> int:
    names, dist = _read_distances(Path(args.distances))
    pinned = {}
    for item in args.pin or []:
        name, sep, xy = item.partition("=")
        if not sep or name not in names:
            raise CliError(f"bad pin {item!r}; expected NAME=X,Y with a known name")
        x, y = (float(v) for v in xy.split(","))
        pinned[names.index(name)] = (x, y)
    coords, history = stress_layout(dist, pinned, iters=args.iters, seed=substream(args.seed, "layout"))
    rows = [[n, float(coords[i, 0]), float(coords[i, 1]), int(i in pinned)] for i, n in enumerate(names)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "json" if args.format == "json" else "csv"
    _write_table(out / f"map.{ext}", ["name", "x", "y", "pinned"], rows, args.format)
    _write_config(out, args, {"final_stress": history[-1], "iterations": len(history) - 1})
    return 0


def cmd_ef_scan(args) -> int:
    specs = [ModelSpec(f, L) for f in args.families.split(",") for L in _int_list(args.L)]
    thresholds = [1.1 ** (-k) for k in _int_list(args.eps_exponents)]
    opts = TciOptions(tolerance=args.tol, max_rank=args.chi_max, max_sweeps=args.max_sweeps)
    rows, details = bond_scan(specs, thresholds, args.samples, args.runs, args.seed, opts, _threads(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scan.csv").write_text(scan_csv(rows))
    (out / "scan-runs.json").write_text(json.dumps(details, indent=1, default=float) + "\n")
    ref = [[L, analysis.chi_max_reference(L)] for L in sorted({s.L for s in specs})]
    _write_table(out / "chi-max-reference.csv", ["L", "chi_max"], ref, "csv")
    _write_config(out, args)
    failed = [r for r in rows if r.status != "ok"]
    for r in failed:
        print(f"row failed: {r.family} L={r.L} state_seed={r.state_seed} eps_th={r.eps_th:.6g} status={r.status}", file=sys.stderr)
    return 1 if failed else 0


def cmd_ef_disentangle(args) -> int:
    backend = load_backend(args.oracle)
    report = disentangle(backend, rank_cap=args.rank_cap, seed=substream(args.seed, "tci"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    _write_config(out.parent, args)
    return 0


def cmd_ef_spectrum(args) -> int:
    phis = _int_list(args.phi)
    rows = ef_spectrum_study(phis, args.L, args.samples, substream(args.seed, "state"), n_values=args.n_values)
    table = [[r["phi"], r["ratio"]] + r["lambdas"] for r in rows]
    header = ["phi", "ratio"] + [f"lambda_{i + 1}" for i in range(args.n_values)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "json" if args.format == "json" else "csv"
    _write_table(out / f"spectrum.{ext}", header, table, args.format)
    extra = {}
    if len(rows) >= 2 and all(r["ratio"] > 0 for r in rows):
        extra["ratio_loglog_slope"] = loglog_slope(phis, [r["ratio"] for r in rows])
    _write_config(out, args, extra)
    return 0


# --------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed for all random substreams")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--threads", type=int, default=1, help="worker threads (EFTCI_THREADS overrides)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_tci(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--chi-max", type=int, default=None)
    p.add_argument("--max-sweeps", type=int, default=4000)
    p.add_argument("--basis", choices=("natural", "dual"), default="dual")
    p.add_argument("--eps-th", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eftci", description="Learn and analyse entanglement features.")
    top = parser.add_subparsers(dest="group", required=True)

    state = top.add_parser("state", help="state generators").add_subparsers(dest="cmd", required=True)
    gen = state.add_parser("gen", help="generate a state file")
    families = ("haar", "random_mps", "tfim", "gue_h", "syk", "motzkin", "fredkin", "product") + tuple(TFIM_PRESETS)
    gen.add_argument("--family", required=True, choices=families)
    gen.add_argument("--L", type=int, required=True)
    for name in ("J", "g", "h", "W"):
        gen.add_argument(f"--{name}", type=float)
    gen.add_argument("--phi", type=int)
    gen.add_argument("--colors", type=int)
    gen.add_argument("--target", choices=("ground", "mid_spectrum"))
    gen.add_argument("--out", required=True, help="state file (dense binary, or tensor-train JSON for random_mps)")
    _add_common(gen)
    gen.set_defaults(func=cmd_state_gen)

    ef = top.add_parser("ef", help="entanglement-feature tools").add_subparsers(dest="cmd", required=True)

    learn = ef.add_parser("learn", help="learn the feature of one oracle")
    learn.add_argument("--oracle", required=True, help="haar-analytic:L | dense:PATH | fermion:PATH | mps:PATH")
    learn.add_argument("--mode", type=int, choices=(1, 2), default=2, help="1 fixed rank, 2 adaptive")
    _add_tci(learn)
    learn.add_argument("--out", required=True)
    _add_common(learn)
    learn.set_defaults(func=cmd_ef_learn)

    scan = ef.add_parser("scan", help="bond dimension against error threshold")
    scan.add_argument("--families", required=True, help="comma-separated families or presets")
    scan.add_argument("--L", required=True, help="comma-separated sizes")
    scan.add_argument("--eps-exponents", default=",".join(map(str, analysis.SCAN_EXPONENTS)),
                      help="thresholds are 1.1^-k for these k")
    scan.add_argument("--samples", type=int, default=1, help="state samples for random families")
    scan.add_argument("--runs", type=int, default=10, help="TCI runs per state")
    scan.add_argument("--tol", type=float, default=1e-12)
    scan.add_argument("--chi-max", type=int, default=None)
    scan.add_argument("--max-sweeps", type=int, default=4000)
    scan.add_argument("--out", required=True)
    _add_common(scan)
    scan.set_defaults(func=cmd_ef_scan)

    dm = ef.add_parser("distmatrix", help="pairwise feature distances")
    dm.add_argument("--oracle", action="append", required=True, help="NAME=ORACLE, repeatable")
    dm.add_argument("--resamples", type=int, default=1)
    _add_tci(dm)
    dm.add_argument("--out", required=True)
    _add_common(dm)
    dm.set_defaults(func=cmd_ef_distmatrix)

    mp = ef.add_parser("map", help="2D layout from a distance table")
    mp.add_argument("--distances", required=True, help="CSV written by ef distmatrix")
    mp.add_argument("--pin", action="append", help="NAME=X,Y, repeatable")
    mp.add_argument("--iters", type=int, default=500)
    mp.add_argument("--out", required=True)
    _add_common(mp)
    mp.set_defaults(func=cmd_ef_map)

    dis = ef.add_parser("disentangle", help="search a low-entanglement site ordering")
    dis.add_argument("--oracle", required=True)
    dis.add_argument("--rank-cap", type=int, default=2)
    dis.add_argument("--out", required=True, help="report JSON path")
    _add_common(dis)
    dis.set_defaults(func=cmd_ef_disentangle)

    sp = ef.add_parser("spectrum", help="half-cut spectrum of the feature of random MPS")
    sp.add_argument("--phi", default="2,3,4,5")
    sp.add_argument("--L", type=int, default=15)
    sp.add_argument("--samples", type=int, default=10)
    sp.add_argument("--n-values", type=int, default=8)
    sp.add_argument("--out", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_ef_spectrum)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, IndexError, OSError) as exc:
        print(f"eftci: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
