"""Command-line front end: simulate, filter, fit, moments, overlaps, tables.

Every command writes its main output to ``--out`` and a run manifest next to
it (``<out>.manifest.json``) listing the inputs and outputs with checksums.
Exit codes: 0 success, 2 configuration or argument error, 3 data error,
4 numerical or diagnostics failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from . import __version__, analysis, cg, filter as filt, heterodyne, linopt, repcore
from .errors import ArgumentError, ConfigError, DataError, NumericalError, PassiveRBError

log = logging.getLogger("passive_rb")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, command: str, config: dict, seed: int | None, inputs: Sequence[Path],
                   outputs: Sequence[Path], timings: dict[str, float]) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": seed,
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "artifacts": [{"path": str(p), "sha256": _sha256(p)} for p in outputs],
        "timings": timings,
    }
    path = out.with_name(out.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _parse_fock(text: str) -> tuple[int, ...]:
    """'1,1,0' or '110' (single-digit occupations) -> tuple."""
    text = text.strip()
    try:
        if "," in text:
            return tuple(int(x) for x in text.split(","))
        return tuple(int(c) for c in text)
    except ValueError as exc:
        raise ArgumentError(f"cannot parse Fock vector {text!r}") from exc


def _default_input(n: int, m: int, given: str | None) -> tuple[int, ...]:
    if given is not None:
        return repcore.check_fock(_parse_fock(given), n, m)
    if n > m:
        raise ArgumentError("no default collision-free input for n > m; pass --input")
    return (1,) * n + (0,) * (m - n)


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _read_lines(path: str) -> list[str]:
    try:
        with open(path) as fh:
            return fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _is_heterodyne(lines: list[str]) -> bool:
    for line in lines:
        if line.strip():
            try:
                return "alpha" in json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed record: {exc}") from exc
    raise DataError("no records")


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    data = _load_config(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = linopt.SimConfig.from_dict(data)
    out = Path(args.out)
    with open(out, "w") as fh:
        if cfg.detector == "heterodyne":
            count = heterodyne.write_het_records(heterodyne.simulate_heterodyne(cfg), fh)
        else:
            count = linopt.write_records(linopt.simulate(cfg, threads=args.threads), fh)
    elapsed = time.perf_counter() - t0
    log.info("wrote %d records to %s", count, out)
    write_manifest(out, "simulate", cfg.to_dict(), cfg.seed, [Path(args.config)], [out], {"total_s": elapsed})
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    if args.indicator == (args.irrep is not None):
        raise ArgumentError("pass exactly one of --irrep K or --indicator")
    lines = _read_lines(args.records)
    if _is_heterodyne(lines):
        if args.indicator:
            raise ArgumentError("the indicator filter needs photon-number records")
        records = list(heterodyne.read_het_records(lines))
        signal = heterodyne.estimate_signal_het(records, args.irrep)
    else:
        records = list(linopt.read_records(lines))
        n, m, _ = filt.records_sector(records)
        if args.irrep is not None and not 0 <= args.irrep <= n:
            raise DataError(f"irrep k={args.irrep} is not part of the n={n}, m={m} sector")
        k = None if args.indicator else args.irrep
        signal = filt.estimate_signal(records, k, post_select=not args.no_postselect, threads=args.threads)
    out = Path(args.out)
    with open(out, "w") as fh:
        signal.write_csv(fh)
    config = {"irrep": args.irrep, "indicator": args.indicator, "postselect": not args.no_postselect,
              "missing_lengths": signal.missing}
    write_manifest(out, "filter", config, None, [Path(args.records)], [out], {"total_s": time.perf_counter() - t0})
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    try:
        with open(args.signal) as fh:
            signal = filt.RBSignal.read_csv(fh)
    except OSError as exc:
        raise DataError(f"cannot read {args.signal}: {exc}") from exc
    result = analysis.fit_exponential(signal)
    obj = {"filter_id": signal.filter_id, **result.to_dict()}
    if args.particles is not None:
        if args.particles < 1:
            raise ArgumentError("--particles must be positive")
        obj["sqrt_p"] = analysis.transmittivity_from_rate(result.r, args.particles)
    out = Path(args.out)
    _write_json(out, obj)
    write_manifest(out, "fit", {"particles": args.particles}, None, [Path(args.signal)], [out],
                   {"total_s": time.perf_counter() - t0})
    return 0


def cmd_moments(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    inp = _default_input(args.n, args.m, args.input)
    ks = range(args.n + 1) if args.irrep is None else [args.irrep]
    rows = []
    for k in ks:
        if not 0 <= k <= args.n:
            raise ArgumentError(f"irrep k={k} is not part of the n={args.n} sector")
        if args.heterodyne:
            first = heterodyne.first_moment_het(k, args.n, args.m, inp)
            second = heterodyne.second_moment_het(k, args.n, args.m, inp)
            s = heterodyne.frame_eigenvalue_het(k, args.n, args.m)
            bound = None
        else:
            first = analysis.first_moment(k, args.n, args.m, inp)
            second = analysis.second_moment(k, args.n, args.m, inp)
            s = float(filt.frame_eigenvalue_pnr(k, args.m))
            bound = analysis.second_moment_bound(k, args.m)
        # adding 0.0 turns a signed zero into a plain zero in the JSON
        rows.append({"k": k, "frame_eigenvalue": s, "first": first + 0.0, "second": second + 0.0,
                     "variance": second - first**2 + 0.0, "second_bound": bound})
    obj = {"n": args.n, "m": args.m, "input": list(inp), "detector": "heterodyne" if args.heterodyne else "pnr",
           "moments": rows}
    out = Path(args.out)
    _write_json(out, obj)
    write_manifest(out, "moments", {k: obj[k] for k in ("n", "m", "input", "detector")}, None, [], [out],
                   {"total_s": time.perf_counter() - t0})
    return 0


def cmd_overlaps(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    inp = _default_input(args.n, args.m, args.input)
    ctx = filt.FilterContext.build(args.n, args.m, inp)
    out = Path(args.out)
    with open(out, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "dim", "frame_eigenvalue", "overlap"])
        for k in ctx.ks:
            writer.writerow([k, repcore.dim_lambda(k, args.m), format(float(ctx.frame[k]), ".17g"),
                             format(ctx.first_moment(k), ".17g")])
    write_manifest(out, "overlaps", {"n": args.n, "m": args.m, "input": list(inp)}, None, [], [out],
                   {"total_s": time.perf_counter() - t0})
    return 0


def cmd_tables(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    n, m = args.n, args.m
    if m < 2 or n < 0:
        raise ArgumentError(f"invalid sector n={n}, m={m}")
    where = cg.cache_dir(args.cache)
    report: dict = {"n": n, "m": m, "cache": str(where) if where else None, "tables": []}
    fock = [cg.fock_table(n, m, k, where) for k in range(n + 1)]
    families = [(fock, True)]
    if not args.fock_only:
        for k in range(n + 1):
            families.append(([cg.square_table(k, l, m, where) for l in range(min(n, 2 * k) + 1)], False))
    ok = True
    for tables, complete in families:
        rep = cg.verify_decomposition(tables, complete=complete)
        ok = ok and rep.passed
        report["tables"].append({
            "couplings": [t.coupling.key for t in tables],
            "multiplicities": [t.multiplicity for t in tables],
            "orthonormality": rep.orthonormality,
            "completeness": rep.completeness,
            "selection_violations": rep.selection_violations,
            "intertwining": rep.intertwining,
            "passed": rep.passed,
        })
    report["passed"] = ok
    out = Path(args.out)
    _write_json(out, report)
    write_manifest(out, "tables", {"n": n, "m": m, "fock_only": args.fock_only}, None, [], [out],
                   {"total_s": time.perf_counter() - t0})
    if not ok:
        raise NumericalError("CG verification failed; see the report for the worst residuals")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="passive-rb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--out", required=True, help="output file; a manifest is written next to it")
        sp.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")

    sp = sub.add_parser("simulate", help="generate RB records from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="per-length filtered means from a record file")
    sp.add_argument("records")
    sp.add_argument("--irrep", type=int, default=None)
    sp.add_argument("--indicator", action="store_true")
    sp.add_argument("--no-postselect", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("fit", help="fit A r^l to a signal CSV")
    sp.add_argument("signal")
    sp.add_argument("--particles", type=int, default=None,
                    help="particle number n; adds sqrt(p) = r^(1/2n) for indicator fits")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    for name, func, helptext in (
        ("moments", cmd_moments, "first and second filter moments"),
        ("overlaps", cmd_overlaps, "per-irrep overlap of the input state"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--n", type=int, required=True)
        sp.add_argument("--m", type=int, required=True)
        sp.add_argument("--input", default=None, help="Fock vector, e.g. 1111 or 2,0,1")
        if name == "moments":
            sp.add_argument("--irrep", type=int, default=None)
            sp.add_argument("--heterodyne", action="store_true")
        common(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("tables", help="build, cache and verify CG tables")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--cache", default=None, help=f"cache directory (default: ${cg.CACHE_ENV})")
    sp.add_argument("--fock-only", action="store_true", help="skip the lambda_k x lambda_k tables")
    common(sp)
    sp.set_defaults(func=cmd_tables)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except PassiveRBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
