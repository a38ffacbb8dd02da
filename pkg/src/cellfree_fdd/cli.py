"""Command-line experiment runner.

Usage:  cellfree-fdd <experiment> [options]
        cellfree-fdd catalog [--json]

Every SystemConfig field can be set from a JSON config file (--config) and
overridden by a flag of the same name (--num-aps, --noise-var, ...).
Data CSVs are deterministic for a fixed seed and independent of --workers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import MISSING, fields

from .config import ConfigError, SystemConfig
from . import experiments as xp

EXIT_USAGE = 2
EXIT_OUTDIR = 3

_SCHEMES = ("a-mf", "a-zf", "a-mmse")


def _parse_sweep(text: str) -> list[float]:
    """Parse 'start:step:stop' (inclusive) or a comma-separated list."""
    if ":" in text:
        start, step, stop = (float(x) for x in text.split(":"))
        if step <= 0:
            raise argparse.ArgumentTypeError("sweep step must be positive")
        out = []
        v = start
        while v <= stop + 1e-9:
            out.append(round(v, 12))
            v += step
        return out
    return [float(x) for x in text.split(",")]


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",")]


def _parse_list(text: str) -> list[str]:
    return [x.strip().lower() for x in text.split(",") if x.strip()]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("scenario overrides")
    for f in fields(SystemConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = int if f.type in ("int", int) else float
        group.add_argument(flag, type=kind, default=None,
                           help=f"override {f.name} (default "
                                f"{f.default if f.default is not MISSING else '-'})")
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="JSON file with SystemConfig fields")
    parser.add_argument("--seed", type=int, default=None,
                        help="alias for --rng-seed")
    parser.add_argument("--out-dir", default=None,
                        help="output directory (default $CELLFREE_FDD_OUTDIR "
                             "or ./results)")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker processes for Monte-Carlo trials")
    parser.add_argument("--exact-components", action="store_true",
                        help="feed ground-truth multipath components instead "
                             "of running the estimator")


def resolve_config(args: argparse.Namespace) -> SystemConfig:
    data = {}
    if args.config:
        data.update(SystemConfig.from_file(args.config).as_dict())
    for f in fields(SystemConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = int(v) if f.type in ("int", int) else v
    if args.seed is not None:
        data["rng_seed"] = args.seed
    return SystemConfig(**data)


def _resolve_out_dir(args) -> str:
    out = args.out_dir or os.environ.get("CELLFREE_FDD_OUTDIR") or "results"
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write-probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        print(f"error: output directory {out!r} is not writable: {exc}",
              file=sys.stderr)
        sys.exit(EXIT_OUTDIR)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellfree-fdd",
        description="FDD cell-free massive MIMO experiment runner")
    sub = parser.add_subparsers(dest="experiment", required=True,
                                metavar="experiment")

    cat = sub.add_parser("catalog", help="list available experiments")
    cat.add_argument("--json", action="store_true",
                     help="emit the catalog as JSON")

    specs: dict[str, dict] = {
        "estimate-rmse": dict(snr="0:5:20", trials=2000),
        "se-vs-snr": dict(snr="-10:5:20", trials=25, schemes=",".join(_SCHEMES),
                          genie=500, coherent=True),
        "se-vs-aps": dict(snr="10", trials=25, schemes=",".join(_SCHEMES),
                          m="1,2,5,10,20,40", nm=320),
        "se-vs-antennas": dict(snr="0,10,20", trials=25,
                               schemes=",".join(_SCHEMES), n="8,16,32,64,128"),
        "maxmin": dict(snr="10", trials=10, scheme="a-mmse", direction="dl,ul"),
        "ee-vs-aps": dict(snr="10", trials=10, scheme="a-mmse",
                          m="1,2,5,10,20,40", nm=320, pc="equal,maxmin"),
        "cdf": dict(snr="10", trials=20, scheme="a-mmse",
                    pc="equal,waterfill,maxmin"),
    }
    for entry in xp.catalog_entries():
        opts = specs[entry.name]
        p = sub.add_parser(entry.name, help=entry.description)
        _add_config_flags(p)
        p.add_argument("--trials", type=int, default=opts["trials"])
        p.add_argument("--snr", type=_parse_sweep, default=opts["snr"],
                       help="SNR sweep 'start:step:stop' or comma list [dB]")
        if "schemes" in opts:
            p.add_argument("--schemes", type=_parse_list,
                           default=opts["schemes"])
        if "scheme" in opts:
            p.add_argument("--scheme", choices=_SCHEMES,
                           default=opts["scheme"])
        if "m" in opts:
            p.add_argument("--m", type=_parse_int_list, default=opts["m"],
                           help="AP counts to sweep")
            p.add_argument("--nm", type=int, default=opts["nm"],
                           help="fixed total antenna count M*N")
        if "n" in opts:
            p.add_argument("--n", type=_parse_int_list, default=opts["n"],
                           help="antennas-per-AP sweep")
        if "genie" in opts:
            p.add_argument("--genie-trials", type=int, default=opts["genie"])
        if "coherent" in opts:
            p.add_argument("--coherent-signal", action="store_true",
                           help="use the coherent |sum_m h^H w|^2 genie "
                                "numerator instead of the incoherent sum")
        if "direction" in opts:
            p.add_argument("--direction", type=_parse_list,
                           default=opts["direction"])
        if "pc" in opts:
            p.add_argument("--pc", type=_parse_list, default=opts["pc"],
                           help="power-control schemes to include")
    return parser


def _listify(value, parse):
    return parse(value) if isinstance(value, str) else value


def _merge_negative_values(argv: list[str]) -> list[str]:
    """Glue values like '-10:5:20' to their flag so argparse accepts them."""
    out = []
    skip = False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok == "--snr" and i + 1 < len(argv) and argv[i + 1][:1] == "-":
            out.append(f"--snr={argv[i + 1]}")
            skip = True
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(_merge_negative_values(list(argv)))

    if args.experiment == "catalog":
        entries = xp.catalog_entries()
        if args.json:
            print(json.dumps([e.__dict__ for e in entries], indent=2))
        else:
            for e in entries:
                print(f"{e.name:16s} fig {e.figure:4s} {e.description}")
        return 0

    try:
        config = resolve_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        parser.error(str(exc))  # exits 2
    out_dir = _resolve_out_dir(args)
    snrs = _listify(args.snr, _parse_sweep)
    name = args.experiment
    files: list[str] = []
    dropped = 0
    options: dict = {"trials": args.trials, "snr": snrs,
                     "workers": args.workers,
                     "exact_components": args.exact_components}

    def sink(filename, columns):
        return xp.CsvSink(os.path.join(out_dir, filename), columns)

    if name == "estimate-rmse":
        rows = xp.run_estimate_rmse(config, snrs, args.trials)
        out = sink("estimate_rmse.csv",
                   ("snr_db", "rmse_upsilon_sim", "rmse_upsilon_theory",
                    "rmse_beta_norm_sim", "rmse_beta_norm_theory"))
        for row in rows:
            out.add(*row)
    elif name == "se-vs-snr":
        schemes = _listify(args.schemes, _parse_list)
        options.update(schemes=schemes, genie_trials=args.genie_trials,
                       coherent=args.coherent_signal)
        rows = xp.run_se_vs_snr(config, snrs, schemes, args.trials,
                                args.genie_trials, args.workers,
                                coherent=args.coherent_signal,
                                exact=args.exact_components)
        out = sink("se_vs_snr.csv",
                   ("scheme", "snr_db", "metric", "user", "value", "stderr"))
        for row in rows:
            out.add(*row)
    elif name == "se-vs-aps":
        schemes = _listify(args.schemes, _parse_list)
        options.update(schemes=schemes, m=args.m, nm=args.nm)
        rows = xp.run_se_vs_aps(config, args.m, args.nm, snrs[0], schemes,
                                args.trials, args.workers,
                                exact=args.exact_components)
        out = sink("se_vs_aps.csv", ("m", "n", "scheme", "sum_se", "stderr"))
        for row in rows:
            out.add(*row)
    elif name == "se-vs-antennas":
        schemes = _listify(args.schemes, _parse_list)
        options.update(schemes=schemes, n=args.n)
        rows = xp.run_se_vs_antennas(config, args.n, snrs, schemes,
                                     args.trials, args.workers,
                                     exact=args.exact_components)
        out = sink("se_vs_antennas.csv",
                   ("n", "snr_db", "scheme", "sum_se", "stderr"))
        for row in rows:
            out.add(*row)
    elif name == "maxmin":
        directions = _listify(args.direction, _parse_list)
        options.update(scheme=args.scheme, directions=directions)
        rates, traces, _ = xp.run_maxmin(config, snrs[0], args.scheme,
                                         directions, args.trials,
                                         args.workers,
                                         exact=args.exact_components)
        out = sink("maxmin_rates.csv",
                   ("instance", "pc", "topology", "direction", "user", "rate"))
        for row in rates:
            out.add(*row)
        out2 = sink("maxmin_trace.csv",
                    ("instance", "direction", "iteration", "mu", "feasible"))
        for row in traces:
            out2.add(*row)
        out2.write()
        files.append(out2.path)
        dropped += out2.dropped
    elif name == "ee-vs-aps":
        pcs = _listify(args.pc, _parse_list)
        options.update(scheme=args.scheme, pc=pcs, m=args.m, nm=args.nm)
        rows = xp.run_ee_vs_aps(config, args.m, args.nm, snrs[0], args.scheme,
                                pcs, args.trials, args.workers,
                                exact=args.exact_components)
        out = sink("ee_vs_aps.csv",
                   ("m", "n", "pc", "topology", "ee", "p_total", "sum_se"))
        for row in rows:
            out.add(*row)
    elif name == "cdf":
        pcs = _listify(args.pc, _parse_list)
        options.update(scheme=args.scheme, pc=pcs)
        rows = xp.run_cdf(config, snrs[0], args.scheme, pcs, args.trials,
                          args.workers, exact=args.exact_components)
        out = sink("rate_cdf.csv",
                   ("instance", "pc", "topology", "user", "rate"))
        for row in rows:
            out.add(*row)
    else:  # pragma: no cover - argparse enforces choices
        parser.error(f"unknown experiment {name!r}")

    out.write()
    files.append(out.path)
    dropped += out.dropped
    manifest = xp.write_manifest(out_dir, name, config, options, files,
                                 dropped)
    for path in files:
        print(f"wrote {path}")
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
