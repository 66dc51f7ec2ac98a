"""Command-line interface: ``cnmasel fit|select|disconnect|simulate|replay|example``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .disconnector import DisconnectError, apply_disconnect, enumerate_disconnected
from .estimator import (
    ModelError,
    ModelFit,
    fit_cnma,
    fit_nma,
    fit_separate_nmas,
    format_p,
    q_difference_test,
)
from .network import (
    DegreesOfFreedomError,
    Network,
    NetworkError,
    parse_interaction,
    parse_intervention_label,
    read_csv,
    write_csv,
)
from .selector import AIC_THRESHOLD, forward_select
from .simulator import (
    ScenarioConfig,
    performance_rows,
    run_scenario,
    selection_table_rows,
)

log = logging.getLogger("cnmasel")

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_NUMERIC = 0, 2, 3, 4
SCHEMA_VERSION = 1  # output layouts described in docs/output-formats.md
DEFAULT_SEED = 42
EXAMPLES = {"simulated-c1": "simulated_c1.csv", "star": "star.csv"}


class InputError(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _write_rows(rows: Sequence[dict], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _write_manifest(out: Path, stem: str, argv: Sequence[str], config: dict, inputs: Sequence[Path],
                    seed: int | None) -> Path:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": list(argv),
        "config": config,
        "inputs": {str(p): _digest(p) for p in inputs},
        "seed": seed,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path = out / f"{stem}.manifest.json"
    _dump_json(manifest, path)
    return path


def _out_dir(args, input_path: Path | None) -> Path:
    if args.out:
        out = Path(args.out)
    elif input_path is not None:
        out = input_path.parent
    else:
        out = Path.cwd()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_input(name: str) -> Path:
    if name.startswith("example:"):
        key = name.split(":", 1)[1]
        if key not in EXAMPLES:
            raise InputError(f"unknown example {key!r}; choose from {sorted(EXAMPLES)}")
        return Path(str(resources.files("cnmasel") / "data" / EXAMPLES[key]))
    path = Path(name)
    if not path.is_file():
        raise InputError(f"input file {name} not found")
    return path


def _load(args) -> tuple[Network, Path]:
    path = _resolve_input(args.input)
    if args.inactive is None:
        inactive = parse_intervention_label(args.reference, args.sep).components
    else:
        inactive = tuple(c for c in args.inactive.split(",") if c)
    return read_csv(path, inactive, args.sep), path


def _effects_table(fit: ModelFit, decimals: int = 4) -> str:
    rows = [f"{'Comparison':<24} {'Estimate':>9} {'SE':>8} {'95%-CI':>22}"]
    for e in fit.effects():
        name = f"{e.treat1} vs {e.treat2}"
        if not e.estimable:
            rows.append(f"{name:<24} {'inestimable':>9}")
            continue
        ci = f"[{e.low:.{decimals}f}; {e.high:.{decimals}f}]"
        rows.append(f"{name:<24} {e.estimate:9.{decimals}f} {e.se:8.{decimals}f} {ci:>22}")
    return "\n".join(rows)


def fit_report(fit: ModelFit) -> str:
    label = " + ".join(fit.interactions) if fit.interactions else {
        "nma": "Standard NMA", "additive": "Additive CNMA"}.get(fit.kind, fit.kind)
    head = (f"Model: {label}\n"
            f"Q = {fit.Q:.2f}, df = {fit.df}, p = {format_p(fit.p)}, tau^2 = {fit.tau2:.4f}, "
            f"rank = {fit.rank}, subnetworks = {fit.n_subnetworks}")
    return head + "\n\n" + _effects_table(fit)


# -- commands ----------------------------------------------------------------

def cmd_fit(args, argv) -> int:
    net, path = _load(args)
    out = _out_dir(args, path)
    stem = f"{path.stem}.fit"
    model = args.model
    payload: dict[str, Any]
    if model == "nma":
        if args.per_subnetwork:
            sep = fit_separate_nmas(net, args.reference)
            payload = {"kind": "separate", "Q": sep.Q, "df": sep.df, "p": sep.p,
                       "subnetworks": sep.subnetworks, "fits": [f.to_dict() for f in sep.fits]}
            text = "\n\n".join(fit_report(f) for f in sep.fits)
            text = (f"Separate NMAs: Q = {sep.Q:.2f}, df = {sep.df}, p = {format_p(sep.p)}\n\n" + text)
        else:
            fit = fit_nma(net, args.reference)
            payload, text = fit.to_dict(), fit_report(fit)
    elif model == "additive" or model.startswith("interactions="):
        names = []
        if model.startswith("interactions="):
            names = [parse_interaction(s) for s in model.split("=", 1)[1].split(",") if s]
        fit = fit_cnma(net, names, args.reference)
        payload, text = fit.to_dict(), fit_report(fit)
        if names:
            add = fit_cnma(net, (), args.reference)
            test = q_difference_test(add, fit)
            payload["vs_additive"] = test._asdict()
            text += (f"\n\n{'Interaction':<24} {'Q':>8} {'df':>4} {'p':>9} {'p (diff)':>9}\n"
                     f"{'No interaction':<24} {add.Q:8.2f} {add.df:4d} {format_p(add.p):>9}\n"
                     f"{' + '.join(fit.interactions):<24} {fit.Q:8.2f} {fit.df:4d} "
                     f"{format_p(fit.p):>9} {format_p(test.p):>9}")
    else:
        raise InputError(f"unknown --model {model!r}")
    _dump_json(payload, out / f"{stem}.json")
    (out / f"{stem}.txt").write_text(text + "\n", encoding="utf-8")
    _write_manifest(out, stem, argv, vars_config(args), [path], None)
    print(text)
    return EXIT_OK


def cmd_select(args, argv) -> int:
    net, path = _load(args)
    out = _out_dir(args, path)
    stem = f"{path.stem}.select"
    trace = forward_select(net, args.threshold, args.max_cardinality, args.reference)
    _dump_json(trace.to_dict(), out / f"{stem}.json")
    text = trace.table()
    (out / f"{stem}.txt").write_text(text + "\n", encoding="utf-8")
    _write_manifest(out, stem, argv, vars_config(args), [path], None)
    print(text)
    return EXIT_OK


def cmd_disconnect(args, argv) -> int:
    net, path = _load(args)
    out = _out_dir(args, path)
    designs = enumerate_disconnected(net, args.reference, force=args.force)
    if args.apply is not None:
        match = [d for d in designs if d.id == args.apply]
        if not match:
            raise InputError(f"no design with id {args.apply} (valid ids: 1..{len(designs)})")
        sub = apply_disconnect(net, match[0])
        stem = f"{path.stem}.disconnected{args.apply}"
        write_csv(sub, out / f"{stem}.csv")
        _write_manifest(out, stem, argv, vars_config(args), [path], None)
        print(f"wrote {out / (stem + '.csv')}: k={sub.k}, m={sub.m}, "
              f"removed {len(match[0].removed_studies)} studies")
        return EXIT_OK
    stem = f"{path.stem}.designs"
    _dump_json([d.to_dict() for d in designs], out / f"{stem}.json")
    _write_rows(
        [{"id": d.id, "k": d.k, "m": d.m, "n_c": d.n_c, "main_size": len(d.main_set),
          "main_k": d.main_k, "main_m": d.main_m,
          "auxiliary_sizes": ";".join(str(len(a)) for a in d.auxiliary_partition)}
         for d in designs],
        out / f"{stem}.csv",
    )
    _write_manifest(out, stem, argv, vars_config(args), [path], None)
    if not designs:
        print("no disconnected network can be built without dropping interventions")
    for d in designs:
        print(f"{d.id:4d}  k={d.k:<4d} m={d.m:<4d} n_c={d.n_c}  main={'/'.join(d.main_set)}")
    return EXIT_OK


def cmd_simulate(args, argv) -> int:
    path = Path(args.config)
    if not path.is_file():
        raise InputError(f"config file {args.config} not found")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from exc
    entries = raw if isinstance(raw, list) else [raw]
    configs = []
    for entry in entries:
        entry = dict(entry)
        if args.seed is not None:
            entry["seed"] = args.seed
        entry.setdefault("seed", DEFAULT_SEED)
        try:
            configs.append(ScenarioConfig.from_dict(entry))
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: {exc}") from exc
    log.info("seed %s", sorted({c.seed for c in configs}))
    summaries = [run_scenario(c, jobs=args.jobs) for c in configs]
    out = _out_dir(args, path)
    stem = path.stem
    _dump_json([s.to_dict() for s in summaries], out / f"{stem}.summary.json")
    _write_rows(selection_table_rows(summaries), out / f"{stem}.selection.csv")
    _write_rows(performance_rows(summaries), out / f"{stem}.performance.csv")
    _write_manifest(out, stem, argv, {"scenarios": [c.to_dict() for c in configs]}, [path],
                    configs[0].seed if len({c.seed for c in configs}) == 1 else None)
    for s in summaries:
        c = s.config
        counts = ", ".join(f"{k}={v}" for k, v in s.selection_counts.items())
        print(f"{c.scenario} tau2={c.tau2} {c.mode} M={c.runs} seed={c.seed}: {counts}"
              + (f", n_diff={s.n_diff}" if s.n_diff is not None else ""))
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    for name, digest in manifest.get("inputs", {}).items():
        p = Path(name)
        if p.is_file() and _digest(p) != digest:
            raise InputError(f"input {name} changed since the manifest was written")
    return main(manifest["command"])


def cmd_example(args, argv) -> int:
    path = _resolve_input(f"example:{args.name}")
    sys.stdout.write(path.read_text(encoding="utf-8"))
    return EXIT_OK


def vars_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cnmasel", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def network_args(sp):
        sp.add_argument("input", help="CSV file or example:<name>")
        sp.add_argument("--reference", required=True)
        sp.add_argument("--inactive", default=None,
                        help="comma-separated inactive components (default: the reference's)")
        sp.add_argument("--sep", default="+", help="component separator in labels")
        sp.add_argument("--sm", default="OR", choices=["OR"], help="effect measure of arm-level input")
        sp.add_argument("--out", default=None, help="output directory (default: next to input)")

    sp = sub.add_parser("fit", help="fit NMA / additive / interaction CNMA")
    network_args(sp)
    sp.add_argument("--model", default="additive", help="nma | additive | interactions=a*b,c*d")
    sp.add_argument("--per-subnetwork", action="store_true", help="separate NMAs for disconnected input")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("select", help="forward CNMA interaction selection")
    network_args(sp)
    sp.add_argument("--threshold", type=float, default=AIC_THRESHOLD)
    sp.add_argument("--max-cardinality", type=int, default=None)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("disconnect", help="enumerate or apply disconnected designs")
    network_args(sp)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--enumerate", action="store_true")
    g.add_argument("--apply", type=int, metavar="ID")
    sp.add_argument("--force", action="store_true", help="allow > 20 interventions outside the minimal set")
    sp.set_defaults(func=cmd_disconnect)

    sp = sub.add_parser("simulate", help="run the Monte-Carlo simulation study")
    sp.add_argument("--config", required=True, help="JSON scenario config (object or list)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--seed", type=int, default=None, help=f"override seed (default {DEFAULT_SEED})")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    sp.add_argument("manifest")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("example", help="print a bundled example CSV")
    sp.add_argument("name", choices=sorted(EXAMPLES))
    sp.set_defaults(func=cmd_example)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args, argv)
    except (InputError, NetworkError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelError, DisconnectError, DegreesOfFreedomError) as exc:
        msg = str(exc)
        if "disconnected" in msg and getattr(args, "command", "") == "fit":
            msg += " (use --per-subnetwork)"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_MODEL
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
