"""``gga-lab`` command line: run, sweep, report and data export.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or arguments.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .data import export_csv
from .errors import ConfigError
from .harness import SUMMARY_HEADER, SWEEP_HEADER, named_windows, run_protocol, sensitivity_sweep

log = logging.getLogger("gga_lab")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments already; keep the message on stderr
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers


def _resolve(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config, args.set or ())
    protocol = cfg.protocol
    if getattr(args, "seeds", None) is not None:
        protocol = replace(protocol, seeds=args.seeds)
    if getattr(args, "jobs", None) is not None:
        protocol = replace(protocol, jobs=args.jobs)
    out = args.out or os.environ.get("GGA_LAB_OUT") or cfg.output.dir
    cfg = replace(cfg, protocol=protocol, output=replace(cfg.output, dir=out))
    return cfg.validate()


def _write_resolved(cfg: cfgmod.ExperimentConfig, out: Path) -> None:
    (out / "resolved_config.toml").write_text(cfgmod.dumps(cfg))


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_telemetry(path: Path, records) -> None:
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def parse_float_grid(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"malformed grid {text!r}: {exc}") from exc
    if not vals or any(not math.isfinite(v) or v <= 0 for v in vals):
        raise UsageError(f"grid {text!r} must hold positive finite numbers")
    return vals


def parse_window_grid(text: str, iterations: int) -> list[tuple[int, int]]:
    """``100-200,900-1000`` or the names ``early``, ``mid``, ``late``."""
    names = named_windows(iterations)
    out = []
    for item in (v.strip() for v in text.split(",")):
        if not item:
            continue
        if item in names:
            out.append(names[item])
            continue
        parts = item.split("-")
        if len(parts) != 2:
            raise UsageError(f"malformed window {item!r}; expected START-END or early/mid/late")
        try:
            a_s, a_e = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise UsageError(f"malformed window {item!r}") from exc
        if not 0 <= a_s <= a_e:
            raise UsageError(f"window {item!r} must satisfy 0 <= start <= end")
        out.append((a_s, a_e))
    if not out:
        raise UsageError(f"window grid {text!r} is empty")
    return out


# --------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    cfg = _resolve(args)
    out = Path(cfg.output.dir)
    dataset = cfg.dataset.build()
    train_cfg = cfg.train
    res = run_protocol(dataset, train_cfg, cfg.protocol.seeds, cfg.protocol.splits, cfg.protocol.jobs)
    tel_dir = out / "telemetry"
    tel_dir.mkdir(parents=True, exist_ok=True)
    for (si, r), run in sorted(res.runs.items()):
        write_telemetry(tel_dir / f"split{si}_seed{r}.jsonl", run.telemetry)
    _write_csv(out / "summary.csv", SUMMARY_HEADER, [s.csv_row() for s in res.summaries])
    _write_resolved(cfg, out)
    for s in res.summaries:
        print(f"split {s.split} target={s.target_domain} {s.method}: "
              f"acc {s.mean_acc:.4f} +- {s.stderr:.4f} over {s.seed_count} seed(s)")
    print(f"wrote {out / 'summary.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.rho_grid and not args.window_grid:
        raise UsageError("sweep needs --rho-grid and/or --window-grid")
    cfg = _resolve(args)
    rhos = parse_float_grid(args.rho_grid) if args.rho_grid else None
    windows = parse_window_grid(args.window_grid, cfg.train.iterations) if args.window_grid else None
    train_cfg = replace(cfg.train, method="gga")
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sensitivity_sweep(cfg.dataset.build(), train_cfg, rhos, windows, cfg.protocol.seeds,
                             cfg.protocol.splits, cfg.protocol.jobs)
    _write_csv(out / "sweep.csv", SWEEP_HEADER, [r.csv_row() for r in rows])
    _write_resolved(replace(cfg, train=train_cfg), out)
    for r in rows:
        print(f"rho={r.rho:g} window={r.a_start}-{r.a_end} split {r.summary.split}: "
              f"acc {r.summary.mean_acc:.4f} +- {r.summary.stderr:.4f}")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


REPORT_HEADER = ["t", "loss", "min_sim", "mean_sim", "accepted"]


def read_telemetry(path: Path) -> list[dict]:
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("not a JSON object")
                missing = [k for k in ("t", "loss", "min_sim", "mean_sim", "accepted") if k not in rec]
                if missing:
                    raise ValueError(f"missing field(s) {', '.join(missing)}")
            except ValueError as exc:
                raise RuntimeError(f"{path}: line {lineno}: corrupt telemetry record ({exc})") from exc
            records.append(rec)
    if not records:
        raise RuntimeError(f"{path}: no telemetry records")
    return records


def _fmt(v) -> str:
    return "" if v is None else repr(v)


def cmd_report(args) -> int:
    path = Path(args.telemetry)
    records = read_telemetry(path)
    out = Path(args.out) if args.out else path.with_name(path.stem + "_report.csv")
    _write_csv(out, REPORT_HEADER, [
        [r["t"], _fmt(r["loss"]), _fmt(r["min_sim"]), _fmt(r["mean_sim"]), r["accepted"]] for r in records
    ])

    by_t = {r["t"]: r for r in records}
    a_s, a_e = args.a_start, args.a_end
    active = [r["t"] for r in records if r["accepted"] > 0]
    if a_s is None and active:
        a_s = min(active)
    if a_e is None and active:
        a_e = max(active)
    lines = [f"iterations: {len(records)}"]
    for label, t in (("A_s", a_s), ("A_e", a_e)):
        rec = by_t.get(t) if t is not None else None
        lines.append(f"min_sim at {label} (t={t}): {rec['min_sim'] if rec else 'n/a'}")
        lines.append(f"mean_sim at {label} (t={t}): {rec['mean_sim'] if rec else 'n/a'}")
    lines.append(f"accepted candidates: {sum(r['accepted'] for r in records)} "
                 f"in {len(active)} iteration(s)")
    lines.append(f"final loss: {records[-1]['loss']}")
    text = "\n".join(lines) + "\n"
    out.with_name(out.stem + "_summary.txt").write_text(text)
    sys.stdout.write(text)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_data_export(args) -> int:
    cfg = cfgmod.load(args.config, args.set or ())
    dataset = cfg.dataset.build()
    try:
        n = export_csv(dataset, args.out_path)
    except OSError as exc:
        raise RuntimeError(f"cannot write {args.out_path}: {exc.strerror or exc}") from exc
    print(f"wrote {n} rows to {args.out_path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gga-lab", description="Gradient-guided annealing laboratory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, protocol=True):
        sp.add_argument("config", help="experiment TOML file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value (repeatable)")
        if protocol:
            sp.add_argument("--seeds", type=int, help="number of seeds per split")
            sp.add_argument("--out", help="output directory (default: $GGA_LAB_OUT or output.dir)")
            sp.add_argument("--jobs", type=int, help="parallel worker processes")

    sp = sub.add_parser("run", help="train and evaluate per the experiment file")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="sensitivity sweep over rho and/or annealing window")
    common(sp)
    sp.add_argument("--rho-grid", help="comma-separated rho values, e.g. 1e-6,1e-5,1e-4")
    sp.add_argument("--window-grid", help="comma-separated START-END windows or early,mid,late")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="turn a telemetry JSONL file into a CSV and summary")
    sp.add_argument("telemetry")
    sp.add_argument("--out", help="report CSV path (default: <telemetry>_report.csv)")
    sp.add_argument("--a-start", type=int, help="annealing start iteration (default: inferred)")
    sp.add_argument("--a-end", type=int, help="annealing end iteration (default: inferred)")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("data", help="dataset utilities")
    dsub = sp.add_subparsers(dest="data_command", required=True, parser_class=_Parser)
    ep = dsub.add_parser("export", help="write the configured dataset as CSV")
    ep.add_argument("config")
    ep.add_argument("out_path")
    ep.add_argument("--set", action="append", metavar="KEY=VALUE")
    ep.set_defaults(func=cmd_data_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"gga-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"gga-lab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
