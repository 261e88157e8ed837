"""Command-line entry point.

Exit codes: 0 success, 1 unexpected failure, 2 configuration or input error,
3 convergence failure, 4 resource guard tripped.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import yaml

from sqdiag.driver import (
    CSV_COLUMNS,
    PointConfig,
    ScanConfig,
    _merge,
    _validate,
    load_hamiltonian,
    load_point_config,
    load_scan_config,
    read_point,
    run_point,
    run_scan,
    spin_name,
    write_point,
    write_scan,
)
from sqdiag.exceptions import (
    ConfigError,
    ConvergenceError,
    EmptyPoolError,
    PipelineError,
    ResourceLimitError,
    SQDError,
)
from sqdiag.integrals import read_fcidump, save_fcidump
from sqdiag.models import MODEL_SCAN, methylene_model
from sqdiag.oracle import fci_ground_state

log = logging.getLogger("sqdiag")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_RESOURCE = 4


def exit_code(error: BaseException) -> int:
    """Map an exception raised by a command to a process exit code."""
    if isinstance(error, PipelineError):
        error = error.error
    if isinstance(error, ConvergenceError):
        return EXIT_CONVERGENCE
    if isinstance(error, ResourceLimitError):
        return EXIT_RESOURCE
    if isinstance(error, (ConfigError, EmptyPoolError, ValueError, OSError)):
        return EXIT_CONFIG
    return EXIT_FAILURE


def _override(cfg: PointConfig, args: argparse.Namespace) -> PointConfig:
    update: dict = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if getattr(args, "samples", None) is not None:
        update["samples"] = args.samples
    if args.no_orbopt:
        update["orbopt"] = {"enabled": False}
    if args.oracle:
        update["oracle"] = True
    return _validate(_merge(cfg.model_dump(), update))


def _print_json(data) -> None:
    print(json.dumps(data, indent=1))


def cmd_run_point(args: argparse.Namespace) -> int:
    cfg = _override(load_point_config(args.config), args)
    result = run_point(cfg, threads=args.threads)
    for problem in result.variational_violations():
        log.warning("variational order violated: %s", problem)
    if args.output is not None:
        path = write_point(result, args.output)
        print(path)
    else:
        _print_json(result.to_dict())
    return EXIT_OK


def cmd_run_scan(args: argparse.Namespace) -> int:
    scan = load_scan_config(args.config)
    scan = ScanConfig([_override(p, args) for p in scan.points], scan.chaining)
    result = run_scan(scan, threads=args.threads)
    for points in result.series.values():
        for point in points:
            for problem in point.variational_violations():
                log.warning("point %g: variational order violated: %s", point.label, problem)
    if args.output is not None:
        print(write_scan(result, args.output))
    else:
        sys.stdout.write(result.to_csv())
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    if (args.fcidump is None) == (args.config is None):
        raise ConfigError("give either an FCIDUMP path or --config")
    if args.config is not None:
        cfg = load_point_config(args.config)
        ham, spin = load_hamiltonian(cfg), cfg.spin
    else:
        ham = read_fcidump(args.fcidump)
        if args.sector is not None:
            ham = ham.with_sector(*args.sector)
        spin = abs(ham.n_alpha - ham.n_beta) / 2 if args.spin is None else args.spin
    res = fci_ground_state(ham, target_spin=spin)
    _print_json(
        {
            "n_orb": ham.n_orb,
            "n_alpha": ham.n_alpha,
            "n_beta": ham.n_beta,
            "target_spin": spin,
            "energy": res.energy,
            "s2": res.s2,
            "dimension": res.state.basis.dimension,
        }
    )
    return EXIT_OK


def _report_point(record: dict) -> None:
    name = spin_name(record["target_spin"])
    print(f"label {record['label']:g}  {name}  sector ({record['n_alpha']}, {record['n_beta']})  n_orb {record['n_orb']}")
    print(f"  E_sqd          {record['e_sqd']:.10f}")
    print(f"  E_sqd_orbopt   {record['e_sqd_orbopt']:.10f}")
    if record.get("e_oracle") is not None:
        print(f"  E_oracle       {record['e_oracle']:.10f}")
        print(f"  error          {record['e_sqd_orbopt'] - record['e_oracle']:.3e}")
    print(f"  <S^2>          {record['s2']:.6f}")
    print(f"  dimension      {record['dimension']}")
    for it in record["history"]:
        print(f"  iteration {it['iteration']:3d}  E_min {it['min_energy']:.10f}  dim {it['dimension']}")


def _report_scan(path: Path) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    print("  ".join(f"{c:>16}" for c in CSV_COLUMNS))
    for row in rows:
        cells = []
        for c in CSV_COLUMNS:
            value = row.get(c, "")
            cells.append(f"{float(value):16.10f}" if value else f"{'':>16}")
        print("  ".join(cells))


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if path.is_dir():
        points = sorted(path.glob("point_*.json"))
        if not points and not (path / "scan.csv").exists():
            raise ConfigError(f"{path} holds no results")
        for p in points:
            _report_point(read_point(p))
        if (path / "scan.csv").exists():
            _report_scan(path / "scan.csv")
    else:
        _report_point(read_point(path))
    return EXIT_OK


def cmd_model(args: argparse.Namespace) -> int:
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    points = []
    for r in args.r or MODEL_SCAN:
        name = f"model_r{r:g}.fcidump"
        save_fcidump(methylene_model(r), out / name)
        for sector in ([3, 3], [4, 2]):
            points.append({"label": r, "integrals": name, "sector": sector})
    config = {
        "chaining": "ascending",
        "defaults": {"oracle": True, "noise": {"bit_flip_prob": 0.0}},
        "points": points,
    }
    path = out / "scan.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False))
    print(path)
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, required=True, help="YAML configuration file")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--output", type=Path, help="output directory (default: stdout)")
    p.add_argument("--no-orbopt", action="store_true", help="skip orbital optimization")
    p.add_argument("--oracle", action="store_true", help="also run the exact solver")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqdiag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-point", help="run one point")
    _common(p)
    p.add_argument("--samples", type=Path, help="read measured bit strings instead of simulating")
    p.set_defaults(func=cmd_run_point)

    p = sub.add_parser("run-scan", help="run a scan and write the gap table")
    _common(p)
    p.set_defaults(func=cmd_run_scan)

    p = sub.add_parser("oracle", help="exact ground state of one sector")
    p.add_argument("fcidump", nargs="?", type=Path, help="FCIDUMP file")
    p.add_argument("--config", type=Path, help="point configuration instead of an FCIDUMP")
    p.add_argument("--sector", type=int, nargs=2, metavar=("N_ALPHA", "N_BETA"))
    p.add_argument("--spin", type=float, help="target total spin s")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="summarize a point file or a scan directory")
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("model", help="write model FCIDUMP files and a scan configuration")
    p.add_argument("--output", type=Path, help="target directory (default: .)")
    p.add_argument("--r", type=float, nargs="+", help="bond lengths (default: built-in grid)")
    p.set_defaults(func=cmd_model)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (SQDError, ValueError, OSError) as exc:
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
