"""Command-line entry point ``maneuver-zones``.

Exit codes: 0 success, 2 configuration error, 3 numeric / solver error,
4 file or I/O error. ``MANEUVER_ZONES_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, ZoneFileError

log = logging.getLogger("maneuver_zones")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _set_threads(n: int | None) -> None:
    import numba

    available = numba.config.NUMBA_NUM_THREADS
    if n is None:
        n = available
    if n < 1:
        raise ConfigError("must be >= 1", "--threads")
    if n > available:
        log.warning("--threads %d exceeds the %d threads numba was started with; using %d", n, available, available)
        n = available
    numba.set_num_threads(n)


def _parse_state(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x != ""]
    except ValueError:
        raise ConfigError(f"cannot parse state {text!r}; expected comma-separated numbers", "--state") from None


def _scaled_counts(counts: dict, trials: int | None) -> dict:
    if not trials:
        return dict(counts)
    total = int(np.prod(list(counts.values()))) if counts else 1
    if not counts:
        raise ConfigError("scenario defines no sweep counts", "sweep.counts")
    f = (trials / total) ** (1.0 / len(counts))
    return {k: max(1, int(round(c * f))) for k, c in counts.items()}


def cmd_compute_zone(args) -> int:
    from .config import ScenarioConfig
    from .persistence import content_hash, save_zone
    from .pipeline import compute_zone

    cfg = ScenarioConfig.load(args.config)
    t0 = time.perf_counter()
    zone = compute_zone(cfg, args.algorithm, workers=args.workers)
    save_zone(zone, args.out)
    _report(zone, time.perf_counter() - t0, content_hash(zone))
    return EXIT_OK


def cmd_compute_baseline(args) -> int:
    from .config import ScenarioConfig
    from .persistence import content_hash, save_zone
    from .pipeline import compute_baseline

    cfg = ScenarioConfig.load(args.config)
    t0 = time.perf_counter()
    zone = compute_baseline(cfg)
    save_zone(zone, args.out)
    _report(zone, time.perf_counter() - t0, content_hash(zone))
    return EXIT_OK


def _report(zone, wall: float, digest: str) -> None:
    inside = int(np.count_nonzero(zone.value.values < 0))
    print(f"algorithm: {zone.metadata.get('algorithm')}")
    print(f"nodes: {inside} inside / {zone.spec.size} total")
    print(f"volume: {zone.volume():.6g}")
    print(f"steps: {zone.metadata.get('n_steps')} x dt {zone.metadata.get('dt'):.6g}")
    print(f"wall time: {wall:.2f} s")
    print(f"content hash: {digest}")


def cmd_query(args) -> int:
    from .grid import interpolate
    from .persistence import load_zone

    zone = load_zone(args.zone)
    if args.batch:
        try:
            lines = Path(args.batch).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ZoneFileError(f"cannot read {args.batch}: {exc}") from exc
        states = [_parse_state(s) for s in lines if s.strip() and not s.lstrip().startswith("#")]
    elif args.state:
        states = [_parse_state(args.state)]
    else:
        raise ConfigError("give --state or --batch", "query")
    for st in states:
        if len(st) != zone.spec.ndim:
            raise ConfigError(f"state has {len(st)} components, zone has {zone.spec.ndim} ({','.join(zone.spec.names)})",
                              "--state")
        v = interpolate(zone.value, np.array(st))
        print(f"{v!r} {'inside' if v < 0 else 'outside'}")
    return EXIT_OK


def cmd_volume(args) -> int:
    from .persistence import load_zone
    from .zones import volume_ratio

    print(f"volume ratio: {volume_ratio(load_zone(args.zone), load_zone(args.baseline)):.3f}")
    return EXIT_OK


def cmd_diff(args) -> int:
    from .persistence import load_zone

    a, b = load_zone(args.first), load_zone(args.second)
    if a.spec != b.spec:
        raise ConfigError("zones live on different grids", "second")
    va, vb = a.value.values, b.value.values
    print(f"max abs difference: {float(np.max(np.abs(va - vb))):.6g}")
    print(f"membership agreement: {100.0 * float(np.mean((va < 0) == (vb < 0))):.3f}%")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .config import ScenarioConfig
    from .persistence import load_zone
    from .simulation import export_trials_csv, sweep_trials

    cfg = ScenarioConfig.load(args.config)
    zone = load_zone(args.zone)
    if zone.spec != cfg.grid:
        raise ConfigError("zone grid does not match the scenario grid", "grid")
    if cfg.maneuver is None:
        raise ConfigError("scenario defines no maneuver", "maneuver")
    counts = _scaled_counts(cfg.sweep.counts, args.trials)
    matrix, records = sweep_trials(cfg.maneuver, cfg.model, cfg.grid, cfg.horizon, cfg.mpc, counts, zone.value,
                                   cfg.sweep.ranges, cfg.sweep.completion_fraction)
    print(matrix.summary())
    out = Path(args.csv) if args.csv else Path(str(args.zone) + ".trials.csv")
    export_trials_csv(records, cfg.grid.names, out)
    print(f"trials written to {out}")
    print(f"trials hash: {hashlib.sha256(out.read_bytes()).hexdigest()}")
    over = [v for v in matrix.fn_values if v > cfg.sweep.margin_max]
    if over:
        print(f"warning: {len(over)} false negatives exceed the margin {cfg.sweep.margin_max}")
    return EXIT_OK


def cmd_slice(args) -> int:
    from .persistence import export_slice, load_zone

    zone = load_zone(args.zone)
    fixed = {}
    for item in args.fix or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected name=value, got {item!r}", "--fix")
        try:
            fixed[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"not a number: {value!r}", "--fix") from None
    free = [s.strip() for s in args.free.split(",")]
    rows = export_slice(zone.value, fixed, free, args.out)
    print(f"{rows} rows written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maneuver-zones", description="Maneuver-aware perception safety zones.")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all available)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("compute-zone", help="maneuver-aware zone for a scenario")
    s.add_argument("config")
    s.add_argument("--algorithm", choices=("single-pass", "sweep"), default="single-pass")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1, help="concurrent collision-time solves (sweep only)")
    s.set_defaults(func=cmd_compute_zone)

    s = sub.add_parser("compute-baseline", help="zone without the maneuver constraint")
    s.add_argument("config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compute_baseline)

    s = sub.add_parser("query", help="zone value at states")
    s.add_argument("zone")
    s.add_argument("--state", help='comma-separated state, e.g. "10,0,3.6,0,0,10,10"')
    s.add_argument("--batch", help="file with one comma-separated state per line")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("volume", help="zone volume relative to a baseline")
    s.add_argument("zone")
    s.add_argument("baseline")
    s.set_defaults(func=cmd_volume)

    s = sub.add_parser("diff", help="compare two zones on the same grid")
    s.add_argument("first")
    s.add_argument("second")
    s.set_defaults(func=cmd_diff)

    s = sub.add_parser("verify", help="simulation sweep against a zone")
    s.add_argument("config")
    s.add_argument("zone")
    s.add_argument("--trials", type=int, default=None, help="approximate trial count (rescales sweep counts)")
    s.add_argument("--csv", default=None, help="trial CSV path (default: <zone>.trials.csv)")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("slice", help="export a 2D slice as CSV")
    s.add_argument("zone")
    s.add_argument("--fix", action="append", help="name=value, repeatable")
    s.add_argument("--free", required=True, help="two dimension names, comma-separated")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_slice)
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("MANEUVER_ZONES_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ZoneFileError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
