"""Command-line entry point: ``retort check|run|sweep|iso``.

Exit codes: 0 success, 1 I/O failure, 2 deck or input error, 3 solver
failure, 4 mass-audit failure, 64 usage error.  Logs go to stderr; data
only to files under ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .deck import check_deck, validate_reaction_balance
from .errors import AuditFailure, DeckError, RetortError, SolverError

EXIT_OK = 0
EXIT_IO = 1
EXIT_DECK = 2
EXIT_SOLVER = 3
EXIT_AUDIT = 4
EXIT_USAGE = 64

log = logging.getLogger("retort")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="retort", description="1-D/0-D bioreactive transport simulator")
    default_out = os.environ.get("RETORT_OUT", "./out")
    common = _Parser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="only report errors")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    c = sub.add_parser("check", parents=[common], help="validate a deck")
    c.add_argument("--deck", required=True)

    r = sub.add_parser("run", parents=[common], help="run one simulation")
    r.add_argument("--deck", required=True)
    r.add_argument("--out", default=default_out)

    s = sub.add_parser("sweep", parents=[common], help="run the deck's [SWEEP] ensemble")
    s.add_argument("--deck", required=True)
    s.add_argument("--out", default=default_out)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int, default=None)

    i = sub.add_parser("iso", parents=[common], help="delta15N from a timeseries.csv")
    i.add_argument("--timeseries", required=True)
    i.add_argument("--n14", required=True, help="14N column (header or species name)")
    i.add_argument("--n15", required=True, help="15N column (header or species name)")
    i.add_argument("--r-std", type=float, default=None, help="standard ratio (default 0.0229)")
    i.add_argument("--out", default=default_out)
    return p


def _setup_logging(args) -> None:
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.WARNING
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger("retort")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def _read_deck(path: str):
    # an unreadable file is an I/O failure (exit 1) and propagates to main
    with open(path, encoding="utf-8") as fh:
        try:
            text = fh.read()
        except UnicodeDecodeError as exc:
            print(f"{path}:1:1: error: deck is not UTF-8 text: {exc}", file=sys.stderr)
            return None
    deck, diags = check_deck(text, source=path, base_dir=os.path.dirname(os.path.abspath(path)))
    for d in diags:
        print(str(d), file=sys.stderr)
    return deck


def _cmd_check(args) -> int:
    deck = _read_deck(args.deck)
    if deck is None:
        return EXIT_DECK
    for rx in deck.reactions:
        for w in validate_reaction_balance(rx, deck.species):
            log.warning("%s", w)
    print(f"OK: {len(deck.species)} species, {len(deck.reactions)} reactions, "
          f"{len(deck.equilibria)} equilibria, {deck.grid.n_elements} elements")
    return EXIT_OK


def _cmd_run(args) -> int:
    from .orchestrator import run_simulation

    deck = _read_deck(args.deck)
    if deck is None:
        return EXIT_DECK
    out = run_simulation(deck, args.out)
    print(f"OK: {out.steps} steps, t={out.end_time:.6g} s, worst audit {out.worst_audit:.3e}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .sweep import run_ensemble

    deck = _read_deck(args.deck)
    if deck is None:
        return EXIT_DECK
    if deck.sweep is None:
        print(f"{args.deck}: error: deck has no [SWEEP] block", file=sys.stderr)
        return EXIT_DECK
    if args.workers < 1:
        raise _UsageError("retort sweep: --workers must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise _UsageError("retort sweep: --seed must lie in [0, 2**64)")
    res = run_ensemble(deck, args.out, workers=args.workers, seed=args.seed)
    worst = max(o.worst_audit for o in res.outputs)
    steps = sum(o.steps for o in res.outputs)
    print(f"OK: {len(res.outputs)} replicas (seed {res.seed}), {steps} steps, "
          f"t={res.outputs[0].end_time:.6g} s, worst audit {worst:.3e}")
    return EXIT_OK


def _resolve_column(header: list[str], name: str) -> int:
    if name in header:
        return header.index(name)
    hits = [i for i, h in enumerate(header) if h.split("[", 1)[0] == name]
    if len(hits) != 1:
        raise _InputProblem(f"column {name!r} not found in timeseries")
    return hits[0]


class _InputProblem(RetortError):
    pass


def _cmd_iso(args) -> int:
    from .isotopes import R_STD, compute_delta15N

    try:
        with open(args.timeseries, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        print(f"{args.timeseries}: error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not rows:
        raise _InputProblem("timeseries is empty")
    header, body = rows[0], rows[1:]
    i14, i15 = _resolve_column(header, args.n14), _resolve_column(header, args.n15)
    it = _resolve_column(header, "time[s]")
    ie = header.index("element") if "element" in header else None
    try:
        n14 = np.array([float(r[i14]) for r in body])
        n15 = np.array([float(r[i15]) for r in body])
    except (ValueError, IndexError) as exc:
        raise _InputProblem(f"bad timeseries row: {exc}") from None
    r_s, delta = compute_delta15N(n14, n15, R_STD if args.r_std is None else args.r_std)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "delta15N.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time[s]", "element", "R_S[-]", "delta15N[permil]"])
        for row, r, d in zip(body, r_s, delta):
            w.writerow([row[it], row[ie] if ie is not None else 0, repr(float(r)), repr(float(d))])
    print(f"OK: {len(body)} rows -> {path}")
    return EXIT_OK


_COMMANDS = {"check": _cmd_check, "run": _cmd_run, "sweep": _cmd_sweep, "iso": _cmd_iso}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else list(argv))
        if args.command is None:
            raise _UsageError("retort: a command is required (check, run, sweep, iso)")
        _setup_logging(args)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except DeckError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DECK
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except AuditFailure as exc:
        print(f"mass audit failure: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except RetortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DECK
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
