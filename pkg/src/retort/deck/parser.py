"""Block-structured deck reader.

Grammar, line oriented::

    # comment to end of line
    [BLOCK]            or  [BLOCK label]   (REACTION and EQUILIBRIUM take a label)
    head arg arg key=value key = value ...

Blocks may appear in any order and repeat; their records are concatenated.
Every problem becomes a :class:`~retort.errors.Diagnostic` with line and
column; nothing escapes as a bare Python exception.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from ..core import ElementSpec, GridSpec
from ..errors import DeckError, Diagnostic, LexError, ParseError, SemanticError, TargetNotFound
from ..hydraulics import BROOKS_COREY, VAN_GENUCHTEN, MaterialRecord
from .model import (
    CONC_UNITS, DAY, DEFAULT_PHASE, SPECIES_KINDS, BoundarySchedule, EquilibriumSpec,
    InitialRecord, InitialState, OutputSpec, ReactionSpec, Schedule, SimulationDeck,
    SolverSettings, Species, SpeciesRegistry, SweepSpec,
)
from .params import get_parameter

_HEADER = re.compile(r"^\[\s*([A-Za-z_]+)(?:\s+([^\s\]]+))?\s*\]$")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.+\-]*$")
_TOKEN = re.compile(r"[^\s=]+|=")
RESERVED = {"S_L", "P_L", "h", "all", "range", "element"}

SINGLE_BLOCKS = {"SOLVER", "MATERIALS", "GRID", "SPECIES", "INITIAL", "BOUNDARY", "OUTPUT", "SWEEP"}
LABELLED_BLOCKS = {"REACTION", "EQUILIBRIUM"}
MAX_LAYER_ELEMENTS = 100_000

LIQUID_UNITS = ("m3/s", "kg/s", "m/s", "mm/d")
SPECIES_RATE_UNITS = ("kg/s", "mg/s", "mol/s")


@dataclass
class Tok:
    text: str
    col: int
    key: str | None = None
    value: str | None = None
    value_col: int = 0


@dataclass
class Record:
    line: int
    tokens: list[Tok]

    @property
    def col(self) -> int:
        return self.tokens[0].col if self.tokens else 1


@dataclass
class Block:
    name: str
    label: str | None
    line: int
    records: list[Record]


class _Reader:
    def __init__(self, source: str, base_dir: str | None):
        self.source = source
        self.base_dir = base_dir if base_dir is not None else "."
        self.diags: list[Diagnostic] = []
        self.kinds: set[str] = set()

    # -- diagnostics --------------------------------------------------------

    def err(self, kind: str, line: int, col: int, msg: str) -> None:
        self.kinds.add(kind)
        self.diags.append(Diagnostic(line, col, "error", msg, self.source))

    def warn(self, line: int, col: int, msg: str) -> None:
        self.diags.append(Diagnostic(line, col, "warning", msg, self.source))

    # -- lexing ---------------------------------------------------------------

    def lex(self, text: str) -> list[Block]:
        blocks: list[Block] = []
        current: Block | None = None
        for lineno, raw in enumerate(text.split("\n"), start=1):
            raw = raw.rstrip("\r")
            body = raw.split("#", 1)[0]
            bad = next((i for i, ch in enumerate(body) if (ord(ch) < 32 and ch != "\t") or ord(ch) == 127), None)
            if bad is not None:
                self.err("lex", lineno, bad + 1, f"unexpected control character U+{ord(body[bad]):04X}")
                continue
            stripped = body.strip()
            if not stripped:
                continue
            col0 = len(body) - len(body.lstrip()) + 1
            if stripped.startswith("["):
                m = _HEADER.match(stripped)
                if not m:
                    self.err("lex", lineno, col0, "malformed block header")
                    current = None
                    continue
                name, label = m.group(1).upper(), m.group(2)
                if name in SINGLE_BLOCKS:
                    if label is not None:
                        self.err("parse", lineno, col0, f"block [{name}] takes no label")
                elif name in LABELLED_BLOCKS:
                    if label is None:
                        self.err("parse", lineno, col0, f"block [{name}] needs a label, e.g. [{name} r1]")
                        label = f"<unnamed@{lineno}>"
                    elif not _NAME.match(label):
                        self.err("parse", lineno, col0, f"invalid {name.lower()} label {label!r}")
                else:
                    self.err("parse", lineno, col0, f"unknown block [{name}]")
                    current = None
                    continue
                current = Block(name, label, lineno, [])
                blocks.append(current)
                continue
            if current is None:
                self.err("parse", lineno, col0, "record outside of any block")
                continue
            toks = self._tokens(body, lineno)
            if toks is not None:
                current.records.append(Record(lineno, toks))
        return blocks

    def _tokens(self, body: str, lineno: int) -> list[Tok] | None:
        raw = [(m.group(0), m.start() + 1) for m in _TOKEN.finditer(body)]
        out: list[Tok] = []
        i = 0
        while i < len(raw):
            text, col = raw[i]
            if text == "=":
                self.err("parse", lineno, col, "'=' without a key")
                return None
            if i + 1 < len(raw) and raw[i + 1][0] == "=":
                if i + 2 >= len(raw) or raw[i + 2][0] == "=":
                    self.err("parse", lineno, raw[i + 1][1], f"missing value after '{text}='")
                    return None
                value, vcol = raw[i + 2]
                out.append(Tok(f"{text}={value}", col, text, value, vcol))
                i += 3
                continue
            out.append(Tok(text, col))
            i += 1
        return out

    # -- value helpers --------------------------------------------------------

    def number(self, text: str, line: int, col: int, what: str = "value") -> float | None:
        try:
            if "/" in text:
                num, den = text.split("/", 1)
                value = float(Fraction(int(num), int(den)))
            else:
                value = float(text)
        except (ValueError, ZeroDivisionError, OverflowError):
            self.err("parse", line, col, f"{what}: expected a number, got {text!r}")
            return None
        if not math.isfinite(value):
            self.err("parse", line, col, f"{what}: number must be finite, got {text!r}")
            return None
        return value

    def integer(self, text: str, line: int, col: int, what: str = "value") -> int | None:
        if not re.fullmatch(r"[+-]?\d{1,9}", text):
            self.err("parse", line, col, f"{what}: expected an integer, got {text!r}")
            return None
        return int(text)

    def switch(self, text: str, line: int, col: int, what: str) -> bool | None:
        t = text.lower()
        if t in ("on", "yes", "true", "1"):
            return True
        if t in ("off", "no", "false", "0"):
            return False
        self.err("parse", line, col, f"{what}: expected on/off, got {text!r}")
        return None

    def name(self, text: str, line: int, col: int, what: str = "name") -> str | None:
        if not _NAME.match(text):
            self.err("parse", line, col, f"invalid {what} {text!r}")
            return None
        return text

    def pair(self, tok: Tok, line: int, what: str) -> tuple[str, float] | None:
        text = tok.text if tok.key is None else None
        if text is None or ":" not in text:
            self.err("parse", line, tok.col, f"{what}: expected name:number, got {tok.text!r}")
            return None
        name, _, num = text.rpartition(":")
        if self.name(name, line, tok.col, f"{what} name") is None:
            return None
        value = self.number(num, line, tok.col + len(name) + 1, what)
        return None if value is None else (name, value)

    def pairs(self, toks: list[Tok], line: int, what: str) -> list[tuple[str, float]]:
        out = []
        for t in toks:
            for piece, off in _split_commas(t):
                p = self.pair(Tok(piece, t.col + off), line, what)
                if p is not None:
                    out.append(p)
        return out

    def kwargs(self, rec: Record, toks: list[Tok], allowed: dict[str, str], where: str) -> dict[str, tuple[str, int]]:
        """Collect key=value tokens; ``allowed`` maps key -> description."""
        out: dict[str, tuple[str, int]] = {}
        for t in toks:
            if t.key is None:
                self.err("parse", rec.line, t.col, f"{where}: unexpected token {t.text!r}")
                continue
            if t.key not in allowed:
                self.err("parse", rec.line, t.col, f"{where}: unknown key {t.key!r}")
                continue
            if t.key in out:
                self.err("parse", rec.line, t.col, f"{where}: duplicate key {t.key!r}")
                continue
            out[t.key] = (t.value, t.value_col)
        return out


def _loc(entry: tuple[str, int], rec: Record) -> tuple[str, int, int]:
    """(text, line, col) for a kwargs entry."""
    return entry[0], rec.line, entry[1]


def _split_commas(tok: Tok):
    off = 0
    for piece in tok.text.split(","):
        if piece:
            yield piece, off
        off += len(piece) + 1


# ---------------------------------------------------------------------------


def check_deck(text: str, source: str = "<deck>", base_dir: str | None = None):
    """Parse without raising: returns ``(deck or None, diagnostics)``."""
    try:
        return _parse(text, source, base_dir), []
    except DeckError as exc:
        return None, exc.diagnostics


def parse_deck(text: str, source: str = "<deck>", base_dir: str | None = None) -> SimulationDeck:
    """Parse and validate deck text; raises a :class:`DeckError` subclass on any error."""
    return _parse(text, source, base_dir)


def load_deck(path: str | os.PathLike) -> SimulationDeck:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise LexError([Diagnostic(1, 1, "error", f"cannot read deck: {exc}", path)]) from None
    return parse_deck(text, source=path, base_dir=os.path.dirname(os.path.abspath(path)))


def _parse(text: str, source: str, base_dir: str | None) -> SimulationDeck:
    r = _Reader(source, base_dir)
    blocks = r.lex(text)
    by_name: dict[str, list[Block]] = {}
    for b in blocks:
        by_name.setdefault(b.name, []).append(b)

    def records(name):
        return [rec for b in by_name.get(name, []) for rec in b.records]

    solver = _solver(r, records("SOLVER"))
    materials = _materials(r, records("MATERIALS"))
    grid = _grid(r, records("GRID"), by_name.get("GRID"))
    species = _species(r, records("SPECIES"))
    reactions = tuple(_reaction(r, b) for b in by_name.get("REACTION", []))
    equilibria = tuple(_equilibrium(r, b) for b in by_name.get("EQUILIBRIUM", []))
    initial = _initial(r, records("INITIAL"))
    boundaries = tuple(b for b in (_boundary(r, rec) for rec in records("BOUNDARY")) if b is not None)
    outputs = _outputs(r, records("OUTPUT"))
    sweep = _sweep(r, records("SWEEP")) if "SWEEP" in by_name else None

    if not r.kinds:
        _validate(r, solver, materials, grid, species, reactions, equilibria, initial, boundaries, outputs, sweep, by_name)
    if not r.kinds:
        boundaries = tuple(_load_series(r, b) for b in boundaries)
    if r.kinds:
        cls = LexError if "lex" in r.kinds else ParseError if "parse" in r.kinds else SemanticError
        raise cls([d for d in r.diags if d.severity == "error"])
    deck = SimulationDeck(
        grid=grid, materials=materials, species=species, reactions=reactions,
        equilibria=equilibria, initial=initial, boundaries=boundaries, solver=solver,
        outputs=outputs, sweep=sweep, base_dir=r.base_dir,
    )
    if sweep is not None:
        line = by_name["SWEEP"][0].line
        for target in sweep.targets:
            try:
                get_parameter(deck, target)
            except TargetNotFound as exc:
                r.err("semantic", line, 1, f"[SWEEP]: {exc.args[0]}")
        if r.kinds:
            raise SemanticError([d for d in r.diags if d.severity == "error"])
    return deck


# -- blocks ------------------------------------------------------------------

_SOLVER_FLOATS = {
    "t_end", "dt_init", "dt_min", "dt_max", "picard_tol_p", "picard_tol_s", "temperature",
    "rho_l", "rho_g", "mu_l", "gravity", "specific_storage", "audit_tol", "tracer_tol",
    "kin_rtol", "kin_atol",
}
_SOLVER_INTS = {"picard_max", "max_substeps"}
_SOLVER_SWITCHES = {"flow", "transport", "chemotaxis", "kinetics", "equilibrium"}


def _solver(r: _Reader, recs: list[Record]) -> SolverSettings:
    allowed = {k: k for k in _SOLVER_FLOATS | _SOLVER_INTS | _SOLVER_SWITCHES | {"inhibition"}}
    vals: dict = {}
    for rec in recs:
        kw = r.kwargs(rec, rec.tokens, allowed, "[SOLVER]")
        for key, (text, col) in kw.items():
            if key in vals:
                r.err("parse", rec.line, col, f"[SOLVER]: {key} given twice")
                continue
            if key in _SOLVER_FLOATS:
                v = r.number(text, rec.line, col, key)
            elif key in _SOLVER_INTS:
                v = r.integer(text, rec.line, col, key)
            elif key in _SOLVER_SWITCHES:
                v = r.switch(text, rec.line, col, key)
            else:
                v = text
            if v is not None:
                vals[key] = v
    settings = SolverSettings(**vals)
    line = recs[0].line if recs else 1
    for p in settings.problems():
        r.err("semantic", line, 1, f"[SOLVER]: {p}")
    return settings


_MATERIAL_KEYS = {"k", "phi", "psi_s", "b", "slr", "sgr", "rho_m", "model", "alpha", "n", "texture"}


def _materials(r: _Reader, recs: list[Record]) -> tuple[MaterialRecord, ...]:
    out = []
    seen = set()
    for rec in recs:
        name = r.name(rec.tokens[0].text, rec.line, rec.col, "material name") if rec.tokens[0].key is None else None
        if rec.tokens[0].key is not None:
            r.err("parse", rec.line, rec.col, "material record must start with its name")
            continue
        kw = r.kwargs(rec, rec.tokens[1:], {k: k for k in _MATERIAL_KEYS}, f"material {rec.tokens[0].text}")
        if name is None:
            continue
        if name in seen:
            r.err("semantic", rec.line, rec.col, f"duplicate material {name!r}")
            continue
        seen.add(name)
        vals: dict = {}
        for key, (text, col) in kw.items():
            if key == "model":
                if text.lower() not in (BROOKS_COREY, VAN_GENUCHTEN):
                    r.err("parse", rec.line, col, f"model must be bc or vg, got {text!r}")
                else:
                    vals["model"] = text.lower()
            elif key == "texture":
                continue
            else:
                v = r.number(text, rec.line, col, key)
                if v is not None:
                    vals[key] = v
        missing = [k for k in ("k", "phi", "psi_s", "b") if k not in vals]
        if missing:
            r.err("semantic", rec.line, rec.col, f"material {name!r} missing {', '.join(missing)}")
            continue
        mat = MaterialRecord(name=name, **vals)
        for p in mat.problems():
            r.err("semantic", rec.line, rec.col, f"material {name!r}: {p}")
        out.append(mat)
    return tuple(out)


def _grid(r: _Reader, recs: list[Record], blocks) -> GridSpec:
    elements: list[ElementSpec] = []
    top = 0.0
    bottom: float | None = None
    for rec in recs:
        head = rec.tokens[0]
        if head.key == "top":
            v = r.number(head.value, rec.line, head.value_col, "top")
            if elements:
                r.err("parse", rec.line, head.col, "top= must precede layers and elements")
            elif v is not None:
                top = v
            if len(rec.tokens) > 1:
                r.err("parse", rec.line, rec.tokens[1].col, "unexpected tokens after top=")
            continue
        if head.key is not None or head.text not in ("layer", "element"):
            r.err("parse", rec.line, head.col, f"[GRID]: expected 'layer', 'element' or 'top=', got {head.text!r}")
            continue
        if head.text == "layer":
            kw = r.kwargs(rec, rec.tokens[1:], dict.fromkeys(("n", "dz", "area", "material", "atmosphere")), "layer")
            n = r.integer(kw["n"][0], rec.line, kw["n"][1], "n") if "n" in kw else 1
            dz = r.number(*_loc(kw["dz"], rec), "dz") if "dz" in kw else None
            area = r.number(*_loc(kw["area"], rec), "area") if "area" in kw else 1.0
            mat = kw.get("material", (None, 0))[0]
            atm = r.switch(*_loc(kw["atmosphere"], rec), "atmosphere") if "atmosphere" in kw else False
            if "dz" not in kw or "material" not in kw:
                r.err("semantic", rec.line, head.col, "layer needs dz= and material=")
                continue
            if None in (n, dz, area, atm):
                continue
            if not 1 <= n <= MAX_LAYER_ELEMENTS:
                r.err("semantic", rec.line, kw["n"][1], f"layer n must be in [1, {MAX_LAYER_ELEMENTS}]")
                continue
            if not (dz > 0 and area > 0):
                r.err("semantic", rec.line, head.col, "layer dz and area must be > 0")
                continue
            z0 = top if bottom is None else bottom
            for i in range(n):
                zc = z0 - (i + 0.5) * dz
                elements.append(ElementSpec(dz * area, area, zc, mat, bool(atm)))
            bottom = z0 - n * dz
            if len(elements) > MAX_LAYER_ELEMENTS:
                r.err("semantic", rec.line, head.col, f"grid exceeds {MAX_LAYER_ELEMENTS} elements")
                return GridSpec(tuple(elements[:1]))
        else:
            kw = r.kwargs(rec, rec.tokens[1:], dict.fromkeys(("volume", "area", "z", "material", "atmosphere")), "element")
            missing = [k for k in ("volume", "area", "z", "material") if k not in kw]
            if missing:
                r.err("semantic", rec.line, head.col, f"element needs {', '.join(k + '=' for k in missing)}")
                continue
            vol = r.number(*_loc(kw["volume"], rec), "volume")
            area = r.number(*_loc(kw["area"], rec), "area")
            z = r.number(*_loc(kw["z"], rec), "z")
            atm = r.switch(*_loc(kw["atmosphere"], rec), "atmosphere") if "atmosphere" in kw else False
            if None in (vol, area, z, atm):
                continue
            elements.append(ElementSpec(vol, area, z, kw["material"][0], bool(atm)))
            if area > 0:
                bottom = z - 0.5 * vol / area
    grid = GridSpec(tuple(elements))
    line = blocks[0].line if blocks else 1
    for p in grid.problems():
        r.err("semantic", line, 1, f"[GRID]: {p}")
    return grid


_SPECIES_KEYS = {
    "kind", "phase", "unit", "molar_mass", "D", "eps", "f_l", "rho", "t_lb", "t_ub",
    "sl_lb", "sl_ub", "attract", "repel",
}
_BIO_ONLY = ("eps", "f_l", "rho", "t_lb", "t_ub", "sl_lb", "sl_ub", "attract", "repel")


def _species(r: _Reader, recs: list[Record]) -> SpeciesRegistry:
    out = []
    seen = set()
    for rec in recs:
        head = rec.tokens[0]
        if head.key is not None:
            r.err("parse", rec.line, head.col, "species record must start with its name")
            continue
        name = r.name(head.text, rec.line, head.col, "species name")
        kw = r.kwargs(rec, rec.tokens[1:], dict.fromkeys(_SPECIES_KEYS), f"species {head.text}")
        if name is None:
            continue
        if name in RESERVED:
            r.err("semantic", rec.line, head.col, f"species name {name!r} is reserved")
            continue
        if name in seen:
            r.err("semantic", rec.line, head.col, f"duplicate species {name!r}")
            continue
        seen.add(name)
        kind = kw.get("kind", ("", head.col))[0].upper()
        if kind not in SPECIES_KINDS:
            r.err("semantic", rec.line, kw.get("kind", (0, head.col))[1],
                  f"species {name!r}: kind must be one of {'|'.join(SPECIES_KINDS)}")
            continue
        vals: dict = {"name": name, "kind": kind, "phase": DEFAULT_PHASE[kind]}
        if "phase" in kw:
            ph = kw["phase"][0].upper()
            if ph not in ("L", "G", "B", "M"):
                r.err("parse", rec.line, kw["phase"][1], f"phase must be L|G|B|M, got {kw['phase'][0]!r}")
            vals["phase"] = ph
        if "unit" in kw:
            if kw["unit"][0] not in CONC_UNITS:
                r.err("parse", rec.line, kw["unit"][1], f"unit must be one of {', '.join(CONC_UNITS)}")
            else:
                vals["unit"] = kw["unit"][0]
        for key, attr in (("molar_mass", "molar_mass"), ("D", "diffusivity"), ("eps", "eps"), ("f_l", "f_l"),
                          ("rho", "rho"), ("t_lb", "t_lb"), ("t_ub", "t_ub"), ("sl_lb", "sl_lb"), ("sl_ub", "sl_ub")):
            if key in kw:
                v = r.number(*_loc(kw[key], rec), key)
                if v is not None:
                    vals[attr] = v
        for key, attr in (("attract", "attractants"), ("repel", "repellents")):
            if key in kw:
                text, col = kw[key]
                vals[attr] = tuple(r.pairs([Tok(text, col)], rec.line, key))
        sp = Species(**vals)
        for p in _species_problems(sp, kw):
            r.err("semantic", rec.line, head.col, f"species {name!r}: {p}")
        out.append(sp)
    return SpeciesRegistry(tuple(out))


def _species_problems(sp: Species, kw) -> list[str]:
    out = []
    if sp.molar_mass < 0:
        out.append("molar_mass must be >= 0")
    if sp.diffusivity < 0:
        out.append("D must be >= 0")
    if sp.kind != "BIO":
        extra = [k for k in _BIO_ONLY if k in kw]
        if extra:
            out.append(f"{', '.join(extra)} only apply to BIO species")
        return out
    if not 0 <= sp.eps <= 1:
        out.append("eps must lie in [0, 1]")
    if not 0 <= sp.f_l < 1:
        out.append("f_l must lie in [0, 1)")
    if sp.rho is not None and not sp.rho > 0:
        out.append("rho must be > 0")
    if (sp.t_lb is None) != (sp.t_ub is None):
        out.append("give both t_lb and t_ub or neither")
    elif sp.t_lb is not None and not sp.t_lb < sp.t_ub:
        out.append("need t_lb < t_ub")
    if (sp.sl_lb is None) != (sp.sl_ub is None):
        out.append("give both sl_lb and sl_ub or neither")
    elif sp.sl_lb is not None and not 0 < sp.sl_lb < sp.sl_ub <= 1:
        out.append("need 0 < sl_lb < sl_ub <= 1")
    for _, coef in sp.attractants + sp.repellents:
        if coef < 0:
            out.append("chemotaxis coefficients must be >= 0")
            break
    return out


_REACTION_HEADS = ("stoich", "rate", "norder", "mmm", "com", "inb", "bio")


def _heads(r: _Reader, block: Block, allowed) -> dict[str, list[tuple[Record, list[Tok]]]]:
    out: dict[str, list] = {}
    for rec in block.records:
        head = rec.tokens[0]
        if head.key is not None:
            key, rest = head.key, [Tok(head.value, head.value_col)] + rec.tokens[1:]
        else:
            key, rest = head.text, rec.tokens[1:]
        if key not in allowed:
            r.err("parse", rec.line, head.col, f"[{block.name} {block.label}]: unknown entry {key!r}")
            continue
        out.setdefault(key, []).append((rec, rest))
    return out


def _single_value(r: _Reader, entries, what: str, block: Block, kind="number"):
    if not entries:
        return None
    if len(entries) > 1:
        r.err("parse", entries[1][0].line, 1, f"{what} given twice in [{block.name} {block.label}]")
    rec, rest = entries[0]
    if len(rest) != 1 or rest[0].key is not None:
        r.err("parse", rec.line, rec.col, f"{what} takes exactly one value")
        return None
    if kind == "name":
        return r.name(rest[0].text, rec.line, rest[0].col, what)
    return r.number(rest[0].text, rec.line, rest[0].col, what)


def _reaction(r: _Reader, block: Block) -> ReactionSpec:
    h = _heads(r, block, _REACTION_HEADS)

    def plist(key):
        return tuple(p for rec, rest in h.get(key, []) for p in r.pairs(rest, rec.line, key))

    rate = _single_value(r, h.get("rate"), "rate", block)
    bio = _single_value(r, h.get("bio"), "bio", block, kind="name")
    if "stoich" not in h:
        r.err("semantic", block.line, 1, f"reaction {block.label!r} has no stoich entry")
    if "rate" not in h:
        r.err("semantic", block.line, 1, f"reaction {block.label!r} has no rate")
    return ReactionSpec(
        name=block.label, stoichiometry=plist("stoich"), rate=rate if rate is not None else 0.0,
        norder=plist("norder"), mmm=plist("mmm"), competition=plist("com"), inhibition=plist("inb"),
        bio=bio, line=block.line,
    )


def _equilibrium(r: _Reader, block: Block) -> EquilibriumSpec:
    h = _heads(r, block, ("solve", "primary", "log10k", "vanthoff"))
    solve = [p for rec, rest in h.get("solve", []) for p in r.pairs(rest, rec.line, "solve")]
    if len(solve) != 1:
        r.err("semantic", block.line, 1, f"equilibrium {block.label!r} must solve exactly one species")
    prim = tuple(p for rec, rest in h.get("primary", []) for p in r.pairs(rest, rec.line, "primary"))
    logk = _single_value(r, h.get("log10k"), "log10k", block)
    if "log10k" not in h:
        r.err("semantic", block.line, 1, f"equilibrium {block.label!r} has no log10k")
    vh = tuple(p for rec, rest in h.get("vanthoff", []) for p in _vanthoff(r, rec, rest))
    if "vanthoff" in h and len(vh) != 2:
        r.err("semantic", block.line, 1, "vanthoff needs exactly two T:log10K points")
    solved, x_k = solve[0] if solve else ("", 1.0)
    return EquilibriumSpec(block.label, solved, x_k, prim, logk if logk is not None else 0.0, vh, block.line)


def _vanthoff(r: _Reader, rec: Record, toks: list[Tok]):
    out = []
    for t in toks:
        a, sep, b = t.text.partition(":")
        if not sep:
            r.err("parse", rec.line, t.col, f"vanthoff: expected T:log10K, got {t.text!r}")
            continue
        tv = r.number(a, rec.line, t.col, "vanthoff T")
        kv = r.number(b, rec.line, t.col + len(a) + 1, "vanthoff log10K")
        if tv is not None and kv is not None:
            if tv <= 0:
                r.err("semantic", rec.line, t.col, "vanthoff temperature must be > 0")
            out.append((tv, kv))
    return out


def _initial(r: _Reader, recs: list[Record]) -> InitialState:
    out = []
    water_table = None
    for rec in recs:
        head = rec.tokens[0]
        if head.key is not None:
            r.err("parse", rec.line, head.col, "[INITIAL]: record must start with all, range, element or hydrostatic")
            continue
        rest = rec.tokens[1:]
        if head.text == "hydrostatic":
            kw = r.kwargs(rec, rest, {"water_table": ""}, "hydrostatic")
            if "water_table" not in kw:
                r.err("semantic", rec.line, head.col, "hydrostatic needs water_table=<elevation m>")
            else:
                water_table = r.number(*_loc(kw["water_table"], rec), "water_table")
            continue
        lo = hi = 0
        if head.text == "all":
            lo, hi = 0, -1
        elif head.text in ("range", "element"):
            need = 2 if head.text == "range" else 1
            idx = [t for t in rest[:need] if t.key is None]
            if len(idx) != need:
                r.err("parse", rec.line, head.col, f"{head.text} needs {need} element index(es)")
                continue
            nums = [r.integer(t.text, rec.line, t.col, "element index") for t in idx]
            if None in nums:
                continue
            lo, hi = nums[0], nums[-1]
            rest = rest[need:]
        else:
            r.err("parse", rec.line, head.col, f"[INITIAL]: unknown selector {head.text!r}")
            continue
        vals = []
        for t in rest:
            if t.key is None:
                r.err("parse", rec.line, t.col, f"[INITIAL]: expected key=value, got {t.text!r}")
                continue
            v = r.number(t.value, rec.line, t.value_col, t.key)
            if v is not None:
                vals.append((t.key, v))
        out.append(InitialRecord(head.text, lo, hi, tuple(vals), rec.line))
    return InitialState(tuple(out), water_table)


_BOUNDARY_KINDS = ("source", "species", "uptake", "drainage", "head")


def _boundary(r: _Reader, rec: Record) -> BoundarySchedule | None:
    head = rec.tokens[0]
    if head.key is not None or head.text not in _BOUNDARY_KINDS:
        r.err("parse", rec.line, head.col, f"[BOUNDARY]: kind must be one of {', '.join(_BOUNDARY_KINDS)}")
        return None
    kind = head.text
    keys = {"element", "rate", "start", "end", "file", "column", "unit", "species", "fractions", "value"}
    kw = r.kwargs(rec, rec.tokens[1:], dict.fromkeys(keys), f"{kind} boundary")
    element = r.integer(*_loc(kw["element"], rec), "element") if "element" in kw else None
    if kind != "uptake" and "element" not in kw:
        r.err("semantic", rec.line, head.col, f"{kind} boundary needs element=")
    species = kw["species"][0] if "species" in kw else None
    if kind == "species" and species is None:
        r.err("semantic", rec.line, head.col, "species boundary needs species=")
    if kind != "species" and species is not None:
        r.err("semantic", rec.line, kw["species"][1], "species= only applies to species boundaries")
    unit = kw["unit"][0] if "unit" in kw else ""
    fractions: tuple = ()
    if kind == "uptake":
        if "fractions" not in kw:
            r.err("semantic", rec.line, head.col, "uptake boundary needs fractions=elem:frac,...")
        else:
            text, col = kw["fractions"]
            fr = []
            for piece, off in _split_commas(Tok(text, col)):
                a, sep, b = piece.rpartition(":")
                e = r.integer(a, rec.line, col + off, "uptake element") if sep else None
                f = r.number(b, rec.line, col + off + len(a) + 1, "uptake fraction") if sep else None
                if not sep:
                    r.err("parse", rec.line, col + off, f"uptake fraction: expected elem:frac, got {piece!r}")
                if e is not None and f is not None:
                    fr.append((e, f))
            fractions = tuple(fr)
    head_value = None
    schedule = None
    if kind == "head":
        if "value" not in kw:
            r.err("semantic", rec.line, head.col, "head boundary needs value=<pressure head m>")
        else:
            head_value = r.number(*_loc(kw["value"], rec), "value")
        extra = [k for k in ("rate", "file", "start", "end") if k in kw]
        if extra:
            r.err("semantic", rec.line, head.col, f"head boundary does not take {', '.join(extra)}")
    elif kind == "drainage":
        extra = [k for k in ("rate", "file", "start", "end", "unit") if k in kw]
        if extra:
            r.err("semantic", rec.line, head.col, f"drainage boundary does not take {', '.join(extra)}")
    else:
        schedule = _schedule(r, rec, kw)
        valid = LIQUID_UNITS if kind in ("source", "uptake") else SPECIES_RATE_UNITS
        if unit == "":
            unit = valid[0]
        elif unit not in valid:
            r.err("parse", rec.line, kw["unit"][1], f"{kind} unit must be one of {', '.join(valid)}")
    return BoundarySchedule(kind, element, species, schedule, unit, fractions, head_value, rec.line)


def _schedule(r: _Reader, rec: Record, kw) -> Schedule | None:
    if ("rate" in kw) == ("file" in kw):
        r.err("semantic", rec.line, rec.col, "give exactly one of rate= or file=")
        return None
    if "file" in kw:
        extra = [k for k in ("start", "end") if k in kw]
        if extra:
            r.err("semantic", rec.line, rec.col, "start=/end= only apply to constant rates")
        column = r.integer(*_loc(kw["column"], rec), "column") if "column" in kw else 1
        if column is not None and column < 1:
            r.err("semantic", rec.line, kw["column"][1], "column must be >= 1 (column 0 is time)")
        return Schedule(file=kw["file"][0], column=column or 1)
    value = r.number(*_loc(kw["rate"], rec), "rate")
    start = r.number(*_loc(kw["start"], rec), "start") if "start" in kw else 0.0
    end = r.number(*_loc(kw["end"], rec), "end") if "end" in kw else None
    if end is not None and start is not None and not end > start:
        r.err("semantic", rec.line, kw["end"][1], "end must be > start")
    return Schedule(value=value if value is not None else 0.0, start=start or 0.0, end=end)


def _outputs(r: _Reader, recs: list[Record]) -> OutputSpec:
    every = None
    every_step = False
    times: list[float] = []
    probes: list[tuple[str, int]] = []
    directory = "out"
    for rec in recs:
        head = rec.tokens[0]
        if head.key == "every":
            if head.value == "step":
                every_step = True
            else:
                every = r.number(head.value, rec.line, head.value_col, "every")
                if every is not None and every <= 0:
                    r.err("semantic", rec.line, head.value_col, "every must be > 0")
        elif head.key == "dir":
            directory = head.value
        elif head.key is None and head.text == "times":
            for t in rec.tokens[1:]:
                v = r.number(t.text, rec.line, t.col, "report time")
                if v is not None:
                    times.append(v)
            continue
        elif head.key is None and head.text == "probe":
            rest = rec.tokens[1:]
            if len(rest) != 2 or any(t.key for t in rest):
                r.err("parse", rec.line, head.col, "probe needs: probe <species> <element>")
                continue
            sp = r.name(rest[0].text, rec.line, rest[0].col, "probe species")
            el = r.integer(rest[1].text, rec.line, rest[1].col, "probe element")
            if sp is not None and el is not None:
                probes.append((sp, el))
            continue
        else:
            r.err("parse", rec.line, head.col, f"[OUTPUT]: unknown entry {head.text!r}")
            continue
        if len(rec.tokens) > 1:
            r.err("parse", rec.line, rec.tokens[1].col, "one setting per line in [OUTPUT]")
    if any(b <= a for a, b in zip(times, times[1:])):
        r.err("semantic", recs[0].line if recs else 1, 1, "[OUTPUT]: report times must be strictly increasing")
    if times and times[0] < 0:
        r.err("semantic", recs[0].line, 1, "[OUTPUT]: report times must be >= 0")
    return OutputSpec(every, every_step, tuple(times), tuple(probes), directory)


def _sweep(r: _Reader, recs: list[Record]) -> SweepSpec | None:
    vals: dict = {}
    targets: list[str] = []
    values: list[float] = []
    summary: list[str] = []
    line = recs[0].line if recs else 1
    for rec in recs:
        head = rec.tokens[0]
        if head.key is None and head.text in ("target", "values", "summary"):
            for t in rec.tokens[1:]:
                if t.key is not None:
                    r.err("parse", rec.line, t.col, f"{head.text}: unexpected key {t.key!r}")
                elif head.text == "target":
                    targets.append(t.text)
                elif head.text == "summary":
                    summary.append(t.text)
                else:
                    v = r.number(t.text, rec.line, t.col, "sweep value")
                    if v is not None:
                        values.append(v)
            continue
        kw = r.kwargs(rec, rec.tokens, dict.fromkeys(("mode", "n", "rel_std", "seed")), "[SWEEP]")
        for key, (text, col) in kw.items():
            if key in vals:
                r.err("parse", rec.line, col, f"[SWEEP]: {key} given twice")
            elif key == "mode":
                vals[key] = text
            elif key in ("n", "seed"):
                v = (r.integer(text, rec.line, col, key) if key == "n"
                     else _seed(r, text, rec.line, col))
                if v is not None:
                    vals[key] = v
            else:
                v = r.number(text, rec.line, col, key)
                if v is not None:
                    vals[key] = v
    mode = vals.get("mode", "")
    if mode not in ("gaussian", "grid"):
        r.err("semantic", line, 1, "[SWEEP]: mode must be gaussian or grid")
        return None
    spec = SweepSpec(mode, tuple(targets), vals.get("n", 1), vals.get("rel_std", 0.0),
                     vals.get("seed", 0), tuple(values), tuple(summary))
    if not targets:
        r.err("semantic", line, 1, "[SWEEP]: at least one target is required")
    if mode == "gaussian" and not spec.n >= 1:
        r.err("semantic", line, 1, "[SWEEP]: n must be >= 1")
    if not spec.rel_std >= 0:
        r.err("semantic", line, 1, "[SWEEP]: rel_std must be >= 0")
    if mode == "grid" and not values:
        r.err("semantic", line, 1, "[SWEEP]: grid mode needs a nonempty values list")
    if mode == "grid" and len(targets) != 1:
        r.err("semantic", line, 1, "[SWEEP]: grid mode takes exactly one target")
    return spec


def _seed(r: _Reader, text: str, line: int, col: int) -> int | None:
    if not re.fullmatch(r"\d{1,20}", text) or int(text) >= 2**64:
        r.err("parse", line, col, f"seed must be an integer in [0, 2**64), got {text!r}")
        return None
    return int(text)


# -- cross-block validation ----------------------------------------------------


def _validate(r, solver, materials, grid, species, reactions, equilibria, initial, boundaries, outputs, sweep, by_name):
    names = set(species.names)
    kinds = {s.name: s.kind for s in species.entries}
    mat_names = {m.name for m in materials}
    n = grid.n_elements
    grid_line = by_name["GRID"][0].line if "GRID" in by_name else 1
    if "GRID" not in by_name:
        r.err("semantic", 1, 1, "deck has no [GRID] block")
    if "MATERIALS" not in by_name:
        r.err("semantic", 1, 1, "deck has no [MATERIALS] block")
    for i, e in enumerate(grid.elements):
        if e.material not in mat_names:
            r.err("semantic", grid_line, 1, f"[GRID]: element {i} uses undeclared material {e.material!r}")

    spec_line = by_name["SPECIES"][0].line if "SPECIES" in by_name else 1
    for sp in species.entries:
        if sp.unit == "mol/L" and sp.kind == "BIO" and sp.molar_mass == 0:
            r.err("semantic", spec_line, 1, f"species {sp.name!r}: BIO species in mol/L need molar_mass > 0")
        for partner, _ in sp.attractants + sp.repellents:
            if partner not in names:
                r.err("semantic", spec_line, 1, f"species {sp.name!r}: unknown chemotaxis species {partner!r}")
            elif kinds[partner] != "PRI":
                r.err("semantic", spec_line, 1, f"species {sp.name!r}: chemotaxis species {partner!r} must be PRI")

    for rx in reactions:
        where = f"[REACTION {rx.name}] (line {rx.line})"
        for sp in sorted(rx.species()):
            if sp not in names:
                r.err("semantic", rx.line, 1, f"{where}: unknown species {sp!r}")
        for sp, x in rx.stoichiometry:
            if sp in names and kinds[sp] not in ("PRI", "BIO"):
                r.err("semantic", rx.line, 1, f"{where}: kinetic stoichiometry may only use PRI/BIO species, {sp!r} is {kinds[sp]}")
            if x == 0:
                r.err("semantic", rx.line, 1, f"{where}: stoichiometric number of {sp!r} is zero")
        if len({sp for sp, _ in rx.stoichiometry}) != len(rx.stoichiometry):
            r.err("semantic", rx.line, 1, f"{where}: species repeated in stoich")
        for terms, what in ((rx.norder, "norder"), (rx.mmm, "mmm"), (rx.competition, "com"), (rx.inhibition, "inb")):
            for sp, v in terms:
                if sp in names and kinds[sp] not in ("PRI", "BIO", "SEC"):
                    r.err("semantic", rx.line, 1, f"{where}: {what} term species {sp!r} must be PRI, BIO or SEC")
                if what != "norder" and not v > 0:
                    r.err("semantic", rx.line, 1, f"{where}: {what} constant for {sp!r} must be > 0")
        if rx.rate < 0:
            r.err("semantic", rx.line, 1, f"{where}: rate must be >= 0")
        if rx.bio is not None and rx.bio in names and kinds[rx.bio] != "BIO":
            r.err("semantic", rx.line, 1, f"{where}: bio actor {rx.bio!r} is not a BIO species")

    solved_by: dict[str, str] = {}
    for eq in equilibria:
        where = f"[EQUILIBRIUM {eq.name}] (line {eq.line})"
        if eq.solved and eq.solved not in names:
            r.err("semantic", eq.line, 1, f"{where}: unknown species {eq.solved!r}")
        elif eq.solved and kinds[eq.solved] not in ("SEC", "MIN", "GAS"):
            r.err("semantic", eq.line, 1, f"{where}: solved species {eq.solved!r} must be SEC, MIN or GAS")
        if eq.solved in solved_by:
            r.err("semantic", eq.line, 1, f"{where}: {eq.solved!r} already solved by {solved_by[eq.solved]!r}")
        solved_by[eq.solved] = eq.name
        if eq.x_k == 0:
            r.err("semantic", eq.line, 1, f"{where}: x_k must be nonzero")
        if not eq.primaries:
            r.err("semantic", eq.line, 1, f"{where}: needs at least one primary term")
        for sp, _ in eq.primaries:
            if sp not in names:
                r.err("semantic", eq.line, 1, f"{where}: unknown species {sp!r}")
            elif kinds[sp] != "PRI":
                r.err("semantic", eq.line, 1,
                      f"{where}: {sp!r} is {kinds[sp]}; equilibria may only depend on PRI species (no chained secondaries)")

    for rec in initial.records:
        hi = rec.hi if rec.selector != "all" else n - 1
        if rec.selector != "all" and not (0 <= rec.lo <= hi < n):
            r.err("semantic", rec.line, 1, f"[INITIAL]: element range {rec.lo}..{rec.hi} outside 0..{n - 1}")
        for key, v in rec.values:
            if key in ("S_L",):
                if not 0 <= v <= 1:
                    r.err("semantic", rec.line, 1, "[INITIAL]: S_L must lie in [0, 1]")
            elif key in ("P_L", "h"):
                pass
            elif key not in names:
                r.err("semantic", rec.line, 1, f"[INITIAL]: unknown species {key!r}")
            elif v < 0:
                r.err("semantic", rec.line, 1, f"[INITIAL]: {key} must be >= 0")

    for b in boundaries:
        if b.element is not None and not 0 <= b.element < n:
            r.err("semantic", b.line, 1, f"[BOUNDARY]: element {b.element} outside 0..{n - 1}")
        if b.species is not None:
            if b.species not in names:
                r.err("semantic", b.line, 1, f"[BOUNDARY]: unknown species {b.species!r}")
            elif kinds[b.species] not in ("PRI", "BIO"):
                r.err("semantic", b.line, 1, f"[BOUNDARY]: species source {b.species!r} must be PRI or BIO")
            elif b.unit == "mol/s" and species.get(b.species).molar_mass == 0:
                r.err("semantic", b.line, 1, f"[BOUNDARY]: mol/s needs a molar mass for {b.species!r}")
        if b.kind == "uptake":
            total = math.fsum(f for _, f in b.fractions)
            if b.fractions and abs(total - 1.0) > 1e-12:
                r.err("semantic", b.line, 1, f"[BOUNDARY]: uptake fractions sum to {total!r}, expected 1")
            for e, f in b.fractions:
                if not 0 <= e < n:
                    r.err("semantic", b.line, 1, f"[BOUNDARY]: uptake element {e} outside 0..{n - 1}")
                if f < 0:
                    r.err("semantic", b.line, 1, "[BOUNDARY]: uptake fractions must be >= 0")
            if len({e for e, _ in b.fractions}) != len(b.fractions):
                r.err("semantic", b.line, 1, "[BOUNDARY]: uptake element listed twice")

    out_line = by_name["OUTPUT"][0].line if "OUTPUT" in by_name else 1
    for sp, el in outputs.probes:
        if sp not in names:
            r.err("semantic", out_line, 1, f"[OUTPUT]: probe references unknown species {sp!r}")
        if not 0 <= el < n:
            r.err("semantic", out_line, 1, f"[OUTPUT]: probe element {el} outside 0..{n - 1}")


def _load_series(r: _Reader, b: BoundarySchedule) -> BoundarySchedule:
    s = b.schedule
    if s is None or s.file is None:
        return b
    path = s.file if os.path.isabs(s.file) else os.path.join(r.base_dir, s.file)
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        r.err("semantic", b.line, 1, f"[BOUNDARY]: cannot load series {s.file!r}: {exc}")
        return b
    if data.shape[1] <= s.column or data.shape[0] < 1:
        r.err("semantic", b.line, 1, f"[BOUNDARY]: {s.file!r} has no column {s.column}")
        return b
    t = data[:, 0] * DAY
    v = data[:, s.column]
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        r.err("semantic", b.line, 1, f"[BOUNDARY]: {s.file!r} contains non-finite values")
        return b
    if np.any(np.diff(t) <= 0):
        r.err("semantic", b.line, 1, f"[BOUNDARY]: times in {s.file!r} must be strictly increasing")
        return b
    return replace(b, schedule=replace(s, times=tuple(t.tolist()), values=tuple(v.tolist())))
