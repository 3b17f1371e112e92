"""Canonical text form of a :class:`SimulationDeck`.

Floats are written with ``repr`` so that reparsing gives back the same
values bit for bit.
"""

from __future__ import annotations

from .model import SimulationDeck, SolverSettings


def _f(x: float) -> str:
    return repr(float(x))


def _pairs(items) -> str:
    return " ".join(f"{name}:{_f(v)}" for name, v in items)


def serialize_deck(deck: SimulationDeck) -> str:
    out: list[str] = []
    w = out.append

    w("[SOLVER]")
    defaults = SolverSettings()
    for key, value in vars(deck.solver).items():
        if value == getattr(defaults, key) and type(value) is type(getattr(defaults, key)):
            continue
        if isinstance(value, bool):
            w(f"{key}={'on' if value else 'off'}")
        elif isinstance(value, int):
            w(f"{key}={value}")
        elif isinstance(value, float):
            w(f"{key}={_f(value)}")
        else:
            w(f"{key}={value}")

    w("")
    w("[MATERIALS]")
    for m in deck.materials:
        parts = [m.name, f"k={_f(m.k)}", f"phi={_f(m.phi)}", f"psi_s={_f(m.psi_s)}", f"b={_f(m.b)}",
                 f"slr={_f(m.slr)}", f"sgr={_f(m.sgr)}", f"rho_m={_f(m.rho_m)}", f"model={m.model}"]
        if m.alpha is not None:
            parts.append(f"alpha={_f(m.alpha)}")
        if m.n is not None:
            parts.append(f"n={_f(m.n)}")
        w(" ".join(parts))

    w("")
    w("[GRID]")
    for e in deck.grid.elements:
        line = f"element volume={_f(e.volume)} area={_f(e.area)} z={_f(e.z)} material={e.material}"
        if e.atmosphere:
            line += " atmosphere=yes"
        w(line)

    w("")
    w("[SPECIES]")
    for s in deck.species.entries:
        parts = [s.name, f"kind={s.kind}", f"phase={s.phase}", f"unit={s.unit}",
                 f"molar_mass={_f(s.molar_mass)}", f"D={_f(s.diffusivity)}"]
        if s.kind == "BIO":
            parts += [f"eps={_f(s.eps)}", f"f_l={_f(s.f_l)}"]
            for key in ("rho", "t_lb", "t_ub", "sl_lb", "sl_ub"):
                v = getattr(s, key)
                if v is not None:
                    parts.append(f"{key}={_f(v)}")
            if s.attractants:
                parts.append("attract=" + ",".join(f"{n}:{_f(v)}" for n, v in s.attractants))
            if s.repellents:
                parts.append("repel=" + ",".join(f"{n}:{_f(v)}" for n, v in s.repellents))
        w(" ".join(parts))

    for rx in deck.reactions:
        w("")
        w(f"[REACTION {rx.name}]")
        w(f"stoich {_pairs(rx.stoichiometry)}")
        w(f"rate {_f(rx.rate)}")
        for key, items in (("norder", rx.norder), ("mmm", rx.mmm), ("com", rx.competition), ("inb", rx.inhibition)):
            if items:
                w(f"{key} {_pairs(items)}")
        if rx.bio:
            w(f"bio {rx.bio}")

    for eq in deck.equilibria:
        w("")
        w(f"[EQUILIBRIUM {eq.name}]")
        w(f"solve {eq.solved}:{_f(eq.x_k)}")
        w(f"primary {_pairs(eq.primaries)}")
        w(f"log10k {_f(eq.log10_keq)}")
        if eq.vanthoff:
            w("vanthoff " + " ".join(f"{_f(t)}:{_f(k)}" for t, k in eq.vanthoff))

    if deck.initial.records or deck.initial.water_table is not None:
        w("")
        w("[INITIAL]")
        if deck.initial.water_table is not None:
            w(f"hydrostatic water_table={_f(deck.initial.water_table)}")
        for rec in deck.initial.records:
            sel = {"all": "all", "range": f"range {rec.lo} {rec.hi}", "element": f"element {rec.lo}"}[rec.selector]
            w(" ".join([sel] + [f"{k}={_f(v)}" for k, v in rec.values]))

    if deck.boundaries:
        w("")
        w("[BOUNDARY]")
        for b in deck.boundaries:
            parts = [b.kind]
            if b.element is not None:
                parts.append(f"element={b.element}")
            if b.species is not None:
                parts.append(f"species={b.species}")
            if b.fractions:
                parts.append("fractions=" + ",".join(f"{e}:{_f(f)}" for e, f in b.fractions))
            if b.head is not None:
                parts.append(f"value={_f(b.head)}")
            s = b.schedule
            if s is not None:
                if s.file is not None:
                    parts += [f"file={s.file}", f"column={s.column}"]
                else:
                    parts += [f"rate={_f(s.value)}", f"start={_f(s.start)}"]
                    if s.end is not None:
                        parts.append(f"end={_f(s.end)}")
            if b.unit:
                parts.append(f"unit={b.unit}")
            w(" ".join(parts))

    o = deck.outputs
    w("")
    w("[OUTPUT]")
    w(f"dir={o.directory}")
    if o.every_step:
        w("every=step")
    elif o.every is not None:
        w(f"every={_f(o.every)}")
    if o.times:
        w("times " + " ".join(_f(t) for t in o.times))
    for sp, el in o.probes:
        w(f"probe {sp} {el}")

    if deck.sweep is not None:
        sw = deck.sweep
        w("")
        w("[SWEEP]")
        w(f"mode={sw.mode}")
        w(f"n={sw.n}")
        w(f"rel_std={_f(sw.rel_std)}")
        w(f"seed={sw.seed}")
        w("target " + " ".join(sw.targets))
        if sw.values:
            w("values " + " ".join(_f(v) for v in sw.values))
        if sw.summary:
            w("summary " + " ".join(sw.summary))
    w("")
    return "\n".join(out)
