"""Parameter ensembles: Gaussian replicas and scalar grids.

Random numbers come from SplitMix64 with the Box-Muller transform, so a
(deck, spec, seed) triple yields the same replicas on every platform.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .deck.model import SimulationDeck, SweepSpec
from .deck.writer import serialize_deck
from .deck.params import split_path, get_parameter, set_parameter
from .errors import InputError, MismatchedTimes
from .orchestrator import RunOutputs, run_simulation, water_table_elevation

log = logging.getLogger(__name__)

MAX_REDRAWS = 1000
_MASK = (1 << 64) - 1


class SplitMix64:
    """Sebastiano Vigna's SplitMix64; 64-bit state, 64-bit output."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform on [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        """One standard normal per call (cosine branch of Box-Muller)."""
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _admissible(deck: SimulationDeck, path: str, value: float, mean: float) -> bool:
    if not math.isfinite(value):
        return False
    group, name, _ = split_path(path)
    trial = set_parameter(deck, path, value)
    if group == "material":
        return not trial.material(name).problems()
    if group == "solver":
        return not trial.solver.problems()
    # other parameters keep the sign of their nominal value
    return mean == 0.0 or value * mean > 0.0


# -- replica generation --------------------------------------------------------------


def generate_replicas(deck: SimulationDeck, spec: SweepSpec | None = None,
                      seed: int | None = None) -> list[SimulationDeck]:
    """Decks for every ensemble member, in replica order.

    Gaussian mode draws each target from N(mean, (rel_std*mean)^2), redrawing
    values outside the parameter's physical range.  Grid mode sets the single
    target to each listed value.
    """
    spec = spec or deck.sweep
    if spec is None:
        raise InputError("deck has no [SWEEP] block")
    base = dataclasses.replace(deck, sweep=None)
    means = [get_parameter(base, t) for t in spec.targets]
    if spec.mode == "grid":
        if len(spec.targets) != 1 or not spec.values:
            raise InputError("grid mode needs one target and a nonempty value list")
        return [set_parameter(base, spec.targets[0], v) for v in spec.values]
    if spec.n < 1 or spec.rel_std < 0:
        raise InputError("gaussian mode needs n >= 1 and rel_std >= 0")
    rng = SplitMix64(spec.seed if seed is None else seed)
    out = []
    for _ in range(spec.n):
        d = base
        for path, mean in zip(spec.targets, means):
            sd = spec.rel_std * abs(mean)
            for _attempt in range(MAX_REDRAWS):
                v = mean + sd * rng.normal()
                if _admissible(base, path, v, mean):
                    break
            else:
                raise InputError(f"{path}: no admissible draw after {MAX_REDRAWS} attempts")
            d = set_parameter(d, path, v)
        out.append(d)
    return out


# -- summaries -----------------------------------------------------------------------


def quantity_series(outputs: RunOutputs, quantity: str) -> tuple[np.ndarray, np.ndarray]:
    """(times, values) for a summary quantity.

    Forms: ``water_table``, ``flux:<column>``, ``timeseries:<column>@<element>``,
    ``probes:<species>@<element>``.
    """
    if quantity == "water_table":
        z = outputs.grid.array("z[m]")
        active = np.array(outputs.grid.column("atmosphere")) == 0
        times = outputs.times()
        vals = [water_table_elevation(z[active], outputs.profile("h[m]", t)[active])
                for t in times]
        return times, np.array(vals)
    table, _, rest = quantity.partition(":")
    if table == "flux" and rest in outputs.flux.columns:
        return outputs.flux.array("time[s]"), outputs.flux.array(rest)
    col, _, elem = rest.rpartition("@")
    try:
        e = int(elem)
    except ValueError:
        raise InputError(f"bad summary quantity {quantity!r}") from None
    if table == "timeseries" and col in outputs.timeseries.columns:
        sub = outputs.timeseries.where(element=e)
        return sub.array("time[s]"), sub.array(col)
    if table == "probes":
        sub = outputs.probes.where(species=col, element=e)
        if sub.rows:
            return sub.array("time[s]"), sub.array("value")
    raise InputError(f"unknown summary quantity {quantity!r}")


def summarize_ensemble(outputs_list, quantity: str) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and population std of ``quantity`` across runs."""
    if not outputs_list:
        raise InputError("empty ensemble")
    series = [quantity_series(o, quantity) for o in outputs_list]
    t0 = series[0][0]
    for t, _ in series[1:]:
        if t.shape != t0.shape or not np.array_equal(t, t0):
            raise MismatchedTimes(f"{quantity}: runs do not share report times")
    stack = np.vstack([v for _, v in series])
    # shifted by the first run, so identical runs give exactly zero spread
    d = stack - stack[0]
    dm = d.mean(axis=0)
    std = np.sqrt(((d - dm) ** 2).mean(axis=0))
    return stack[0] + dm, std


# -- running -------------------------------------------------------------------------


@dataclass
class EnsembleResult:
    decks: list
    outputs: list
    times: np.ndarray
    summaries: dict  # quantity -> (mean, std)
    seed: int


def _run_one(args):
    i, deck, directory = args
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "deck.txt"), "w", encoding="utf-8") as fh:
        fh.write(serialize_deck(deck))
    return i, run_simulation(deck, directory)


def run_ensemble(deck: SimulationDeck, out_dir: str, workers: int = 1, seed: int | None = None,
                 spec: SweepSpec | None = None, quantities=None, order=None) -> EnsembleResult:
    """Run every replica in ``out_dir/replica_NNN`` and write ``ensemble.csv``.

    ``order`` permutes execution only; results are always assembled in
    replica order, so summaries do not depend on it.
    """
    spec = spec or deck.sweep
    if spec is None:
        raise InputError("deck has no [SWEEP] block")
    seed = spec.seed if seed is None else seed
    decks = generate_replicas(deck, spec, seed)
    quantities = list(quantities or spec.summary or ["flux:water_out[m3]"])
    jobs = [(i, d, os.path.join(out_dir, f"replica_{i:03d}")) for i, d in enumerate(decks)]
    if order is not None:
        jobs = [jobs[i] for i in order]
    results: dict[int, RunOutputs] = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, out in pool.map(_run_one, jobs):
                results[i] = out
    else:
        for job in jobs:
            i, out = _run_one(job)
            results[i] = out
    outputs = [results[i] for i in range(len(decks))]
    summaries = {q: summarize_ensemble(outputs, q) for q in quantities}
    times = quantity_series(outputs[0], quantities[0])[0]
    res = EnsembleResult(decks, outputs, times, summaries, seed)
    write_ensemble(res, spec, out_dir)
    return res


def write_ensemble(res: EnsembleResult, spec: SweepSpec, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ensemble.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "time[s]", "mean", "std"])
        for q, (mean, std) in res.summaries.items():
            t = quantity_series(res.outputs[0], q)[0]
            for ti, m, s in zip(t, mean, std):
                w.writerow([q, repr(float(ti)), repr(float(m)), repr(float(s))])
    with open(os.path.join(out_dir, "replicas.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "seed", *spec.targets])
        for i, d in enumerate(res.decks):
            w.writerow([i, res.seed, *(repr(get_parameter(d, t)) for t in spec.targets)])
