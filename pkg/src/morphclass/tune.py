"""Elitist evolutionary search over trainer parameters.

A population of 20 individuals is kept.  Each generation two random parents
are fused gene by gene, the child is mutated and evaluated, and it replaces
the worst member only when strictly fitter.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .config import TrainerConfig
from .distance import worst_case_steps
from .ensemble import EnsembleConfig
from .evaluation import FoldPlan, cv_accuracy, kfold
from .grid import DEFAULT_PADDING, Dataset
from .mdc import AUTO, format_beta

log = logging.getLogger(__name__)

POPULATION = 20
MUTATION_RATE = 0.6
MAX_CELLS = 96


class TuneError(RuntimeError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    """One searched parameter.

    Numeric genes live in ``[low, high]`` (``high`` is the bound used to
    scale mutations).  Genes are stored as reals; integer parameters are
    rounded when decoded, so small steps can add up over generations.
    """

    name: str
    high: float = 0.0
    low: float = 0.0
    integer: bool = False
    choices: tuple | None = None

    def __post_init__(self):
        if self.choices is None and not self.low <= self.high:
            raise ValueError(f"{self.name}: empty range")

    @property
    def categorical(self) -> bool:
        return self.choices is not None

    def random(self, rng: np.random.Generator):
        if self.categorical:
            return self.choices[rng.integers(len(self.choices))]
        return float(rng.uniform(self.low, self.high))

    def clamp(self, v: float) -> float:
        return float(min(max(v, self.low), self.high))

    def decode(self, v):
        if self.categorical:
            return v
        return int(np.floor(v + 0.5)) if self.integer else float(v)


@dataclass(frozen=True)
class ParamSpace:
    params: tuple[ParamSpec, ...]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def decode(self, genes: dict) -> dict:
        return {p.name: p.decode(genes[p.name]) for p in self.params}

    def contains(self, genes: dict) -> bool:
        for p in self.params:
            v = genes[p.name]
            if p.categorical and v not in p.choices:
                return False
            if not p.categorical and not p.low <= v <= p.high:
                return False
        return True


@dataclass
class Individual:
    genes: dict[str, Any]
    fitness: float | None = None

    def params(self, space: ParamSpace) -> dict:
        return space.decode(self.genes)


def random_individual(space: ParamSpace, rng: np.random.Generator) -> Individual:
    return Individual({p.name: p.random(rng) for p in space})


def crossover(a: Individual, b: Individual, rng: np.random.Generator) -> Individual:
    """Each gene copied from ``a`` or ``b`` with probability 1/2."""
    return Individual({name: (a.genes[name] if rng.random() < 0.5 else b.genes[name])
                       for name in a.genes})


def mutate(ind: Individual, space: ParamSpace, rng: np.random.Generator,
           rate: float = MUTATION_RATE) -> Individual:
    """Zero-mean step of at most ``high / 100`` per numeric gene, with
    probability ``rate``; categorical genes are redrawn instead."""
    genes = dict(ind.genes)
    for p in space:
        if rng.random() >= rate:
            continue
        if p.categorical:
            genes[p.name] = p.random(rng)
        else:
            step = (rng.random() * p.high - p.high / 2) / 50
            genes[p.name] = p.clamp(genes[p.name] + step)
    return Individual(genes)


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    best_params: dict

    def line(self) -> str:
        return f"{self.generation} {self.best_fitness:.6f} {format_params(self.best_params)}"


@dataclass
class TuneResult:
    best: Individual
    best_params: dict
    history: list[GenerationRecord]
    population: list[Individual]
    evaluations: int
    generations: int
    elapsed_s: float = 0.0
    sizes: list[int] = field(default_factory=list)  # population size per generation

    def report(self) -> str:
        return "\n".join(r.line() for r in self.history) + "\n"


def format_params(params: dict) -> str:
    return " ".join(f"{k}={_fmt(k, v)}" for k, v in params.items())


def _fmt(name, v) -> str:
    if name == "beta" and isinstance(v, (int, np.integer)):
        return format_beta(int(v))
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def ea_tune(space: ParamSpace, objective: Callable[[dict], float],
            generations: int = 500, seed: int = 0, time_limit: float | None = None,
            initial: Sequence[dict] = (), population: int = POPULATION,
            on_generation: Callable[[GenerationRecord], None] | None = None) -> TuneResult:
    """Maximise ``objective(params)``.

    Runs ``generations`` generations, or until ``time_limit`` seconds pass
    when given (the run is then no longer reproducible).  Results are cached
    per decoded parameter set.  ``initial`` gene dicts replace the first
    random individuals.
    """
    if generations < 0:
        raise ValueError("generations must be >= 0")
    rng = np.random.default_rng(seed)
    cache: dict[tuple, float] = {}
    evaluations = 0

    def evaluate(ind: Individual) -> Individual:
        nonlocal evaluations
        params = ind.params(space)
        key = tuple(sorted((k, repr(v)) for k, v in params.items()))
        if key not in cache:
            cache[key] = float(objective(params))
            evaluations += 1
        ind.fitness = cache[key]
        return ind

    start = time.perf_counter()
    pop = [random_individual(space, rng) for _ in range(population)]
    for i, genes in enumerate(list(initial)[:population]):
        pop[i] = Individual({p.name: (genes[p.name] if p.categorical else p.clamp(genes[p.name]))
                             for p in space})
    pop = [evaluate(ind) for ind in pop]
    best = max(pop, key=lambda ind: ind.fitness)
    history = [GenerationRecord(0, best.fitness, best.params(space))]
    sizes = [len(pop)]
    gen = 0
    while gen < generations:
        if time_limit is not None and time.perf_counter() - start > time_limit:
            break
        child = None
        for attempt in range(2):
            i, j = rng.integers(len(pop), size=2)
            candidate = mutate(crossover(pop[i], pop[j], rng), space, rng)
            try:
                child = evaluate(candidate)
                break
            except Exception as exc:  # noqa: BLE001  (objective is user code)
                log.warning("generation %d: evaluation failed (%s)", gen + 1, exc)
                if attempt == 1:
                    raise TuneError(f"objective failed twice in generation {gen + 1}") from exc
        worst = int(np.argmin([ind.fitness for ind in pop]))
        if child.fitness > pop[worst].fitness:
            pop[worst] = child
            if child.fitness > best.fitness:
                best = child
        gen += 1
        rec = GenerationRecord(gen, best.fitness, best.params(space))
        history.append(rec)
        sizes.append(len(pop))
        if on_generation is not None:
            on_generation(rec)
    return TuneResult(best, best.params(space), history, pop, evaluations, gen,
                      time.perf_counter() - start, sizes)


# -- search spaces for the trainers ----------------------------------------

def sigma_bound(max_cells: int = MAX_CELLS, padding: int = DEFAULT_PADDING) -> int:
    side = max_cells + 2 * padding + 1
    return worst_case_steps(side, side)


def trainer_space(config: TrainerConfig, L: int = 2, max_cells: int = MAX_CELLS,
                  min_cells: int = 8) -> ParamSpace:
    sigma = ParamSpec("sigma", sigma_bound(max_cells, config.padding), 1, integer=True)
    cells = ParamSpec("cells", max_cells, min_cells, integer=True)
    if config.algo == "mknn":
        return ParamSpace((ParamSpec("k", 64, 1, integer=True),
                           ParamSpec("gamma", 16, 0, integer=True), sigma, cells))
    return ParamSpace((ParamSpec("gamma", 16, 0, integer=True),
                       ParamSpec("tau", 8.0, 0.05),
                       ParamSpec("beta", choices=tuple(range(1, 16))),
                       sigma,
                       ParamSpec("t_err", 64, 1, integer=True),
                       ParamSpec("q", choices=(AUTO,) + tuple(range(1, L + 1))),
                       cells))


def ensemble_space(config: EnsembleConfig, p: int, max_cells: int = MAX_CELLS,
                   min_cells: int = 8) -> ParamSpace:
    base = trainer_space(config.trainer, 2, max_cells, min_cells)
    return ParamSpace(base.params + (ParamSpec("top_n", comb(p, 2), 1, integer=True),))


def space_for(config, dataset: Dataset, **kw) -> ParamSpace:
    if isinstance(config, EnsembleConfig):
        return ensemble_space(config, dataset.p, **kw)
    return trainer_space(config, dataset.L, **kw)


def defaults_for(config, space: ParamSpace) -> dict:
    """Genes matching the configuration's current parameter values."""
    trainer = config.trainer if isinstance(config, EnsembleConfig) else config
    params = trainer.mknn if trainer.algo == "mknn" else trainer.mdc
    genes = {}
    for p in space:
        if p.name == "cells":
            v = trainer.cells
        elif p.name == "top_n":
            v = config.top_n or p.high
        else:
            v = getattr(params, p.name)
            if v is None:
                v = p.high
        genes[p.name] = v if p.categorical else p.clamp(v)
    return genes


def cv_objective(dataset: Dataset, config, plans: FoldPlan | Sequence[FoldPlan]
                 ) -> Callable[[dict], float]:
    """CV accuracy of ``config`` with the candidate parameters applied,
    averaged over the given fold plans."""
    plans = [plans] if isinstance(plans, FoldPlan) else list(plans)

    def objective(params: dict) -> float:
        cfg = config.with_params(**params)
        return float(np.mean([cv_accuracy(dataset, cfg, plan) for plan in plans]))
    return objective


def tune_config(dataset: Dataset, config, generations: int = 500, seed: int = 0,
                folds: int = 10, repeats: int = 3, time_limit: float | None = None,
                **space_kw):
    """Tune ``config`` on ``dataset``; returns ``(tuned config, TuneResult)``.

    The objective averages ``repeats`` differently shuffled ``folds``-fold
    cross-validations, which smooths the otherwise very coarse accuracy.
    """
    space = space_for(config, dataset, **space_kw)
    plan = [kfold(dataset, folds, seed + 7919 * r) for r in range(repeats)]
    result = ea_tune(space, cv_objective(dataset, config, plan), generations, seed,
                     time_limit, initial=[defaults_for(config, space)])
    return config.with_params(**result.best_params), result


# -- config files ----------------------------------------------------------

def config_lines(config) -> list[str]:
    """``key = value`` lines the command line tool reads back."""
    ens = isinstance(config, EnsembleConfig)
    trainer = config.trainer if ens else config
    algo = ("ensemble-" if ens else "") + trainer.algo
    lines = [f"algo = {algo}", f"mode = {trainer.mode}", f"cells = {trainer.cells}",
             f"padding = {trainer.padding}"]
    if trainer.precision is not None:
        lines.append("precision = " + ",".join(repr(float(v)) for v in trainer.precision))
    if trainer.algo == "mknn":
        m = trainer.mknn
        lines += [f"k = {m.k}", f"gamma = {m.gamma}"]
        if m.sigma is not None:
            lines.append(f"sigma = {m.sigma}")
    else:
        m = trainer.mdc
        lines += [f"gamma = {m.gamma}", f"tau = {m.tau!r}", f"beta = {format_beta(m.beta)}",
                  f"terr = {m.t_err}", f"q = {m.q}"]
        if m.sigma is not None:
            lines.append(f"sigma = {m.sigma}")
    if ens and config.top_n is not None:
        lines.append(f"topn = {config.top_n}")
    return lines


def write_config(config, path, result: TuneResult | None = None) -> None:
    head = []
    if result is not None:
        head = [f"# tuned: {result.generations} generations, "
                f"cv accuracy {result.best.fitness:.6f}"]
    Path(path).write_text("\n".join(head + config_lines(config)) + "\n")
