"""Evolutionary search over weight-distribution parameters.

A candidate is a fan-in power law (c0, c1, c2, c3) for one distribution
family; its fitness is the number of distinct output-layer pieces a
network initialized from it carves over a probe dataset.  Each loop
perturbs every kept candidate once, evaluates the doubled population,
and keeps the best half, stopping when the best fitness goes stale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import InputError, NetworkParams, Topology, forward_batch
from .data import GridConfig, stack_features, yinyang_grid
from .estimation import FAMILIES, DistributionSpec
from .pieces import assign_neuron_piece_ids, count_pieces
from .training import initialize_weights

__all__ = [
    "EvoConfig",
    "Candidate",
    "default_probe",
    "perturb_coeffs",
    "fitness",
    "evolve",
]

# which of (c0, c1, c2, c3) must stay positive, per family; those move
# multiplicatively so a perturbation can never produce an invalid value
_POSITIVE = {
    "normal": (False, False, True, False),
    "lognormal": (True, False, True, False),
    "uniform": (True, False, False, False),
    "uniform_positive": (True, False, True, False),
}

_UNIT_COEFFS = (1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class EvoConfig:
    """Search settings.

    probe is a [samples, num_inputs] matrix of input spike times; None
    falls back to the in-disk Yin Yang grid at probe_resolution points
    per axis.  nets_per_candidate averages the piece count over several
    networks drawn from candidate-derived seeds.
    """

    topology: Topology
    family: str = "normal"
    population_keep: int = 4
    perturb_std: float = 0.1
    patience: int = 10
    max_loops: int = 100
    probe: np.ndarray | None = None
    probe_resolution: int = 100
    nets_per_candidate: int = 1
    seed: int = 0
    params: NetworkParams = field(default_factory=NetworkParams)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise InputError(f"unknown family {self.family!r}, pick one of {FAMILIES}")
        if self.population_keep < 1:
            raise InputError("population_keep must be >= 1")
        if self.perturb_std <= 0.0:
            raise InputError("perturb_std must be positive")
        if self.patience < 1:
            raise InputError("patience must be >= 1")
        if self.max_loops < 0:
            raise InputError("max_loops must be >= 0")
        if self.nets_per_candidate < 1:
            raise InputError("nets_per_candidate must be >= 1")
        if self.probe is not None:
            probe = np.asarray(self.probe, dtype=np.float64)
            if probe.ndim != 2 or probe.shape[1] != self.topology.num_inputs:
                raise InputError("probe must be [samples, num_inputs]")
            object.__setattr__(self, "probe", probe)


@dataclass(frozen=True)
class Candidate:
    """A parameter set with its evaluated fitness."""

    spec: DistributionSpec
    fitness: float

    def __post_init__(self) -> None:
        if self.fitness < 0.0:
            raise InputError("fitness must be >= 0")


def default_probe(resolution: int = 100) -> np.ndarray:
    """Encoded features of the full in-disk grid."""
    x, _ = stack_features(yinyang_grid(GridConfig(resolution)))
    return x


def perturb_coeffs(
    coeffs: tuple[float, ...],
    family: str,
    rng: np.random.Generator,
    std: float,
) -> tuple[float, ...]:
    """One N(0, std^2) kick per coefficient, log-space where the
    coefficient must stay positive."""
    eps = rng.normal(0.0, std, len(coeffs))
    return tuple(
        c * math.exp(e) if pos else c + e
        for c, e, pos in zip(coeffs, eps, _POSITIVE[family])
    )


def fitness(
    spec: DistributionSpec,
    topology: Topology,
    probe: np.ndarray,
    params: NetworkParams,
    seed,
) -> int:
    """Output-layer pieces of one network drawn from `spec` over the probe."""
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 2 or probe.shape[0] == 0:
        raise InputError("probe must be a nonempty [samples, num_inputs] matrix")
    ws = initialize_weights(topology, spec, np.random.default_rng(seed))
    ids, _ = assign_neuron_piece_ids(forward_batch(params, ws, probe))
    return count_pieces(ids, ids.num_layers - 1)


def _candidate_seeds(seed: int, spec: DistributionSpec, count: int) -> list[int]:
    # derive fitness seeds from the parameter values themselves so a
    # candidate's score never depends on evaluation order
    bits = np.asarray(spec.coeffs, dtype=np.float64).view(np.uint64)
    ss = np.random.SeedSequence([seed, *(int(b) for b in bits)])
    return [int(s) for s in ss.generate_state(count, dtype=np.uint64)]


def evolve(
    config: EvoConfig,
    fitness_fn: Callable[[DistributionSpec], float] | None = None,
) -> tuple[Candidate, list[tuple[int, int, Candidate]]]:
    """Run the search; returns the best candidate and the full history.

    History rows are (loop, candidate_index, candidate): loop 0 holds
    the initial population (unit coefficients jittered once), each later
    loop the kept parents followed by their children.  Selection keeps
    the highest fitness, ties resolving to the lower index.
    """
    if fitness_fn is None:
        probe = config.probe
        if probe is None:
            probe = default_probe(config.probe_resolution)

        def fitness_fn(spec: DistributionSpec) -> float:
            seeds = _candidate_seeds(config.seed, spec, config.nets_per_candidate)
            counts = [
                fitness(spec, config.topology, probe, config.params, s) for s in seeds
            ]
            return float(np.mean(counts))

    rng = np.random.default_rng([config.seed, 1])
    population: list[Candidate] = []
    history: list[tuple[int, int, Candidate]] = []
    for i in range(config.population_keep):
        spec = DistributionSpec(
            config.family,
            coeffs=perturb_coeffs(_UNIT_COEFFS, config.family, rng, config.perturb_std),
        )
        cand = Candidate(spec, fitness_fn(spec))
        population.append(cand)
        history.append((0, i, cand))

    best = max(c.fitness for c in population)
    stale = 0
    for loop in range(1, config.max_loops + 1):
        if stale >= config.patience:
            break
        cands = list(population)
        for parent in population:
            spec = DistributionSpec(
                config.family,
                coeffs=perturb_coeffs(parent.spec.coeffs, config.family, rng,
                                      config.perturb_std),
            )
            cands.append(Candidate(spec, fitness_fn(spec)))
        history.extend((loop, i, c) for i, c in enumerate(cands))
        order = np.argsort([-c.fitness for c in cands], kind="stable")
        population = [cands[int(i)] for i in order[: config.population_keep]]
        if population[0].fitness > best:
            best = population[0].fitness
            stale = 0
        else:
            stale += 1
    return population[0], history
