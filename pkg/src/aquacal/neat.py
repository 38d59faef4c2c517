"""NeuroEvolution of Augmenting Topologies, minimising fitness.

Genomes are feed-forward only and have no bias node. Input nodes take ids
``0..n_in-1`` and output nodes ``n_in..n_in+n_out-1``; hidden nodes get ids
from the innovation registry.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

SIGMOID_STEEPNESS = 4.9


@dataclass
class NeatConfig:
    population_size: int = 100
    max_generations: int = 100
    fitness_threshold: float = 0.1
    add_connection_rate: float = 0.7
    add_node_rate: float = 0.4
    remove_connection_rate: float = 0.4
    remove_node_rate: float = 0.2
    weight_perturb_rate: float = 0.8
    weight_perturb_sigma: float = 0.5
    weight_replace_rate: float = 0.1
    weight_limit: float = 8.0
    seed_sigma: float = 0.1  # weight noise for copies of a seed genome
    crossover_rate: float = 0.75
    disabled_gene_rate: float = 0.75
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.4
    compatibility_threshold: float = 3.0
    target_species: int = 10  # threshold drifts toward this count; 0 keeps it fixed
    threshold_step: float = 0.3
    small_genome_threshold: int = 20
    stagnation_limit: int = 15
    elitism: int = 2
    elite_species_size: int = 5  # smaller species get no elite copies (the best genome's always does)
    survival_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("add_connection_rate", "add_node_rate", "remove_connection_rate", "remove_node_rate",
                     "weight_perturb_rate", "weight_replace_rate", "crossover_rate", "disabled_gene_rate",
                     "survival_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
        if self.weight_perturb_rate + self.weight_replace_rate > 1.0:
            raise ValueError("weight_perturb_rate + weight_replace_rate exceeds 1")
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.max_generations < 0 or self.stagnation_limit < 1 or self.elitism < 0 or self.target_species < 0:
            raise ValueError("max_generations, elitism and target_species must be nonnegative, "
                             "stagnation_limit positive")
        for name in ("weight_perturb_sigma", "seed_sigma", "c1", "c2", "c3", "compatibility_threshold",
                     "weight_limit", "threshold_step"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------------------
# genome


@dataclass(frozen=True)
class NodeGene:
    id: int
    role: str  # input | hidden | output
    activation: str  # sigmoid | clamped | identity (inputs)


@dataclass(frozen=True)
class ConnectionGene:
    innovation: int
    src: int
    dst: int
    weight: float
    enabled: bool = True


def sigmoid(x):
    return expit(SIGMOID_STEEPNESS * x)


def clamped(x):
    return np.clip(x, -1.0, 1.0)


ACTIVATIONS = {"sigmoid": sigmoid, "clamped": clamped, "identity": lambda x: x}


class Genome:
    """Node genes plus innovation-keyed connection genes.

    Treat instances as values: mutation and crossover build new genomes.
    """

    def __init__(self, n_inputs: int, n_outputs: int, nodes: dict[int, NodeGene],
                 connections: dict[int, ConnectionGene], fitness: float | None = None):
        self.n_inputs = n_inputs
        self.n_outputs = n_outputs
        self.nodes = nodes
        self.connections = connections
        self.fitness = fitness
        self._plan = None

    def copy(self, keep_fitness: bool = True) -> "Genome":
        return Genome(self.n_inputs, self.n_outputs, dict(self.nodes), dict(self.connections),
                      self.fitness if keep_fitness else None)

    @property
    def input_ids(self) -> range:
        return range(self.n_inputs)

    @property
    def output_ids(self) -> range:
        return range(self.n_inputs, self.n_inputs + self.n_outputs)

    @property
    def hidden_ids(self) -> list[int]:
        return sorted(n for n, g in self.nodes.items() if g.role == "hidden")

    def __eq__(self, other):
        if not isinstance(other, Genome):
            return NotImplemented
        return (self.n_inputs == other.n_inputs and self.n_outputs == other.n_outputs
                and self.nodes == other.nodes and self.connections == other.connections)

    def __repr__(self):
        enabled = sum(c.enabled for c in self.connections.values())
        return (f"Genome(in={self.n_inputs}, out={self.n_outputs}, hidden={len(self.hidden_ids)}, "
                f"connections={enabled}/{len(self.connections)}, fitness={self.fitness})")

    # -- evaluation --------------------------------------------------------

    def plan(self):
        """Topological evaluation order over enabled connections (cached)."""
        if self._plan is None:
            incoming: dict[int, list[tuple[int, float]]] = {n: [] for n in self.nodes}
            indeg = {n: 0 for n in self.nodes}
            out_edges: dict[int, list[int]] = {n: [] for n in self.nodes}
            for innov in sorted(self.connections):
                c = self.connections[innov]
                if c.enabled:
                    incoming[c.dst].append((c.src, c.weight))
                    indeg[c.dst] += 1
                    out_edges[c.src].append(c.dst)
            heap = [n for n, d in indeg.items() if d == 0]
            heapq.heapify(heap)
            order = []
            while heap:
                n = heapq.heappop(heap)
                order.append(n)
                for m in out_edges[n]:
                    indeg[m] -= 1
                    if indeg[m] == 0:
                        heapq.heappush(heap, m)
            if len(order) != len(self.nodes):
                raise ValueError("genome has a cycle among enabled connections")
            index = {n: i for i, n in enumerate(sorted(self.nodes))}
            steps = []
            for n in order:
                gene = self.nodes[n]
                if gene.role == "input":
                    continue
                srcs = np.array([index[s] for s, _ in incoming[n]], dtype=np.int64)
                ws = np.array([w for _, w in incoming[n]], dtype=float)
                steps.append((index[n], srcs, ws, ACTIVATIONS[gene.activation]))
            outs = np.array([index[o] for o in self.output_ids], dtype=np.int64)
            ins = np.array([index[i] for i in self.input_ids], dtype=np.int64)
            self._plan = (len(index), ins, steps, outs)
        return self._plan

    def activate_batch(self, inputs: np.ndarray) -> np.ndarray:
        """Outputs for each row of ``inputs`` (shape ``(m, n_inputs)``)."""
        x = np.asarray(inputs, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ValueError(f"expected inputs of width {self.n_inputs}, got shape {x.shape}")
        size, ins, steps, outs = self.plan()
        values = np.zeros((x.shape[0], size))
        values[:, ins] = x
        for idx, srcs, ws, act in steps:
            total = values[:, srcs] @ ws if len(srcs) else np.zeros(x.shape[0])
            values[:, idx] = act(total)
        return values[:, outs]


def activate(genome: Genome, inputs: Sequence[float]) -> list[float]:
    if len(inputs) != genome.n_inputs:
        raise ValueError(f"expected {genome.n_inputs} inputs, got {len(inputs)}")
    return genome.activate_batch(np.asarray(inputs, dtype=float)[None, :])[0].tolist()


def check_genome(genome: Genome) -> list[str]:
    """Invariant violations (empty when the genome is well formed)."""
    problems = []
    for i in genome.input_ids:
        if genome.nodes.get(i, NodeGene(i, "?", "")).role != "input":
            problems.append(f"node {i} should be an input")
    for o in genome.output_ids:
        if genome.nodes.get(o, NodeGene(o, "?", "")).role != "output":
            problems.append(f"node {o} should be an output")
    n_in = sum(g.role == "input" for g in genome.nodes.values())
    n_out = sum(g.role == "output" for g in genome.nodes.values())
    if (n_in, n_out) != (genome.n_inputs, genome.n_outputs):
        problems.append("input/output node counts differ from schema")
    pairs = set()
    for innov, c in genome.connections.items():
        if innov != c.innovation:
            problems.append(f"connection keyed {innov} carries innovation {c.innovation}")
        if c.src not in genome.nodes or c.dst not in genome.nodes:
            problems.append(f"connection {innov} references a missing node")
            continue
        if genome.nodes[c.dst].role == "input":
            problems.append(f"connection {innov} enters an input")
        if genome.nodes[c.src].role == "output":
            problems.append(f"connection {innov} leaves an output")
        if (c.src, c.dst) in pairs:
            problems.append(f"duplicate connection {c.src}->{c.dst}")
        pairs.add((c.src, c.dst))
        if not math.isfinite(c.weight):
            problems.append(f"connection {innov} has non-finite weight")
    try:
        genome._plan = None
        genome.plan()
    except ValueError as exc:
        problems.append(str(exc))
    return problems


# ---------------------------------------------------------------------------
# innovations


class InnovationRegistry:
    """Hands out innovation numbers and hidden node ids.

    Within one generation the same structural event gets the same ids;
    :meth:`new_generation` forgets the events but never reuses numbers.
    """

    def __init__(self, next_node: int = 0, next_innovation: int = 0):
        self.next_node = next_node
        self.next_innovation = next_innovation
        self.pairs: dict[tuple[int, int], int] = {}
        self.splits: dict[int, tuple[int, int, int]] = {}

    def new_generation(self) -> None:
        self.pairs.clear()
        self.splits.clear()

    def connection(self, src: int, dst: int) -> int:
        key = (src, dst)
        if key not in self.pairs:
            self.pairs[key] = self.next_innovation
            self.next_innovation += 1
        return self.pairs[key]

    def split(self, innovation: int, src: int, dst: int) -> tuple[int, int, int]:
        if innovation not in self.splits:
            node = self.next_node
            self.next_node += 1
            in_innov = self.next_innovation
            out_innov = self.next_innovation + 1
            self.next_innovation += 2
            self.splits[innovation] = (node, in_innov, out_innov)
            self.pairs[(src, node)] = in_innov
            self.pairs[(node, dst)] = out_innov
        return self.splits[innovation]

    def observe(self, genome: Genome) -> None:
        if genome.nodes:
            self.next_node = max(self.next_node, max(genome.nodes) + 1)
        if genome.connections:
            self.next_innovation = max(self.next_innovation, max(genome.connections) + 1)


def minimal_genome(n_inputs: int, n_outputs: int, registry: InnovationRegistry,
                   rng: np.random.Generator) -> Genome:
    """Fully connected input->output genome with no hidden nodes, weights ~ U[-1, 1]."""
    nodes = {i: NodeGene(i, "input", "identity") for i in range(n_inputs)}
    for o in range(n_inputs, n_inputs + n_outputs):
        nodes[o] = NodeGene(o, "output", "clamped")
    connections = {}
    for i in range(n_inputs):
        for o in range(n_inputs, n_inputs + n_outputs):
            innov = registry.connection(i, o)
            connections[innov] = ConnectionGene(innov, i, o, float(rng.uniform(-1.0, 1.0)))
    return Genome(n_inputs, n_outputs, nodes, connections)


# ---------------------------------------------------------------------------
# variation


def _descendants(genome: Genome) -> dict[int, set[int]]:
    """Nodes reachable from each node over all connection genes, enabled or not."""
    succ: dict[int, list[int]] = {n: [] for n in genome.nodes}
    for c in genome.connections.values():
        succ[c.src].append(c.dst)
    reach: dict[int, set[int]] = {}
    for root in sorted(genome.nodes):
        stack = [(root, False)]
        while stack:
            n, done = stack.pop()
            if n in reach:
                continue
            if done:
                found = {n}
                for m in succ[n]:
                    found |= reach[m]
                reach[n] = found
            else:
                stack.append((n, True))
                stack.extend((m, False) for m in succ[n] if m not in reach)
    return reach


def _add_connection(g: Genome, registry: InnovationRegistry, rng: np.random.Generator) -> None:
    existing = {(c.src, c.dst) for c in g.connections.values()}
    reach = _descendants(g)
    sources = sorted(n for n, gene in g.nodes.items() if gene.role != "output")
    targets = sorted(n for n, gene in g.nodes.items() if gene.role != "input")
    candidates = [(s, t) for s in sources for t in targets
                  if s != t and (s, t) not in existing and s not in reach[t]]
    if not candidates:
        return
    src, dst = candidates[int(rng.integers(len(candidates)))]
    innov = registry.connection(src, dst)
    if innov in g.connections:
        return
    g.connections[innov] = ConnectionGene(innov, src, dst, float(rng.uniform(-1.0, 1.0)))


def _add_node(g: Genome, registry: InnovationRegistry, rng: np.random.Generator) -> None:
    enabled = sorted(i for i, c in g.connections.items() if c.enabled)
    if not enabled:
        return
    old = g.connections[enabled[int(rng.integers(len(enabled)))]]
    node, in_innov, out_innov = registry.split(old.innovation, old.src, old.dst)
    if node in g.nodes or in_innov in g.connections or out_innov in g.connections:
        # the same split already happened to this lineage; use fresh ids
        node = registry.next_node
        registry.next_node += 1
        in_innov, out_innov = registry.next_innovation, registry.next_innovation + 1
        registry.next_innovation += 2
    g.connections[old.innovation] = replace(old, enabled=False)
    g.nodes[node] = NodeGene(node, "hidden", "sigmoid")
    g.connections[in_innov] = ConnectionGene(in_innov, old.src, node, 1.0)
    g.connections[out_innov] = ConnectionGene(out_innov, node, old.dst, old.weight)


def _remove_connection(g: Genome, rng: np.random.Generator) -> None:
    n_in: dict[int, int] = {}
    n_out: dict[int, int] = {}
    for c in g.connections.values():
        n_in[c.dst] = n_in.get(c.dst, 0) + 1
        n_out[c.src] = n_out.get(c.src, 0) + 1
    hidden = {n for n, gene in g.nodes.items() if gene.role == "hidden"}
    candidates = sorted(
        i for i, c in g.connections.items()
        if not (c.dst in hidden and n_in[c.dst] == 1) and not (c.src in hidden and n_out[c.src] == 1))
    if candidates:
        del g.connections[candidates[int(rng.integers(len(candidates)))]]


def _remove_node(g: Genome, rng: np.random.Generator) -> None:
    hidden = g.hidden_ids
    if not hidden:
        return
    node = hidden[int(rng.integers(len(hidden)))]
    del g.nodes[node]
    for innov in [i for i, c in g.connections.items() if c.src == node or c.dst == node]:
        del g.connections[innov]


def _mutate_weights(g: Genome, config: NeatConfig, rng: np.random.Generator) -> None:
    if config.weight_perturb_rate == 0 and config.weight_replace_rate == 0:
        return
    limit = config.weight_limit
    for innov in sorted(g.connections):
        c = g.connections[innov]
        r = rng.random()
        if r < config.weight_replace_rate:
            w = float(rng.uniform(-1.0, 1.0))
        elif r < config.weight_replace_rate + config.weight_perturb_rate:
            w = c.weight + float(rng.normal(0.0, config.weight_perturb_sigma))
        else:
            continue
        g.connections[innov] = replace(c, weight=min(max(w, -limit), limit))


def mutate(genome: Genome, config: NeatConfig, registry: InnovationRegistry,
           rng: np.random.Generator) -> Genome:
    """Structural mutations at their configured per-genome rates, then weight mutation."""
    g = genome.copy(keep_fitness=False)
    if rng.random() < config.add_node_rate:
        _add_node(g, registry, rng)
    if rng.random() < config.add_connection_rate:
        _add_connection(g, registry, rng)
    if rng.random() < config.remove_node_rate:
        _remove_node(g, rng)
    if rng.random() < config.remove_connection_rate:
        _remove_connection(g, rng)
    _mutate_weights(g, config, rng)
    if g == genome:
        g.fitness = genome.fitness
    return g


def crossover(parent_a: Genome, parent_b: Genome, rng: np.random.Generator,
              disabled_gene_rate: float = 0.75) -> Genome:
    """Innovation-aligned crossover; structure follows the fitter (lower fitness) parent."""
    if parent_a.fitness is None or parent_b.fitness is None:
        raise ValueError("crossover needs both parents evaluated")
    fitter, other = (parent_a, parent_b) if parent_a.fitness <= parent_b.fitness else (parent_b, parent_a)
    connections = {}
    for innov in sorted(fitter.connections):
        gene = fitter.connections[innov]
        match = other.connections.get(innov)
        weight = gene.weight
        enabled = gene.enabled
        if match is not None:
            if rng.random() < 0.5:
                weight = match.weight
            enabled = gene.enabled and match.enabled
        if not enabled:
            enabled = rng.random() >= disabled_gene_rate
        connections[innov] = ConnectionGene(innov, gene.src, gene.dst, weight, enabled)
    return Genome(fitter.n_inputs, fitter.n_outputs, dict(fitter.nodes), connections)


def compatibility_distance(g1: Genome, g2: Genome, config: NeatConfig) -> float:
    c1, c2 = g1.connections, g2.connections
    if not c1 and not c2:
        return 0.0
    max1 = max(c1) if c1 else -1
    max2 = max(c2) if c2 else -1
    cutoff = min(max1, max2)
    matching = c1.keys() & c2.keys()
    excess = disjoint = 0
    for innov in c1.keys() ^ c2.keys():
        if innov > cutoff:
            excess += 1
        else:
            disjoint += 1
    wbar = (sum(abs(c1[i].weight - c2[i].weight) for i in sorted(matching)) / len(matching)
            if matching else 0.0)
    n = max(len(c1), len(c2))
    if n < config.small_genome_threshold:
        n = 1
    return config.c1 * excess / n + config.c2 * disjoint / n + config.c3 * wbar


# ---------------------------------------------------------------------------
# population


@dataclass
class Species:
    id: int
    representative: Genome
    members: list[Genome] = field(default_factory=list)
    created: int = 0
    last_improved: int = 0
    best_fitness: float = math.inf


@dataclass
class Population:
    genomes: list[Genome]
    n_inputs: int
    n_outputs: int
    config: NeatConfig
    registry: InnovationRegistry
    rng: np.random.Generator
    species: list[Species] = field(default_factory=list)
    generation: int = 0
    best_ever: Genome | None = None
    next_species_id: int = 0
    restarts: int = 0
    evaluations: int = 0
    threshold: float | None = None  # current compatibility threshold

    def __post_init__(self):
        if self.threshold is None:
            self.threshold = self.config.compatibility_threshold

    @property
    def best_fitness(self) -> float:
        return self.best_ever.fitness if self.best_ever is not None else math.inf

    def current_best(self) -> Genome:
        scored = [g for g in self.genomes if g.fitness is not None]
        return min(scored, key=lambda g: g.fitness)


def initial_population(n_inputs: int, n_outputs: int, config: NeatConfig,
                       seed_genome: Genome | None = None,
                       rng: np.random.Generator | None = None) -> Population:
    if n_inputs < 1 or n_outputs < 1:
        raise ValueError("need at least one input and one output")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    registry = InnovationRegistry(next_node=n_inputs + n_outputs)
    genomes = []
    if seed_genome is None:
        for _ in range(config.population_size):
            genomes.append(minimal_genome(n_inputs, n_outputs, registry, rng))
    else:
        if (seed_genome.n_inputs, seed_genome.n_outputs) != (n_inputs, n_outputs):
            raise ValueError(
                f"seed genome has {seed_genome.n_inputs} inputs/{seed_genome.n_outputs} outputs, "
                f"problem needs {n_inputs}/{n_outputs}")
        registry.observe(seed_genome)
        for c in seed_genome.connections.values():
            registry.pairs[(c.src, c.dst)] = c.innovation
        genomes.append(seed_genome.copy(keep_fitness=False))
        limit = config.weight_limit
        for _ in range(config.population_size - 1):
            g = seed_genome.copy(keep_fitness=False)
            for innov in sorted(g.connections):
                c = g.connections[innov]
                w = c.weight + float(rng.normal(0.0, config.seed_sigma))
                g.connections[innov] = replace(c, weight=min(max(w, -limit), limit))
            genomes.append(g)
    return Population(genomes=genomes, n_inputs=n_inputs, n_outputs=n_outputs, config=config,
                      registry=registry, rng=rng)


def evaluate(population: Population, fitness_of: Callable[[Genome], float],
             map_fn: Callable = map) -> int:
    """Assign fitness to unevaluated genomes; returns how many were evaluated."""
    todo = [g for g in population.genomes if g.fitness is None]
    for g, value in zip(todo, map_fn(fitness_of, todo)):
        value = float(value)
        g.fitness = value if not math.isnan(value) else math.inf
    population.evaluations += len(todo)
    best = population.current_best()
    if population.best_ever is None or best.fitness < population.best_ever.fitness:
        population.best_ever = best.copy()
    return len(todo)


def speciate(population: Population) -> None:
    config = population.config
    for s in population.species:
        s.members = []
    for g in population.genomes:
        for s in population.species:
            if compatibility_distance(g, s.representative, config) < population.threshold:
                s.members.append(g)
                break
        else:
            s = Species(population.next_species_id, g, [g], created=population.generation,
                        last_improved=population.generation)
            population.next_species_id += 1
            population.species.append(s)
    population.species = [s for s in population.species if s.members]
    for s in population.species:
        rep = s.representative
        s.representative = min(s.members, key=lambda m: compatibility_distance(m, rep, config))
    if config.target_species:
        n = len(population.species)
        if n > config.target_species:
            population.threshold += config.threshold_step
        elif n < config.target_species:
            population.threshold = max(config.threshold_step, population.threshold - config.threshold_step)


def _remove_stagnant(population: Population) -> None:
    config = population.config
    gen = population.generation
    best = population.current_best()
    keep = []
    for s in population.species:
        s_best = min(m.fitness for m in s.members)
        if s_best < s.best_fitness:
            s.best_fitness = s_best
            s.last_improved = gen
        if any(m is best for m in s.members) or gen - s.last_improved < config.stagnation_limit:
            keep.append(s)
    population.species = keep


def _quotas(scores: list[float], total: int) -> list[int]:
    ssum = sum(scores)
    raw = [total * s / ssum for s in scores] if ssum > 0 else [total / len(scores)] * len(scores)
    base = [int(math.floor(r)) for r in raw]
    short = total - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def _goodness(fitness: np.ndarray) -> np.ndarray:
    """Map minimised fitness to a positive score, scale-free via the population median."""
    finite = fitness[np.isfinite(fitness)]
    if finite.size == 0:
        return np.ones_like(fitness)
    ref = float(np.median(finite))
    if ref <= 0:
        ref = float(finite.max())
    if ref <= 0:
        return np.where(np.isfinite(fitness), 1.0, 0.0)
    score = 1.0 / (1.0 + np.maximum(fitness, 0.0) / ref)
    return np.where(np.isfinite(fitness), score, 0.0)


def reproduce(population: Population) -> None:
    """Replace ``population.genomes`` with the next generation (evaluated genomes required)."""
    config = population.config
    rng = population.rng
    n = config.population_size
    speciate(population)
    _remove_stagnant(population)
    if not population.species:
        population.restarts += 1
        fresh_seed = int(rng.integers(2**31))
        log.warning("all species extinct at generation %d; restarting with seed %d",
                    population.generation, fresh_seed)
        fresh = initial_population(population.n_inputs, population.n_outputs,
                                   replace(config, seed=fresh_seed))
        population.registry.observe(max(fresh.genomes, key=lambda g: len(g.connections)))
        population.genomes = fresh.genomes
        population.species = []
        population.generation += 1
        return

    population.registry.new_generation()
    fitness = np.array([g.fitness for g in population.genomes], dtype=float)
    goodness = dict(zip(map(id, population.genomes), _goodness(fitness)))
    scores = [float(np.mean([goodness[id(m)] for m in s.members])) for s in population.species]
    quotas = _quotas(scores, n)

    best = population.current_best()
    floor = min(max(config.elitism, 1), n)
    for i, s in enumerate(population.species):
        if any(m is best for m in s.members) and quotas[i] < floor:
            need = floor - quotas[i]
            quotas[i] = floor
            while need > 0:
                donor = max((j for j in range(len(quotas)) if j != i and quotas[j] > 0),
                            key=lambda j: (quotas[j], -j))
                quotas[donor] -= 1
                need -= 1

    children: list[Genome] = []
    for s, quota in zip(population.species, quotas):
        if quota <= 0:
            continue
        ranked = sorted(s.members, key=lambda m: m.fitness)
        holds_best = any(m is best for m in s.members)
        n_elite = min(config.elitism, quota, len(ranked))
        if len(ranked) <= config.elite_species_size and not holds_best:
            n_elite = 0
        children.extend(m.copy() for m in ranked[:n_elite])
        pool = ranked[:max(2, int(math.ceil(config.survival_fraction * len(ranked))))]
        for _ in range(quota - n_elite):
            p1 = pool[int(rng.integers(len(pool)))]
            p2 = pool[int(rng.integers(len(pool)))]
            if p1 is not p2 and rng.random() < config.crossover_rate:
                child = crossover(p1, p2, rng, config.disabled_gene_rate)
            else:
                child = p1.copy(keep_fitness=False)
            children.append(mutate(child, config, population.registry, rng))
    population.genomes = children
    population.generation += 1


def evolve_generation(population: Population, fitness_of: Callable[[Genome], float],
                      config: NeatConfig | None = None, map_fn: Callable = map) -> Population:
    """Evaluate, speciate, cull stagnant species and breed the next generation in place."""
    if config is not None:
        population.config = config
    evaluate(population, fitness_of, map_fn)
    reproduce(population)
    return population


@dataclass
class EvolutionResult:
    best: Genome
    history: list[tuple[int, float, float]]  # generation, best, mean (finite members)
    evaluations: int
    population: Population


def evolve(n_inputs: int, n_outputs: int, fitness_of: Callable[[Genome], float], config: NeatConfig,
           seed_genome: Genome | None = None, map_fn: Callable = map,
           max_evaluations: int | None = None) -> EvolutionResult:
    """Generation 0 plus up to ``config.max_generations`` bred generations."""
    pop = initial_population(n_inputs, n_outputs, config, seed_genome)
    history = []
    for gen in range(config.max_generations + 1):
        if gen > 0:
            if max_evaluations is not None and pop.evaluations + len(pop.genomes) > max_evaluations:
                break
            reproduce(pop)
        evaluate(pop, fitness_of, map_fn)
        fit = np.array([g.fitness for g in pop.genomes])
        finite = fit[np.isfinite(fit)]
        history.append((gen, pop.best_fitness, float(finite.mean()) if finite.size else math.inf))
        if pop.best_fitness <= config.fitness_threshold:
            break
    return EvolutionResult(pop.best_ever, history, pop.evaluations, pop)
