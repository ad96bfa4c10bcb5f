"""
Multistep retrobiosynthesis search.

Level-synchronous backward expansion from a target molecule: each level
applies every template to the frontier, scores the candidate precursor
sets with the one-step ranker against their parent molecule, prunes below
a threshold, guards against cycles along each path, and keeps the
beam_width best per level. From the second level on, survivors can be
re-ranked by the two-step model over the (grandparent, parent precursors,
child precursors) window; the first level is ordered by the one-step score
alone.

Chaining follows the main substrate: the precursor component with the most
heavy atoms (ties broken by canonical key) continues the chain, the rest
are recorded as co-substrates. Pathway reconstruction backtracks parent
links from every node whose precursor set intersects the stop set (or from
all max-depth leaves when no stop set is given); a pathway's aggregate
score is the geometric mean of its two-step window scores, or of its
one-step scores when only the one-step model is used.

Reports are deterministic for fixed models, templates and configuration,
independent of worker count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .fingerprint import Fingerprinter
from .molgraph import parse_smiles, canonicalize
from .pattern import ReactionTemplate, enumerate_precursors
from .ranking import rank_candidates, score_nn1, score_nn2
from .neural import MlpModel

__all__ = [
    "SearchConfig",
    "SearchNode",
    "PathwayStep",
    "Pathway",
    "SearchReport",
    "TargetParseError",
    "NodeBudgetExceeded",
    "expand_level",
    "rank_level",
    "reconstruct_pathways",
    "run_retro",
    "gold_step_ranks",
]


class TargetParseError(ValueError):
    pass


class NodeBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    max_steps: int = 3
    beam_width: int = 10
    prune_threshold: float = 0.0
    stop_set: frozenset[str] = frozenset()
    max_nodes: int = 100000

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.beam_width < 1:
            raise ValueError("beam_width must be at least 1")

    def to_dict(self) -> dict:
        return {
            "max_steps": self.max_steps,
            "beam_width": self.beam_width,
            "prune_threshold": self.prune_threshold,
            "stop_set": sorted(self.stop_set),
            "max_nodes": self.max_nodes,
        }


@dataclass(eq=False)
class SearchNode:
    """One expansion: ``molecule_key`` is the main substrate carried on."""

    molecule_key: str
    precursor_keys: tuple[str, ...]
    depth: int
    step_score: float
    parent: "SearchNode | None"
    template_id: str = ""
    ec_numbers: tuple[str, ...] = ()
    nn2_score: float | None = None

    def ancestors_keys(self) -> set[str]:
        keys = set()
        node = self.parent
        while node is not None:
            keys.add(node.molecule_key)
            node = node.parent
        return keys

    @property
    def sort_key(self) -> tuple:
        return (self.precursor_keys, self.template_id)


@dataclass(frozen=True)
class PathwayStep:
    product_key: str
    precursor_keys: tuple[str, ...]
    ec_numbers: tuple[str, ...]
    template_id: str
    step_score: float


@dataclass
class Pathway:
    steps: tuple[PathwayStep, ...]
    aggregate_score: float
    aggregate_rank: int = 0

    def chain_is_valid(self) -> bool:
        """Step i's continuing precursor must be step i+1's product."""
        for a, b in zip(self.steps, self.steps[1:]):
            if b.product_key not in a.precursor_keys:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "aggregate_score": self.aggregate_score,
            "aggregate_rank": self.aggregate_rank,
            "steps": [
                {
                    "product": s.product_key,
                    "precursors": list(s.precursor_keys),
                    "ec_numbers": list(s.ec_numbers),
                    "template_id": s.template_id,
                    "step_score": s.step_score,
                }
                for s in self.steps
            ],
        }


def _main_substrate(keys: tuple[str, ...], heavy_counts: dict[str, int]) -> str:
    """Largest heavy-atom count wins; canonical key breaks ties."""
    def weight(key: str) -> tuple:
        if key not in heavy_counts:
            heavy_counts[key] = parse_smiles(key).heavy_atom_count()
        return (-heavy_counts[key], key)

    return min(keys, key=weight)


def expand_level(
    frontier: list[SearchNode],
    templates: list[ReactionTemplate],
    nn1: MlpModel,
    config: SearchConfig,
    fingerprinter: Fingerprinter,
    heavy_counts: dict[str, int],
    node_budget: list[int],
    max_workers: int = 1,
) -> tuple[list[SearchNode], dict]:
    """Enumerate, score with the one-step model, prune and cycle-guard.

    ``node_budget`` is a single-element mutable counter of nodes created so
    far; crossing config.max_nodes raises NodeBudgetExceeded.
    """
    children: list[SearchNode] = []
    stats = {"generated": 0, "pruned": 0, "cycle_dropped": 0}
    for node in frontier:
        target = parse_smiles(node.molecule_key)
        candidates = enumerate_precursors(target, templates, max_workers)
        parent_fp = fingerprinter.of_key(node.molecule_key)
        ancestor_keys = node.ancestors_keys() | {node.molecule_key}
        for cand in candidates:
            stats["generated"] += 1
            node_budget[0] += 1
            if node_budget[0] > config.max_nodes:
                raise NodeBudgetExceeded(
                    f"node budget {config.max_nodes} exceeded at depth "
                    f"{node.depth + 1}"
                )
            score = score_nn1(
                nn1,
                parent_fp,
                [fingerprinter.of_keys(cand.precursor_keys)],
            )
            if score < config.prune_threshold:
                stats["pruned"] += 1
                continue
            main = _main_substrate(cand.precursor_keys, heavy_counts)
            if main in ancestor_keys:
                stats["cycle_dropped"] += 1
                continue
            children.append(
                SearchNode(
                    molecule_key=main,
                    precursor_keys=cand.precursor_keys,
                    depth=node.depth + 1,
                    step_score=score,
                    parent=node,
                    template_id=cand.provenance[0][0],
                    ec_numbers=cand.provenance[0][1],
                )
            )
    return children, stats


def rank_level(
    children: list[SearchNode],
    nn2: MlpModel | None,
    config: SearchConfig,
    fingerprinter: Fingerprinter,
) -> list[SearchNode]:
    """Order a level and keep the beam_width best.

    Depth-1 children are ordered by the one-step score. Deeper levels use
    the two-step score over (grandparent product, parent precursors, child
    precursors) when a two-step model is given.
    """
    if not children:
        return []
    depth = children[0].depth
    if nn2 is not None and depth >= 2:
        for child in children:
            grandparent = child.parent.parent
            child.nn2_score = score_nn2(
                nn2,
                fingerprinter.of_key(grandparent.molecule_key),
                fingerprinter.of_keys(child.parent.precursor_keys),
                fingerprinter.of_keys(child.precursor_keys),
            )
        ranked = rank_candidates(
            [(c, c.nn2_score) for c in children]
        )
    else:
        ranked = rank_candidates([(c, c.step_score) for c in children])
    return [rc.candidate for rc in ranked[: config.beam_width]]


def _window_scores(node: SearchNode, use_nn2: bool) -> list[float]:
    chain: list[SearchNode] = []
    cur = node
    while cur is not None and cur.parent is not None:
        chain.append(cur)
        cur = cur.parent
    chain.reverse()  # depth 1 .. depth L
    if use_nn2 and len(chain) >= 2:
        return [n.nn2_score for n in chain[1:] if n.nn2_score is not None]
    return [n.step_score for n in chain]


def reconstruct_pathways(
    nodes: list[SearchNode],
    stop_set: frozenset[str],
    use_nn2: bool,
    max_depth: int,
) -> list[Pathway]:
    """Backtrack parent links from stop-set hits (or max-depth leaves).

    Pathways are ranked by aggregate score (geometric mean of window
    scores) with the canonical tie rule; duplicates by step identity
    collapse.
    """
    if stop_set:
        hits = [
            n for n in nodes if any(k in stop_set for k in n.precursor_keys)
        ]
    else:
        hits = [n for n in nodes if n.depth == max_depth]
    seen: set[tuple] = set()
    pathways = []
    for node in hits:
        steps = []
        cur = node
        while cur is not None and cur.parent is not None:
            steps.append(
                PathwayStep(
                    product_key=cur.parent.molecule_key,
                    precursor_keys=cur.precursor_keys,
                    ec_numbers=cur.ec_numbers,
                    template_id=cur.template_id,
                    step_score=cur.step_score,
                )
            )
            cur = cur.parent
        steps.reverse()
        identity = tuple(
            (s.product_key, s.precursor_keys, s.template_id) for s in steps
        )
        if identity in seen:
            continue
        seen.add(identity)
        scores = _window_scores(node, use_nn2)
        aggregate = math.exp(sum(math.log(s) for s in scores) / len(scores))
        pathways.append(Pathway(tuple(steps), aggregate))
    pathways.sort(
        key=lambda p: (
            -p.aggregate_score,
            tuple((s.product_key, s.precursor_keys) for s in p.steps),
        )
    )
    for position, pathway in enumerate(pathways, 1):
        pathway.aggregate_rank = position
    return pathways


@dataclass
class SearchReport:
    target_key: str
    config: SearchConfig
    levels: list[dict] = field(default_factory=list)
    pathways: list[Pathway] = field(default_factory=list)
    gold_ranks: list[dict] = field(default_factory=list)
    budget_exceeded: bool = False
    used_nn2: bool = False

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "target": self.target_key,
            "config": self.config.to_dict(),
            "used_nn2": self.used_nn2,
            "budget_exceeded": self.budget_exceeded,
            "levels": self.levels,
            "gold_ranks": self.gold_ranks,
            "pathways": [p.to_dict() for p in self.pathways],
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def gold_step_ranks(
    gold_steps: list[tuple[str, tuple[str, ...]]],
    templates: list[ReactionTemplate],
    nn1: MlpModel,
    fingerprinter: Fingerprinter,
    max_workers: int = 1,
) -> list[dict]:
    """Rank each gold step's precursor set among the candidates generated
    for its product; the per-step annotation protocol."""
    out = []
    for step_no, (product, precursors) in enumerate(gold_steps, 1):
        product_key = canonicalize(parse_smiles(product))
        gold_key = tuple(sorted(canonicalize(parse_smiles(p)) for p in precursors))
        candidates = enumerate_precursors(
            parse_smiles(product_key), templates, max_workers
        )
        entry = {
            "step": step_no,
            "product": product_key,
            "gold_precursors": list(gold_key),
            "found": False,
            "rank": None,
            "total": len(candidates),
            "ec_numbers": [],
        }
        if candidates:
            target_fp = fingerprinter.of_key(product_key)
            scored = [
                (c, score_nn1(nn1, target_fp,
                              [fingerprinter.of_keys(c.precursor_keys)]))
                for c in candidates
            ]
            for rc in rank_candidates(scored):
                if rc.candidate.precursor_keys == gold_key:
                    entry["found"] = True
                    entry["rank"] = rc.rank
                    entry["ec_numbers"] = sorted(
                        {ec for _, ecs in rc.candidate.provenance for ec in ecs}
                    )
                    break
        out.append(entry)
    return out


def run_retro(
    target_smiles: str,
    templates: list[ReactionTemplate],
    nn1: MlpModel,
    nn2: MlpModel | None = None,
    config: SearchConfig | None = None,
    fingerprinter: Fingerprinter | None = None,
    gold_steps: list[tuple[str, tuple[str, ...]]] | None = None,
    max_workers: int = 1,
) -> SearchReport:
    """Full multistep search; with nn2 absent the one-step model both
    prunes and ranks every level."""
    config = config or SearchConfig()
    fingerprinter = fingerprinter or Fingerprinter()
    try:
        target_key = canonicalize(parse_smiles(target_smiles))
    except ValueError as exc:
        raise TargetParseError(f"cannot parse target: {exc}") from exc

    report = SearchReport(target_key, config, used_nn2=nn2 is not None)
    root = SearchNode(target_key, (), 0, 1.0, None)
    frontier = [root]
    survivors_all: list[SearchNode] = []
    heavy_counts: dict[str, int] = {}
    node_budget = [0]
    for depth in range(1, config.max_steps + 1):
        if not frontier:
            break
        try:
            children, stats = expand_level(
                frontier, templates, nn1, config, fingerprinter,
                heavy_counts, node_budget, max_workers,
            )
        except NodeBudgetExceeded:
            report.budget_exceeded = True
            break
        survivors = rank_level(children, nn2, config, fingerprinter)
        stats["kept"] = len(survivors)
        stats["depth"] = depth
        report.levels.append(stats)
        survivors_all.extend(survivors)
        frontier = survivors
    report.pathways = reconstruct_pathways(
        survivors_all, config.stop_set, nn2 is not None, config.max_steps
    )
    if gold_steps:
        report.gold_ranks = gold_step_ranks(
            gold_steps, templates, nn1, fingerprinter, max_workers
        )
    return report
