"""
Corpus ingestion, cleaning and template-driven data augmentation.

The pipeline mirrors how metabolic reaction corpora are prepared for the
ranking models: raw compound strings are repaired (generic atom symbols
X -> Cl and R/R# -> C) and canonicalized, reactions drop unresolved
compounds and die when a whole side vanishes, multi-product reactions are
split into mono-product children, and negative examples are generated by
applying the full template set to every unique product and removing
anything that is actually a known positive (the strict check).

Dataset rows are written as TSV: label, group_key, target, precursors,
weight. The precursors column joins molecules of one step with '.' and
steps with ';', so one-step and two-step datasets share the schema. All
randomness is seeded; identical inputs and seeds give byte-identical
files.
"""

from __future__ import annotations

import time
import urllib.error
import urllib.request
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .fingerprint import Fingerprinter, reaction_feature
from .molgraph import parse_smiles, canonicalize
from .pattern import ReactionTemplate, enumerate_precursors

__all__ = [
    "Unfixable",
    "OfflineMode",
    "CleanedCompound",
    "RawReaction",
    "ReactionRecord",
    "MonoProductReaction",
    "PathwayChain",
    "CorpusStats",
    "clean_compound",
    "build_compound_table",
    "clean_reactions",
    "split_mono_product",
    "flag_disjoint_products",
    "augment_negatives",
    "extract_chains",
    "make_pathway_pairs",
    "split_train_test",
    "subsample_negatives",
    "CompoundFetcher",
    "read_reactions_tsv",
    "read_compounds_tsv",
    "read_pathways_tsv",
    "write_examples_tsv",
    "read_examples_tsv",
    "features_for",
]

POSITIVE = "positive"
NEGATIVE = "negative"


class Unfixable(ValueError):
    """A compound string that still fails to parse after the repairs."""


class OfflineMode(RuntimeError):
    """Network fetch attempted without a configured endpoint."""


@dataclass(frozen=True)
class CleanedCompound:
    key: str  # canonical SMILES
    replacements: tuple[tuple[int, str, str], ...]  # (offset, old, new)


@dataclass(frozen=True)
class RawReaction:
    reaction_id: str
    ec_numbers: tuple[str, ...]
    reactants: tuple[str, ...]  # compound ids or raw SMILES
    products: tuple[str, ...]


@dataclass(frozen=True)
class ReactionRecord:
    reaction_id: str
    ec_numbers: tuple[str, ...]
    reactant_keys: tuple[str, ...]  # sorted canonical SMILES multiset
    product_keys: tuple[str, ...]
    provenance: tuple[str, ...] = ("assembled",)


@dataclass(frozen=True)
class MonoProductReaction:
    parent_id: str
    ec_numbers: tuple[str, ...]
    reactant_keys: tuple[str, ...]
    product_key: str
    label: str = POSITIVE
    provenance: tuple[str, ...] = ("assembled",)
    weight: float = 1.0

    @property
    def group_key(self) -> str:
        return self.product_key


@dataclass(frozen=True)
class PathwayChain:
    """A 2-step backward chain: target <- step1 precursors <- step2."""

    chain_id: str
    target_key: str
    step1_keys: tuple[str, ...]
    step2_keys: tuple[str, ...]
    link_key: str  # the step-1 precursor that step 2 produces
    label: str = POSITIVE
    group_key: str = ""
    weight: float = 1.0


@dataclass
class CorpusStats:
    reactions_in: int = 0
    reactions_dropped: int = 0
    reactions_degraded: int = 0  # kept, but lost compounds on one side
    duplicates_merged: int = 0
    compounds_unresolved: int = 0
    generic_fixed: int = 0
    mono_reactions: int = 0
    unique_products: int = 0
    disjoint_product_reactions: int = 0  # product shares no bit with reactants
    negatives_generated: int = 0
    negatives_per_positive_histogram: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["negatives_per_positive_histogram"] = {
            str(k): v
            for k, v in sorted(self.negatives_per_positive_histogram.items())
        }
        return out


# ---------------------------------------------------------------------------
# Compound cleaning


def clean_compound(raw_smiles: str) -> CleanedCompound:
    """Repair generic atom symbols and canonicalize.

    'X' (any halogen placeholder) becomes Cl and the alkyl placeholders
    'R#'/'R' become C, recorded per occurrence. Raises Unfixable when the
    repaired string still does not parse.
    """
    replacements = []
    out = []
    i = 0
    while i < len(raw_smiles):
        ch = raw_smiles[i]
        if ch == "R":
            if raw_smiles[i + 1 : i + 2] == "#":
                replacements.append((i, "R#", "C"))
                i += 2
            else:
                replacements.append((i, "R", "C"))
                i += 1
            out.append("C")
        elif ch == "X":
            replacements.append((i, "X", "Cl"))
            out.append("Cl")
            i += 1
        else:
            out.append(ch)
            i += 1
    fixed = "".join(out)
    try:
        key = canonicalize(parse_smiles(fixed))
    except ValueError as exc:
        raise Unfixable(f"cannot repair compound {raw_smiles!r}: {exc}") from exc
    return CleanedCompound(key, tuple(replacements))


def build_compound_table(
    entries: list[tuple[str, str]], stats: CorpusStats | None = None
) -> dict[str, str | None]:
    """compound_id -> canonical key, or None for UNRESOLVED/unfixable."""
    table: dict[str, str | None] = {}
    for compound_id, raw in entries:
        if raw == "UNRESOLVED":
            table[compound_id] = None
            if stats:
                stats.compounds_unresolved += 1
            continue
        try:
            cleaned = clean_compound(raw)
        except Unfixable:
            table[compound_id] = None
            if stats:
                stats.compounds_unresolved += 1
            continue
        table[compound_id] = cleaned.key
        if stats and cleaned.replacements:
            stats.generic_fixed += 1
    return table


def _resolve(token: str, table: dict[str, str | None]) -> str | None:
    if token in table:
        return table[token]
    try:
        return clean_compound(token).key
    except Unfixable:
        return None


def clean_reactions(
    records: list[RawReaction], compound_table: dict[str, str | None]
) -> tuple[list[ReactionRecord], CorpusStats]:
    """Drop unresolved compounds per side, drop reactions losing a whole
    side, merge canonical duplicates (union of EC numbers)."""
    stats = CorpusStats(reactions_in=len(records))
    cleaned: list[ReactionRecord] = []
    for raw in records:
        sides = []
        lost_any = False
        for tokens in (raw.reactants, raw.products):
            keys = []
            for token in tokens:
                key = _resolve(token, compound_table)
                if key is None:
                    stats.compounds_unresolved += 1
                    lost_any = True
                else:
                    keys.append(key)
            sides.append(tuple(sorted(keys)))
        if not sides[0] or not sides[1]:
            stats.reactions_dropped += 1
            continue
        if lost_any:
            stats.reactions_degraded += 1
        cleaned.append(
            ReactionRecord(raw.reaction_id, raw.ec_numbers, sides[0], sides[1])
        )
    merged: dict[tuple, ReactionRecord] = {}
    for rec in cleaned:
        key = (rec.reactant_keys, rec.product_keys)
        if key in merged:
            stats.duplicates_merged += 1
            prev = merged[key]
            ecs = tuple(sorted(set(prev.ec_numbers) | set(rec.ec_numbers)))
            merged[key] = ReactionRecord(
                prev.reaction_id, ecs, prev.reactant_keys, prev.product_keys
            )
        else:
            merged[key] = rec
    return list(merged.values()), stats


def split_mono_product(
    records: list[ReactionRecord], stats: CorpusStats | None = None
) -> list[MonoProductReaction]:
    """A record with k products becomes k children sharing the reactants."""
    children = []
    for rec in records:
        for product in rec.product_keys:
            children.append(
                MonoProductReaction(
                    parent_id=rec.reaction_id,
                    ec_numbers=rec.ec_numbers,
                    reactant_keys=rec.reactant_keys,
                    product_key=product,
                    label=POSITIVE,
                    provenance=rec.provenance,
                )
            )
    if stats is not None:
        stats.mono_reactions = len(children)
        stats.unique_products = len({c.product_key for c in children})
    return children


# ---------------------------------------------------------------------------
# Augmentation


def _augment_product(args):
    product_key, templates = args
    target = parse_smiles(product_key)
    return enumerate_precursors(target, templates)


def flag_disjoint_products(
    monos: list[MonoProductReaction],
    stats: CorpusStats,
    fingerprinter: Fingerprinter | None = None,
) -> list[str]:
    """Count mono reactions whose product shares no fingerprint bit with
    any reactant. Such rows (typically small by-products promoted to the
    product slot) are kept but reported, since a structure-based ranker
    has nothing to connect them with."""
    fp = fingerprinter or Fingerprinter()
    flagged = []
    for mono in monos:
        product_bits = fp.of_key(mono.product_key).bits
        reactant_bits = fp.of_keys(mono.reactant_keys).bits
        if product_bits & reactant_bits == 0:
            flagged.append(mono.parent_id)
    stats.disjoint_product_reactions = len(flagged)
    return flagged


def augment_negatives(
    positives: list[MonoProductReaction],
    templates: list[ReactionTemplate],
    max_workers: int = 1,
    stats: CorpusStats | None = None,
) -> list[MonoProductReaction]:
    """Template-generated hypothetical precursors, minus every true one.

    Works per unique product; the strict check removes any precursor
    multiset equal to the reactants of ANY positive with that product.
    Output order is (product key, candidate order) regardless of the
    worker count.
    """
    by_product: dict[str, list[MonoProductReaction]] = {}
    for pos in positives:
        by_product.setdefault(pos.product_key, []).append(pos)
    products = sorted(by_product)
    tasks = [(p, templates) for p in products]
    if max_workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            candidate_lists = list(pool.map(_augment_product, tasks))
    else:
        candidate_lists = [_augment_product(t) for t in tasks]

    negatives: list[MonoProductReaction] = []
    histogram: Counter = Counter()
    for product_key, candidates in zip(products, candidate_lists):
        true_sets = {pos.reactant_keys for pos in by_product[product_key]}
        count = 0
        for cand in candidates:
            if cand.precursor_keys in true_sets:
                continue
            count += 1
            negatives.append(
                MonoProductReaction(
                    parent_id=f"aug:{product_key}:{count}",
                    ec_numbers=cand.provenance[0][1],
                    reactant_keys=cand.precursor_keys,
                    product_key=product_key,
                    label=NEGATIVE,
                    provenance=("augmented", cand.provenance[0][0]),
                )
            )
        histogram[count] += 1
    if stats is not None:
        stats.negatives_generated = len(negatives)
        stats.negatives_per_positive_histogram = dict(histogram)
    return negatives


def extract_chains(
    pathways: list[tuple[str, tuple[str, ...]]],
    mono_reactions: list[MonoProductReaction],
) -> list[PathwayChain]:
    """Positive 2-step chains from consecutive reactions of each pathway.

    For a consecutive pair (rA, rB), rB's product must appear among rA's
    reactants; the chain is (rA product, rA reactants, rB reactants).
    """
    by_id: dict[str, list[MonoProductReaction]] = {}
    for mono in mono_reactions:
        by_id.setdefault(mono.parent_id, []).append(mono)
    chains = []
    for pathway_id, reaction_ids in pathways:
        for i in range(len(reaction_ids) - 1):
            for ra in by_id.get(reaction_ids[i], []):
                for rb in by_id.get(reaction_ids[i + 1], []):
                    if rb.product_key not in ra.reactant_keys:
                        continue
                    chain_id = f"{pathway_id}:{i + 1}"
                    chains.append(
                        PathwayChain(
                            chain_id=chain_id,
                            target_key=ra.product_key,
                            step1_keys=ra.reactant_keys,
                            step2_keys=rb.reactant_keys,
                            link_key=rb.product_key,
                            label=POSITIVE,
                            group_key=chain_id,
                        )
                    )
    return chains


def make_pathway_pairs(
    chains: list[PathwayChain],
    negatives_by_product: dict[str, list[tuple[str, ...]]],
) -> list[PathwayChain]:
    """Negative chains by substituting augmented precursors at either step.

    The strict check removes any generated chain identical to a positive;
    each negative inherits the positive chain's group key.
    """
    positive_triples = {
        (c.target_key, c.step1_keys, c.step2_keys)
        for c in chains
        if c.label == POSITIVE
    }
    out: list[PathwayChain] = []
    for chain in chains:
        if chain.label != POSITIVE:
            continue
        counter = 0
        for alt in negatives_by_product.get(chain.target_key, []):
            triple = (chain.target_key, alt, chain.step2_keys)
            if triple in positive_triples:
                continue
            counter += 1
            out.append(
                PathwayChain(
                    chain_id=f"{chain.chain_id}:neg{counter}",
                    target_key=chain.target_key,
                    step1_keys=alt,
                    step2_keys=chain.step2_keys,
                    link_key=chain.link_key,
                    label=NEGATIVE,
                    group_key=chain.group_key,
                )
            )
        for alt in negatives_by_product.get(chain.link_key, []):
            triple = (chain.target_key, chain.step1_keys, alt)
            if triple in positive_triples:
                continue
            counter += 1
            out.append(
                PathwayChain(
                    chain_id=f"{chain.chain_id}:neg{counter}",
                    target_key=chain.target_key,
                    step1_keys=chain.step1_keys,
                    step2_keys=alt,
                    link_key=chain.link_key,
                    label=NEGATIVE,
                    group_key=chain.group_key,
                )
            )
    return out


# ---------------------------------------------------------------------------
# Splits and subsampling


def split_train_test(examples: list, fraction: float, seed: int):
    """Group-aware split: a positive and all its negatives stay together.

    Groups are keyed by ``group_key``; the seeded shuffle picks
    round(fraction * n_groups) test groups. Returns (train, test) with the
    original example order preserved inside each side.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    import random

    groups = sorted({ex.group_key for ex in examples})
    rng = random.Random(seed)
    rng.shuffle(groups)
    n_test = int(round(fraction * len(groups)))
    test_groups = set(groups[:n_test])
    train = [ex for ex in examples if ex.group_key not in test_groups]
    test = [ex for ex in examples if ex.group_key in test_groups]
    return train, test


def subsample_negatives(examples: list, fraction: float, seed: int) -> list:
    """Keep all positives and a seeded shuffled prefix of the negatives."""
    import random

    positives = [ex for ex in examples if ex.label == POSITIVE]
    negatives = [ex for ex in examples if ex.label == NEGATIVE]
    rng = random.Random(seed)
    rng.shuffle(negatives)
    keep = negatives[: int(round(fraction * len(negatives)))]
    keep_ids = {id(ex) for ex in keep}
    return [
        ex
        for ex in examples
        if ex.label == POSITIVE or id(ex) in keep_ids
    ]


# ---------------------------------------------------------------------------
# Fetching


class CompoundFetcher:
    """Sequential compound fetcher with a minimum inter-request delay.

    ``fetch_fn(compound_id) -> str`` may be injected for tests; the default
    performs an HTTP GET of ``endpoint`` with the id appended. Failures are
    recorded as unresolved (None), never raised, except OfflineMode when no
    endpoint is configured.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        rate_limit: float = 2.0,
        fetch_fn=None,
        clock=time.monotonic,
        sleeper=time.sleep,
        timeout: float = 10.0,
        retries: int = 1,
    ):
        self.endpoint = endpoint
        self.rate_limit = rate_limit
        self._fetch_fn = fetch_fn
        self._clock = clock
        self._sleeper = sleeper
        self.timeout = timeout
        self.retries = retries
        self._last_request: float | None = None

    def _default_fetch(self, compound_id: str) -> str:
        url = f"{self.endpoint.rstrip('/')}/{compound_id}"
        with urllib.request.urlopen(url, timeout=self.timeout) as response:
            return response.read().decode("utf-8").strip()

    def _throttle(self):
        if self._last_request is not None:
            elapsed = self._clock() - self._last_request
            if elapsed < self.rate_limit:
                self._sleeper(self.rate_limit - elapsed)
        self._last_request = self._clock()

    def fetch(self, compound_id: str) -> str | None:
        """Raw compound record, or None when unresolved."""
        if self._fetch_fn is None and self.endpoint is None:
            raise OfflineMode(
                "no endpoint configured; compound fetching is offline by default"
            )
        fetch_fn = self._fetch_fn or self._default_fetch
        for attempt in range(self.retries + 1):
            self._throttle()
            try:
                return fetch_fn(compound_id)
            except LookupError:
                return None  # not found: unresolved, no retry
            except urllib.error.HTTPError as exc:
                if exc.code == 404:
                    return None
            except (urllib.error.URLError, TimeoutError, OSError):
                continue  # timeout-ish: retry then give up
        return None

    def fetch_table(self, compound_ids: list[str]) -> dict[str, str | None]:
        return {cid: self.fetch(cid) for cid in compound_ids}


# ---------------------------------------------------------------------------
# File formats


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line and not line.startswith("#"):
                yield line


def read_reactions_tsv(path) -> list[RawReaction]:
    """reaction_id, ec_numbers (';'-sep), reactant_smiles ('.'-sep),
    product_smiles ('.'-sep)."""
    out = []
    for line in _data_lines(path):
        reaction_id, ecs, reactants, products = line.split("\t")
        out.append(
            RawReaction(
                reaction_id,
                tuple(e for e in ecs.split(";") if e),
                tuple(r for r in reactants.split(".") if r),
                tuple(p for p in products.split(".") if p),
            )
        )
    return out


def read_compounds_tsv(path) -> list[tuple[str, str]]:
    """compound_id, raw_smiles | UNRESOLVED."""
    out = []
    for line in _data_lines(path):
        compound_id, raw = line.split("\t")
        out.append((compound_id, raw))
    return out


def read_pathways_tsv(path) -> list[tuple[str, tuple[str, ...]]]:
    """pathway_id, ordered ';'-separated reaction ids."""
    out = []
    for line in _data_lines(path):
        pathway_id, ids = line.split("\t")
        out.append((pathway_id, tuple(i for i in ids.split(";") if i)))
    return out


def _steps_of(example) -> list[tuple[str, ...]]:
    if isinstance(example, PathwayChain):
        return [example.step1_keys, example.step2_keys]
    return [example.reactant_keys]


def write_examples_tsv(path, examples: list) -> None:
    """label, group_key, target, precursors (steps ';'-sep, molecules
    '.'-sep), weight."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# label\tgroup_key\ttarget\tprecursors\tweight\n")
        for ex in examples:
            target = (
                ex.target_key if isinstance(ex, PathwayChain) else ex.product_key
            )
            precursors = ";".join(".".join(step) for step in _steps_of(ex))
            fh.write(
                f"{ex.label}\t{ex.group_key}\t{target}\t{precursors}"
                f"\t{ex.weight:g}\n"
            )


@dataclass(frozen=True)
class DatasetRow:
    label: str
    group_key: str
    target_key: str
    steps: tuple[tuple[str, ...], ...]
    weight: float

    @property
    def is_positive(self) -> bool:
        return self.label == POSITIVE


def read_examples_tsv(path) -> list[DatasetRow]:
    rows = []
    for line in _data_lines(path):
        label, group_key, target, precursors, weight = line.split("\t")
        steps = tuple(
            tuple(m for m in step.split(".") if m)
            for step in precursors.split(";")
        )
        rows.append(DatasetRow(label, group_key, target, steps, float(weight)))
    return rows


def features_for(
    rows: list[DatasetRow], fingerprinter: Fingerprinter | None = None
):
    """Feature matrix, labels and weights for one- or two-step rows."""
    fp = fingerprinter or Fingerprinter()
    if not rows:
        raise ValueError("no rows to featurize")
    steps = {len(r.steps) for r in rows}
    if len(steps) != 1:
        raise ValueError("mixed one-step and two-step rows in one dataset")
    features = np.stack(
        [
            reaction_feature(
                fp.of_key(row.target_key),
                [fp.of_keys(step) for step in row.steps],
            ).to_array()
            for row in rows
        ]
    )
    labels = np.array(
        [1.0 if row.is_positive else 0.0 for row in rows], dtype=np.float32
    )
    weights = np.array([row.weight for row in rows], dtype=np.float32)
    return features, labels, weights
