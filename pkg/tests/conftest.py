import random
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from retrobio.molgraph import Bond, MolecularGraph

settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")


@pytest.fixture(scope="session")
def synth_corpus():
    """(alcohols, templates, positives, chains) for the full toy family."""
    from synthdata import build_corpus

    return build_corpus(max_length=9)


@pytest.fixture(scope="session")
def synth_negatives(synth_corpus):
    """Augmented negatives plus the populated corpus stats."""
    from retrobio import dataset as ds

    _, templates, positives, _ = synth_corpus
    stats = ds.CorpusStats()
    negatives = ds.augment_negatives(positives, templates, stats=stats)
    return negatives, stats


def permute_graph(mol: MolecularGraph, rng: random.Random) -> MolecularGraph:
    """Random atom/bond reordering of the same labeled graph."""
    order = list(range(len(mol.atoms)))
    rng.shuffle(order)
    inverse = {old: new for new, old in enumerate(order)}
    atoms = tuple(mol.atoms[old] for old in order)
    bonds = [Bond(inverse[b.a], inverse[b.b], b.order) for b in mol.bonds]
    rng.shuffle(bonds)
    return MolecularGraph(atoms, tuple(bonds))
