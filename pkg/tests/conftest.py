import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rhmlab import GrammarParams, generate_rules


@pytest.fixture(scope="session")
def rs_small():
    """(L=2, s=2, v=4, m=2): 32 strings, the workhorse oracle instance."""
    return generate_rules(GrammarParams(depth=2, branching=2, vocab_size=4,
                                        n_synonyms=2, seed=7))


@pytest.fixture(scope="session")
def rs_deep():
    """(L=3, s=2, v=3, m=2): 384 strings, eight leaves."""
    return generate_rules(GrammarParams(depth=3, branching=2, vocab_size=3,
                                        n_synonyms=2, seed=11))


@pytest.fixture(scope="session")
def rs_medium():
    """(L=2, s=2, v=16, m=4): the desk-experiment instance (P2 = 1365)."""
    return generate_rules(GrammarParams(depth=2, branching=2, vocab_size=16,
                                        n_synonyms=4, seed=42))
