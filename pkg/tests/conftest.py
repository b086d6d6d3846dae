import random

import pytest

from ragprobe.corpus import Document, PassageStore

WORDS = (
    "aspirin metformin insulin fever cough anemia biopsy lesion cardiac renal "
    "hepatic glucose sodium potassium platelet sepsis tumor benign chronic acute "
    "dosage therapy trial cohort plasma serum antibody antigen viral bacterial"
).split()


def random_text(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n_words))


def build_store(rng: random.Random, n_docs: int = 20, words_per_doc: int = 40) -> PassageStore:
    store = PassageStore()
    for i in range(n_docs):
        store.add_document(
            Document(
                doc_id=f"d{i:03d}",
                title=f"Study {i}",
                body=random_text(rng, words_per_doc),
                source="pubmed",
                prechunked=True,
            )
        )
    return store


@pytest.fixture
def small_store():
    return build_store(random.Random(7))
