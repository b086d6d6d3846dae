"""ragprobe: stage-decomposed RAG pipeline with fine-grained evaluation tooling."""

__version__ = "0.1.0"
