"""Joint pretraining that aligns a text encoder with a knowledge-graph encoder.

The pipeline: a knowledge graph with capped 1-hop subgraph sampling, an
annotated corpus with a word-level vocabulary, text and graph encoders with
several node-representation pathways, masked-language-modeling plus
contrastive alignment objectives, a deterministic training loop with
checkpointing and LM-only export, and zero-shot entity-linking evaluation.
"""

__version__ = "0.1.0"
