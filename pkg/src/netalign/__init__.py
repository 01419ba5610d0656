"""
Network alignment by joint optimal transport and embedding learning.

Where: desk-scale CLI / library (numpy + scipy, CPU only).
What:  RWR features -> shared residual MLP -> learnable FGW costs -> proximal
       point transport plan, alternated under one objective.
Why:   The transport plan doubles as the sampling strategy for embedding
       learning, so neither side needs hand-crafted costs or negatives.
"""

__all__ = [
    "checkpoint",
    "cli",
    "config",
    "encoder",
    "errors",
    "evaluation",
    "graph",
    "log",
    "ot",
    "rwr",
    "trainer",
]
