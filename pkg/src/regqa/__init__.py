"""Hybrid sparse/dense retrieval with rank fusion, second-stage rescoring,
and reference-free answer scoring for regulatory Q&A corpora."""

__version__ = "0.1.0"
