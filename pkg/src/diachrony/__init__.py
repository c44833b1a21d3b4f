"""Corpus processing and statistics for studying word-order change.

The package reads annotated treebanks, tags and queries them, codes
infinitival clauses into a factor table and fits the frequentist,
multivariate and Bayesian models used to describe the change.
"""
__version__ = "0.1.0"
