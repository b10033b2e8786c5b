"""Pairwise music plagiarism screening from NMF embeddings and DTW distances."""

__version__ = "0.1.0"
