"""Stepwise summarization toolkit.

A self-contained stack for summarizing growing document streams: a tiny
autodiff engine, a stream-aware encoder/decoder with a coherence
discriminator trained adversarially, a corpus construction pipeline, and
an evaluation harness with extractive baselines.
"""

__version__ = "0.1.0"
