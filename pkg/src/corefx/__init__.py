"""Multilingual coreference toolkit: span scoring, transfer training,
ensembles, reference metrics, and a Wikipedia distant-supervision builder."""

__version__ = "0.1.0"
