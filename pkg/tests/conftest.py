"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from corefx.encoder import EncoderConfig
from corefx.params import ModelConfig, init_params
from corefx.synth import SynthConfig, generate_synthetic


def small_model_config(**overrides) -> ModelConfig:
    """A model small enough for finite differences and fast training."""
    encoder = EncoderConfig(
        embed_dim=overrides.pop("embed_dim", 6),
        context_window=overrides.pop("context_window", 1),
        vocab_hash_buckets=overrides.pop("vocab_hash_buckets", 48),
        vectors_file=overrides.pop("vectors_file", None),
    )
    defaults = dict(width_dim=3, dist_dim=3, hidden_sizes=(8,), span_limit=4)
    defaults.update(overrides)
    return ModelConfig(encoder=encoder, **defaults)


def small_params(seed: int = 0, **overrides):
    return init_params(small_model_config(**overrides), seed=seed)


def tiny_corpus(num_docs: int = 4, seed: int = 0, **overrides):
    cfg = SynthConfig(
        num_docs=num_docs,
        doc_len=overrides.pop("doc_len", 20),
        num_entities=overrides.pop("num_entities", 2),
        mentions_per_entity=overrides.pop("mentions_per_entity", 2),
        vocab_size=overrides.pop("vocab_size", 6),
        name_pool_size=overrides.pop("name_pool_size", 3),
        **overrides,
    )
    return generate_synthetic(cfg, seed)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def fd_gradient_check(doc, params, strategy, seed=0, samples_per_block=4,
                      eps=1e-5, rel_tol=1e-4, abs_tol=1e-8, counters=None):
    """Compare analytic gradients with central differences on a few
    entries of every parameter block.  Returns the worst relative error
    seen; raises AssertionError with context on mismatch.

    The loss is piecewise smooth (rectifier kinks, pruning-set flips), and
    a central difference only estimates the derivative when no kink lies
    inside the step.  Each sample is therefore cross-checked against a
    half-step estimate: for a smooth stretch the two agree to O(eps^2),
    while a kink makes them disagree at the scale of the slope jump.
    Inconsistent samples are skipped, not compared.  `counters`, if given,
    is a dict tallying {block name: [checked, skipped]} so callers can
    verify every block still received genuine comparisons.
    """
    import numpy as np

    from corefx.training import document_loss

    def loss_at(flat, j, value):
        orig = flat[j]
        flat[j] = value
        total = document_loss(doc, params, strategy, want_grads=False).total
        flat[j] = orig
        return total

    analytic = document_loss(doc, params, strategy, want_grads=True).grads
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in params.blocks():
        flat = arr.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        tally = None if counters is None else counters.setdefault(name, [0, 0])
        picks = rng.choice(flat.size, size=min(samples_per_block, flat.size),
                           replace=False)
        for j in picks:
            orig = flat[j]
            numeric = (loss_at(flat, j, orig + eps)
                       - loss_at(flat, j, orig - eps)) / (2 * eps)
            half = (loss_at(flat, j, orig + eps / 2)
                    - loss_at(flat, j, orig - eps / 2)) / eps
            a = grad_flat[j]
            scale = max(abs(a), abs(numeric))
            if abs(numeric - half) > 0.1 * rel_tol * max(scale, 1e-3):
                if tally is not None:
                    tally[1] += 1
                continue  # kink inside the step: the estimate is meaningless
            if tally is not None:
                tally[0] += 1
            if scale > 1e-6:
                rel = abs(a - numeric) / scale
                worst = max(worst, rel)
                assert rel < rel_tol, (
                    f"block {name}[{j}]: analytic {a!r} vs numeric {numeric!r}"
                )
            else:
                assert abs(a - numeric) < abs_tol, (
                    f"block {name}[{j}]: analytic {a!r} vs numeric {numeric!r}"
                )
    return worst
