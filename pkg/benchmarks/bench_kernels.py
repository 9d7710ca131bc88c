"""Benchmark the compiled kernel backend against the pure numpy one.

Times each shared kernel on a document-shaped synthetic workload and
prints a per-op table with the speedup.  Also cross-checks that both
backends agree to near machine precision on the benchmarked inputs, so a
speedup never hides a drift in results.

Usage::

    python3 benchmarks/bench_kernels.py [--tokens N] [--repeats R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from corefx import kernels


def make_workload(n_tokens: int, seed: int = 0) -> dict:
    """Spans, offsets, and antecedent tables shaped like a pruned document."""
    rng = np.random.default_rng(seed)
    span_limit = 30
    starts_l, ends_l = [], []
    for s in range(n_tokens):
        top = min(n_tokens - 1, s + span_limit - 1)
        for e in range(s, top + 1):
            starts_l.append(s)
            ends_l.append(e)
    starts = np.array(starts_l, dtype=np.int64)
    ends = np.array(ends_l, dtype=np.int64)
    lengths = ends - starts + 1
    offsets = np.zeros(starts.shape[0] + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])

    d = 32
    x = rng.standard_normal((n_tokens, d))
    u = rng.standard_normal(n_tokens)
    m = starts.shape[0]
    g = rng.standard_normal((m, 3 * d + 8))

    # antecedent tables: row i has i + 1 entries (dummy plus earlier spans)
    kept = min(m, max(1, int(0.18 * n_tokens)))
    row_widths = np.arange(1, kept + 1, dtype=np.int64)
    tbl_offsets = np.zeros(kept + 1, dtype=np.int64)
    np.cumsum(row_widths, out=tbl_offsets[1:])
    flat = int(tbl_offsets[-1])
    table_scores = rng.standard_normal(flat)
    gold = np.zeros(flat, dtype=np.uint8)
    for i in range(kept):  # dummy entry is always a valid gold fallback
        gold[int(tbl_offsets[i])] = 1

    n_pairs = kept * (kept - 1) // 2
    left = np.repeat(np.arange(kept, dtype=np.int64), np.arange(kept, dtype=np.int64))[:n_pairs]
    right = np.concatenate([np.arange(i, dtype=np.int64) for i in range(kept)])[:n_pairs]
    gk = rng.standard_normal((kept, 3 * d + 8))
    dist = rng.standard_normal((n_pairs, 8))
    dout = rng.standard_normal((n_pairs, 3 * gk.shape[1] + 8))

    scatter_out = np.zeros((64, 8))
    scatter_idx = rng.integers(0, 64, size=n_pairs).astype(np.int64)
    scatter_rows = rng.standard_normal((n_pairs, 8))

    xhat = rng.standard_normal((m, d))
    return dict(
        x=x, u=u, starts=starts, ends=ends, offsets=offsets, dxhat=xhat, g=g,
        table_scores=table_scores, tbl_offsets=tbl_offsets, gold=gold,
        left=left, right=right, gk=gk, dist=dist, dout=dout,
        scatter_out=scatter_out, scatter_idx=scatter_idx, scatter_rows=scatter_rows,
    )


def bench_calls(w: dict) -> list[tuple[str, callable]]:
    def attention_fwd(mod):
        return mod.attention_forward(w["x"], w["u"], w["starts"], w["ends"], w["offsets"])

    def attention_bwd(mod):
        _, alpha = mod.attention_forward(w["x"], w["u"], w["starts"], w["ends"], w["offsets"])
        return mod.attention_backward(
            w["x"], w["starts"], w["ends"], w["offsets"], alpha, w["dxhat"]
        )

    def seg_softmax(mod):
        return mod.segment_softmax(w["table_scores"], w["tbl_offsets"])

    def marginal(mod):
        return mod.marginal_log_loss(w["table_scores"], w["tbl_offsets"], w["gold"])

    def pairs_fwd(mod):
        return mod.pair_features(w["gk"], w["left"], w["right"], w["dist"])

    def pairs_bwd(mod):
        return mod.pair_features_backward(w["dout"], w["gk"], w["left"], w["right"])

    def scatter(mod):
        out = w["scatter_out"].copy()
        mod.scatter_add_rows(out, w["scatter_idx"], w["scatter_rows"])
        return out

    return [
        ("attention_forward", attention_fwd),
        ("attention_backward", attention_bwd),
        ("segment_softmax", seg_softmax),
        ("marginal_log_loss", marginal),
        ("pair_features", pairs_fwd),
        ("pair_features_backward", pairs_bwd),
        ("scatter_add_rows", scatter),
    ]


def _flatten(result) -> list[np.ndarray]:
    if isinstance(result, tuple):
        parts = []
        for item in result:
            parts.extend(_flatten(item))
        return parts
    if isinstance(result, float):
        return [np.array([result])]
    return [np.asarray(result)]


def time_call(fn, mod, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(mod)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tokens", type=int, default=300, help="document length in tokens")
    ap.add_argument("--repeats", type=int, default=7, help="timing repeats (best is kept)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "c" not in backends:
        print("compiled backend not available; build the extension first "
              "(pip install -e . without COREFX_PURE)")
        return 0

    py = kernels.get("py")
    c = kernels.get("c")
    w = make_workload(args.tokens, args.seed)

    print(f"workload: {args.tokens} tokens, {w['starts'].shape[0]} spans, "
          f"{w['left'].shape[0]} pairs; best of {args.repeats}")
    print(f"{'kernel':<24}{'py (ms)':>10}{'c (ms)':>10}{'speedup':>9}")
    for name, fn in bench_calls(w):
        for a, b in zip(_flatten(fn(py)), _flatten(fn(c))):
            worst = float(np.max(np.abs(a - b))) if a.size else 0.0
            if worst > 1e-9:
                raise SystemExit(f"{name}: backends disagree by {worst:.3e}")
        t_py = time_call(fn, py, args.repeats) * 1e3
        t_c = time_call(fn, c, args.repeats) * 1e3
        print(f"{name:<24}{t_py:>10.3f}{t_c:>10.3f}{t_py / t_c:>9.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
