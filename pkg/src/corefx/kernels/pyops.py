"""Pure numpy implementations of the ragged kernels.

Signature contract (shared with the compiled backend):

- spans are parallel int64 arrays `starts`/`ends`, end inclusive,
  with `offsets[i]:offsets[i+1]` indexing span i's slice of any
  flat per-token buffer (offsets has length m+1, offsets[0] == 0);
- segment arrays describe ragged rows the same way and every row
  is non-empty;
- float buffers are float64, gold masks are uint8.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "py"


def attention_forward(
    x: np.ndarray,
    u: np.ndarray,
    starts: np.ndarray,
    ends: np.ndarray,
    offsets: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Head attention over each span.

    Returns (xhat [m, d], alpha [offsets[-1]]) where row i of xhat is the
    attention-weighted mean of x over tokens starts[i]..ends[i] and alpha
    holds the per-span softmax of u over those tokens.
    """
    m = starts.shape[0]
    d = x.shape[1]
    xhat = np.empty((m, d), dtype=np.float64)
    alpha = np.empty(int(offsets[-1]), dtype=np.float64)
    if m == 0:
        return xhat, alpha
    lengths = ends - starts + 1
    for ln in np.unique(lengths):
        rows = np.nonzero(lengths == ln)[0]
        idx = starts[rows][:, None] + np.arange(ln)[None, :]
        uw = u[idx]
        uw = uw - uw.max(axis=1, keepdims=True)
        ew = np.exp(uw)
        aw = ew / ew.sum(axis=1, keepdims=True)
        xhat[rows] = np.einsum("kl,kld->kd", aw, x[idx])
        pos = offsets[rows][:, None] + np.arange(ln)[None, :]
        alpha[pos.ravel()] = aw.ravel()
    return xhat, alpha


def attention_backward(
    x: np.ndarray,
    starts: np.ndarray,
    ends: np.ndarray,
    offsets: np.ndarray,
    alpha: np.ndarray,
    dxhat: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of attention_forward w.r.t. x and u.

    Spans overlap, so contributions accumulate per token.
    """
    n, d = x.shape
    dx = np.zeros((n, d), dtype=np.float64)
    du = np.zeros(n, dtype=np.float64)
    m = starts.shape[0]
    if m == 0:
        return dx, du
    lengths = ends - starts + 1
    for ln in np.unique(lengths):
        rows = np.nonzero(lengths == ln)[0]
        idx = starts[rows][:, None] + np.arange(ln)[None, :]
        pos = offsets[rows][:, None] + np.arange(ln)[None, :]
        aw = alpha[pos.ravel()].reshape(-1, ln)
        dxh = dxhat[rows]
        np.add.at(dx, idx.ravel(), (aw[:, :, None] * dxh[:, None, :]).reshape(-1, d))
        dalpha = np.einsum("kd,kld->kl", dxh, x[idx])
        inner = (aw * dalpha).sum(axis=1, keepdims=True)
        np.add.at(du, idx.ravel(), (aw * (dalpha - inner)).ravel())
    return dx, du


def segment_softmax(scores: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Softmax within each ragged row of `scores`."""
    if offsets.shape[0] <= 1:
        return np.empty(0, dtype=np.float64)
    seg = offsets[:-1]
    widths = np.diff(offsets)
    mx = np.maximum.reduceat(scores, seg)
    e = np.exp(scores - np.repeat(mx, widths))
    z = np.add.reduceat(e, seg)
    return e / np.repeat(z, widths)


def marginal_log_loss(
    scores: np.ndarray, offsets: np.ndarray, gold: np.ndarray
) -> tuple[float, np.ndarray]:
    """Sum over rows of -log of the gold-entry probability mass.

    Every row must contain at least one gold entry.  Returns the loss and
    its gradient w.r.t. the flat scores.
    """
    if offsets.shape[0] <= 1:
        return 0.0, np.zeros(0, dtype=np.float64)
    seg = offsets[:-1]
    widths = np.diff(offsets)
    mask = gold.astype(bool)

    mx = np.maximum.reduceat(scores, seg)
    e_all = np.exp(scores - np.repeat(mx, widths))
    z_all = np.add.reduceat(e_all, seg)
    p_all = e_all / np.repeat(z_all, widths)

    masked = np.where(mask, scores, -np.inf)
    mx_g = np.maximum.reduceat(masked, seg)
    e_g = np.where(mask, np.exp(masked - np.repeat(mx_g, widths)), 0.0)
    z_g = np.add.reduceat(e_g, seg)
    p_g = e_g / np.repeat(z_g, widths)

    loss = float(np.sum((np.log(z_all) + mx) - (np.log(z_g) + mx_g)))
    return loss, p_all - p_g


def pair_features(
    g: np.ndarray, left: np.ndarray, right: np.ndarray, dist: np.ndarray
) -> np.ndarray:
    """Assemble [g_i, g_j, g_i * g_j, dist_row] for each (i, j) pair."""
    p = left.shape[0]
    dg = g.shape[1]
    dd = dist.shape[1]
    out = np.empty((p, 3 * dg + dd), dtype=np.float64)
    gi = g[left]
    gj = g[right]
    out[:, :dg] = gi
    out[:, dg : 2 * dg] = gj
    out[:, 2 * dg : 3 * dg] = gi * gj
    out[:, 3 * dg :] = dist
    return out


def pair_features_backward(
    dout: np.ndarray, g: np.ndarray, left: np.ndarray, right: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of pair_features w.r.t. g and the distance rows."""
    dg_ = g.shape[1]
    dg = np.zeros_like(g)
    gi = g[left]
    gj = g[right]
    d_gi = dout[:, :dg_] + dout[:, 2 * dg_ : 3 * dg_] * gj
    d_gj = dout[:, dg_ : 2 * dg_] + dout[:, 2 * dg_ : 3 * dg_] * gi
    np.add.at(dg, left, d_gi)
    np.add.at(dg, right, d_gj)
    return dg, dout[:, 3 * dg_ :].copy()


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    """out[idx[k]] += rows[k], accumulating duplicates. In place."""
    np.add.at(out, idx, rows)
