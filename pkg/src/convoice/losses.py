"""The three training objectives: CTC, GE2E, and L2, each with gradients.

CTC runs the standard forward-backward recursion in log space (linear-space
products underflow for long frames). ``ctc_brute_force`` enumerates every
frame labeling and exists purely as an independent oracle for the recursion.

GE2E is the softmax variant: similarities are ``w * cos(e_ji, c_k) + b``
against full centroids, with a leave-one-out centroid for the own-speaker
column. The loss per embedding is ``-S_own + logsumexp_k S_k``.
"""

from __future__ import annotations

import itertools

import numpy as np

from .kernels import ShapeError

__all__ = [
    "CtcInfeasibleError",
    "SizeError",
    "InputError",
    "collapse",
    "ctc_loss",
    "ctc_brute_force",
    "ge2e_loss",
    "l2_loss",
]

NEG_INF = -np.inf


class CtcInfeasibleError(ValueError):
    """Target cannot be emitted in the available frames (infinite loss)."""


class SizeError(ValueError):
    """Brute-force enumeration bounds exceeded."""


class InputError(ValueError):
    """Loss input violates a batch invariant."""


def collapse(path, blank=0):
    """CTC path collapse: merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return tuple(t for t in out if t != blank)


def _validate_target(target, vocab, blank):
    target = tuple(int(t) for t in target)
    for t in target:
        if t == blank:
            raise InputError(f"target contains the blank symbol {blank}")
        if not (0 <= t < vocab):
            raise InputError(f"target token {t} outside vocab of size {vocab}")
    return target


def _min_frames(target):
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(logits, target, blank=0):
    """Negative log-likelihood over all alignments, plus grad w.r.t. logits.

    logits: (T, V) unnormalized scores; log-softmax is applied internally.
    Raises CtcInfeasibleError when no alignment of the target fits in T frames.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (T, V), got shape {logits.shape}")
    t_frames, vocab = logits.shape
    target = _validate_target(target, vocab, blank)
    if _min_frames(target) > t_frames:
        raise CtcInfeasibleError(
            f"target needs at least {_min_frames(target)} frames, got {t_frames}"
        )

    ext = [blank]
    for tok in target:
        ext.extend((tok, blank))
    s_len = len(ext)
    ext = np.array(ext)

    logp = logits - _logsumexp(logits, axis=1)[:, None]
    emit = logp[:, ext]  # (T, S)

    # transitions into s: from s, s-1 always; from s-2 unless ext[s] is blank
    # or repeats ext[s-2]
    skip_ok = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        skip_ok[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((t_frames, s_len), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_frames):
        stay = alpha[t - 1]
        prev1 = np.full(s_len, NEG_INF)
        prev1[1:] = alpha[t - 1, :-1]
        prev2 = np.full(s_len, NEG_INF)
        if s_len > 2:
            prev2[2:] = alpha[t - 1, :-2]
        prev2 = np.where(skip_ok, prev2, NEG_INF)
        alpha[t] = emit[t] + _lse3(stay, prev1, prev2)

    tail = [alpha[-1, -1]]
    if s_len > 1:
        tail.append(alpha[-1, -2])
    log_total = _lse(np.array(tail))
    if not np.isfinite(log_total):
        raise CtcInfeasibleError("no feasible alignment (zero total probability)")
    loss = -log_total

    beta = np.full((t_frames, s_len), NEG_INF)
    beta[-1, -1] = emit[-1, -1]
    if s_len > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(t_frames - 2, -1, -1):
        stay = beta[t + 1]
        next1 = np.full(s_len, NEG_INF)
        next1[:-1] = beta[t + 1, 1:]
        next2 = np.full(s_len, NEG_INF)
        if s_len > 2:
            skip_from = np.zeros(s_len, dtype=bool)
            skip_from[: s_len - 2] = skip_ok[2:]
            next2[: s_len - 2] = beta[t + 1, 2:]
            next2 = np.where(skip_from, next2, NEG_INF)
        beta[t] = emit[t] + _lse3(stay, next1, next2)

    # grad[t, v] = softmax[t, v] - (mass through symbol v at t) / total
    gamma = alpha + beta  # includes the emission at t twice
    grad = np.exp(logp)
    occ = np.full((t_frames, vocab), NEG_INF)
    for s in range(s_len):
        v = ext[s]
        occ[:, v] = np.logaddexp(occ[:, v], gamma[:, s])
    with np.errstate(invalid="ignore"):
        grad -= np.where(np.isfinite(occ), np.exp(occ - logp - log_total), 0.0)
    return float(loss), grad


def ctc_brute_force(probs, target, blank=0):
    """Oracle CTC loss by exhaustive path enumeration; O(V^T), T<=8, V<=5."""
    probs = np.asarray(probs, dtype=np.float64)
    t_frames, vocab = probs.shape
    if t_frames > 8 or vocab > 5:
        raise SizeError(f"enumeration bound exceeded: T={t_frames} (max 8), V={vocab} (max 5)")
    target = _validate_target(target, vocab, blank)
    total = 0.0
    for path in itertools.product(range(vocab), repeat=t_frames):
        if collapse(path, blank) != target:
            continue
        p = 1.0
        for t, v in enumerate(path):
            p *= probs[t, v]
        total += p
    if total <= 0.0:
        raise CtcInfeasibleError("no path collapses to the target")
    return float(-np.log(total))


def _lse(v):
    m = np.max(v)
    if not np.isfinite(m):
        return NEG_INF
    return m + np.log(np.sum(np.exp(v - m)))


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.isfinite(m)
    out = np.full_like(a, NEG_INF)
    if np.any(safe):
        ms = m[safe]
        out[safe] = ms + np.log(
            np.exp(a[safe] - ms) + np.exp(b[safe] - ms) + np.exp(c[safe] - ms)
        )
    return out


# ---------------------------------------------------------------------------
# GE2E
# ---------------------------------------------------------------------------

def ge2e_loss(embeddings, w, b, validate=True):
    """Softmax-variant GE2E loss over (N_speakers, M_utterances, D) embeddings.

    Returns (loss, (d_embeddings, dw, db)). Similarity uses true cosine, so
    gradients are exact even when inputs are only approximately unit-norm.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 3:
        raise InputError(f"embeddings must be (N, M, D), got shape {e.shape}")
    n, m, d = e.shape
    if n < 2 or m < 2:
        raise InputError(f"GE2E needs N >= 2 speakers and M >= 2 utterances, got {n}x{m}")
    norms = np.linalg.norm(e, axis=2)
    if validate and np.abs(norms - 1.0).max() > 1e-5:
        raise InputError("embeddings must be unit-norm (within 1e-5)")

    sums = e.sum(axis=1)  # (N, D)
    cent_full = sums / m
    loss = 0.0
    d_e = np.zeros_like(e)
    dw = 0.0
    db = 0.0
    for j in range(n):
        for i in range(m):
            a = e[j, i]
            cos = np.empty(n)
            cents = np.empty((n, d))
            for k in range(n):
                c = (sums[j] - a) / (m - 1) if k == j else cent_full[k]
                cents[k] = c
                cos[k] = a @ c / (np.linalg.norm(a) * np.linalg.norm(c))
            s = w * cos + b
            smax = s.max()
            z = np.exp(s - smax)
            p = z / z.sum()
            loss += -s[j] + smax + np.log(z.sum())

            ds = p.copy()
            ds[j] -= 1.0  # d loss / d S_k
            dw += float(ds @ cos)
            db += float(ds.sum())
            na = np.linalg.norm(a)
            for k in range(n):
                g = w * ds[k]
                if g == 0.0:
                    continue
                c = cents[k]
                nc = np.linalg.norm(c)
                dcos_da = c / (na * nc) - cos[k] * a / (na * na)
                dcos_dc = a / (na * nc) - cos[k] * c / (nc * nc)
                d_e[j, i] += g * dcos_da
                if k == j:
                    # leave-one-out centroid spreads over the other utterances
                    for mm in range(m):
                        if mm != i:
                            d_e[j, mm] += g * dcos_dc / (m - 1)
                else:
                    d_e[k] += g * dcos_dc / m
    return float(loss), (d_e, float(dw), float(db))


def l2_loss(pred, target):
    """Mean squared elementwise difference and its gradient w.r.t. pred."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad
