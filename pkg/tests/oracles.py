"""Straight-line numpy re-evaluations used as independent references.

Nothing here touches the autodiff tape; every formula is written out
per example and per position with plain loops.
"""

import math

import numpy as np


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_unroll(x, W, b):
    """x: (T, d_in) for one example; returns (T, d) hidden states."""
    d = b.shape[0] // 4
    h = np.zeros(d)
    c = np.zeros(d)
    out = []
    for t in range(x.shape[0]):
        z = np.concatenate([x[t], h]) @ W + b
        i, f, o = sigmoid(z[:d]), sigmoid(z[d:2 * d]), sigmoid(z[2 * d:3 * d])
        g = np.tanh(z[3 * d:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out)


def layer_norm_vec(v, gain, bias, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return np.array([(x - mu) / math.sqrt(var + eps) for x in v]) * gain + bias


def softmax_list(scores):
    m = max(scores)
    e = [math.exp(s - m) for s in scores]
    tot = sum(e)
    return [x / tot for x in e]


def arch2_vec(h_tilde, preds, WQ, WK, WV, heads=1):
    """Scaled dot-product integration at one position: returns (a, alpha[heads][n])."""
    dk = WQ.shape[1]
    dh = dk // heads
    dvh = WV.shape[1] // heads
    q = h_tilde @ WQ
    keys = [h @ WK for h in preds]
    vals = [h @ WV for h in preds]
    a = np.zeros(WV.shape[1])
    alphas = []
    for k in range(heads):
        e = [float(q[k * dh:(k + 1) * dh] @ kk[k * dh:(k + 1) * dh]) / math.sqrt(dh) for kk in keys]
        al = softmax_list(e)
        alphas.append(al)
        for w, v in zip(al, vals):
            a[k * dvh:(k + 1) * dvh] += w * v[k * dvh:(k + 1) * dvh]
    return a, alphas


def arch1_vec(h_tilde, preds, projs, scorers, task=None):
    """Per-item integration as the package reads it: per-candidate head scores, heads averaged.

    scorers: (n_candidates, H, d/H).
    """
    d = len(h_tilde)
    cands = [np.asarray(h_tilde)]
    if task is not None:
        cands.append(np.asarray(task))
    cands += [h @ W for h, W in zip(preds, projs)]
    n, H, dh = scorers.shape
    assert n == len(cands)
    a = np.zeros(d)
    for k in range(H):
        s = [float(c[k * dh:(k + 1) * dh] @ scorers[ci, k]) for ci, c in enumerate(cands)]
        al = softmax_list(s)
        for w, c in zip(al, cands):
            a += w * c / H
    return a


def model_forward(model, x):
    """Full re-evaluation of an aila1/aila2/plain lstm model, one example at a time."""
    cfg = model.config
    p = {k: v.data for k, v in model.params.items()}
    preds = []
    for n in range(x.shape[0]):
        inp = x[n]
        hs = []
        for j in range(1, cfg.num_layers + 1):
            ht = lstm_unroll(inp, p[f"layer{j}.base.weight"], p[f"layer{j}.base.bias"])
            out = np.zeros_like(ht)
            for t in range(ht.shape[0]):
                prev = [h[t] for h in hs]
                if cfg.variant == "aila2" and prev:
                    a, _ = arch2_vec(ht[t], prev, p[f"layer{j}.integrator.w_query"],
                                     p[f"layer{j}.integrator.w_key"], p[f"layer{j}.integrator.w_value"],
                                     cfg.heads)
                elif cfg.variant == "aila1" and prev:
                    projs = [p[f"layer{j}.integrator.proj{i}"] for i in range(1, j)]
                    a = arch1_vec(ht[t], prev, projs, p[f"layer{j}.integrator.scorers"])
                else:
                    a = np.zeros(ht.shape[1])
                out[t] = layer_norm_vec(np.maximum(ht[t] + a, 0.0), p[f"layer{j}.norm.gain"],
                                        p[f"layer{j}.norm.bias"])
            hs.append(out)
            inp = out
        preds.append(hs[-1][-1] @ p["head.weight"] + p["head.bias"])
    return np.array(preds)
