"""Straight-line numpy references, written without touching vidprompt's tensor code."""

import math

import numpy as np


def ln(x, w=None, b=None, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for idx in np.ndindex(*x.shape[:-1]):
        row = x[idx]
        mu = sum(row) / len(row)
        var = sum((r - mu) ** 2 for r in row) / len(row)
        out[idx] = [(r - mu) / math.sqrt(var + eps) for r in row]
    if w is not None:
        out = out * w + b
    return out


def gelu(x):
    return np.vectorize(lambda v: 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))))(x)


def attention(x, wqkv, bqkv, wo, bo, heads, mask=None):
    """Single sequence (S, D), loops over heads and query rows."""
    s, d = x.shape
    dh = d // heads
    qkv = x @ wqkv + bqkv
    q, k, v = qkv[:, :d], qkv[:, d : 2 * d], qkv[:, 2 * d :]
    out = np.zeros((s, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(s):
            logits = np.array([q[i, sl] @ k[j, sl] / math.sqrt(dh) for j in range(s)])
            if mask is not None:
                logits = logits + mask[i]
            w = np.exp(logits - logits.max())
            w /= w.sum()
            out[i, sl] = sum(w[j] * v[j, sl] for j in range(s))
    return out @ wo + bo


def block_params(store, prefix):
    g = lambda k: np.asarray(store[f"{prefix}.{k}"], dtype=np.float64)  # noqa: E731
    return g


def mha(x, g, heads, mask=None):
    return attention(x, g("attn.qkv.weight"), g("attn.qkv.bias"), g("attn.out.weight"), g("attn.out.bias"), heads, mask)


def adapter(x, g):
    return x + gelu(x @ g("adapter.down.weight") + g("adapter.down.bias")) @ g("adapter.up.weight") + g("adapter.up.bias")


def mlp(x, g):
    return gelu(x @ g("mlp.fc.weight") + g("mlp.fc.bias")) @ g("mlp.proj.weight") + g("mlp.proj.bias")


def visual_block(z_prev, p_hat, store, prefix, heads):
    """[z; p] -> u = x + MHA(LN x); z~ = first N+1 rows; z^ = Adapter(z~); z = z^ + MLP(LN z^)."""
    g = block_params(store, prefix)
    x = np.vstack([z_prev, p_hat[None, :]]) if p_hat is not None else z_prev
    u = x + mha(ln(x, g("ln1.weight"), g("ln1.bias")), g, heads)
    zt = u[: z_prev.shape[0]]
    zh = adapter(zt, g)
    return zh + mlp(ln(zh, g("ln2.weight"), g("ln2.bias")), g)


def text_encoder(tokens, store, layers, heads, ctx):
    """One token row -> joint embedding, causal attention, readout at the end marker (257)."""
    g0 = lambda k: np.asarray(store[k], dtype=np.float64)  # noqa: E731
    x = g0("text.token_embedding")[tokens] + g0("text.pos")
    mask = np.triu(np.full((ctx, ctx), -1e9), k=1)
    for l in range(layers):
        g = block_params(store, f"text.blocks.{l}")
        yt = x + mha(ln(x, g("ln1.weight"), g("ln1.bias")), g, heads, mask)
        yh = adapter(yt, g)
        x = yh + mlp(ln(yh, g("ln2.weight"), g("ln2.bias")), g)
    x = ln(x, g0("text.ln_final.weight"), g0("text.ln_final.bias"))
    eot = list(tokens).index(257)
    return x[eot] @ g0("text.proj")


def video_frames(video, store, config):
    """Full vision tower for one video (T, H, W, C) -> (T, D_e), prompts in every layer."""
    g0 = lambda k: np.asarray(store[k], dtype=np.float64)  # noqa: E731
    T = video.shape[0]
    P = config.patch
    zs = []
    for t in range(T):
        rows = []
        for gy in range(config.height // P):
            for gx in range(config.width // P):
                rows.append(video[t, gy * P : (gy + 1) * P, gx * P : (gx + 1) * P, :].reshape(-1))
        xp = np.array(rows) @ g0("visual.patch.weight") + g0("visual.patch.bias")
        zs.append(np.vstack([g0("visual.cls")[None, :], xp]) + g0("visual.pos"))
    bank = g0("tvp.prompts")
    for l in range(config.layers):
        g = block_params(store, f"visual.blocks.{l}")
        p_tilde = np.array([bank[l, t] + zs[t].mean(axis=0) for t in range(T)])
        p_hat = mha(ln(p_tilde, g("ln1.weight"), g("ln1.bias")), g, config.heads)
        zs = [visual_block(zs[t], p_hat[t], store, f"visual.blocks.{l}", config.heads) for t in range(T)]
    out = []
    for t in range(T):
        cls = ln(zs[t][0], g0("visual.ln_post.weight"), g0("visual.ln_post.bias"))
        out.append(cls @ g0("visual.proj"))
    return np.array(out)


def softmax_xent(logit_row, label):
    m = max(logit_row)
    lse = m + math.log(sum(math.exp(v - m) for v in logit_row))
    return lse - logit_row[label]


def central_fd(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g
