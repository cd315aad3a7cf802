"""Straight-line scalar re-implementation of the composition networks.

Pure python loops and ``math`` only; no numpy arithmetic beyond reading
parameter values element by element. Used as the independent oracle for
the vectorized graph implementation, so it must stay free of any code
shared with the package.
"""

import math


def mat_vec(w, x):
    """w is (fan_in, fan_out) nested lists; returns w^T x as a list."""
    fan_in = len(w)
    fan_out = len(w[0])
    out = []
    for j in range(fan_out):
        s = 0.0
        for i in range(fan_in):
            s += w[i][j] * x[i]
        out.append(s)
    return out


def mlp2(x, w1, b1, w2, b2):
    """Two fully connected layers, ReLU after the first only."""
    hid = [max(0.0, v + b) for v, b in zip(mat_vec(w1, x), b1)]
    return [v + b for v, b in zip(mat_vec(w2, x=hid), b2)]


def complex_rotate(theta, emb, conj=False):
    """Rotate interleaved complex emb (len 2k) by angles theta (len k)."""
    out = []
    for i, t in enumerate(theta):
        c = math.cos(t)
        s = -math.sin(t) if conj else math.sin(t)
        re, im = emb[2 * i], emb[2 * i + 1]
        out.append(c * re - s * im)
        out.append(c * im + s * re)
    return out


def conv_head(phi, z, q, p, filters, length, d):
    """concat -> fc relu -> fc relu -> 1-d conv (k=3, pad 1) -> max pool."""
    x = list(phi) + list(z) + list(q)
    h1 = [max(0.0, v + b) for v, b in zip(mat_vec(p["conv.fc1.w"], x),
                                          p["conv.fc1.b"])]
    h2 = [max(0.0, v + b) for v, b in zip(mat_vec(p["conv.fc2.w"], h1),
                                          p["conv.fc2.b"])]
    # rows of h2 are channels: channel f, position l at index f*length + l
    chan = [[h2[f * length + l] for l in range(length)] for f in range(filters)]
    conv = []
    for f in range(filters):
        row = []
        for l in range(length):
            s = p["conv.bias"][f]
            for c in range(filters):
                for t in range(3):
                    pos = l + t - 1
                    if 0 <= pos < length:
                        s += p["conv.kernel"][f][c][t] * chan[c][pos]
            row.append(s)
        conv.append(row)
    out_len = d // filters
    pooled = []
    for f in range(filters):
        for i in range(out_len):
            lo = i * length // out_len
            hi = (i + 1) * length // out_len
            pooled.append(max(conv[f][lo:hi]))
    return pooled


def compose_main(z, q, p, k, d, filters, length, conjugate=False,
                 image_feats=None):
    """The full rotation composition for one sample.

    ``image_feats`` defaults to z; pass the target features together with
    ``conjugate=True`` for the reverse path.
    """
    x = z if image_feats is None else image_feats
    theta = mlp2(q, p["angle.fc1.w"], p["angle.fc1.b"],
                 p["angle.fc2.w"], p["angle.fc2.b"])
    emb = mlp2(x, p["embed.fc1.w"], p["embed.fc1.b"],
               p["embed.fc2.w"], p["embed.fc2.b"])
    phi = complex_rotate(theta, emb, conj=conjugate)
    proj = mlp2(phi, p["project.fc1.w"], p["project.fc1.b"],
                p["project.fc2.w"], p["project.fc2.b"])
    out = [p["mix.a"] * v for v in proj]
    if "conv.fc1.w" in p:
        head = conv_head(phi, x, q, p, filters, length, d)
        out = [o + p["mix.b"] * v for o, v in zip(out, head)]
    return out


def decode_main(composed, p):
    z_hat = mlp2(composed, p["dec_img.fc1.w"], p["dec_img.fc1.b"],
                 p["dec_img.fc2.w"], p["dec_img.fc2.b"])
    q_hat = mlp2(composed, p["dec_txt.fc1.w"], p["dec_txt.fc1.b"],
                 p["dec_txt.fc2.w"], p["dec_txt.fc2.b"])
    return z_hat, q_hat


def tirg_main(z, q, p):
    cat = list(z) + list(q)
    gate = mlp2(cat, p["gate.fc1.w"], p["gate.fc1.b"],
                p["gate.fc2.w"], p["gate.fc2.b"])
    res = mlp2(cat, p["res.fc1.w"], p["res.fc1.b"],
               p["res.fc2.w"], p["res.fc2.b"])
    out = []
    for i in range(len(z)):
        sig = 1.0 / (1.0 + math.exp(-gate[i]))
        out.append(p["mix.wg"] * z[i] * sig + p["mix.wr"] * res[i])
    return out


def concat_main(z, q, p):
    return mlp2(list(z) + list(q), p["cat.fc1.w"], p["cat.fc1.b"],
                p["cat.fc2.w"], p["cat.fc2.b"])


def params_to_lists(params):
    """Convert a name->Tensor dict to nested python lists / floats."""
    out = {}
    for name, t in params.items():
        arr = t.data
        out[name] = arr.tolist() if arr.ndim else float(arr)
    return out
