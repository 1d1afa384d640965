"""Decoder-only causal-attention character model with manual backprop.

Single-direction attention over a fixed context window: each position mixes
value vectors of itself and earlier positions, weighted by softmax of scaled
query-key dot products. Pre-norm residual blocks, a two-layer feed-forward,
and fixed sinusoidal position codes round out the stack. No key/value cache:
sampling recomputes the window every character.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from .errors import CheckpointError, ConfigError, ShapeError, SizeError
from .nn import adam_init, adam_step
from .sampling import draw_next, validate_temperature
from .seeding import derive_seed
from .vocab import NEWLINE_ID, VOCAB

LN_EPS = 1e-8


@dataclass
class GptConfig:
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    context: int = 256
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.d_model < 2 or self.d_model % 2:
            raise ConfigError(f"d_model must be even and >= 2, got {self.d_model}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(
                f"n_heads must divide d_model, got {self.n_heads} for {self.d_model}"
            )
        if self.n_layers < 1 or self.context < 2:
            raise ConfigError("n_layers must be >= 1 and context >= 2")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    """Fixed position table: interleaved sine/cosine at geometric wavelengths."""
    pos = np.arange(length, dtype=np.float64).reshape(-1, 1)
    idx = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, idx / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """Normalize the last axis to zero mean, unit variance, then shift/scale.

    Returns (y, cache) where the cache carries what the backward pass needs.
    """
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv)


def layer_norm_backward(dy: np.ndarray, gamma: np.ndarray, cache):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = np.sum(dy * xhat, axis=axes)
    dbeta = np.sum(dy, axis=axes)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def causal_mask(t: int) -> np.ndarray:
    """[t, t] additive mask: -inf strictly above the diagonal."""
    mask = np.zeros((t, t))
    mask[np.triu_indices(t, k=1)] = -np.inf
    return mask


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                         causal: bool = False):
    """softmax(q k^T / sqrt(d_k) [+ causal mask]) v over the last two axes.

    Accepts [t, d_k] matrices or any stack of them. Returns (output,
    attention weights); masked weights are exactly zero, so changing a
    future position cannot move an earlier output even at the bit level.
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(
            f"incompatible attention shapes q{q.shape} k{k.shape} v{v.shape}"
        )
    dk = q.shape[-1]
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(dk)
    if causal:
        if scores.shape[-1] != scores.shape[-2]:
            raise ShapeError(
                f"causal masking needs square scores, got {scores.shape[-2:]}"
            )
        scores = scores + causal_mask(scores.shape[-1])
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=-1, keepdims=True)
    return weights @ v, weights


@dataclass
class AttentionProjections:
    """Per-head query/key/value projections stacked as [heads, d_model, d_k],
    plus the output mix-down [heads * d_k, d_model]."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


def multi_head(x: np.ndarray, proj: AttentionProjections, causal: bool = False) -> np.ndarray:
    """Concatenated per-head attention, mixed down by the output projection."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    y, _ = _multi_head_cached(x, proj, causal)
    return y[0] if squeeze else y


def _multi_head_cached(x: np.ndarray, proj: AttentionProjections, causal: bool):
    if x.shape[-1] != proj.wq.shape[1]:
        raise ShapeError(
            f"input width {x.shape[-1]} != projection d_model {proj.wq.shape[1]}"
        )
    q = np.einsum("btd,hdk->bhtk", x, proj.wq)
    k = np.einsum("btd,hdk->bhtk", x, proj.wk)
    v = np.einsum("btd,hdk->bhtk", x, proj.wv)
    out, weights = scaled_dot_attention(q, k, v, causal=causal)
    b, h, t, dk = out.shape
    concat = out.transpose(0, 2, 1, 3).reshape(b, t, h * dk)
    y = concat @ proj.wo
    return y, (x, q, k, v, weights, concat)


def _multi_head_backward(dy: np.ndarray, proj: AttentionProjections, cache):
    x, q, k, v, weights, concat = cache
    b, t, _ = dy.shape
    h, _, dk_dim = proj.wq.shape
    dwo = np.einsum("btc,btd->cd", concat, dy)
    dconcat = dy @ proj.wo.T
    dout = dconcat.reshape(b, t, h, dk_dim).transpose(0, 2, 1, 3)

    dweights = dout @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(weights, -1, -2) @ dout
    inner = np.sum(dweights * weights, axis=-1, keepdims=True)
    dscores = weights * (dweights - inner) / np.sqrt(dk_dim)
    dq = dscores @ k
    dk = np.swapaxes(dscores, -1, -2) @ q

    dx = (
        np.einsum("bhtk,hdk->btd", dq, proj.wq)
        + np.einsum("bhtk,hdk->btd", dk, proj.wk)
        + np.einsum("bhtk,hdk->btd", dv, proj.wv)
    )
    dwq = np.einsum("btd,bhtk->hdk", x, dq)
    dwk = np.einsum("btd,bhtk->hdk", x, dk)
    dwv = np.einsum("btd,bhtk->hdk", x, dv)
    return dx, (dwq, dwk, dwv, dwo)


@dataclass
class Block:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    attn: AttentionProjections
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def params(self) -> list[np.ndarray]:
        return [self.ln1_g, self.ln1_b,
                self.attn.wq, self.attn.wk, self.attn.wv, self.attn.wo,
                self.ln2_g, self.ln2_b, self.w1, self.b1, self.w2, self.b2]


class TransformerLM:
    """Token embedding, pre-norm attention/feed-forward blocks, vocab head."""

    def __init__(self, tok_emb, blocks, lnf_g, lnf_b, w_out, b_out, context):
        self.tok_emb = tok_emb
        self.blocks = blocks
        self.lnf_g = lnf_g
        self.lnf_b = lnf_b
        self.w_out = w_out
        self.b_out = b_out
        self.context = context
        self.vocab_size = tok_emb.shape[0]
        self.d_model = tok_emb.shape[1]
        self.pos = sinusoidal_positions(context, self.d_model)

    @staticmethod
    def create(config: GptConfig, vocab_size: int = VOCAB.size) -> "TransformerLM":
        config.validate()
        rng = np.random.default_rng(config.seed)
        d = config.d_model
        dk = d // config.n_heads
        hidden = 4 * d

        def xavier(n_in, n_out, shape):
            return rng.uniform(-np.sqrt(6.0 / (n_in + n_out)),
                               np.sqrt(6.0 / (n_in + n_out)), size=shape)

        blocks = []
        for _ in range(config.n_layers):
            attn = AttentionProjections(
                wq=xavier(d, dk, (config.n_heads, d, dk)),
                wk=xavier(d, dk, (config.n_heads, d, dk)),
                wv=xavier(d, dk, (config.n_heads, d, dk)),
                wo=xavier(config.n_heads * dk, d, (config.n_heads * dk, d)),
            )
            blocks.append(Block(
                ln1_g=np.ones(d), ln1_b=np.zeros(d), attn=attn,
                ln2_g=np.ones(d), ln2_b=np.zeros(d),
                w1=xavier(d, hidden, (d, hidden)), b1=np.zeros(hidden),
                w2=xavier(hidden, d, (hidden, d)), b2=np.zeros(d),
            ))
        return TransformerLM(
            tok_emb=rng.normal(0.0, 0.02, size=(vocab_size, d)),
            blocks=blocks,
            lnf_g=np.ones(d), lnf_b=np.zeros(d),
            w_out=xavier(d, vocab_size, (d, vocab_size)),
            b_out=np.zeros(vocab_size),
            context=config.context,
        )

    def params(self) -> list[np.ndarray]:
        out = [self.tok_emb]
        for blk in self.blocks:
            out.extend(blk.params())
        out.extend([self.lnf_g, self.lnf_b, self.w_out, self.b_out])
        return out

    def hidden_states(self, ids: np.ndarray):
        """Run the blocks on [batch, t] ids; returns (normed hidden, cache)."""
        ids = np.asarray(ids, dtype=np.int64)
        b, t = ids.shape
        if t > self.context:
            raise SizeError(f"sequence of {t} exceeds context {self.context}")
        x = self.tok_emb[ids] + self.pos[:t]
        caches = []
        for blk in self.blocks:
            n1, ln1_cache = layer_norm(x, blk.ln1_g, blk.ln1_b)
            att, att_cache = _multi_head_cached(n1, blk.attn, causal=True)
            a = x + att
            n2, ln2_cache = layer_norm(a, blk.ln2_g, blk.ln2_b)
            z1 = n2 @ blk.w1 + blk.b1
            r = np.maximum(z1, 0.0)
            x = a + r @ blk.w2 + blk.b2
            caches.append((ln1_cache, att_cache, ln2_cache, n2, z1, r, a))
        nf, lnf_cache = layer_norm(x, self.lnf_g, self.lnf_b)
        return nf, (ids, caches, lnf_cache)

    def forward(self, ids: np.ndarray):
        """Logits [batch, t, vocab] plus the backward cache."""
        nf, cache = self.hidden_states(ids)
        return nf @ self.w_out + self.b_out, (nf, cache)

    def loss_and_grads(self, ids_in: np.ndarray, ids_target: np.ndarray):
        """Mean next-character cross-entropy and exact parameter gradients."""
        logits, (nf, (ids, caches, lnf_cache)) = self.forward(ids_in)
        b, t, v = logits.shape
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=-1, keepdims=True)
        rows = np.arange(b)[:, None], np.arange(t)[None, :]
        loss = float(-np.mean(np.log(probs[rows[0], rows[1], ids_target])))

        dlogits = probs
        dlogits[rows[0], rows[1], ids_target] -= 1.0
        dlogits /= b * t

        dw_out = np.einsum("btd,btv->dv", nf, dlogits)
        db_out = dlogits.sum(axis=(0, 1))
        dnf = dlogits @ self.w_out.T
        dx, dlnf_g, dlnf_b = layer_norm_backward(dnf, self.lnf_g, lnf_cache)

        block_grads: list[list[np.ndarray]] = []
        for blk, cache in zip(reversed(self.blocks), reversed(caches)):
            ln1_cache, att_cache, ln2_cache, n2, z1, r, a = cache
            # feed-forward branch
            dff = dx
            dr = dff @ blk.w2.T
            dw2 = np.einsum("bth,btd->hd", r, dff)
            db2 = dff.sum(axis=(0, 1))
            dz1 = dr * (z1 > 0.0)
            dw1 = np.einsum("btd,bth->dh", n2, dz1)
            db1 = dz1.sum(axis=(0, 1))
            dn2 = dz1 @ blk.w1.T
            dln2, dln2_g, dln2_b = layer_norm_backward(dn2, blk.ln2_g, ln2_cache)
            da = dx + dln2
            # attention branch
            datt = da
            dn1, (dwq, dwk, dwv, dwo) = _multi_head_backward(datt, blk.attn, att_cache)
            dln1, dln1_g, dln1_b = layer_norm_backward(dn1, blk.ln1_g, ln1_cache)
            dx = da + dln1
            block_grads.append([dln1_g, dln1_b, dwq, dwk, dwv, dwo,
                                dln2_g, dln2_b, dw1, db1, dw2, db2])

        dtok = np.zeros_like(self.tok_emb)
        np.add.at(dtok, ids, dx)

        grads = [dtok]
        for g in reversed(block_grads):
            grads.extend(g)
        grads.extend([dlnf_g, dlnf_b, dw_out, db_out])
        return loss, grads

    def to_tensors(self) -> list[tuple[str, np.ndarray]]:
        h = self.blocks[0].attn.wq.shape[0]
        tensors = [
            ckpt.meta("kind", 2.0),
            ckpt.meta("vocab", self.vocab_size),
            ckpt.meta("d_model", self.d_model),
            ckpt.meta("heads", h),
            ckpt.meta("layers", len(self.blocks)),
            ckpt.meta("context", self.context),
            ("tok_emb", self.tok_emb),
        ]
        names = ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo",
                 "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")
        for i, blk in enumerate(self.blocks):
            for name, arr in zip(names, blk.params()):
                tensors.append((f"block{i}/{name}", arr))
        tensors.extend([
            ("final/ln_g", self.lnf_g), ("final/ln_b", self.lnf_b),
            ("final/w_out", self.w_out), ("final/b_out", self.b_out),
        ])
        return tensors

    @staticmethod
    def from_tensors(tensors: list[tuple[str, np.ndarray]]) -> "TransformerLM":
        d = dict(tensors)
        n_layers = int(ckpt.meta_value(d, "layers"))
        blocks = []
        for i in range(n_layers):
            try:
                attn = AttentionProjections(
                    wq=d[f"block{i}/wq"], wk=d[f"block{i}/wk"],
                    wv=d[f"block{i}/wv"], wo=d[f"block{i}/wo"],
                )
                blocks.append(Block(
                    ln1_g=d[f"block{i}/ln1_g"], ln1_b=d[f"block{i}/ln1_b"],
                    attn=attn,
                    ln2_g=d[f"block{i}/ln2_g"], ln2_b=d[f"block{i}/ln2_b"],
                    w1=d[f"block{i}/w1"], b1=d[f"block{i}/b1"],
                    w2=d[f"block{i}/w2"], b2=d[f"block{i}/b2"],
                ))
            except KeyError as exc:
                raise CheckpointError(f"missing tensor {exc} for block {i}") from exc
        try:
            return TransformerLM(
                tok_emb=d["tok_emb"], blocks=blocks,
                lnf_g=d["final/ln_g"], lnf_b=d["final/ln_b"],
                w_out=d["final/w_out"], b_out=d["final/b_out"],
                context=int(ckpt.meta_value(d, "context")),
            )
        except KeyError as exc:
            raise CheckpointError(f"missing tensor {exc}") from exc


def _window_offsets(ids: np.ndarray, context: int) -> np.ndarray:
    """Training windows start at line breaks so position codes line up with
    row structure; offset 0 is always a candidate."""
    limit = len(ids) - (context + 1)
    starts = np.flatnonzero(ids[: limit + 1] == NEWLINE_ID)
    return np.unique(np.concatenate([np.zeros(1, dtype=np.int64), starts]))


def train_transformer(text: str, config: GptConfig):
    """Train on a character corpus; returns (model, per-epoch mean loss)."""
    config.validate()
    ids = VOCAB.encode(text)
    if len(ids) < config.context + 2:
        raise SizeError(
            f"corpus of {len(ids)} characters cannot fill context {config.context}"
        )
    model = TransformerLM.create(config)
    params = model.params()
    state = adam_init(params, lr=config.lr)
    rng = np.random.default_rng(derive_seed(config.seed, "windows"))

    offsets = _window_offsets(ids, config.context)
    per_epoch = min(len(offsets), -(-len(ids) // (config.context + 1)))

    history: list[float] = []
    best_loss = np.inf
    best_params = None
    for _epoch in range(config.epochs):
        chosen = rng.permutation(offsets)[:per_epoch]
        total, count = 0.0, 0
        for i in range(0, len(chosen), config.batch_size):
            batch = chosen[i : i + config.batch_size]
            xin = np.stack([ids[o : o + config.context] for o in batch])
            tgt = np.stack([ids[o + 1 : o + config.context + 1] for o in batch])
            loss, grads = model.loss_and_grads(xin, tgt)
            adam_step(params, grads, state)
            total += loss * xin.size
            count += xin.size
        epoch_loss = total / count
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = [p.copy() for p in params]
    if best_params is not None:
        for p, bp in zip(params, best_params):
            p[...] = bp
    return model, history


def _last_position_logits(model: TransformerLM, batch: np.ndarray,
                          lengths: np.ndarray) -> np.ndarray:
    """Vocabulary logits for each row's final real position.

    Every step still recomputes its window from scratch; this only skips
    work the final character cannot see. All layers but the last run in
    full (their outputs feed later positions), while the last layer
    projects queries, the feed-forward, and the output head for the final
    position alone. Keys and values still cover the whole window, and
    positions at or past a row's length are masked out of the softmax, so
    the result matches the full forward pass bit for bit.
    """
    ar = np.arange(batch.shape[0])
    t = batch.shape[1]
    last = lengths - 1
    x = model.tok_emb[batch] + model.pos[:t]
    for blk in model.blocks[:-1]:
        n1, _ = layer_norm(x, blk.ln1_g, blk.ln1_b)
        att, _ = _multi_head_cached(n1, blk.attn, causal=True)
        a = x + att
        n2, _ = layer_norm(a, blk.ln2_g, blk.ln2_b)
        x = a + np.maximum(n2 @ blk.w1 + blk.b1, 0.0) @ blk.w2 + blk.b2

    blk = model.blocks[-1]
    n1, _ = layer_norm(x, blk.ln1_g, blk.ln1_b)
    dk = blk.attn.wq.shape[-1]
    q = np.einsum("bd,hdk->bhk", n1[ar, last], blk.attn.wq)
    k = np.einsum("btd,hdk->bhtk", n1, blk.attn.wk)
    v = np.einsum("btd,hdk->bhtk", n1, blk.attn.wv)
    scores = np.einsum("bhk,bhtk->bht", q, k) / np.sqrt(dk)
    beyond = np.arange(t)[None, None, :] > last[:, None, None]
    scores = np.where(beyond, -np.inf, scores)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=-1, keepdims=True)
    ctx = np.einsum("bht,bhtk->bhk", weights, v)
    att_last = ctx.reshape(len(ar), -1) @ blk.attn.wo
    a_last = x[ar, last] + att_last
    n2, _ = layer_norm(a_last, blk.ln2_g, blk.ln2_b)
    x_last = a_last + np.maximum(n2 @ blk.w1 + blk.b1, 0.0) @ blk.w2 + blk.b2
    nf, _ = layer_norm(x_last, model.lnf_g, model.lnf_b)
    return nf @ model.w_out + model.b_out


def sample_chars(model: TransformerLM, n: int, temperature: float = 1.0,
                 seed: int = 0) -> str:
    """Generate n characters starting from a newline seed character."""
    return sample_blocks(model, [seed], n, temperature)[0]


def sample_blocks(model: TransformerLM, seeds: list[int], block_chars: int,
                  temperature: float = 1.0) -> list[str]:
    """Generate one block per seed; every step recomputes the live window.

    The window restarts at each emitted line break (position codes then
    match training, where windows begin at line breaks) and otherwise
    slides once it would exceed the model context.
    """
    validate_temperature(temperature)
    if block_chars < 0:
        raise ConfigError(f"block_chars must be non-negative, got {block_chars}")
    B = len(seeds)
    if B == 0 or block_chars == 0:
        return ["" for _ in seeds]
    rngs = [np.random.default_rng(s) for s in seeds]
    windows: list[list[int]] = [[NEWLINE_ID] for _ in range(B)]
    out = np.empty((B, block_chars), dtype=np.int64)
    for t in range(block_chars):
        lengths = np.array([len(w) for w in windows])
        t_max = int(lengths.max())
        batch = np.zeros((B, t_max), dtype=np.int64)
        for bi, w in enumerate(windows):
            batch[bi, : len(w)] = w
        logits = _last_position_logits(model, batch, lengths)
        nxt = draw_next(logits, temperature, rngs)
        out[:, t] = nxt
        for bi, token in enumerate(nxt):
            if token == NEWLINE_ID:
                windows[bi] = [NEWLINE_ID]
            else:
                windows[bi].append(int(token))
                if len(windows[bi]) > model.context:
                    windows[bi] = windows[bi][-model.context :]
    return [VOCAB.decode(row) for row in out]
