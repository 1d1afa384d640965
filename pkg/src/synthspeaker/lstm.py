"""Character-level stacked LSTM language model, trained by truncated BPTT.

The cell follows the classic gate equations: forget, input, candidate, and
output gates each read the concatenation [h_prev, x], the cell state blends
the old state with the candidate, and the hidden state is the gated tanh of
the cell state. All gradients are derived by hand and checked against finite
differences in the tests.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from .errors import CheckpointError, ConfigError, SizeError
from .nn import adam_init, adam_step
from .sampling import draw_next, validate_temperature
from .seeding import derive_seed
from .vocab import NEWLINE_ID, VOCAB


@dataclass
class LstmConfig:
    units: int = 128
    layers: int = 1
    epochs: int = 100
    seq_len: int = 128
    lr: float = 1e-3
    batch_streams: int = 32
    dropout: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.units < 1 or self.layers < 1:
            raise ConfigError(f"units/layers must be positive, got {self.units}/{self.layers}")
        if self.epochs < 1 or self.seq_len < 1 or self.batch_streams < 1:
            raise ConfigError("epochs, seq_len and batch_streams must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class LstmCell:
    """One recurrent layer; weight matrices are [hidden + input, hidden]."""

    W_f: np.ndarray
    b_f: np.ndarray
    W_i: np.ndarray
    b_i: np.ndarray
    W_c: np.ndarray
    b_c: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W_f.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.W_f, self.b_f, self.W_i, self.b_i,
                self.W_c, self.b_c, self.W_o, self.b_o]


def _init_cell(n_in: int, hidden: int, rng: np.random.Generator) -> LstmCell:
    def mat():
        bound = np.sqrt(6.0 / (n_in + 2 * hidden))
        return rng.uniform(-bound, bound, size=(hidden + n_in, hidden))

    return LstmCell(
        W_f=mat(), b_f=np.zeros(hidden),
        W_i=mat(), b_i=np.zeros(hidden),
        W_c=mat(), b_c=np.zeros(hidden),
        W_o=mat(), b_o=np.zeros(hidden),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def lstm_step(cell: LstmCell, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """One public cell step on [batch, input] -> (h, c)."""
    h, c, _ = _step_cached(cell, x, h_prev, c_prev)
    return h, c


def _step_cached(cell: LstmCell, x, h_prev, c_prev):
    cat = np.concatenate([h_prev, x], axis=1)
    f = _sigmoid(cat @ cell.W_f + cell.b_f)
    i = _sigmoid(cat @ cell.W_i + cell.b_i)
    g = np.tanh(cat @ cell.W_c + cell.b_c)
    o = _sigmoid(cat @ cell.W_o + cell.b_o)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (cat, f, i, g, o, c_prev, tc)


def _step_backward(cell: LstmCell, cache, dh, dc_in, acc):
    """Backprop one step; accumulates weight grads into acc (same order as params)."""
    cat, f, i, g, o, c_prev, tc = cache
    do = dh * tc
    dzo = do * o * (1.0 - o)
    dc = dh * o * (1.0 - tc * tc) + dc_in
    df = dc * c_prev
    dzf = df * f * (1.0 - f)
    di = dc * g
    dzi = di * i * (1.0 - i)
    dg = dc * i
    dzc = dg * (1.0 - g * g)

    acc[0] += cat.T @ dzf
    acc[1] += dzf.sum(axis=0)
    acc[2] += cat.T @ dzi
    acc[3] += dzi.sum(axis=0)
    acc[4] += cat.T @ dzc
    acc[5] += dzc.sum(axis=0)
    acc[6] += cat.T @ dzo
    acc[7] += dzo.sum(axis=0)

    dcat = dzf @ cell.W_f.T + dzi @ cell.W_i.T + dzc @ cell.W_c.T + dzo @ cell.W_o.T
    hidden = cell.hidden
    return dcat[:, :hidden], dcat[:, hidden:], dc * f


class LstmStack:
    """Stacked cells plus a linear vocabulary head.

    Dropout is applied between stacked layers during training only, with
    inverted scaling so evaluation needs no correction.
    """

    def __init__(self, cells: list[LstmCell], W_out: np.ndarray, b_out: np.ndarray,
                 dropout: float = 0.2):
        self.cells = cells
        self.W_out = W_out
        self.b_out = b_out
        self.dropout = dropout
        self.vocab_size = W_out.shape[1]

    @staticmethod
    def create(config: LstmConfig, vocab_size: int = VOCAB.size) -> "LstmStack":
        config.validate()
        rng = np.random.default_rng(config.seed)
        cells = []
        n_in = vocab_size
        for _ in range(config.layers):
            cells.append(_init_cell(n_in, config.units, rng))
            n_in = config.units
        bound = np.sqrt(6.0 / (config.units + vocab_size))
        W_out = rng.uniform(-bound, bound, size=(config.units, vocab_size))
        return LstmStack(cells, W_out, np.zeros(vocab_size), dropout=config.dropout)

    def params(self) -> list[np.ndarray]:
        out = []
        for cell in self.cells:
            out.extend(cell.params())
        out.extend([self.W_out, self.b_out])
        return out

    def zero_state(self, batch: int):
        h = [np.zeros((batch, c.hidden)) for c in self.cells]
        c = [np.zeros((batch, cc.hidden)) for cc in self.cells]
        return h, c

    def step(self, ids: np.ndarray, h: list, c: list) -> np.ndarray:
        """Advance one character (evaluation mode); returns [batch, vocab] logits."""
        inp = np.eye(self.vocab_size)[ids]
        for l, cell in enumerate(self.cells):
            h[l], c[l] = lstm_step(cell, inp, h[l], c[l])
            inp = h[l]
        return inp @ self.W_out + self.b_out

    def to_tensors(self) -> list[tuple[str, np.ndarray]]:
        tensors = [
            ckpt.meta("kind", 1.0),
            ckpt.meta("vocab", self.vocab_size),
            ckpt.meta("layers", len(self.cells)),
            ckpt.meta("units", self.cells[0].hidden),
            ckpt.meta("dropout", self.dropout),
        ]
        for l, cell in enumerate(self.cells):
            for name, arr in zip(
                ("W_f", "b_f", "W_i", "b_i", "W_c", "b_c", "W_o", "b_o"), cell.params()
            ):
                tensors.append((f"cell{l}/{name}", arr))
        tensors.append(("head/W", self.W_out))
        tensors.append(("head/b", self.b_out))
        return tensors

    @staticmethod
    def from_tensors(tensors: list[tuple[str, np.ndarray]]) -> "LstmStack":
        d = dict(tensors)
        n_layers = int(ckpt.meta_value(d, "layers"))
        cells = []
        for l in range(n_layers):
            try:
                cells.append(LstmCell(*[d[f"cell{l}/{n}"] for n in
                                        ("W_f", "b_f", "W_i", "b_i",
                                         "W_c", "b_c", "W_o", "b_o")]))
            except KeyError as exc:
                raise CheckpointError(f"missing tensor {exc} for cell {l}") from exc
        if "head/W" not in d or "head/b" not in d:
            raise CheckpointError("missing head tensors")
        return LstmStack(cells, d["head/W"], d["head/b"],
                         dropout=ckpt.meta_value(d, "dropout"))


def _window_pass(stack: LstmStack, ids_in, ids_target, h, c, drop_rng):
    """Forward + backward over one BPTT window; returns (loss_sum, grads, h, c).

    h and c come back carried past the window boundary (gradients truncate
    there). drop_rng of None means evaluation mode.
    """
    B, T = ids_in.shape
    L = len(stack.cells)
    V = stack.vocab_size
    eye = np.eye(V)
    keep = 1.0 - stack.dropout
    caches = [[None] * T for _ in range(L)]
    masks = [[None] * T for _ in range(L - 1)]
    tops = np.empty((B, T, stack.cells[-1].hidden))

    for t in range(T):
        inp = eye[ids_in[:, t]]
        for l, cell in enumerate(stack.cells):
            h[l], c[l], caches[l][t] = _step_cached(cell, inp, h[l], c[l])
            inp = h[l]
            if l < L - 1 and drop_rng is not None and stack.dropout > 0:
                mask = (drop_rng.random(inp.shape) >= stack.dropout) / keep
                masks[l][t] = mask
                inp = inp * mask
        tops[:, t] = h[L - 1]  # head reads the top layer without dropout

    logits = tops @ stack.W_out + stack.b_out
    shifted = logits - logits.max(axis=2, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=2, keepdims=True)
    rows = np.arange(B)[:, None], np.arange(T)[None, :]
    picked = probs[rows[0], rows[1], ids_target]
    loss_sum = float(-np.log(picked).sum())

    dlogits = probs
    dlogits[rows[0], rows[1], ids_target] -= 1.0

    grads = [np.zeros_like(p) for p in stack.params()]
    flat_tops = tops.reshape(B * T, -1)
    grads[-2] += flat_tops.T @ dlogits.reshape(B * T, V)
    grads[-1] += dlogits.sum(axis=(0, 1))
    dtops = dlogits @ stack.W_out.T

    dh_next = [np.zeros((B, cell.hidden)) for cell in stack.cells]
    dc_next = [np.zeros((B, cell.hidden)) for cell in stack.cells]
    for t in range(T - 1, -1, -1):
        dabove = None
        for l in range(L - 1, -1, -1):
            dh = dh_next[l].copy()
            if l == L - 1:
                dh += dtops[:, t]
            else:
                mask = masks[l][t]
                dh += dabove * mask if mask is not None else dabove
            acc = grads[l * 8 : (l + 1) * 8]
            dh_prev, dx, dc_prev = _step_backward(
                stack.cells[l], caches[l][t], dh, dc_next[l], acc
            )
            dh_next[l] = dh_prev
            dc_next[l] = dc_prev
            dabove = dx
    return loss_sum, grads, h, c


def train_char_lstm(text: str, config: LstmConfig):
    """Train on a character corpus; returns (stack, per-epoch mean loss).

    The corpus is split into parallel streams that keep hidden state across
    windows within an epoch. The epoch with the lowest mean loss leaves its
    weights in the returned model.
    """
    config.validate()
    ids = VOCAB.encode(text)
    if len(ids) <= config.seq_len:
        raise SizeError(
            f"corpus of {len(ids)} characters is too short for seq_len {config.seq_len}"
        )
    stack = LstmStack.create(config)
    history = _fit(stack, ids, config)
    return stack, history


def _fit(stack: LstmStack, ids: np.ndarray, config: LstmConfig):
    B = max(1, min(config.batch_streams, (len(ids) - 1) // (config.seq_len + 1)))
    L = len(ids) // B
    streams = ids[: B * L].reshape(B, L)
    starts = range(0, L - 1, config.seq_len)

    params = stack.params()
    state = adam_init(params, lr=config.lr)
    drop_rng = np.random.default_rng(derive_seed(config.seed, "dropout"))

    history: list[float] = []
    best_loss = np.inf
    best_params = None
    for _epoch in range(config.epochs):
        h, c = stack.zero_state(B)
        total, count = 0.0, 0
        for s in starts:
            e = min(s + config.seq_len, L - 1)
            loss_sum, grads, h, c = _window_pass(
                stack, streams[:, s:e], streams[:, s + 1 : e + 1], h, c,
                drop_rng if stack.dropout > 0 and len(stack.cells) > 1 else None,
            )
            n_pos = B * (e - s)
            for g in grads:
                g /= n_pos
            adam_step(params, grads, state)
            total += loss_sum
            count += n_pos
        epoch_loss = total / count
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = [p.copy() for p in params]
    if best_params is not None:
        for p, bp in zip(params, best_params):
            p[...] = bp
    return history


WARMUP_CHARS = 512


def sample_chars(stack: LstmStack, n: int, temperature: float = 1.0, seed: int = 0,
                 warmup_chars: int = WARMUP_CHARS) -> str:
    """Generate n characters starting from a newline seed character."""
    return sample_blocks(stack, [seed], n, temperature, warmup_chars)[0]


def sample_blocks(stack: LstmStack, seeds: list[int], block_chars: int,
                  temperature: float = 1.0,
                  warmup_chars: int = WARMUP_CHARS) -> list[str]:
    """Generate one block per seed in lockstep; each block draws only from
    its own RNG, so results do not depend on batch composition.

    Before recording, each block generates and discards warmup_chars
    characters to condition the recurrent state (a fresh zero state never
    occurs mid-corpus during training), then keeps generating until the
    first line break so the recorded block starts at a line boundary.
    Blocks that finish warming early are frozen, leaving their RNG and
    state untouched until every block is ready.
    """
    validate_temperature(temperature)
    if block_chars < 0:
        raise ConfigError(f"block_chars must be non-negative, got {block_chars}")
    if warmup_chars < 0:
        raise ConfigError(f"warmup_chars must be non-negative, got {warmup_chars}")
    B = len(seeds)
    if B == 0 or block_chars == 0:
        return ["" for _ in seeds]
    rngs = [np.random.default_rng(s) for s in seeds]
    h, c = stack.zero_state(B)
    prev = np.full(B, NEWLINE_ID, dtype=np.int64)
    if warmup_chars > 0:
        warming = np.ones(B, dtype=bool)
        for t in range(2 * warmup_chars):
            if not warming.any():
                break
            rows = np.flatnonzero(warming)
            done = np.flatnonzero(~warming)
            h_snap = [layer[done].copy() for layer in h]
            c_snap = [layer[done].copy() for layer in c]
            logits = stack.step(prev, h, c)
            prev[rows] = draw_next(logits[rows], temperature, [rngs[i] for i in rows])
            for li in range(len(h)):
                h[li][done] = h_snap[li]
                c[li][done] = c_snap[li]
            if t + 1 >= warmup_chars:
                warming &= prev != NEWLINE_ID
    out = np.empty((B, block_chars), dtype=np.int64)
    for t in range(block_chars):
        logits = stack.step(prev, h, c)
        prev = draw_next(logits, temperature, rngs)
        out[:, t] = prev
    return [VOCAB.decode(row) for row in out]


@dataclass
class GridResult:
    units: int
    layers: int
    best_loss: float
    best_epoch: int


DEFAULT_GRID_UNITS = (64, 128, 256, 512)
DEFAULT_GRID_LAYERS = (1, 2, 3)


def benchmark_grid(text: str, config: LstmConfig | None = None,
                   units=DEFAULT_GRID_UNITS, layers=DEFAULT_GRID_LAYERS,
                   seed: int = 0) -> list[GridResult]:
    """Train every (units, layers) combination and report each one's best
    epoch loss, lowest first within the listing order units-major."""
    base = config or LstmConfig()
    results = []
    for u in units:
        for l in layers:
            cfg = replace(base, units=u, layers=l, seed=derive_seed(seed, "grid", u, l))
            _stack, history = train_char_lstm(text, cfg)
            best = int(np.argmin(history))
            results.append(GridResult(units=u, layers=l,
                                      best_loss=float(history[best]),
                                      best_epoch=best + 1))
    return results
