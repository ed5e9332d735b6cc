"""Masked discrete diffusion over token blocks: schedule, masks, predictor, loss.

The denoiser here is a small reference model, not a Transformer: each
position pools the embeddings of visible tokens, modulated by a learned
relative-offset gain, and projects to vocabulary logits.  It is cheap,
fully deterministic, and differentiable in closed form, which keeps the
training loop and its gradient checkable against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .chem import Vocab, fnv1a64
from .fragment import BlockTensor, FragmentConfig

T_CLIP = 1e-4


class OutOfRange(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class VocabMismatch(ValueError):
    pass


# --- noise schedule ----------------------------------------------------------


@dataclass(frozen=True)
class LinearSchedule:
    """alpha(t) = 1 - t on t in (0, 1]; the NELBO weight -alpha'/(1-alpha)
    reduces to 1/t, clipped at t >= T_CLIP to keep weights finite."""

    def alpha(self, t: float) -> float:
        self._check(t)
        return 1.0 - t

    def alpha_prime(self, t: float) -> float:
        self._check(t)
        return -1.0

    def weight(self, t: float) -> float:
        self._check(t)
        return 1.0 / max(t, T_CLIP)

    def evaluate(self, t: float) -> tuple[float, float, float]:
        return self.alpha(t), self.alpha_prime(t), self.weight(t)

    @staticmethod
    def _check(t: float):
        if not 0.0 < t <= 1.0:
            raise OutOfRange(f"t={t} outside (0, 1]")


def forward_mask(ids: np.ndarray, t: float, rng: np.random.Generator,
                 mask_id: int = Vocab.MASK_ID) -> np.ndarray:
    """Replace each position with MASK independently with probability 1 - alpha(t)."""
    LinearSchedule._check(t)
    noised = ids.copy()
    noised[rng.random(ids.shape[0]) < t] = mask_id
    return noised


def draw_block_times(num_blocks: int, rng: np.random.Generator,
                     antithetic_of: np.ndarray | None = None) -> np.ndarray:
    """Per-block diffusion times in [T_CLIP, 1].

    When ``antithetic_of`` is given, returns the mirrored draw 1 - t of a
    previous example's times instead of consuming fresh randomness.
    """
    if antithetic_of is not None:
        return np.clip(1.0 - antithetic_of, T_CLIP, 1.0)
    return np.clip(rng.uniform(0.0, 1.0, num_blocks), T_CLIP, 1.0)


def draw_noise(bt: BlockTensor, ts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply forward masking blockwise, one diffusion time per block."""
    cfg = bt.config
    noised = bt.ids.copy()
    for b in range(cfg.num_blocks):
        sl = cfg.block_slice(b)
        noised[sl] = forward_mask(bt.ids[sl], float(ts[b]), rng)
    return noised


# --- attention masks ----------------------------------------------------------


@dataclass(frozen=True)
class AttentionMask:
    matrix: np.ndarray  # uint8, 1 = may attend
    block: int
    kind: str


def build_train_mask(cfg: FragmentConfig) -> AttentionMask:
    """Training mask over the concatenation [noised x_t (L) ; clean x (L)].

    Row i may attend column j when:
      * both in x_t and in the same block (block-diagonal quadrant),
      * i in x_t, j clean, and j's block strictly precedes i's,
      * both clean and j's block is at or before i's block.
    Clean rows never attend noised columns.
    """
    L, K = cfg.length, cfg.block
    blk = np.arange(L) // K
    same = blk[:, None] == blk[None, :]
    before = blk[None, :] < blk[:, None]
    at_or_before = blk[None, :] <= blk[:, None]
    m = np.zeros((2 * L, 2 * L), dtype=np.uint8)
    m[:L, :L] = same
    m[:L, L:] = before
    m[L:, L:] = at_or_before
    return AttentionMask(m, K, "train")


def build_infer_mask(block: int, cached: int) -> AttentionMask:
    """Inference mask for one active block over a cached context window.

    Only the K active rows exist; each attends every cached position and the
    whole active block bidirectionally, so the mask is K x (cached + K).
    """
    if block < 1 or cached < 0:
        raise OutOfRange("need block >= 1 and cached >= 0")
    return AttentionMask(np.ones((block, cached + block), dtype=np.uint8), block, "infer")


# --- reference predictor -------------------------------------------------------


@dataclass
class PredictorParams:
    """Embedding table (V,d), relative-offset gains (2W+1,d), output (d,V), bias (V,)."""

    embeddings: np.ndarray
    gains: np.ndarray
    out: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        v, d = self.embeddings.shape
        if self.gains.ndim != 2 or self.gains.shape[1] != d or self.gains.shape[0] % 2 != 1:
            raise ValueError("gains must have shape (2W+1, d)")
        if self.out.shape != (d, v) or self.bias.shape != (v,):
            raise ValueError("output projection/bias shapes inconsistent")

    @property
    def vocab_size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def window(self) -> int:
        return (self.gains.shape[0] - 1) // 2

    @classmethod
    def zeros(cls, vocab_size: int, dim: int, window: int) -> "PredictorParams":
        return cls(np.zeros((vocab_size, dim)), np.zeros((2 * window + 1, dim)),
                   np.zeros((dim, vocab_size)), np.zeros(vocab_size))

    @classmethod
    def init(cls, vocab_size: int, dim: int, window: int, seed: int,
             scale: float = 0.1) -> "PredictorParams":
        rng = np.random.default_rng(seed)
        return cls(
            rng.normal(0.0, scale, (vocab_size, dim)),
            rng.normal(0.0, scale, (2 * window + 1, dim)),
            rng.normal(0.0, scale, (dim, vocab_size)),
            np.zeros(vocab_size),
        )

    def copy(self) -> "PredictorParams":
        return PredictorParams(self.embeddings.copy(), self.gains.copy(),
                               self.out.copy(), self.bias.copy())


def _pooled(params: PredictorParams, windows: np.ndarray,
            positions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """h[n, j] = sum_k visible(n, k) * E[x[n, k]] * G[pos(targets[j]) - pos(k)].

    ``windows``: (N, S) token ids; MASK positions contribute nothing.
    ``positions``: (S,) sequence positions of the window columns.
    ``targets``: indices into the window for which h is produced.
    """
    W = params.window
    vis = (windows != Vocab.MASK_ID).astype(np.float64)  # (N, S)
    emb = params.embeddings[windows] * vis[:, :, None]  # (N, S, d)
    rel = np.clip(positions[targets][:, None] - positions[None, :], -W, W) + W  # (J, S)
    gain = params.gains[rel]  # (J, S, d)
    return np.einsum("nsd,jsd->njd", emb, gain, optimize=True)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def nucleus_truncate(probs: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest descending-probability set with cumulative mass >= p,
    then renormalize.  Ties are broken toward lower token ids."""
    if not 0.0 < p <= 1.0:
        raise OutOfRange(f"nucleus p={p} outside (0, 1]")
    if p == 1.0:
        return probs
    flat = probs.reshape(-1, probs.shape[-1])
    out = np.zeros_like(flat)
    for r in range(flat.shape[0]):
        row = flat[r]
        order = np.lexsort((np.arange(row.shape[0]), -row))
        csum = np.cumsum(row[order])
        keep = int(np.searchsorted(csum, p, side="left")) + 1
        kept = order[:keep]
        out[r, kept] = row[kept] / row[kept].sum()
    return out.reshape(probs.shape)


def predict(params: PredictorParams, windows: np.ndarray, positions: np.ndarray,
            active: np.ndarray, t: np.ndarray | float | None = None,
            temperature: float = 1.0, nucleus_p: float = 1.0) -> np.ndarray:
    """Token distributions for the ``active`` window columns of each row.

    ``t`` is carried for interface symmetry with time-conditioned denoisers;
    this reference model is time-independent.  Returns (N, len(active), V)
    with rows summing to one.
    """
    del t
    if temperature <= 0.0:
        raise OutOfRange(f"temperature {temperature} must be positive")
    if windows.ndim == 1:
        windows = windows[None, :]
    h = _pooled(params, windows, positions, active)  # (N, J, d)
    logits = h @ params.out + params.bias
    return nucleus_truncate(_softmax(logits / temperature), nucleus_p)


# --- NELBO --------------------------------------------------------------------


@dataclass(frozen=True)
class LossReport:
    nelbo: float
    per_block: np.ndarray
    masked_counts: np.ndarray


def _block_ce(params: PredictorParams, bt: BlockTensor, noised: np.ndarray,
              b: int) -> tuple[float, int]:
    """Cross-entropy of the true tokens at masked positions of block b,
    with the clean prefix x^{<b} as context.  The per-block reference path."""
    cfg = bt.config
    sl = cfg.block_slice(b)
    window = np.concatenate([bt.ids[: sl.start], noised[sl]])
    positions = np.arange(sl.stop)
    active = np.arange(sl.start, sl.stop)
    masked = noised[sl] == Vocab.MASK_ID
    if not masked.any():
        return 0.0, 0
    probs = predict(params, window[None, :], positions, active)[0]
    true_ids = bt.ids[sl][masked]
    picked = probs[masked, :][np.arange(true_ids.shape[0]), true_ids]
    return float(-np.log(picked).sum()), int(masked.sum())


def nelbo_loss(params: PredictorParams, bt: BlockTensor, ts: np.ndarray,
               noised: np.ndarray, vectorized: bool = True,
               schedule: LinearSchedule = LinearSchedule()) -> LossReport:
    """Blockwise NELBO: sum_b weight(t_b) * CE(true tokens at masked slots of b).

    The vectorized path evaluates every block in one shot under the training
    attention mask; the loop path re-derives it block by block.  Both must
    agree to within 1e-9 absolute.
    """
    cfg = bt.config
    weights = np.array([schedule.weight(float(t)) for t in ts])
    counts = np.zeros(cfg.num_blocks, dtype=np.int64)
    per_block = np.zeros(cfg.num_blocks)
    if not vectorized:
        for b in range(cfg.num_blocks):
            ce, m = _block_ce(params, bt, noised, b)
            per_block[b] = weights[b] * ce
            counts[b] = m
        return LossReport(float(per_block.sum()), per_block, counts)

    L = cfg.length
    mask = build_train_mask(cfg).matrix.astype(np.float64)
    concat = np.concatenate([noised, bt.ids])
    vis = np.ones(2 * L)
    vis[:L] = (noised != Vocab.MASK_ID).astype(np.float64)
    emb = params.embeddings[concat] * vis[:, None]
    positions = np.concatenate([np.arange(L), np.arange(L)])
    W = params.window
    rel = np.clip(positions[:L, None] - positions[None, :], -W, W) + W  # (L, 2L)
    gain = params.gains[rel]
    h = np.einsum("js,sd,jsd->jd", mask[:L, :], emb, gain, optimize=True)
    logits = h @ params.out + params.bias
    logp = np.log(_softmax(logits))
    masked = noised == Vocab.MASK_ID
    for b in range(cfg.num_blocks):
        sl = cfg.block_slice(b)
        m = masked[sl]
        counts[b] = int(m.sum())
        if counts[b]:
            rows = np.arange(sl.start, sl.stop)[m]
            per_block[b] = -weights[b] * logp[rows, bt.ids[sl][m]].sum()
    return LossReport(float(per_block.sum()), per_block, counts)


@dataclass
class PredictorGrads:
    embeddings: np.ndarray
    gains: np.ndarray
    out: np.ndarray
    bias: np.ndarray

    def scaled(self, f: float) -> "PredictorGrads":
        return PredictorGrads(self.embeddings * f, self.gains * f,
                              self.out * f, self.bias * f)


def loss_gradient(params: PredictorParams, bt: BlockTensor, ts: np.ndarray,
                  noised: np.ndarray,
                  schedule: LinearSchedule = LinearSchedule()) -> tuple[LossReport, PredictorGrads]:
    """Closed-form gradient of nelbo_loss with respect to every table.

    For masked position j with weight w and true token y:
      dL/dlogits_j = w * (softmax(logits_j) - onehot(y))
    and the chain rule pushes that through out, bias, gains, embeddings.
    """
    cfg = bt.config
    L = cfg.length
    W = params.window
    mask = build_train_mask(cfg).matrix.astype(np.float64)[:L, :]
    concat = np.concatenate([noised, bt.ids])
    vis = np.ones(2 * L)
    vis[:L] = (noised != Vocab.MASK_ID).astype(np.float64)
    positions = np.concatenate([np.arange(L), np.arange(L)])
    rel = np.clip(positions[:L, None] - positions[None, :], -W, W) + W
    gain = params.gains[rel]
    weighted_vis = mask * vis[None, :]  # (L, 2L): column k visible to row j
    h = np.einsum("js,sd,jsd->jd", weighted_vis, params.embeddings[concat], gain,
                  optimize=True)
    logits = h @ params.out + params.bias
    probs = _softmax(logits)

    weights = np.array([schedule.weight(float(t)) for t in ts])
    masked = noised == Vocab.MASK_ID
    counts = np.zeros(cfg.num_blocks, dtype=np.int64)
    per_block = np.zeros(cfg.num_blocks)
    dlogits = np.zeros_like(logits)
    logp = np.log(probs)
    for b in range(cfg.num_blocks):
        sl = cfg.block_slice(b)
        m = masked[sl]
        counts[b] = int(m.sum())
        if not counts[b]:
            continue
        rows = np.arange(sl.start, sl.stop)[m]
        true = bt.ids[sl][m]
        per_block[b] = -weights[b] * logp[rows, true].sum()
        dl = probs[rows] * weights[b]
        dl[np.arange(rows.shape[0]), true] -= weights[b]
        dlogits[rows] = dl
    report = LossReport(float(per_block.sum()), per_block, counts)

    g_out = h.T @ dlogits
    g_bias = dlogits.sum(axis=0)
    dh = dlogits @ params.out.T  # (L, d)
    contrib = weighted_vis[:, :, None] * gain * dh[:, None, :]  # (L, 2L, d)
    g_emb = np.zeros_like(params.embeddings)
    np.add.at(g_emb, np.tile(concat, L), contrib.reshape(-1, params.dim))
    g_gain = np.zeros_like(params.gains)
    src = weighted_vis[:, :, None] * params.embeddings[concat][None, :, :] * dh[:, None, :]
    np.add.at(g_gain, rel.reshape(-1), src.reshape(-1, params.dim))
    return report, PredictorGrads(g_emb, g_gain, g_out, g_bias)


# --- training -----------------------------------------------------------------


GRAD_CLIP = 8.0


def _apply_update(params: PredictorParams, acc: list[np.ndarray], count: int,
                  lr: float, clip: float):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in acc)) / count
    scale = (lr / count) * min(1.0, clip / norm) if norm > 0 else 0.0
    params.embeddings -= scale * acc[0]
    params.gains -= scale * acc[1]
    params.out -= scale * acc[2]
    params.bias -= scale * acc[3]


def train(params: PredictorParams, corpus: list[BlockTensor], epochs: int,
          lr: float, seed: int, clip: float = GRAD_CLIP) -> tuple[PredictorParams, list[float]]:
    """SGD with constant step size over antithetic-pair NELBO gradients.

    Examples are reshuffled each epoch; consecutive examples share mirrored
    (antithetic) per-block diffusion times, and each update averages the
    gradient over one such pair so the mirrored 1/t weights actually cancel.
    The averaged gradient is rescaled to global norm <= clip before applying:
    the loss weight can still reach 1e4 near the clip floor, and one such
    draw at full step size is enough to blow up every table.  Both devices
    are stateless, so a fixed seed means bit-identical parameters.  Returns
    (trained copy, per-epoch mean NELBO).
    """
    if not corpus:
        raise EmptyCorpus("no training examples")
    params = params.copy()
    rng = np.random.default_rng(seed)
    history: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(len(corpus))
        total = 0.0
        prev_ts = None
        acc: list[np.ndarray] | None = None
        count = 0
        for step, idx in enumerate(order):
            bt = corpus[idx]
            if step % 2 == 0:
                ts = draw_block_times(bt.config.num_blocks, rng)
                prev_ts = ts
            else:
                ts = draw_block_times(bt.config.num_blocks, rng, antithetic_of=prev_ts)
            noised = draw_noise(bt, ts, rng)
            report, grads = loss_gradient(params, bt, ts, noised)
            total += report.nelbo
            if acc is None:
                acc = [grads.embeddings, grads.gains, grads.out, grads.bias]
            else:
                for a, g in zip(acc, (grads.embeddings, grads.gains, grads.out, grads.bias)):
                    a += g
            count += 1
            if count == 2 or step == len(order) - 1:
                _apply_update(params, acc, count, lr, clip)
                acc = None
                count = 0
        history.append(total / len(corpus))
    return params, history


# --- checkpoints ---------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: PredictorParams, vocab: Vocab, seed: int):
    record = {
        "version": CHECKPOINT_VERSION,
        "vocab": list(vocab.tokens),
        "vocab_hash": vocab.content_hash(),
        "dim": params.dim,
        "window": params.window,
        "embeddings": params.embeddings.ravel().tolist(),
        "gains": params.gains.ravel().tolist(),
        "out": params.out.ravel().tolist(),
        "bias": params.bias.tolist(),
        "seed": seed,
    }
    with open(path, "w") as fh:
        json.dump(record, fh)


def load_checkpoint(path, vocab: Vocab | None = None):
    """Returns (params, vocab, seed); verifies the stored vocabulary hash."""
    with open(path) as fh:
        record = json.load(fh)
    tokens = tuple(record["vocab"])
    stored = Vocab(tokens)
    if stored.content_hash() != record["vocab_hash"]:
        raise VocabMismatch("checkpoint vocab hash does not match its token list")
    if vocab is not None and vocab.content_hash() != record["vocab_hash"]:
        raise VocabMismatch("checkpoint was built against a different vocabulary")
    v, d, w = len(tokens), record["dim"], record["window"]
    params = PredictorParams(
        np.array(record["embeddings"]).reshape(v, d),
        np.array(record["gains"]).reshape(2 * w + 1, d),
        np.array(record["out"]).reshape(d, v),
        np.array(record["bias"]),
    )
    return params, stored, record["seed"]
