"""Block-sequential any-order decoding with first-hitting time skips.

Blocks are resolved left to right; inside a block, the position-token pair
with the highest predictor confidence is committed first and the diffusion
time jumps directly to the next unmasking event (t <- t * u^(1/m)).  All
randomness comes from a counter-based generator keyed by
(seed, sequence index, block, step), so trajectories do not depend on how
sequences are batched.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffusion
from .chem import Vocab, fnv1a64, try_parse
from .fragment import BlockTensor, FragmentConfig, MaskState, TooLong, reassemble

log = logging.getLogger(__name__)


class ZeroMasked(ValueError):
    pass


class BudgetExhausted(RuntimeError):
    def __init__(self, needed: int, budget: int, block: int):
        super().__init__(
            f"block {block} needs {needed} predictor calls but the budget is {budget}")
        self.needed = needed
        self.budget = budget
        self.block = block


_U64 = (1 << 64) - 1


def _avalanche(h: int) -> int:
    # splitmix64 finalizer: FNV alone leaves high bits structured on the
    # short sequential keys used here, which skews the uniforms.
    h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9 & _U64
    h = (h ^ (h >> 27)) * 0x94D049BB133111EB & _U64
    return h ^ (h >> 31)


def key_uniform(*parts: int) -> float:
    """Deterministic uniform in (0, 1) from an integer key tuple."""
    data = b",".join(str(int(p)).encode() for p in parts)
    return max(_avalanche(fnv1a64(data)) >> 11, 1) * 2.0**-53


def first_hitting_step(t: float, m: int, u: float) -> float:
    """Next unmasking time given m masked positions: t * u^(1/m).

    u^(1/m) is distributed as the maximum of m uniforms, so one draw skips
    straight to the first of the m scheduled reveal events.
    """
    if m < 1:
        raise ZeroMasked(f"m={m}: no masked positions remain")
    if not 0.0 < t <= 1.0:
        raise diffusion.OutOfRange(f"t={t} outside (0, 1]")
    if not 0.0 < u < 1.0:
        raise diffusion.OutOfRange(f"u={u} outside (0, 1)")
    return t * u ** (1.0 / m)


def gcd_select(probs: np.ndarray, masked: np.ndarray) -> tuple[int, int, float]:
    """Greedy confidence choice over one block.

    Returns (position, token, confidence) maximizing the row-max probability
    over masked rows; ties break toward the lowest position, then the lowest
    token id (argmax picks the first maximum).
    """
    if not masked.any():
        raise ZeroMasked("no masked positions in block")
    conf = probs.max(axis=1)
    conf[~masked] = -1.0
    j = int(np.argmax(conf))
    v = int(np.argmax(probs[j]))
    return j, v, float(probs[j, v])


@dataclass(frozen=True)
class DecodeConfig:
    block: int = 8
    length: int = 72
    window: int | None = None  # context tokens visible behind the block; None = all
    budget: int = 128  # predictor-call cap per sequence per block
    temperature: float = 1.0
    nucleus_p: float = 1.0
    mode: str = "confidence"  # or "sample": token drawn from the adjusted row
    seed: int = 0

    def __post_init__(self):
        if self.length % self.block:
            raise diffusion.OutOfRange(
                f"length {self.length} not divisible by block {self.block}")
        if self.budget < 1:
            raise diffusion.OutOfRange("budget must be >= 1")
        if self.temperature <= 0.0 or not 0.0 < self.nucleus_p <= 1.0:
            raise diffusion.OutOfRange("need temperature > 0 and nucleus_p in (0, 1]")
        if self.mode not in ("confidence", "sample"):
            raise diffusion.OutOfRange(f"unknown mode {self.mode!r}")

    @property
    def fragment(self) -> FragmentConfig:
        return FragmentConfig(self.length, self.block)


@dataclass
class DecodeState:
    ids: np.ndarray  # (N, L)
    t: np.ndarray  # (N,) current diffusion time
    done: np.ndarray  # (N,) bool
    protect: np.ndarray  # (N,) positions below this are never masked
    finish_block: np.ndarray  # (N,) block index at EOS, -1 while running


@dataclass(frozen=True)
class GenRecord:
    tokens: tuple
    smiles: str
    completed: bool
    block_count: int
    index: int


class Decoder:
    """Runs block decoding for a fixed predictor, config, and vocabulary."""

    def __init__(self, params: diffusion.PredictorParams, cfg: DecodeConfig, vocab: Vocab):
        if params.vocab_size != len(vocab):
            raise diffusion.VocabMismatch(
                f"predictor has {params.vocab_size} tokens, vocab has {len(vocab)}")
        self.params = params
        self.cfg = cfg
        self.vocab = vocab

    # -- state construction

    def fresh_state(self, n: int, prefix: list | None = None) -> DecodeState:
        L = self.cfg.length
        prefix_ids = self.vocab.encode(prefix) if prefix else []
        if len(prefix_ids) > L - 2:
            raise TooLong(f"prefix of {len(prefix_ids)} tokens exceeds capacity {L - 2}")
        ids = np.full((n, L), Vocab.PAD_ID, dtype=np.int64)
        ids[:, 0] = Vocab.BOS_ID
        if prefix_ids:
            ids[:, 1 : 1 + len(prefix_ids)] = prefix_ids
        return DecodeState(
            ids=ids,
            t=np.ones(n),
            done=np.zeros(n, dtype=bool),
            protect=np.full(n, 1 + len(prefix_ids), dtype=np.int64),
            finish_block=np.full(n, -1, dtype=np.int64),
        )

    def state_from_rows(self, rows: np.ndarray, protect: int) -> DecodeState:
        n = rows.shape[0]
        done = (rows == Vocab.EOS_ID).any(axis=1)
        return DecodeState(
            ids=rows.copy(),
            t=np.ones(n),
            done=done,
            protect=np.full(n, protect, dtype=np.int64),
            finish_block=np.where(done, 0, -1).astype(np.int64),
        )

    # -- core block step

    def decode_block(self, state: DecodeState, b: int, row_offset: int = 0):
        """Resolve every masked position of block b across the batch.

        Raises BudgetExhausted before touching the state when any live
        sequence would need more predictor calls than the per-block budget.
        ``row_offset`` shifts the rng key so different batches never share
        lanes accidentally.
        """
        cfg = self.cfg
        K, L = cfg.block, cfg.length
        lo, hi = max(1, b * K), (b + 1) * K
        live = ~state.done
        starts = np.maximum(lo, state.protect)
        m_init = np.where(live, np.maximum(hi - starts, 0), 0)
        if m_init.max(initial=0) == 0:
            return
        if int(m_init.max()) > cfg.budget:
            raise BudgetExhausted(int(m_init.max()), cfg.budget, b)
        for n in np.nonzero(m_init > 0)[0]:
            state.ids[n, starts[n] : hi] = Vocab.MASK_ID
        state.t[live] = 1.0

        window = L if cfg.window is None else cfg.window
        w0 = max(0, b * K - window)
        positions = np.arange(w0, hi)
        active = np.arange(b * K - w0, hi - w0)
        for step in range(int(m_init.max())):
            rows = np.nonzero((state.ids[:, b * K : hi] == Vocab.MASK_ID).any(axis=1))[0]
            if rows.shape[0] == 0:
                break
            probs = diffusion.predict(
                self.params, state.ids[rows, w0:hi], positions, active,
                t=state.t[rows], temperature=cfg.temperature, nucleus_p=cfg.nucleus_p)
            # Absorbing-state convention: the decoder never commits MASK itself,
            # otherwise a masked slot could survive its own reveal step.
            probs[:, :, Vocab.MASK_ID] = 0.0
            for r, n in enumerate(rows):
                block_ids = state.ids[n, b * K : hi]
                masked = block_ids == Vocab.MASK_ID
                m = int(masked.sum())
                u = key_uniform(cfg.seed, row_offset + n, b, step)
                state.t[n] = first_hitting_step(float(state.t[n]), m, u)
                j, v, _ = gcd_select(probs[r], masked)
                if cfg.mode == "sample":
                    v = self._draw_token(probs[r, j], row_offset + n, b, step)
                state.ids[n, b * K + j] = v
                if v == Vocab.EOS_ID:
                    self._finish(state, n, b)

    def _draw_token(self, row: np.ndarray, lane: int, b: int, step: int) -> int:
        u = key_uniform(self.cfg.seed, lane, b, step, 0xD0)
        csum = np.cumsum(row / row.sum())
        return min(int(np.searchsorted(csum, u, side="right")), row.shape[0] - 1)

    @staticmethod
    def _finish(state: DecodeState, n: int, b: int):
        # Freeze the row: leftover masks become EOS, and everything from the
        # first EOS onward is EOS, so reassembly sees a single clean tail.
        row = state.ids[n]
        row[row == Vocab.MASK_ID] = Vocab.EOS_ID
        first = int(np.argmax(row == Vocab.EOS_ID))
        row[first:] = Vocab.EOS_ID
        state.done[n] = True
        state.finish_block[n] = b

    # -- whole-sequence decoding

    def run_blocks(self, state: DecodeState, first_block: int, last_block: int,
                   row_offset: int = 0):
        for b in range(first_block, last_block):
            if state.done.all():
                break
            self.decode_block(state, b, row_offset=row_offset)

    def generate(self, n: int, prefix: list | None = None) -> list[GenRecord]:
        """Decode n sequences; returns [] when the block budget is exhausted.

        With a prefix, decoding starts at the first block containing a masked
        position and the prefix tokens are never altered.
        """
        state = self.fresh_state(n, prefix)
        b0 = int(state.protect[0]) // self.cfg.block
        try:
            self.run_blocks(state, b0, self.cfg.fragment.num_blocks)
        except BudgetExhausted as err:
            log.warning("decode aborted: %s", err)
            return []
        return self.records(state)

    def records(self, state: DecodeState, indices: list | None = None) -> list[GenRecord]:
        out = []
        frag = self.cfg.fragment
        clean = np.full(self.cfg.length, MaskState.CLEAN, dtype=np.int8)
        for n in range(state.ids.shape[0]):
            tokens = reassemble(BlockTensor(state.ids[n], clean, frag), self.vocab)
            blocks = int(state.finish_block[n]) + 1 if state.done[n] else frag.num_blocks
            out.append(GenRecord(
                tokens=tuple(tokens),
                smiles="".join(tokens),
                completed=bool(state.done[n]),
                block_count=blocks,
                index=indices[n] if indices else n,
            ))
        return out


def write_jsonl(records: list[GenRecord], fh, seed: int):
    """One JSON object per molecule: smiles, validity, block count, seed."""
    for rec in records:
        mol, _ = try_parse(rec.smiles)
        fh.write(json.dumps({
            "smiles": rec.smiles,
            "valid": mol is not None,
            "block_count": rec.block_count,
            "seed": seed,
        }) + "\n")
