"""LSTM encoder-decoder with a shared encoder space for data and text.

Sides are addressed by name: ``"data"`` (linearized MRs) and ``"text"``.
Which modules back each side depends on the sharing mode:

=========  ==============  ===============
mode       encoders        decoders
=========  ==============  ===============
none       data, text      data, text
enc        shared          data, text
dec        data, text      shared
both       shared          shared
=========  ==============  ===============

A shared decoder adds a learned side embedding to every input position so it
knows which side to produce.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

SIDES = ("data", "text")
SHARING_MODES = ("none", "enc", "dec", "both")
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    emb_dim: int = 600
    hidden: int = 1024
    layers: int = 3
    dropout: float = 0.3
    sharing: str = "enc"
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        if self.sharing not in SHARING_MODES:
            raise ValueError(f"sharing must be one of {SHARING_MODES}, got {self.sharing!r}")


@dataclass
class NoiseConfig:
    drop_to_pad_prob: float = 0.1
    shuffle_window: int = 3

    def __post_init__(self):
        if not 0.0 <= self.drop_to_pad_prob <= 1.0:
            raise ValueError("drop_to_pad_prob must be in [0, 1]")
        if self.shuffle_window < 1:
            raise ValueError("shuffle_window must be >= 1")


@dataclass
class EncoderOutput:
    states: torch.Tensor  # (B, T, H)
    mask: torch.Tensor  # (B, T) bool, True on real positions
    final: tuple  # (h, c), each (L, B, H)

    @property
    def pooled(self) -> torch.Tensor:
        """Mean over real positions, (B, H)."""
        m = self.mask.unsqueeze(-1).to(self.states.dtype)
        return (self.states * m).sum(1) / m.sum(1)

    def select(self, idx) -> "EncoderOutput":
        return EncoderOutput(self.states[idx], self.mask[idx], (self.final[0][:, idx], self.final[1][:, idx]))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.embed = nn.Embedding(cfg.vocab_size, cfg.emb_dim, padding_idx=cfg.pad_id)
        self.rnn = nn.LSTM(cfg.emb_dim, cfg.hidden, cfg.layers, batch_first=True,
                           dropout=cfg.dropout if cfg.layers > 1 else 0.0)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> EncoderOutput:
        x = self.drop(self.embed(ids))
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, (h, c) = self.rnn(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=ids.size(1))
        mask = torch.arange(ids.size(1), device=ids.device)[None, :] < lengths[:, None]
        return EncoderOutput(self.drop(out), mask, (h, c))


class Decoder(nn.Module):
    """LSTM decoder with general (bilinear) attention over encoder states."""

    def __init__(self, cfg: ModelConfig, n_sides: int = 0):
        super().__init__()
        self.embed = nn.Embedding(cfg.vocab_size, cfg.emb_dim, padding_idx=cfg.pad_id)
        self.side_embed = nn.Embedding(n_sides, cfg.emb_dim) if n_sides else None
        self.rnn = nn.LSTM(cfg.emb_dim, cfg.hidden, cfg.layers, batch_first=True,
                           dropout=cfg.dropout if cfg.layers > 1 else 0.0)
        self.attn = nn.Linear(cfg.hidden, cfg.hidden, bias=False)
        self.combine = nn.Linear(2 * cfg.hidden, cfg.hidden, bias=False)
        self.out = nn.Linear(cfg.hidden, cfg.vocab_size)
        self.drop = nn.Dropout(cfg.dropout)

    def _inputs(self, tokens, side_id):
        x = self.embed(tokens)
        if self.side_embed is not None:
            x = x + self.side_embed.weight[side_id]
        return self.drop(x)

    def _attend(self, h, enc: EncoderOutput):
        # h: (B, T, H); enc.states: (B, S, H)
        scores = torch.bmm(h, self.attn(enc.states).transpose(1, 2))
        scores = scores.masked_fill(~enc.mask[:, None, :], float("-inf"))
        ctx = torch.bmm(torch.softmax(scores, dim=-1), enc.states)
        return self.out(self.drop(torch.tanh(self.combine(torch.cat([ctx, h], dim=-1)))))

    def forward(self, enc: EncoderOutput, tgt_in: torch.Tensor, side_id: int = 0, state=None):
        h, state = self.rnn(self._inputs(tgt_in, side_id), state if state is not None else enc.final)
        return self._attend(h, enc), state


class Seq2Seq(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        share_enc = cfg.sharing in ("enc", "both")
        share_dec = cfg.sharing in ("dec", "both")
        self.encoders = nn.ModuleDict(
            {"shared": Encoder(cfg)} if share_enc else {s: Encoder(cfg) for s in SIDES}
        )
        self.decoders = nn.ModuleDict(
            {"shared": Decoder(cfg, n_sides=2)} if share_dec else {s: Decoder(cfg) for s in SIDES}
        )

    # -- module routing --
    def encoder_for(self, side: str) -> Encoder:
        return self.encoders["shared"] if "shared" in self.encoders else self.encoders[side]

    def decoder_for(self, side: str) -> Decoder:
        return self.decoders["shared"] if "shared" in self.decoders else self.decoders[side]

    def exclusive_parameters(self, side: str) -> list[nn.Parameter]:
        """Parameters of the ``side`` decoder that no other side uses."""
        if "shared" in self.decoders:
            return []
        return list(self.decoders[side].parameters())

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @property
    def device(self):
        return next(self.parameters()).device

    # -- core passes --
    def encode(self, ids: torch.Tensor, lengths: torch.Tensor, side: str) -> EncoderOutput:
        return self.encoder_for(side)(ids, lengths)

    def logits(self, enc: EncoderOutput, tgt_in: torch.Tensor, side: str) -> torch.Tensor:
        out, _ = self.decoder_for(side)(enc, tgt_in, SIDES.index(side))
        return out

    def nll(self, src, src_len, src_side, tgt, tgt_len, tgt_side) -> torch.Tensor:
        """Mean token NLL of ``tgt`` (ids without bos/eos) given ``src``."""
        enc = self.encode(src, src_len, src_side)
        tgt_in, tgt_out = shift_targets(tgt, tgt_len, self.cfg)
        return loss_nll(self.logits(enc, tgt_in, tgt_side), tgt_out, self.cfg.pad_id)

    def sequence_logprob(self, enc: EncoderOutput, tgt: Sequence[int], side: str) -> float:
        """Sum of token log-probabilities of ``tgt`` + eos for a single-item encoding."""
        t = torch.tensor([[self.cfg.bos_id] + list(tgt)], device=self.device)
        out = torch.tensor(list(tgt) + [self.cfg.eos_id], device=self.device)
        with torch.no_grad():
            lp = torch.log_softmax(self.logits(enc, t, side), dim=-1)[0]
        return float(lp.gather(1, out[:, None]).sum())

    # -- decoding --
    @torch.no_grad()
    def greedy(self, enc: EncoderOutput, side: str, max_len: int) -> list[list[int]]:
        dec = self.decoder_for(side)
        sid = SIDES.index(side)
        B = enc.states.size(0)
        tok = torch.full((B, 1), self.cfg.bos_id, dtype=torch.long, device=enc.states.device)
        state = enc.final
        out = [[] for _ in range(B)]
        done = torch.zeros(B, dtype=torch.bool)
        for _ in range(max_len):
            logits, state = dec(enc, tok, sid, state)
            nxt = logits[:, -1].argmax(-1)
            for b in range(B):
                if not done[b]:
                    if int(nxt[b]) == self.cfg.eos_id:
                        done[b] = True
                    else:
                        out[b].append(int(nxt[b]))
            if bool(done.all()):
                break
            tok = nxt[:, None]
        return out

    @torch.no_grad()
    def beam(self, enc: EncoderOutput, side: str, beam_size: int, max_len: int,
             length_norm: bool = False) -> tuple[list[int], float]:
        """Beam search for a single encoded item; returns (ids, log-prob score)."""
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        dec = self.decoder_for(side)
        sid = SIDES.index(side)
        eos = self.cfg.eos_id

        def norm(score, n):
            return score / n if length_norm else score

        alive = [([], 0.0)]
        state = enc.final
        finished: list[tuple[list[int], float]] = []
        for t in range(max_len):
            n = len(alive)
            tok = torch.tensor([[h[-1] if h else self.cfg.bos_id] for h, _ in alive], device=enc.states.device)
            enc_n = enc.select([0] * n)
            logits, new_state = dec(enc_n, tok, sid, state)
            lp = torch.log_softmax(logits[:, -1], dim=-1)
            scores = torch.tensor([s for _, s in alive], dtype=lp.dtype, device=lp.device)[:, None] + lp
            flat = scores.view(-1)
            k = min(flat.numel(), 2 * beam_size)
            top_s, top_i = flat.topk(k)
            V = lp.size(1)
            next_alive, keep = [], []
            for s, i in zip(top_s.tolist(), top_i.tolist()):
                src, w = divmod(i, V)
                if w == eos:
                    finished.append((alive[src][0], s))
                else:
                    next_alive.append((alive[src][0] + [w], s))
                    keep.append(src)
                if len(next_alive) == beam_size:
                    break
            if not next_alive:
                break
            if length_norm:
                if len(finished) >= beam_size:
                    break
            else:
                # log-probs only decrease, so no alive hypothesis can overtake this
                best_fin = max((s for _, s in finished), default=-math.inf)
                if best_fin >= max(s for _, s in next_alive):
                    break
            alive = next_alive
            idx = torch.tensor(keep, device=enc.states.device)
            state = (new_state[0][:, idx], new_state[1][:, idx])
        else:
            finished.extend(alive)
        if not finished:
            finished = alive
        best = max(finished, key=lambda hs: norm(hs[1], len(hs[0]) + 1))
        return best[0], best[1]

    @torch.no_grad()
    def generate(self, seqs: Sequence[Sequence[int]], src_side: str, tgt_side: str, max_len: int,
                 mode: str = "greedy", beam_size: int = 3, batch_size: int = 64) -> list[list[int]]:
        out = []
        for i in range(0, len(seqs), batch_size):
            src, src_len = pad_batch(seqs[i:i + batch_size], self.cfg, add_eos=True)
            enc = self.encode(src, src_len, src_side)
            if mode == "greedy":
                out.extend(self.greedy(enc, tgt_side, max_len))
            elif mode == "beam":
                for b in range(src.size(0)):
                    out.append(self.beam(enc.select([b]), tgt_side, beam_size, max_len)[0])
            else:
                raise ValueError(f"unknown decode mode {mode!r}")
        return out

    @torch.no_grad()
    def represent(self, seqs: Sequence[Sequence[int]], side: str, batch_size: int = 128) -> np.ndarray:
        """Mean-pooled encoder representations, one row per sequence."""
        rows = []
        for i in range(0, len(seqs), batch_size):
            src, src_len = pad_batch(seqs[i:i + batch_size], self.cfg, add_eos=True)
            rows.append(self.encode(src, src_len, side).pooled.double().cpu().numpy())
        return np.concatenate(rows, axis=0) if rows else np.zeros((0, self.cfg.hidden))


# -- batching -------------------------------------------------------------------


def pad_batch(seqs: Sequence[Sequence[int]], cfg: ModelConfig, add_eos: bool = False, device=None):
    if not seqs:
        raise ValueError("empty batch")
    seqs = [list(s) + ([cfg.eos_id] if add_eos else []) for s in seqs]
    if any(len(s) == 0 for s in seqs):
        raise ValueError("empty sequence in batch")
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    out = torch.full((len(seqs), int(lengths.max())), cfg.pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    if device is not None:
        out = out.to(device)
    return out, lengths


def shift_targets(tgt: torch.Tensor, tgt_len: torch.Tensor, cfg: ModelConfig):
    """(bos + y, y + eos) with padding preserved."""
    B = tgt.size(0)
    bos = torch.full((B, 1), cfg.bos_id, dtype=tgt.dtype, device=tgt.device)
    pad = torch.full((B, 1), cfg.pad_id, dtype=tgt.dtype, device=tgt.device)
    tgt_in = torch.cat([bos, tgt], dim=1)
    tgt_out = torch.cat([tgt, pad], dim=1)
    tgt_out[torch.arange(B), tgt_len] = cfg.eos_id
    return tgt_in, tgt_out


# -- single-sequence API ----------------------------------------------------------


def encode(model: Seq2Seq, ids: Sequence[int], side: str):
    """Encode one id sequence; returns (per-position states (T, H), pooled vector (H,))."""
    if len(ids) == 0:
        raise ValueError("cannot encode an empty sequence")
    src, src_len = pad_batch([ids], model.cfg, device=model.device)
    out = model.encode(src, src_len, side)
    return out.states[0], out.pooled[0]


def decode(model: Seq2Seq, ids: Sequence[int], target_side: str, mode: str = "greedy",
           beam_size: int = 3, max_len: int = 100, source_side: str | None = None) -> list[int]:
    """Encode ``ids`` from the opposite side and decode into ``target_side``."""
    src_side = source_side or ("text" if target_side == "data" else "data")
    return model.generate([ids], src_side, target_side, max_len, mode=mode, beam_size=beam_size)[0]


def loss_nll(logits: torch.Tensor, targets: torch.Tensor, pad_id: int = 0) -> torch.Tensor:
    """Mean token-level negative log-likelihood, ignoring ``pad_id`` targets."""
    if logits.dim() != targets.dim() + 1 or logits.shape[:-1] != targets.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    return F.cross_entropy(logits.reshape(-1, logits.size(-1)), targets.reshape(-1), ignore_index=pad_id)


def apply_noise(ids: Sequence[int], cfg: NoiseConfig, seed=None, special_ids=(), pad_id: int = 0) -> list[int]:
    """Drop tokens to pad, then shuffle locally.

    Each non-special token becomes ``pad_id`` with probability
    ``drop_to_pad_prob``. Positions are then re-ordered by sorting
    ``i + U[0, shuffle_window)``, which moves no token more than
    ``shuffle_window - 1`` places. Length is preserved.
    """
    if len(ids) == 0:
        raise ValueError("cannot noise an empty sequence")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    special = set(special_ids) | {pad_id}
    ids = list(ids)
    n = len(ids)
    if cfg.drop_to_pad_prob > 0:
        drop = rng.random(n) < cfg.drop_to_pad_prob
        ids = [pad_id if (d and t not in special) else t for t, d in zip(ids, drop)]
    if cfg.shuffle_window > 1:
        keys = np.arange(n) + rng.uniform(0, cfg.shuffle_window, size=n)
        ids = [ids[i] for i in np.argsort(keys, kind="stable")]
    return ids


# -- checkpoints -------------------------------------------------------------------


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: Seq2Seq, vocab_hash: str, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "model_config": asdict(model.cfg),
            "vocab_hash": vocab_hash,
            "state_dict": model.state_dict(),
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path, vocab_hash: str | None = None) -> tuple[Seq2Seq, dict]:
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('version')!r}")
    if vocab_hash is not None and blob["vocab_hash"] != vocab_hash:
        raise CheckpointError(
            f"vocabulary mismatch: checkpoint {blob['vocab_hash']} vs current {vocab_hash}"
        )
    model = Seq2Seq(ModelConfig(**blob["model_config"]))
    model.load_state_dict(blob["state_dict"])
    return model, blob


def describe(model: Seq2Seq) -> str:
    return json.dumps({"params": model.n_parameters(), **asdict(model.cfg)})
