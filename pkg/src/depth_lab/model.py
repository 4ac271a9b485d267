"""Desk-scale encoder-decoder transformer driven entirely by boolean masks.

All three attention paths (encoder self, decoder self, cross) take explicit
(B, Lq, Lk) boolean matrices, so the hierarchical rules live outside the
model.  False cells contribute exactly zero attention weight; rows with no
allowed cell produce a zero context vector instead of NaNs (they only occur
at pad positions, which never reach the loss).

Pre-layer-norm blocks, GELU feed-forward, learned absolute position
embeddings, and input/output embeddings tied.  Initialization is a
scaled normal (std 0.02) drawn from a dedicated generator, so the same
``init_seed`` always yields bit-identical parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .masks import build_cross_mask, build_decoder_mask, build_encoder_mask
from .seeding import GRAD_CHECK, rng_for
from .tokenizer import Vocab


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_ff: int = 512
    max_len: int = 512
    dropout: float = 0.0
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ModelConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.vocab_size < 1 or self.max_len < 1:
            raise ModelConfigError("vocab_size and max_len must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last dim restricted to True cells.

    Rows with no True cell come back as all zeros (no NaN propagation).
    """
    filled = scores.masked_fill(~mask, float("-inf"))
    row_any = mask.any(dim=-1, keepdim=True)
    safe = torch.where(row_any, filled, torch.zeros_like(scores))
    return safe.softmax(dim=-1) * row_any


class MultiHeadAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.head_dim
        self.query = nn.Linear(cfg.d_model, cfg.d_model)
        self.key = nn.Linear(cfg.d_model, cfg.d_model)
        self.value = nn.Linear(cfg.d_model, cfg.d_model)
        self.out = nn.Linear(cfg.d_model, cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, queries: torch.Tensor, context: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        bsz, q_len, _ = queries.shape
        k_len = context.shape[1]

        def split(x: torch.Tensor, length: int) -> torch.Tensor:
            return x.view(bsz, length, self.n_heads, self.head_dim).transpose(1, 2)

        q = split(self.query(queries), q_len)
        k = split(self.key(context), k_len)
        v = split(self.value(context), k_len)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        weights = masked_softmax(scores, mask.unsqueeze(1))
        attended = (self.dropout(weights) @ v).transpose(1, 2).reshape(bsz, q_len, -1)
        return self.out(attended)


class FeedForward(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.inner = nn.Linear(cfg.d_model, cfg.d_ff)
        self.outer = nn.Linear(cfg.d_ff, cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.dropout(self.outer(nn.functional.gelu(self.inner(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm_attn = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg)
        self.norm_ff = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.norm_attn(x)
        x = x + self.attn(h, h, mask)
        return x + self.ff(self.norm_ff(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm_self = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg)
        self.norm_cross = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg)
        self.norm_ff = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        self_mask: torch.Tensor,
        cross_mask: torch.Tensor,
    ) -> torch.Tensor:
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, self_mask)
        x = x + self.cross_attn(self.norm_cross(x), memory, cross_mask)
        return x + self.ff(self.norm_ff(x))


class EncoderDecoder(nn.Module):
    """The full model; build through :func:`init_model` for seeded weights."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb_enc = nn.Embedding(cfg.max_len, cfg.d_model)
        self.pos_emb_dec = nn.Embedding(cfg.max_len, cfg.d_model)
        self.emb_dropout = nn.Dropout(cfg.dropout)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.enc_layers))
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.dec_layers))
        self.norm_enc = nn.LayerNorm(cfg.d_model)
        self.norm_dec = nn.LayerNorm(cfg.d_model)

    def num_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def encode(self, encoder_ids: torch.Tensor, enc_self: torch.Tensor) -> torch.Tensor:
        length = encoder_ids.shape[1]
        if length > self.cfg.max_len:
            raise ValueError(f"encoder length {length} exceeds max_len {self.cfg.max_len}")
        positions = torch.arange(length, device=encoder_ids.device)
        x = self.emb_dropout(self.tok_emb(encoder_ids) + self.pos_emb_enc(positions))
        for layer in self.encoder:
            x = layer(x, enc_self)
        return self.norm_enc(x)

    def decode(
        self,
        memory: torch.Tensor,
        decoder_input_ids: torch.Tensor,
        dec_self: torch.Tensor,
        cross: torch.Tensor,
    ) -> torch.Tensor:
        length = decoder_input_ids.shape[1]
        if length > self.cfg.max_len:
            raise ValueError(f"decoder length {length} exceeds max_len {self.cfg.max_len}")
        positions = torch.arange(length, device=decoder_input_ids.device)
        x = self.emb_dropout(self.tok_emb(decoder_input_ids) + self.pos_emb_dec(positions))
        for layer in self.decoder:
            x = layer(x, memory, dec_self, cross)
        return self.norm_dec(x)

    def forward(
        self,
        encoder_ids: torch.Tensor,
        decoder_input_ids: torch.Tensor,
        enc_self: torch.Tensor,
        dec_self: torch.Tensor,
        cross: torch.Tensor,
    ) -> torch.Tensor:
        """Teacher-forced logits, shape (B, Ld, vocab_size)."""
        _check_shapes(encoder_ids, decoder_input_ids, enc_self, dec_self, cross)
        memory = self.encode(encoder_ids, enc_self)
        hidden = self.decode(memory, decoder_input_ids, dec_self, cross)
        return hidden @ self.tok_emb.weight.t()  # tied output projection


def _check_shapes(enc_ids, dec_ids, enc_self, dec_self, cross) -> None:
    bsz, enc_len = enc_ids.shape
    dec_len = dec_ids.shape[1]
    expected = {
        "enc_self": (bsz, enc_len, enc_len),
        "dec_self": (bsz, dec_len, dec_len),
        "cross": (bsz, dec_len, enc_len),
    }
    for name, tensor in (("enc_self", enc_self), ("dec_self", dec_self), ("cross", cross)):
        if tuple(tensor.shape) != expected[name]:
            raise ValueError(f"{name} mask shape {tuple(tensor.shape)} != expected {expected[name]}")


def init_model(cfg: ModelConfig) -> EncoderDecoder:
    """Construct and deterministically initialize the model.

    Weight matrices and embeddings draw from N(0, 0.02^2); biases are zero
    and LayerNorm gains one.  The draw order follows parameter definition
    order, which is fixed by the module structure.
    """
    model = EncoderDecoder(cfg)
    gen = torch.Generator().manual_seed(cfg.init_seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if param.dim() >= 2:
                param.copy_(torch.randn(param.shape, generator=gen, dtype=param.dtype) * 0.02)
            elif name.endswith(".bias"):
                param.zero_()
            # LayerNorm gains keep their default of 1
    return model


@dataclass
class ModelBatch:
    """One teacher-forcing batch with its three boolean mask stacks."""

    encoder_ids: torch.Tensor  # (B, Le) long
    decoder_input_ids: torch.Tensor  # (B, Ld) long
    target_ids: torch.Tensor  # (B, Ld) long, pad_id marks ignored positions
    enc_self: torch.Tensor  # (B, Le, Le) bool
    dec_self: torch.Tensor  # (B, Ld, Ld) bool
    cross: torch.Tensor  # (B, Ld, Le) bool


def greedy_decode(
    model: EncoderDecoder,
    encoder_ids: list[int],
    vocab: Vocab,
    max_out: int = 256,
    eosen_hierarchical: bool = False,
) -> list[int]:
    """Greedy generation with masks rebuilt from the emitted prefix each step.

    The decoder-self and cross masks are recomputed by the mask builders on
    ``<BOS> ++ emitted``, so hierarchical rules keyed on already-emitted
    sentence tokens apply during generation exactly as in training.
    """
    device = next(model.parameters()).device
    enc = torch.tensor([encoder_ids], dtype=torch.long, device=device)
    enc_mask = torch.from_numpy(build_encoder_mask(encoder_ids, vocab)).unsqueeze(0).to(device)
    was_training = model.training
    model.eval()
    emitted: list[int] = []
    with torch.no_grad():
        memory = model.encode(enc, enc_mask)
        for _ in range(max_out):
            prefix = [vocab.bos_id] + emitted
            dec_self = build_decoder_mask(prefix, vocab, eosen_hierarchical)
            cross = build_cross_mask(prefix, encoder_ids, vocab, eosen_hierarchical)
            dec = torch.tensor([prefix], dtype=torch.long, device=device)
            hidden = model.decode(
                memory,
                dec,
                torch.from_numpy(dec_self).unsqueeze(0).to(device),
                torch.from_numpy(cross).unsqueeze(0).to(device),
            )
            logits = hidden[0, -1] @ model.tok_emb.weight.t()
            emitted.append(int(logits.argmax().item()))
            if emitted[-1] == vocab.eos_id:
                break
    if was_training:
        model.train()
    return emitted


def grad_check(
    model: EncoderDecoder,
    batch: ModelBatch,
    vocab: Vocab,
    epsilon: float = 1e-5,
    n_coords: int = 50,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The model must be in 64-bit mode (``model.double()``); the loss is the
    token-averaged total.  ``n_coords`` parameter coordinates are sampled
    uniformly over the whole parameter vector.
    """
    from .objective import loss_breakdown

    params = [p for p in model.parameters() if p.requires_grad]
    if params[0].dtype != torch.float64:
        raise ValueError("grad_check requires a float64 model; call model.double() first")

    def closure() -> torch.Tensor:
        logits = model(
            batch.encoder_ids, batch.decoder_input_ids, batch.enc_self, batch.dec_self, batch.cross
        )
        return loss_breakdown(logits, batch.target_ids, vocab, empty_ok=True).total

    model.zero_grad(set_to_none=True)
    closure().backward()
    grads = [
        p.grad.detach().reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
        for p in params
    ]

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = rng_for(seed, GRAD_CHECK)
    flat_indices = rng.choice(total, size=min(n_coords, total), replace=False)

    worst = 0.0
    with torch.no_grad():
        for flat in sorted(int(i) for i in flat_indices):
            param_idx = 0
            while flat >= sizes[param_idx]:
                flat -= sizes[param_idx]
                param_idx += 1
            param = params[param_idx]
            view = param.reshape(-1)
            original = view[flat].item()
            view[flat] = original + epsilon
            loss_plus = closure().item()
            view[flat] = original - epsilon
            loss_minus = closure().item()
            view[flat] = original
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            analytic = grads[param_idx][flat].item()
            scale = max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, abs(analytic - numeric) / scale)
    return worst
