"""Tiny byte-level causal language model with LoRA adapters.

The builtin base-model family keeps the trainer hermetic: weights are
deterministic functions of the base model name (seeded random init), and the
tokenizer is byte-level (ids 0-255 plus BOS/EOS/PAD), so no external files or
downloads are involved. The family's chat template encodes only the last user
message, ``{user}\\n<reply>\\n`` — identical to the layout the fine-tuning
records are tokenized with, so serving and training conditioning agree byte
for byte.

LoRA wraps the attention and MLP projections: y = Wx + b + (alpha/r)·B(A(x)),
with A ~ N(0, 1/r) and B zero-initialized so training starts from the base
function.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

BOS, EOS, PAD = 256, 257, 258
VOCAB_SIZE = 259

REPLY_MARKER = "\n<reply>\n"

# LoRA target modules: attention + MLP projections (artifact default).
TARGET_MODULES = ("attn_qkv", "attn_out", "mlp_fc1", "mlp_fc2")


def encode(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode(ids) -> str:
    return bytes(i for i in ids if 0 <= i <= 255).decode("utf-8", errors="replace")


def apply_chat_template(messages: list[dict]) -> str:
    """The builtin family's template: the last user message, reply-marked."""
    user = ""
    for message in messages:
        if message.get("role") == "user":
            user = message.get("content", "")
    return user + REPLY_MARKER


@dataclass(frozen=True)
class TinyConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_positions: int = 512


class Block(nn.Module):
    def __init__(self, cfg: TinyConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn_qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.attn_out = nn.Linear(cfg.d_model, cfg.d_model)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp_fc1 = nn.Linear(cfg.d_model, cfg.d_ff)
        self.mlp_fc2 = nn.Linear(cfg.d_ff, cfg.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.ln1(x)
        qkv = self.attn_qkv(h).view(b, t, 3, self.n_heads, d // self.n_heads)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))
        attended = torch.nn.functional.scaled_dot_product_attention(q, k, v, is_causal=True)
        attended = attended.transpose(1, 2).reshape(b, t, d)
        x = x + self.attn_out(attended)
        h = self.ln2(x)
        x = x + self.mlp_fc2(torch.nn.functional.gelu(self.mlp_fc1(h)))
        return x


class TinyLM(nn.Module):
    def __init__(self, cfg: TinyConfig = TinyConfig()):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_positions, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)

    def forward(self, input_ids: torch.Tensor) -> torch.Tensor:
        t = input_ids.shape[1]
        if t > self.cfg.max_positions:
            raise ValueError(f"sequence length {t} exceeds {self.cfg.max_positions}")
        pos = torch.arange(t, device=input_ids.device)
        x = self.tok_emb(input_ids) + self.pos_emb(pos)[None]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))


BUILTIN_BASES = {
    "tiny-base": TinyConfig(),
    "tiny-base-wide": TinyConfig(d_model=96, d_ff=192),
    # hermetic pipeline runs bind the simulator's model name as the base id
    "sim-prompt": TinyConfig(),
}


class UnknownBaseModel(ValueError):
    pass


def build_base_model(base_id: str) -> TinyLM:
    """Deterministically initialize a builtin base model by name."""
    if base_id not in BUILTIN_BASES:
        raise UnknownBaseModel(
            f"unknown base model {base_id!r}; builtin bases: {sorted(BUILTIN_BASES)}")
    seed = int.from_bytes(hashlib.sha256(base_id.encode("utf-8")).digest()[:4], "big")
    generator = torch.Generator().manual_seed(seed)
    model = TinyLM(BUILTIN_BASES[base_id])
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                nn.init.normal_(module.weight, mean=0.0, std=0.02, generator=generator)
                if getattr(module, "bias", None) is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
    return model


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: int):
        super().__init__()
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.lora_a = nn.Linear(base.in_features, rank, bias=False)
        self.lora_b = nn.Linear(rank, base.out_features, bias=False)
        nn.init.normal_(self.lora_a.weight, std=1.0 / math.sqrt(rank))
        nn.init.zeros_(self.lora_b.weight)
        for param in self.base.parameters():
            param.requires_grad_(False)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * self.lora_b(self.lora_a(x))

    def merge_into_base(self) -> nn.Linear:
        with torch.no_grad():
            self.base.weight += self.scaling * (self.lora_b.weight @ self.lora_a.weight)
        return self.base


def inject_lora(model: TinyLM, rank: int, alpha: int) -> list[str]:
    """Wrap the target projections in every block; returns wrapped names."""
    wrapped = []
    for param in model.parameters():
        param.requires_grad_(False)
    for i, block in enumerate(model.blocks):
        for name in TARGET_MODULES:
            layer = getattr(block, name)
            if isinstance(layer, LoRALinear):
                layer = layer.merge_into_base()
            setattr(block, name, LoRALinear(layer, rank, alpha))
            wrapped.append(f"blocks.{i}.{name}")
    return wrapped


def lora_state_dict(model: TinyLM) -> dict:
    return {name: tensor for name, tensor in model.state_dict().items()
            if "lora_a" in name or "lora_b" in name}


def load_lora_state(model: TinyLM, state: dict) -> None:
    missing, unexpected = model.load_state_dict(state, strict=False)
    unexpected = [name for name in unexpected]
    if unexpected:
        raise ValueError(f"unexpected adapter tensors: {unexpected[:4]}")


def merge_all_lora(model: TinyLM) -> None:
    """Fold every LoRA delta into its base Linear (used to stack iterations)."""
    for block in model.blocks:
        for name in TARGET_MODULES:
            layer = getattr(block, name)
            if isinstance(layer, LoRALinear):
                setattr(block, name, layer.merge_into_base())


@torch.no_grad()
def generate(model: TinyLM, prompt_ids: list[int], max_tokens: int,
             temperature: float, seed: int = 0) -> list[int]:
    """Sample a continuation; near-greedy temperatures take the argmax."""
    model.eval()
    limit = model.cfg.max_positions
    reserve = max(1, min(max_tokens, limit // 2))
    ids = list(prompt_ids)[-(limit - reserve):]
    generator = torch.Generator().manual_seed(seed)
    out = []
    for _ in range(max_tokens):
        logits = model(torch.tensor([ids], dtype=torch.long))[0, -1]
        logits[PAD] = -1e9
        if temperature <= 0.001:
            next_id = int(logits.argmax())
        else:
            probs = torch.softmax(logits / temperature, dim=-1)
            next_id = int(torch.multinomial(probs, 1, generator=generator))
        if next_id == EOS:
            break
        out.append(next_id)
        ids.append(next_id)
        if len(ids) >= limit:
            break
    return out
