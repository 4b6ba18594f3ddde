import copy
import logging
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .denoisers import BaseDenoiser
from .exceptions import InvalidArgument
from .multipliers import ParamGroup, depth_bucket, get_multipliers
from .vocab import Modality, TaskKind

logger = logging.getLogger("trimask.transformer")


@dataclass
class ToyTransformerConfig:
    n_layers: int = 2
    d_emb: int = 64
    n_heads: int = 4
    mlp_factor: float = 2.75
    rope_base: float = 10000.0
    qk_norm: bool = True
    use_rope: bool = True
    init_std: float = 0.02
    norm_eps: float = 1e-6

    def __post_init__(self):
        if self.n_layers < 1 or self.d_emb < 1 or self.n_heads < 1:
            raise InvalidArgument("Layer count, width and head count must be positive")
        if self.d_emb % self.n_heads:
            raise InvalidArgument(
                "d_emb=%d is not divisible by n_heads=%d" % (self.d_emb, self.n_heads)
            )
        if self.use_rope and self.head_dim % 2:
            raise InvalidArgument("RoPE needs an even head dimension")

    @property
    def head_dim(self):
        return self.d_emb // self.n_heads

    @property
    def mlp_hidden(self):
        return int(round(self.mlp_factor * self.d_emb))

    @property
    def rho(self):
        """
        Width-to-depth ratio d_emb / n_layers.
        """
        return self.d_emb / self.n_layers

    @classmethod
    def from_depth(cls, n_layers, rho=128, **kwargs):
        return cls(n_layers=n_layers, d_emb=int(rho * n_layers), **kwargs)

    def as_dict(self):
        return asdict(self)


def rotate_half(x):
    first, second = x.chunk(2, dim=-1)
    return torch.cat((-second, first), dim=-1)


def rope_tables(length, head_dim, base, dtype, device):
    inv_freq = 1.0 / (
        base ** (torch.arange(0, head_dim, 2, dtype=torch.float64, device=device) / head_dim)
    )
    positions = torch.arange(length, dtype=torch.float64, device=device)
    freqs = torch.outer(positions, inv_freq)
    angles = torch.cat((freqs, freqs), dim=-1)
    return angles.cos().to(dtype), angles.sin().to(dtype)


class Attention(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        self.qkv = nn.Linear(config.d_emb, 3 * config.d_emb, bias=False)
        self.proj = nn.Linear(config.d_emb, config.d_emb, bias=False)
        if config.qk_norm:
            self.q_norm = nn.RMSNorm(config.head_dim, eps=config.norm_eps)
            self.k_norm = nn.RMSNorm(config.head_dim, eps=config.norm_eps)
        else:
            self.q_norm = self.k_norm = None

    def forward(self, x, key_mask=None, rope=None):
        batch, length, _ = x.shape
        heads, head_dim = self.config.n_heads, self.config.head_dim
        qkv = self.qkv(x).view(batch, length, 3, heads, head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        if self.q_norm is not None:
            q, k = self.q_norm(q), self.k_norm(k)
        if rope is not None:
            cos, sin = rope
            q = q * cos + rotate_half(q) * sin
            k = k * cos + rotate_half(k) * sin
        attn_mask = None if key_mask is None else key_mask[:, None, None, :]
        # Bidirectional: no causal mask, padded keys are excluded.
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        return self.proj(out.transpose(1, 2).reshape(batch, length, -1))


class SwiGLU(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.gate = nn.Linear(config.d_emb, config.mlp_hidden, bias=False)
        self.fc1 = nn.Linear(config.d_emb, config.mlp_hidden, bias=False)
        self.fc2 = nn.Linear(config.mlp_hidden, config.d_emb, bias=False)

    def forward(self, x):
        return self.fc2(F.silu(self.gate(x)) * self.fc1(x))


class Block(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.norm1 = nn.RMSNorm(config.d_emb, eps=config.norm_eps)
        self.attn = Attention(config)
        self.norm2 = nn.RMSNorm(config.d_emb, eps=config.norm_eps)
        self.mlp = SwiGLU(config)

    def forward(self, x, key_mask=None, rope=None):
        x = x + self.attn(self.norm1(x), key_mask, rope)
        return x + self.mlp(self.norm2(x))


_BLOCK_MODULES = {
    "norm1.weight": "norm1",
    "norm2.weight": "norm2",
    "attn.qkv.weight": "attn_qkv",
    "attn.proj.weight": "attn_proj",
    "attn.q_norm.weight": "attn_q_norm",
    "attn.k_norm.weight": "attn_k_norm",
    "mlp.gate.weight": "mlp_gate",
    "mlp.fc1.weight": "mlp_fc1",
    "mlp.fc2.weight": "mlp_fc2",
}


class ToyTransformer(nn.Module, BaseDenoiser):
    """
    Bidirectional pre-norm transformer with RMSNorm, SwiGLU MLPs, RoPE and
    QK-norm, emitting logits over the whole unified vocabulary.

    Input embeddings and output unembeddings are stored as one table per
    modality. A modality's table owns its payload ids and its BOS/EOS/MASK ids;
    the text table also owns the task ids and PAD_text.
    """

    def __init__(self, vocab, config=None, multipliers="unit", seed=None, **kwargs):
        super().__init__()
        if config is None:
            config = ToyTransformerConfig(**kwargs)
        elif kwargs:
            raise InvalidArgument("Pass either a config or keyword options, not both")
        self.vocab = vocab
        self.config = config
        self.multipliers = get_multipliers(multipliers)
        rows = self._table_rows(vocab)
        order = [token for modality in Modality for token in rows[modality]]
        row_index = torch.empty(vocab.size, dtype=torch.long)
        row_index[torch.tensor(order)] = torch.arange(len(order))
        self.register_buffer("row_index", row_index, persistent=False)
        self.embeddings = nn.ParameterDict(
            {
                modality.label: nn.Parameter(torch.empty(len(rows[modality]), config.d_emb))
                for modality in Modality
            }
        )
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.norm = nn.RMSNorm(config.d_emb, eps=config.norm_eps)
        self.unembeddings = nn.ParameterDict(
            {
                modality.label: nn.Parameter(torch.empty(len(rows[modality]), config.d_emb))
                for modality in Modality
            }
        )
        self.reset_parameters(seed)

    @staticmethod
    def _table_rows(vocab):
        rows = {}
        for modality in Modality:
            rows[modality] = list(vocab.range(modality)) + [
                vocab.bos(modality),
                vocab.eos(modality),
                vocab.mask(modality),
            ]
        rows[Modality.TEXT] += [vocab.task_id(task) for task in TaskKind]
        rows[Modality.TEXT].append(vocab.pad_id)
        return rows

    def parameter_groups(self):
        """
        Maps every parameter name to its ParamGroup.
        """
        groups = {}
        for name, _ in self.named_parameters():
            groups[name] = self.group_of(name)
        return groups

    def group_of(self, name):
        head, _, rest = name.partition(".")
        if head == "embeddings":
            return ParamGroup("embedding.%s" % rest)
        if head == "unembeddings":
            return ParamGroup("unembedding.%s" % rest)
        if name == "norm.weight":
            return ParamGroup("unembedding_norm")
        if head == "blocks":
            index, _, suffix = rest.partition(".")
            return ParamGroup(
                _BLOCK_MODULES[suffix], depth_bucket(int(index), self.config.n_layers)
            )
        raise InvalidArgument("Parameter %r belongs to no group" % name)

    @torch.no_grad()
    def reset_parameters(self, seed=None):
        """
        Truncated-normal init at the base std, scaled per group by the init
        multiplier; norm weights start at their init multiplier.
        """
        generator = torch.Generator().manual_seed(0 if seed is None else int(seed))
        for name, parameter in self.named_parameters():
            scale = self.multipliers.for_group(self.group_of(name)).init
            if parameter.dim() == 1:
                parameter.fill_(scale)
            else:
                std = self.config.init_std * scale
                nn.init.trunc_normal_(
                    parameter, std=std, a=-2 * std, b=2 * std, generator=generator
                )

    def num_parameters(self, non_embedding=False):
        total = 0
        for name, parameter in self.named_parameters():
            if non_embedding and self.group_of(name).is_embedding:
                continue
            total += parameter.numel()
        return total

    def _table(self, tables):
        return torch.cat([tables[modality.label] for modality in Modality])[
            self.row_index
        ]

    def forward(self, tokens, attention_mask=None):
        x = F.embedding(tokens, self._table(self.embeddings))
        rope = None
        if self.config.use_rope:
            rope = rope_tables(
                tokens.shape[1],
                self.config.head_dim,
                self.config.rope_base,
                x.dtype,
                x.device,
            )
        for block in self.blocks:
            x = block(x, attention_mask, rope)
        return self.norm(x) @ self._table(self.unembeddings).T

    def logits(self, tokens, attention_mask=None):
        return self(tokens, attention_mask)

    def snapshot(self):
        """
        A frozen copy for concurrent read-only inference.
        """
        clone = copy.deepcopy(self).eval()
        clone.requires_grad_(False)
        return clone
