"""The bag-scoring network.

Pipeline per bag: linear projection -> two-layer pre-norm self-attention
encoder (no positional encoding; instances are a set) -> prototype similarity
statistics -> K-head gated attention pooling, biased toward low-prototype-
similarity instances -> small classifier head on the pooled vector plus the
three bag statistics (M_bag, E_bag, V_bag).

Everything here is a pure function of parameters and inputs: no dropout, no
buffers, no global RNG. Initialization draws from a locally seeded generator
so a config seed fully determines the parameters.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import (
    CacheError,
    DegenerateVector,
    InvalidDimension,
    MissingArtifact,
    ShapeMismatch,
)

CHECKPOINT_MAGIC = b"LMCKPT1\n"
NORM_FLOOR = 1e-8
ASSIGN_TEMP = 0.1  # temperature for soft prototype assignment in E_bag
LOGIT_CLAMP = 30.0


@dataclass
class ModelConfig:
    d: int = 64  # instance embedding dimension
    d_h: int = 64  # hidden width
    N_p: int = 8  # prototype count
    K: int = 4  # attention-pooling heads
    d_a: int | None = None  # pooling head width, default d_h // 2
    heads_enc: int = 4  # encoder self-attention heads
    h_c: int = 32  # classifier hidden width
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_a is None:
            self.d_a = self.d_h // 2
        if self.d_h < 4:
            raise InvalidDimension(f"d_h must be >= 4, got {self.d_h}")
        if self.N_p < 1 or self.K < 1 or self.d_a < 1 or self.h_c < 1:
            raise InvalidDimension("N_p, K, d_a, h_c must all be >= 1")
        if self.d_h % self.heads_enc != 0:
            raise InvalidDimension(
                f"d_h={self.d_h} must be divisible by heads_enc={self.heads_enc}"
            )


@dataclass
class PrototypeStats:
    s: torch.Tensor  # (B, W, N_p) similarities in [1/3, 1]
    m: torch.Tensor  # (B, W) max similarity per instance
    b: torch.Tensor  # (B, W) anomaly-candidate bias, 1 - m
    M_bag: torch.Tensor  # (B,)
    E_bag: torch.Tensor  # (B,)
    V_bag: torch.Tensor  # (B,)
    F_p: torch.Tensor  # (B, 3) = (M_bag, E_bag, V_bag)


@dataclass
class ForwardOutput:
    P: torch.Tensor  # (B,) bag anomaly probability, strictly inside (0,1)
    A: torch.Tensor  # (B, K, W) attention, exact zeros on padding
    Z_cat: torch.Tensor  # (B, K*d_h)
    stats: PrototypeStats


def _l2_normalize(x: torch.Tensor) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True).clamp_min(NORM_FLOOR)


def prototype_stats(
    Z: torch.Tensor, mask: torch.Tensor, P: torch.Tensor, eps: float = 1e-8
) -> PrototypeStats:
    """Similarity statistics between encoded instances and prototypes.

    s_{i,j} = 1 / (1 + ||z_hat_i - p_hat_j||_2) with both sides L2-normalized,
    so s lies in [1/3, 1]. Padded rows are excluded from every reduction.
    """
    if Z.dim() != 3 or mask.shape != Z.shape[:2] or P.shape[1] != Z.shape[2]:
        raise ShapeMismatch(
            f"prototype_stats shapes Z={tuple(Z.shape)} mask={tuple(mask.shape)} "
            f"P={tuple(P.shape)}"
        )
    with torch.no_grad():
        valid_norms = Z.norm(dim=-1)[mask]
        if valid_norms.numel() and float(valid_norms.min()) < NORM_FLOOR:
            raise DegenerateVector("valid encoded instance with near-zero norm")
        if float(P.norm(dim=-1).min()) < NORM_FLOOR:
            raise DegenerateVector("prototype with near-zero norm")
    z_hat = _l2_normalize(Z)
    p_hat = _l2_normalize(P)
    dist = (z_hat.unsqueeze(2) - p_hat.unsqueeze(0).unsqueeze(0)).norm(dim=-1)
    s = 1.0 / (1.0 + dist)  # (B, W, N_p)
    m = s.max(dim=-1).values
    b = 1.0 - m
    maskf = mask.to(s.dtype)
    neg_inf = torch.finfo(s.dtype).min
    M_bag = m.masked_fill(~mask, neg_inf).max(dim=1).values
    counts = maskf.sum(dim=1)
    V_raw = (m * maskf).sum(dim=1) / counts
    # Guard against the masked mean landing a rounding ulp above the max when
    # every m_i is equal.
    V_bag = torch.minimum(V_raw, M_bag)
    N_p = P.shape[0]
    if N_p >= 2:
        q = torch.softmax(s / ASSIGN_TEMP, dim=-1)
        q_bar = (q * maskf.unsqueeze(-1)).sum(dim=1) / counts.unsqueeze(-1)
        ent = -(q_bar * torch.log(q_bar + eps)).sum(dim=-1) / math.log(N_p)
        E_bag = ent.clamp(0.0, 1.0)
    else:
        E_bag = torch.zeros_like(M_bag)
    F_p = torch.stack([M_bag, E_bag, V_bag], dim=-1)
    return PrototypeStats(s=s, m=m, b=b, M_bag=M_bag, E_bag=E_bag, V_bag=V_bag, F_p=F_p)


def masked_attention_entropy(A: torch.Tensor, mask: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Normalized entropy of each attention row, (B, K).

    Padded positions hold exactly zero attention and contribute exactly 0 to
    the sum; log base cancels through the ln(valid count) normalizer. Bags
    with a single valid position are defined to have entropy 0.
    """
    counts = mask.to(A.dtype).sum(dim=-1)  # (B,)
    raw = -(A * torch.log(A + eps)).sum(dim=-1)  # (B, K)
    denom = torch.log(counts).unsqueeze(-1)
    out = torch.where(counts.unsqueeze(-1) > 1, raw / denom.clamp_min(eps), torch.zeros_like(raw))
    # An exactly one-hot row sums to -ln(1+eps) < 0; keep entropies (and the
    # loss built on them) non-negative.
    return out.clamp_min(0.0)


def select_key_instance(A: torch.Tensor, mask: torch.Tensor, eps: float = 1e-8) -> tuple[int, int]:
    """Pick (k*, i*): the minimum-entropy head, then its top-attention valid
    position. Ties resolve to the lowest index on both steps."""
    if A.dim() != 2 or mask.dim() != 1:
        raise ShapeMismatch("select_key_instance expects one bag: A (K,W), mask (W,)")
    ent = masked_attention_entropy(A.unsqueeze(0), mask.unsqueeze(0), eps)[0]
    k_star = int(torch.argmin(ent))
    row = A[k_star].masked_fill(~mask, -1.0)
    i_star = int(torch.argmax(row))
    return k_star, i_star


def select_key_instances(A: torch.Tensor, mask: torch.Tensor, eps: float = 1e-8) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched (k*, i*) selection; same tie rules as the single-bag version."""
    ent = masked_attention_entropy(A, mask, eps)  # (B, K)
    k_star = torch.argmin(ent, dim=1)  # (B,)
    rows = A.gather(1, k_star.view(-1, 1, 1).expand(-1, 1, A.shape[2])).squeeze(1)
    rows = rows.masked_fill(~mask, -1.0)
    i_star = torch.argmax(rows, dim=1)
    return k_star, i_star


class EncoderLayer(nn.Module):
    """Pre-norm transformer block with padding-masked self-attention."""

    def __init__(self, d_h: int, heads: int) -> None:
        super().__init__()
        self.heads = heads
        self.head_dim = d_h // heads
        self.ln_attn = nn.LayerNorm(d_h)
        self.ln_ffn = nn.LayerNorm(d_h)
        self.w_q = nn.Linear(d_h, d_h)
        self.w_k = nn.Linear(d_h, d_h)
        self.w_v = nn.Linear(d_h, d_h)
        self.w_o = nn.Linear(d_h, d_h)
        self.ffn = nn.Sequential(nn.Linear(d_h, 4 * d_h), nn.ReLU(), nn.Linear(4 * d_h, d_h))

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        B, W, d_h = x.shape
        h = self.ln_attn(x)

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(B, W, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.w_q(h)), split(self.w_k(h)), split(self.w_v(h))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        key_mask = mask.view(B, 1, 1, W)
        scores = scores.masked_fill(~key_mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, W, d_h)
        x = x + self.w_o(out)
        x = x + self.ffn(self.ln_ffn(x))
        return x


class LogMilpModel(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        c = config
        self.proj = nn.Linear(c.d, c.d_h)
        self.layers = nn.ModuleList(EncoderLayer(c.d_h, c.heads_enc) for _ in range(2))
        self.ln_out = nn.LayerNorm(c.d_h)
        self.prototypes = nn.Parameter(torch.empty(c.N_p, c.d_h))
        self.pool_V = nn.Parameter(torch.empty(c.K, c.d_a, c.d_h))
        self.pool_u = nn.Parameter(torch.empty(c.K, c.d_a))
        # beta = softplus(raw_beta) keeps the bias coefficient non-negative;
        # raw init chosen so beta starts at exactly 1.
        self.raw_beta = nn.Parameter(torch.empty(()))
        self.cls_hidden = nn.Linear(c.K * c.d_h + 3, c.h_c)
        self.cls_out = nn.Linear(c.h_c, 1)
        self._init_params(c.seed)

    def _init_params(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.weight.shape[1])
                    module.weight.uniform_(-bound, bound, generator=gen)
                    module.bias.zero_()
                elif isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.zero_()
            # Prototype rows uniform on the unit sphere.
            self.prototypes.normal_(generator=gen)
            self.prototypes.copy_(_l2_normalize(self.prototypes))
            for t in (self.pool_V, self.pool_u):
                bound = 1.0 / math.sqrt(self.config.d_h)
                t.uniform_(-bound, bound, generator=gen)
            self.raw_beta.fill_(math.log(math.expm1(1.0)))

    @property
    def beta(self) -> torch.Tensor:
        return nn.functional.softplus(self.raw_beta)

    def project(self, X: torch.Tensor) -> torch.Tensor:
        if X.shape[-1] != self.config.d:
            raise ShapeMismatch(f"expected last dim {self.config.d}, got {X.shape[-1]}")
        return self.proj(X)

    def encode(self, H: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if H.shape[:2] != mask.shape or H.shape[-1] != self.config.d_h:
            raise ShapeMismatch(f"encode shapes H={tuple(H.shape)} mask={tuple(mask.shape)}")
        x = H
        for layer in self.layers:
            x = layer(x, mask)
        return self.ln_out(x)

    def prototype_stats(self, Z: torch.Tensor, mask: torch.Tensor, eps: float = 1e-8) -> PrototypeStats:
        return prototype_stats(Z, mask, self.prototypes, eps)

    def attention_pool(
        self, Z: torch.Tensor, b: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if Z.shape[:2] != mask.shape or b.shape != mask.shape:
            raise ShapeMismatch(
                f"attention_pool shapes Z={tuple(Z.shape)} b={tuple(b.shape)} "
                f"mask={tuple(mask.shape)}"
            )
        gated = torch.tanh(torch.einsum("bwd,kad->bwka", Z, self.pool_V))
        logits = torch.einsum("bwka,ka->bkw", gated, self.pool_u)
        logits = logits + self.beta * b.unsqueeze(1)
        logits = logits.masked_fill(~mask.unsqueeze(1), float("-inf"))
        A = torch.softmax(logits, dim=-1)  # exact zeros where masked
        pooled = A @ Z  # (B, K, d_h)
        Z_cat = pooled.reshape(Z.shape[0], -1)
        return A, Z_cat

    def classify(self, Z_cat: torch.Tensor, F_p: torch.Tensor) -> torch.Tensor:
        feats = torch.cat([Z_cat, F_p], dim=-1)
        if feats.shape[-1] != self.cls_hidden.in_features:
            raise ShapeMismatch(
                f"classifier expects {self.cls_hidden.in_features} features, "
                f"got {feats.shape[-1]}"
            )
        logit = self.cls_out(torch.tanh(self.cls_hidden(feats))).squeeze(-1)
        return torch.sigmoid(logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))

    def forward(self, X: torch.Tensor, mask: torch.Tensor, eps: float = 1e-8) -> ForwardOutput:
        """Score a batch of bags; X is (B, W, d), mask is (B, W) bool."""
        if X.dim() != 3 or mask.shape != X.shape[:2]:
            raise ShapeMismatch(f"forward shapes X={tuple(X.shape)} mask={tuple(mask.shape)}")
        X = X.to(self.proj.weight.dtype)
        mask = mask.bool()
        H = self.project(X)
        Z = self.encode(H, mask)
        stats = self.prototype_stats(Z, mask, eps)
        A, Z_cat = self.attention_pool(Z, stats.b, mask)
        P = self.classify(Z_cat, stats.F_p)
        return ForwardOutput(P=P, A=A, Z_cat=Z_cat, stats=stats)


# --- checkpoint ------------------------------------------------------------
#
# Layout: magic "LMCKPT1\n"; text header (d, d_h, N_p, K, d_a, heads_enc,
# h_c, seed, version); "arrays=<n>"; one "name dim0,dim1,..." line per array
# in state-dict order; then the float32 little-endian payloads concatenated.

_HEADER_KEYS = ("d", "d_h", "N_p", "K", "d_a", "heads_enc", "h_c", "seed", "version")


def save_checkpoint(path: str | Path, model: LogMilpModel) -> None:
    c = model.config
    state = model.state_dict()
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        values = dict(
            d=c.d, d_h=c.d_h, N_p=c.N_p, K=c.K, d_a=c.d_a,
            heads_enc=c.heads_enc, h_c=c.h_c, seed=c.seed, version=1,
        )
        for key in _HEADER_KEYS:
            fh.write(f"{key}={values[key]}\n".encode("ascii"))
        fh.write(f"arrays={len(state)}\n".encode("ascii"))
        for name, tensor in state.items():
            dims = ",".join(str(x) for x in tensor.shape) or "1"
            fh.write(f"{name} {dims}\n".encode("ascii"))
        for tensor in state.values():
            arr = tensor.detach().to(torch.float32).numpy()
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> LogMilpModel:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CacheError(f"bad checkpoint magic in {path}")
        header: dict[str, int] = {}
        for key in _HEADER_KEYS:
            line = fh.readline().decode("ascii").strip()
            name, _, value = line.partition("=")
            if name != key:
                raise CacheError(f"checkpoint header: expected {key}=, got {line!r}")
            header[key] = int(value)
        if header["version"] != 1:
            raise CacheError(f"unsupported checkpoint version {header['version']}")
        arrays_line = fh.readline().decode("ascii").strip()
        if not arrays_line.startswith("arrays="):
            raise CacheError(f"checkpoint manifest: expected arrays=, got {arrays_line!r}")
        n_arrays = int(arrays_line.partition("=")[2])
        manifest: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(n_arrays):
            line = fh.readline().decode("ascii").strip()
            name, _, dims = line.partition(" ")
            shape = tuple(int(x) for x in dims.split(","))
            manifest.append((name, shape))
        config = ModelConfig(
            d=header["d"], d_h=header["d_h"], N_p=header["N_p"], K=header["K"],
            d_a=header["d_a"], heads_enc=header["heads_enc"], h_c=header["h_c"],
            seed=header["seed"],
        )
        model = LogMilpModel(config)
        state = model.state_dict()
        if [name for name, _ in manifest] != list(state.keys()):
            raise CacheError(f"checkpoint manifest does not match model layout in {path}")
        with torch.no_grad():
            for name, shape in manifest:
                count = int(np.prod(shape))
                blob = fh.read(count * 4)
                if len(blob) != count * 4:
                    raise CacheError(f"truncated checkpoint {path}")
                arr = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
                target = state[name]
                # 0-dim tensors are serialized with dims "1"
                if shape != (tuple(target.shape) or (1,)):
                    raise CacheError(f"shape mismatch for {name} in {path}")
                target.copy_(torch.from_numpy(arr).reshape(target.shape))
        if fh.read(1):
            raise CacheError(f"trailing bytes in checkpoint {path}")
    return model
