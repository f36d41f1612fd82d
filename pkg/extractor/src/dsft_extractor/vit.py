"""Minimal vision transformer with access to attention internals.

The module layout (patch_embed.proj, cls_token, pos_embed, blocks.N.attn.qkv,
...) matches the common self-supervised ViT checkpoints, so released weights
load directly; with no checkpoint the model is seeded randomly, which is
enough for shape, determinism, and serialization contracts.

Feature-source layout: "keys"/"queries"/"values" are the per-token rows of
the corresponding qkv projection in the chosen block, concatenated across
heads (full embed_dim vectors, taken before attention softmax). "block" is
the token stream after the chosen block, passed through the final LayerNorm.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

FEATURE_SOURCES = ("keys", "queries", "values", "block")

# name -> (embed_dim, depth, heads, patch_size)
PRESETS = {
    "vit-small-16": (384, 12, 6, 16),
    "vit-small-8": (384, 12, 6, 8),
    "vit-base-16": (768, 12, 12, 16),
    "vit-base-8": (768, 12, 12, 8),
    # tiny configurations for tests and smoke runs
    "vit-test-16": (32, 2, 2, 16),
    "vit-test-8": (32, 2, 2, 8),
}


class Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, capture=None):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads)
        qkv = qkv.permute(2, 0, 3, 1, 4)  # 3, B, heads, N, head_dim
        q, k, v = qkv[0], qkv[1], qkv[2]
        if capture is not None:
            merge = lambda t: t.permute(0, 2, 1, 3).reshape(b, n, c)
            capture["queries"] = merge(q)
            capture["keys"] = merge(k)
            capture["values"] = merge(v)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * 4)

    def forward(self, x, capture=None):
        x = x + self.attn(self.norm1(x), capture=capture)
        return x + self.mlp(self.norm2(x))


class PatchEmbed(nn.Module):
    def __init__(self, dim, patch_size):
        super().__init__()
        self.proj = nn.Conv2d(3, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, x):
        return self.proj(x).flatten(2).transpose(1, 2)


class VisionTransformer(nn.Module):
    def __init__(self, embed_dim, depth, num_heads, patch_size, base_image_size=224):
        super().__init__()
        self.embed_dim = embed_dim
        self.patch_size = patch_size
        self.patch_embed = PatchEmbed(embed_dim, patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, embed_dim))
        base_grid = base_image_size // patch_size
        self.pos_embed = nn.Parameter(torch.zeros(1, base_grid * base_grid + 1, embed_dim))
        self.blocks = nn.ModuleList(Block(embed_dim, num_heads) for _ in range(depth))
        self.norm = nn.LayerNorm(embed_dim)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)

    def _pos_encoding(self, h, w):
        n = self.pos_embed.shape[1] - 1
        if h * w == n:
            return self.pos_embed
        cls_pe = self.pos_embed[:, :1]
        patch_pe = self.pos_embed[:, 1:]
        side = int(math.sqrt(n))
        patch_pe = patch_pe.reshape(1, side, side, self.embed_dim).permute(0, 3, 1, 2)
        patch_pe = F.interpolate(patch_pe, size=(h, w), mode="bicubic",
                                 align_corners=False)
        patch_pe = patch_pe.permute(0, 2, 3, 1).reshape(1, h * w, self.embed_dim)
        return torch.cat([cls_pe, patch_pe], dim=1)

    def tokens(self, x, source, block_index):
        """Token matrix (B, 1 + h*w, C) of the requested feature source.

        The leading token is the global [CLS] token in every source.
        """
        if source not in FEATURE_SOURCES:
            raise ValueError(f"unknown feature source {source!r}; use one of {FEATURE_SOURCES}")
        depth = len(self.blocks)
        index = block_index if block_index >= 0 else depth + block_index
        if not 0 <= index < depth:
            raise ValueError(f"block index {block_index} outside depth {depth}")

        h = x.shape[2] // self.patch_size
        w = x.shape[3] // self.patch_size
        tok = self.patch_embed(x)
        cls = self.cls_token.expand(tok.shape[0], -1, -1)
        tok = torch.cat([cls, tok], dim=1) + self._pos_encoding(h, w)

        captured = None
        for i, block in enumerate(self.blocks):
            capture = {} if (i == index and source != "block") else None
            tok = block(tok, capture=capture)
            if capture is not None:
                captured = capture[source]
            if i == index and source == "block":
                captured = self.norm(tok)
        return captured


def build_model(name, weights=None, seed=0, device="cpu"):
    """Instantiate a preset; load a checkpoint if given, else seeded init."""
    if name not in PRESETS:
        raise ValueError(f"unknown model {name!r}; presets: {sorted(PRESETS)}")
    dim, depth, heads, patch = PRESETS[name]
    torch.manual_seed(seed)
    model = VisionTransformer(dim, depth, heads, patch)
    if weights is not None:
        state = torch.load(weights, map_location="cpu")
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        if isinstance(state, dict) and "teacher" in state:
            state = state["teacher"]
        state = {
            k.removeprefix("module.").removeprefix("backbone."): v
            for k, v in state.items()
        }
        state = {k: v for k, v in state.items() if not k.startswith("head.")}
        missing, unexpected = model.load_state_dict(state, strict=False)
        missing = [k for k in missing]
        if missing:
            raise ValueError(f"checkpoint {weights} is missing parameters: {missing[:5]}")
        if unexpected:
            print(f"note: ignored {len(unexpected)} unexpected checkpoint keys")
    model.eval()
    return model.to(device)
