"""Analytic parameter counting from configs, without allocating weights.

Counts mirror the init functions exactly; tests reconcile them against
allocated arrays at desk scale so the closed forms cannot drift.
"""

from __future__ import annotations

from .heads import ArcFaceConfig, UadConfig
from .hilo import HiLoConfig
from .swin import SwinConfig

__all__ = [
    "count_backbone", "count_frm", "count_arcface", "count_hilo",
    "count_uad", "count_params",
]


def _dense(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def _block(dim: int, heads: int, window: int, mlp_ratio: float,
           rel_pos_bias: bool) -> int:
    hidden = int(dim * mlp_ratio)
    n = 2 * dim                      # norm1
    n += _dense(dim, 3 * dim)        # qkv
    n += _dense(dim, dim)            # attn projection
    if rel_pos_bias:
        n += (2 * window - 1) ** 2 * heads
    n += 2 * dim                     # norm2
    n += _dense(dim, hidden) + _dense(hidden, dim)
    return n


def count_backbone(config: SwinConfig) -> dict[str, int]:
    """Per-component counts; 'total' sums everything."""
    dims = config.stage_dims()
    table: dict[str, int] = {}
    patch_in = config.patch_size ** 2 * config.in_chans
    table["patch_embed"] = _dense(patch_in, config.embed_dim) + 2 * config.embed_dim
    for i, depth in enumerate(config.depths):
        table[f"stage{i}"] = depth * _block(dims[i], config.num_heads[i],
                                            config.stage_window(i),
                                            config.mlp_ratio,
                                            config.rel_pos_bias)
    for i in range(3):
        table[f"merge{i}"] = 2 * 4 * dims[i] + 4 * dims[i] * 2 * dims[i]
    table["norm"] = 2 * dims[3]
    table["total"] = sum(table.values())
    return table


def count_frm(in_channels: int, embed_dim: int) -> int:
    return _dense(in_channels, embed_dim)


def count_arcface(config: ArcFaceConfig) -> int:
    return config.embed_dim * config.num_classes


def count_hilo(config: HiLoConfig) -> int:
    c, ch, cl = config.channels, config.hi_channels, config.lo_channels
    n = 0
    if config.hi_heads > 0:
        n += _dense(c, 3 * ch) + _dense(ch, ch)
    if config.lo_heads > 0:
        n += _dense(c, cl) + _dense(c, 2 * cl) + _dense(cl, cl)
    return n


def count_uad(config: UadConfig) -> int:
    n = count_hilo(config.hilo())
    n += 9 * config.tap_channels * config.conv1_out + config.conv1_out
    n += 9 * config.conv1_out * config.conv2_out + config.conv2_out
    n += _dense(config.flat_dim(), config.fc_dim)
    n += _dense(config.fc_dim, 1)
    return n


def count_params(swin: SwinConfig, num_classes: int,
                 frm_embed_dim: int, uad: UadConfig | None = None) -> dict[str, int]:
    """Parameter table for the full system at a given configuration."""
    final_channels = swin.final_shape()[2]
    if uad is None:
        th, tw, tc = swin.tap_shape()
        uad = UadConfig(tap_height=th, tap_width=tw, tap_channels=tc)
    arc = ArcFaceConfig(num_classes=num_classes, embed_dim=frm_embed_dim)
    table = {
        "backbone": count_backbone(swin)["total"],
        "frm_head": count_frm(final_channels, frm_embed_dim),
        "arcface_head": count_arcface(arc),
        "uad_head": count_uad(uad),
    }
    table["total"] = sum(table.values())
    return table
