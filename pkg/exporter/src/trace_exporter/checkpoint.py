"""A small COMET-style metric checkpoint: a transformer encoder that
scores each segment set by mean-pooling per-segment hidden states and
combining them through a feed-forward head.

Checkpoints are created locally with a fixed seed and stored as a config
JSON plus a state-dict file, so no network access is ever required.
"""

from __future__ import annotations

import json
import os

import torch
from torch import nn
from transformers import BertConfig, BertModel

CONFIG_FILE = "metric_config.json"
WEIGHTS_FILE = "metric_model.pt"


class MetricCheckpoint(nn.Module):
    """Encoder plus pooled regression head producing one scalar score."""

    def __init__(
        self,
        vocab_size: int = 512,
        hidden_size: int = 32,
        layers: int = 2,
        heads: int = 2,
        intermediate_size: int = 64,
        max_positions: int = 128,
    ):
        super().__init__()
        self.encoder_config = BertConfig(
            vocab_size=vocab_size,
            hidden_size=hidden_size,
            num_hidden_layers=layers,
            num_attention_heads=heads,
            intermediate_size=intermediate_size,
            max_position_embeddings=max_positions,
            attn_implementation="eager",
        )
        self.encoder = BertModel(self.encoder_config, add_pooling_layer=False)
        # COMET-style feature: [mt; ctx; mt*ctx; |mt - ctx|], summed over
        # the available context segments
        self.head = nn.Sequential(
            nn.Linear(4 * hidden_size, 2 * hidden_size),
            nn.Tanh(),
            nn.Linear(2 * hidden_size, 1),
        )

    @property
    def hparams(self) -> dict:
        return {
            "vocab_size": self.encoder_config.vocab_size,
            "hidden_size": self.encoder_config.hidden_size,
            "layers": self.encoder_config.num_hidden_layers,
            "heads": self.encoder_config.num_attention_heads,
            "intermediate_size": self.encoder_config.intermediate_size,
            "max_positions": self.encoder_config.max_position_embeddings,
        }

    def score_from_pooled(self, mt: torch.Tensor, contexts: list[torch.Tensor]) -> torch.Tensor:
        if not contexts:
            raise ValueError("at least one context segment is required")
        feature = torch.zeros(4 * mt.shape[-1], dtype=mt.dtype)
        for ctx in contexts:
            feature = feature + torch.cat([mt, ctx, mt * ctx, (mt - ctx).abs()])
        return self.head(feature).squeeze(-1)


def create_checkpoint(directory: str | os.PathLike, seed: int = 0, **kwargs) -> MetricCheckpoint:
    """Initialize a seeded checkpoint and persist it to ``directory``."""
    torch.manual_seed(seed)
    model = MetricCheckpoint(**kwargs)
    model.eval()
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, CONFIG_FILE), "w", encoding="utf-8") as fh:
        json.dump(model.hparams, fh, indent=1)
    torch.save(model.state_dict(), os.path.join(directory, WEIGHTS_FILE))
    return model


def load_checkpoint(directory: str | os.PathLike) -> MetricCheckpoint:
    with open(os.path.join(directory, CONFIG_FILE), encoding="utf-8") as fh:
        hparams = json.load(fh)
    model = MetricCheckpoint(**hparams)
    state = torch.load(os.path.join(directory, WEIGHTS_FILE), weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model
