"""Transformer over context/query token sequences with two mixture heads.

Query tokens attend to the context block and themselves only; the two
Gaussian-mixture heads return posterior predictive distributions for the
lower and upper bound at each query row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class PredictiveDistribution:
    """Mixture parameters for one head at a set of query rows."""

    weights: torch.Tensor       # (..., K), simplex
    means: torch.Tensor         # (..., K)
    scales: torch.Tensor        # (..., K), positive

    def log_prob(self, value: torch.Tensor) -> torch.Tensor:
        v = value.unsqueeze(-1)
        comp = -0.5 * ((v - self.means) / self.scales) ** 2 \
            - torch.log(self.scales) - 0.5 * math.log(2 * math.pi)
        return torch.logsumexp(torch.log(self.weights) + comp, dim=-1)

    def mean(self) -> torch.Tensor:
        return (self.weights * self.means).sum(-1)

    def quantile(self, q: float, iters: int = 60) -> torch.Tensor:
        """Mixture quantile by bisection on the CDF."""
        lo = (self.means - 12 * self.scales).min(-1).values
        hi = (self.means + 12 * self.scales).max(-1).values
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            z = (mid.unsqueeze(-1) - self.means) / (self.scales * math.sqrt(2))
            cdf = (self.weights * 0.5 * (1 + torch.erf(z))).sum(-1)
            hi = torch.where(cdf >= q, mid, hi)
            lo = torch.where(cdf >= q, lo, mid)
        return 0.5 * (lo + hi)


def gmm_nll(pred: PredictiveDistribution, label: torch.Tensor) -> torch.Tensor:
    """−log Σ_k w_k N(label; μ_k, σ_k), elementwise."""
    return -pred.log_prob(label)


def monotonicity_penalty(lower_means: torch.Tensor, upper_means: torch.Tensor,
                         group_sizes) -> torch.Tensor:
    """Zero-margin hinge on adjacent Γ-sorted predictive means.

    lower_means/upper_means are (B, m'·g) with rows already Γ-sorted inside
    each group of size g; the lower bound must be non-increasing and the
    upper non-decreasing in Γ.
    """
    g = int(group_sizes[0][0]) if hasattr(group_sizes[0], "__len__") \
        else int(group_sizes[0])
    if g < 2:
        return lower_means.new_zeros(())
    b = lower_means.shape[0]
    lo = lower_means.reshape(b, -1, g)
    hi = upper_means.reshape(b, -1, g)
    viol = torch.relu(lo[..., 1:] - lo[..., :-1]) \
        + torch.relu(hi[..., :-1] - hi[..., 1:])
    return viol.mean()


class BoundPredictor(nn.Module):
    def __init__(self, d_x: int, embed_dim: int = 64, n_heads: int = 2,
                 ff_dim: int = 256, n_layers: int = 4,
                 n_mixture_components: int = 3):
        super().__init__()
        self.d_x = d_x
        self.k = n_mixture_components
        quarter = embed_dim // 4
        self.enc_x = nn.Linear(d_x, quarter)
        self.enc_a = nn.Linear(1, quarter)
        self.enc_y = nn.Linear(2, quarter)
        self.enc_g = nn.Linear(2, quarter)
        self.fuse = nn.Linear(4 * quarter, embed_dim)
        layer = nn.TransformerEncoderLayer(
            d_model=embed_dim, nhead=n_heads, dim_feedforward=ff_dim,
            dropout=0.0, batch_first=True, norm_first=True)
        self.encoder = nn.TransformerEncoder(layer, num_layers=n_layers)
        self.head_lower = nn.Linear(embed_dim, 3 * self.k)
        self.head_upper = nn.Linear(embed_dim, 3 * self.k)

    @staticmethod
    def attention_mask(seq_len: int, split: int, device) -> torch.Tensor:
        """True blocks attention: queries see the context and themselves."""
        blocked = torch.zeros(seq_len, seq_len, dtype=torch.bool, device=device)
        blocked[:, split:] = True
        idx = torch.arange(split, seq_len, device=device)
        blocked[idx, idx] = False
        return blocked

    def _embed(self, features: torch.Tensor) -> torch.Tensor:
        d = self.d_x
        x = features[..., :d]
        a = features[..., d:d + 1]
        y = features[..., d + 1:d + 3]
        g = features[..., d + 3:d + 5]
        tokens = torch.cat([self.enc_x(x), self.enc_a(a),
                            self.enc_y(y), self.enc_g(g)], dim=-1)
        return self.fuse(torch.tanh(tokens))

    def _mixture(self, raw: torch.Tensor) -> PredictiveDistribution:
        logits, means, scales_raw = raw.split(self.k, dim=-1)
        return PredictiveDistribution(
            weights=torch.softmax(logits, dim=-1),
            means=means,
            scales=nn.functional.softplus(scales_raw) + 1e-3)

    def forward(self, features: torch.Tensor, split: int):
        """Predictive distributions at the query rows of each sequence."""
        tokens = self._embed(features)
        mask = self.attention_mask(tokens.shape[1], split, tokens.device)
        hidden = self.encoder(tokens, mask=mask)
        query_hidden = hidden[:, split:, :]
        return (self._mixture(self.head_lower(query_hidden)),
                self._mixture(self.head_upper(query_hidden)))
