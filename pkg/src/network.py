"""
Hierarchical Model
Encoders that downsample residual patches into quantized latents, the cluster
head on top, and decoders that turn each level into entropy-model parameters
for the level below.

decoder_level is the single code path used by training, compression and
decompression, so both ends of the codec build identical coding tables.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .clustering import (ClusterHead, SoftLabels, reconstruct_top_features,
                         shared_latents, side_information_bits, soft_labels)
from .config import ModelConfig
from .entropy_model import DlmParams, dlm_nll_bits, latent_alphabet, residual_alphabet
from .exceptions import DimensionError
from .layers import Conv2d, Module, ResStack
from .tensor import Tensor, get_dtype, is_grad_enabled, no_grad, pixel_shuffle, softmax, straight_through

logger = logging.getLogger(__name__)


def quantization_grid(levels=25):
    """-1 + 2i / (levels - 1) for i in 0..levels-1, in the current dtype"""
    return (-1.0 + 2.0 * np.arange(levels, dtype=np.float64) / (levels - 1)).astype(get_dtype())


def quantize_hard(x, levels=25):
    """
    Nearest grid symbol; out-of-range values clamp and exact midpoints go to the lower index

    Args:
        x (np.ndarray): Values
        levels (int): Grid size

    Returns:
        np.ndarray: uint8 symbols
    """
    x = np.nan_to_num(np.asarray(x, dtype=np.float64), nan=0.0)
    position = (np.clip(x, -1.0, 1.0) + 1.0) * (levels - 1) / 2.0
    return np.clip(np.ceil(position - 0.5), 0, levels - 1).astype(np.uint8)


def dequantize(symbols, levels=25):
    return quantization_grid(levels)[np.asarray(symbols, dtype=np.int64)]


def quantize_soft(x, sigma_q=2.0, levels=25):
    """Differentiable surrogate sum_i l_i softmax(-sigma_q (x - l_i)^2)"""
    grid = quantization_grid(levels)
    d = x.reshape(*x.shape, 1) - grid
    weights = softmax((d * d) * (-sigma_q), axis=-1)
    return (weights * grid).sum(axis=-1)


def quantize(x, sigma_q=2.0, levels=25):
    """
    Hard-quantize in the forward pass with a soft-quantizer gradient

    Returns:
        tuple: (Tensor of grid values, uint8 symbols)
    """
    symbols = quantize_hard(x.data, levels)
    hard = dequantize(symbols, levels)
    if is_grad_enabled() and x.requires_grad:
        return straight_through(quantize_soft(x, sigma_q, levels), hard), symbols
    return Tensor(hard), symbols


def residual_input(symbols):
    """Residual symbols scaled to [-1, 1] as network input"""
    return Tensor(np.asarray(symbols, dtype=get_dtype()) / 127.5 - 1.0)


class EncoderLevel(Module):
    """conv3x3 -> conv5x5/2 -> residual blocks, plus a conv3x3 latent head below the top"""

    def __init__(self, in_channels, config, rng, emits_latent):
        self.head = Conv2d(in_channels, config.C_f, 3, rng)
        self.down = Conv2d(config.C_f, config.C_f, 5, rng, stride=2, padding=2)
        self.res = ResStack(config.C_f, config.res_blocks, rng)
        self.to_latent = Conv2d(config.C_f, config.C_d, 3, rng) if emits_latent else None

    def forward(self, x):
        features = self.res(self.down(self.head(x)))
        latent = self.to_latent(features) if self.to_latent is not None else None
        return features, latent


class DecoderLevel(Module):
    """
    Head (two 1x1 convs from C_d) -> optional skip from the level above ->
    residual blocks -> 2x sub-pixel upsampling -> 1x1 mixture-parameter head
    """

    def __init__(self, config, rng, target_channels, conditional):
        C_f = config.C_f
        self.config = config
        self.target_channels = target_channels
        self.conditional = conditional
        n_params = 4 if conditional else 3
        self.head_in = Conv2d(config.C_d, C_f, 1, rng)
        self.head_out = Conv2d(C_f, C_f, 1, rng)
        self.res = ResStack(C_f, config.res_blocks, rng)
        self.upsample = Conv2d(C_f, 4 * C_f, 3, rng)
        self.param_head = Conv2d(C_f, target_channels * n_params * config.mixtures, 1, rng)

    def forward(self, latent, incoming=None):
        x = self.head_out(self.head_in(latent))
        if incoming is not None:
            if incoming.shape != x.shape:
                raise DimensionError("shape", x.shape, incoming.shape, op="DecoderLevel")
            x = x + incoming
        features = pixel_shuffle(self.upsample(self.res(x)), 2)
        return features, self.param_head(features)


@dataclass
class EncodedLatents:
    """Everything the encoder side of the hierarchy produces for one image"""
    latents: Dict[int, np.ndarray]
    labels: Optional[SoftLabels] = None
    shared: Optional[np.ndarray] = None


@dataclass
class ForwardResult:
    """Per-term bit counts of one training forward pass"""
    terms: Dict[str, Tensor]
    raw_bits: float
    latents: Dict[int, np.ndarray] = field(default_factory=dict)
    labels: Optional[SoftLabels] = None

    @property
    def total(self):
        terms = list(self.terms.values())
        out = terms[0]
        for term in terms[1:]:
            out = out + term
        return out


class HierarchicalModel(Module):
    """
    Encoders 1..T, the cluster head on top (T >= 2) and decoders T..1

    With levels=1 there is no clustering: z_Q1 is stored uniformly and
    decoder 1 predicts the residuals from it alone.
    """

    def __init__(self, config):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        T = config.levels
        self.encoders = [
            EncoderLevel(3 if n == 1 else config.C_f, config, rng,
                         emits_latent=(n < T or not config.uses_clustering))
            for n in range(1, T + 1)
        ]
        self.cluster_head = ClusterHead(config, rng) if config.uses_clustering else None
        self.decoders = [
            DecoderLevel(config, rng, target_channels=3 if n == 1 else config.C_d, conditional=(n == 1))
            for n in range(1, T + 1)
        ]
        self.residuals = residual_alphabet()
        self.latent_grid = latent_alphabet(config.quant_levels)
        logger.info(f"Built {T}-level model with {self.num_parameters():,} parameters")

    @property
    def levels(self):
        return self.config.levels

    def target_name(self, level):
        """Loss-term name for what decoder `level` predicts"""
        if level == 1:
            return "L_r"
        if level == self.levels and self.config.uses_clustering:
            return "L_cluster"
        return f"L_zQ{level - 1}"

    def _quantize(self, latent):
        return quantize(latent, self.config.sigma_q, self.config.quant_levels)

    def _run_encoders(self, symbols, quantizer):
        x = residual_input(symbols)
        quantized, latents = {}, {}
        for n, encoder in enumerate(self.encoders, start=1):
            x, latent = encoder(x)
            if latent is not None:
                quantized[n], latents[n] = quantizer(latent)
        return x, quantized, latents

    def encode(self, stack):
        """
        Encoder side of the codec (no gradients)

        Args:
            stack (ResidualStack): Preprocessed image

        Returns:
            EncodedLatents: Quantized latents per level, soft labels and shared latents
        """
        with no_grad():
            top, _, latents = self._run_encoders(stack.symbols, self._quantize)
            if not self.config.uses_clustering:
                return EncodedLatents(latents=latents)
            labels, c = soft_labels(top, self.cluster_head)
            z_s = shared_latents(self.cluster_head.project(top), c)
            return EncodedLatents(latents=latents, labels=labels,
                                  shared=quantize_hard(z_s.data, self.config.quant_levels))

    def top_input(self, labels, shared_symbols):
        """Decoder-T input rebuilt from stored labels and shared-latent symbols"""
        side = self.config.latent_side(self.levels)
        z = Tensor(dequantize(shared_symbols, self.config.quant_levels))
        return reconstruct_top_features(Tensor(labels.values), z, side)

    def latent_input(self, symbols):
        return Tensor(dequantize(symbols, self.config.quant_levels))

    def decoder_level(self, level, latent, incoming=None):
        """
        Run decoder `level`

        Args:
            level (int): 1..T
            latent (Tensor): Level input (dequantized z_Q or the rebuilt top map)
            incoming (Tensor): Features from decoder level+1 (None at the top)

        Returns:
            tuple: (features for decoder level-1, DlmParams for the level-1 target)
        """
        decoder = self.decoders[level - 1]
        features, raw = decoder(latent, incoming)
        alphabet = self.residuals if level == 1 else self.latent_grid
        params = DlmParams.from_head(raw, decoder.target_channels, self.config.mixtures,
                                     alphabet, conditional=decoder.conditional)
        return features, params

    def cluster_loss(self, top_latent, target_symbols):
        """
        Clustering term: bits for the level T-1 latents under decoder T fed the rebuilt top map

        Args:
            top_latent (Tensor): Output of reconstruct_top_features (or top_input)
            target_symbols (np.ndarray): P x C_d x h x w quantized level T-1 latents

        Returns:
            tuple: (scalar bit Tensor, features for decoder T-1)
        """
        features, params = self.decoder_level(self.levels, top_latent)
        return dlm_nll_bits(params, target_symbols), features

    def forward_full(self, symbols, mask=None):
        """
        Training pass: quantize with straight-through gradients and score every level

        Args:
            symbols (np.ndarray): P x 3 x N x N residual symbols
            mask (np.ndarray): Optional P x N x N selection of positions to score

        Returns:
            ForwardResult: Differentiable bit counts per term plus L_raw
        """
        config = self.config
        top, quantized, latents = self._run_encoders(symbols, self._quantize)
        P = symbols.shape[0]

        labels = None
        if config.uses_clustering:
            labels, c = soft_labels(top, self.cluster_head)
            z_s = shared_latents(self.cluster_head.project(top), c)
            z_s_q, _ = self._quantize(z_s)
            latent = reconstruct_top_features(c, z_s_q, config.latent_side(self.levels))
            raw_bits = side_information_bits(P, config.K, config.shared_length, config.quant_levels)
        else:
            latent = quantized[1]
            raw_bits = float(latents[1].size * np.log2(config.quant_levels))

        terms = {}
        incoming = None
        for level in range(self.levels, 0, -1):
            if level == self.levels and config.uses_clustering:
                terms[self.target_name(level)], incoming = self.cluster_loss(latent, latents[level - 1])
                continue
            if level < self.levels:
                latent = quantized[level]
            incoming, params = self.decoder_level(level, latent, incoming)
            if level == 1:
                residual_mask = None if mask is None else np.broadcast_to(mask[:, None], symbols.shape)
                terms[self.target_name(level)] = dlm_nll_bits(params, symbols, residual_mask)
            else:
                terms[self.target_name(level)] = dlm_nll_bits(params, latents[level - 1])
        return ForwardResult(terms=terms, raw_bits=raw_bits, latents=latents, labels=labels)
