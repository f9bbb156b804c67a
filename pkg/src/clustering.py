"""
Patch Clustering
Soft cluster labels, cluster-shared latents and the top-level feature map they rebuild.

Labels are stored as 16-bit fixed-point words (denominator 65535) so that the
encoder and decoder mix exactly the same values.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError
from .layers import Conv2d, Linear, Module, ResBlock
from .tensor import Function, Tensor, is_grad_enabled, relu, softmax, straight_through

logger = logging.getLogger(__name__)

FIXED_POINT_ONE = 65535
LABEL_BITS = 16
EMPTY_CLUSTER_MASS = 2.0 ** -12


@dataclass
class SoftLabels:
    """P x K soft assignments as uint16 words; each row sums to 65535"""
    words: np.ndarray

    @property
    def P(self):
        return self.words.shape[0]

    @property
    def K(self):
        return self.words.shape[1]

    @property
    def values(self):
        """Float values in [0, 1], identical on both sides of the codec"""
        return self.words.astype(np.float32) / np.float32(FIXED_POINT_ONE)

    def hard_assignment(self):
        return self.words.argmax(axis=1)

    @classmethod
    def from_probabilities(cls, probs):
        """
        Round each row to 16-bit fixed point; the largest entry absorbs the rounding slack

        Args:
            probs (np.ndarray): P x K rows on the simplex
        """
        probs = np.nan_to_num(np.asarray(probs, dtype=np.float64), nan=0.0)
        words = np.rint(np.clip(probs, 0.0, 1.0) * FIXED_POINT_ONE).astype(np.int64)
        top = probs.argmax(axis=1)
        rows = np.arange(len(words))
        words[rows, top] += FIXED_POINT_ONE - words.sum(axis=1)
        return cls(words.astype(np.uint16))

    @classmethod
    def from_bytes(cls, payload, P, K):
        words = np.frombuffer(payload, dtype="<u2", count=P * K).reshape(P, K)
        return cls(words.astype(np.uint16))

    def to_bytes(self):
        return self.words.astype("<u2").tobytes()


class ClusterHead(Module):
    """
    Classification branch (conv3x3 -> ReLU -> conv5x5/2 -> flatten -> FC -> softmax)
    and the share branch that projects features to the shared-latent space
    """

    def __init__(self, config, rng):
        self.config = config
        C_f, C_d = config.C_f, config.C_d
        self.classify_conv = Conv2d(C_f, C_f, 3, rng)
        self.classify_down = Conv2d(C_f, C_d, 5, rng, stride=2, padding=2)
        self.classifier = Linear(config.head_flatten_length, config.K, rng)
        self.share_block = ResBlock(C_f, rng)
        self.share_proj = Conv2d(C_f, C_d, 3, rng)

    def label_probabilities(self, features):
        """P x C_f x s x s features -> P x K softmax"""
        x = self.classify_down(relu(self.classify_conv(features)))
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.config.head_flatten_length:
            raise DimensionError("L", self.config.head_flatten_length, flat.shape[1], op="ClusterHead")
        return softmax(self.classifier(flat), axis=1)

    def project(self, features):
        """P x C_f x s x s features -> P x L rows of the shared space"""
        x = self.share_proj(self.share_block(features))
        return x.reshape(x.shape[0], -1)


def soft_labels(features, head):
    """
    Soft cluster labels for the top-level features

    Returns:
        tuple: (SoftLabels, Tensor C) where C carries the fixed-point values
            forward and routes gradients into the softmax
    """
    probs = head.label_probabilities(features)
    labels = SoftLabels.from_probabilities(probs.data)
    if is_grad_enabled() and probs.requires_grad:
        return labels, straight_through(probs, labels.values)
    return labels, Tensor(labels.values)


class WeightedClusterMean(Function):
    """
    z_s[k] = sum_p C[p,k] h[p] / sum_p C[p,k]

    Clusters with total mass below 2^-12 take the unweighted mean of all rows
    instead. Sums run over p in index order.
    """

    def forward(self, h, c):
        if h.ndim != 2 or c.ndim != 2 or h.shape[0] != c.shape[0]:
            raise DimensionError("P", h.shape[0], c.shape[0] if c.ndim else c.shape, op="shared_latents")
        P, L = h.shape
        K = c.shape[1]
        numer = np.zeros((K, L), dtype=h.dtype)
        mass = np.zeros(K, dtype=h.dtype)
        total = np.zeros(L, dtype=h.dtype)
        for p in range(P):
            numer += c[p][:, None] * h[p][None, :]
            mass += c[p]
            total += h[p]

        self.empty = mass < EMPTY_CLUSTER_MASS
        safe_mass = np.where(self.empty, 1, mass)
        out = numer / safe_mass[:, None]
        out[self.empty] = total / P
        if self.empty.any():
            logger.debug(f"{int(self.empty.sum())} empty cluster(s) fell back to the global mean")

        self.h, self.c, self.mass, self.out = h, c, safe_mass, out
        return out

    def backward(self, grad):
        P = self.h.shape[0]
        live = ~self.empty
        scaled = np.where(live[:, None], grad / self.mass[:, None], 0)

        d_h = self.c @ scaled
        d_h = d_h + grad[self.empty].sum(axis=0)[None, :] / P
        # d out_k / d C[p,k] = (h_p - out_k) / mass_k
        d_c = self.h @ scaled.T - (scaled * self.out).sum(axis=1)[None, :]
        return d_h.astype(self.h.dtype), d_c.astype(self.c.dtype)


class ClusterMix(Function):
    """out[p] = sum_k C[p,k] z[k], accumulated over k in index order"""

    def forward(self, c, z):
        if c.shape[1] != z.shape[0]:
            raise DimensionError("K", z.shape[0], c.shape[1], op="cluster_mix")
        out = np.zeros((c.shape[0], z.shape[1]), dtype=z.dtype)
        for k in range(c.shape[1]):
            out += c[:, k][:, None] * z[k][None, :]
        self.c, self.z = c, z
        return out

    def backward(self, grad):
        return grad @ self.z.T, self.c.T @ grad


def shared_latents(h, c):
    """
    Cluster-shared latents

    Args:
        h (Tensor): P x L projected features
        c (Tensor): P x K soft labels

    Returns:
        Tensor: K x L
    """
    return WeightedClusterMean.apply(h, c)


def reconstruct_top_features(c, z_shared, side):
    """
    Top-level feature map rebuilt from labels and quantized shared latents

    Args:
        c (Tensor): P x K soft labels
        z_shared (Tensor): K x L quantized shared latents
        side (int): Spatial side; L = C_d * side^2

    Returns:
        Tensor: P x C_d x side x side
    """
    mixed = ClusterMix.apply(c, z_shared)
    L = mixed.shape[1]
    if L % (side * side) != 0:
        raise DimensionError("L", f"multiple of {side * side}", L, op="reconstruct_top_features")
    return mixed.reshape(mixed.shape[0], L // (side * side), side, side)


def side_information_bits(P, K, L, quant_levels):
    """Bits spent storing labels (16 per entry) and uniform-coded shared latents"""
    return P * K * LABEL_BITS + K * L * math.log2(quant_levels)
