"""
Entropy Model
Discretized logistic mixtures over two alphabets: the 256 residual symbols
(with sequential Y -> Cr -> Cb channel conditioning) and the 25-level latent grid.

The differentiable NLL drives training; the float64 bin probabilities and the
integer CDF tables drive the arithmetic coder.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, softmax as np_softmax

from .exceptions import DimensionError
from .tensor import Tensor, get_dtype, log_softmax, logsumexp, masked_fill

logger = logging.getLogger(__name__)

LOG_SCALE_MIN = math.log(1e-7)
PROB_FLOOR = 1e-12
CDF_PRECISION = 16
CDF_TOTAL = 1 << CDF_PRECISION
CHUNK_POSITIONS = 2048


@dataclass(frozen=True)
class Alphabet:
    """Symbol grid: bin centres in [-1, 1] and the half width of each bin"""
    name: str
    values: np.ndarray
    half_width: float

    @property
    def size(self):
        return len(self.values)


def residual_alphabet():
    """256 integer symbols mapped to [-1, 1] via x / 127.5 - 1"""
    return Alphabet("residual", np.arange(256, dtype=np.float64) / 127.5 - 1.0, 1.0 / 255.0)


def latent_alphabet(levels=25):
    """Quantizer grid -1 + 2i / (levels - 1)"""
    return Alphabet("latent", -1.0 + 2.0 * np.arange(levels, dtype=np.float64) / (levels - 1), 1.0 / (levels - 1))


def channel_scan_order(channel):
    """
    Channels whose decoded values condition `channel` (fixed Y -> Cr -> Cb order)

    Returns:
        list: [] for Y, [channel - 1] otherwise
    """
    return [] if channel == 0 else [channel - 1]


def channel_context(symbols, alphabet):
    """
    Per-position context values for the residual model

    Args:
        symbols (np.ndarray): P x C x h x w target symbols
        alphabet (Alphabet): Maps symbols to [-1, 1]

    Returns:
        np.ndarray: P x C x h x w; channel c holds channel c-1's values, Y holds 0
    """
    values = alphabet.values[np.asarray(symbols, dtype=np.int64)]
    context = np.zeros_like(values)
    for channel in range(values.shape[1]):
        for source in channel_scan_order(channel):
            context[:, channel] = values[:, source]
    return context


@dataclass
class DlmParams:
    """
    Mixture parameters laid out P x C x M x h x w

    coeffs is only present for the residual model, where it mixes the previous
    channel's value into the means.
    """
    logits: Tensor
    means: Tensor
    log_scales: Tensor
    coeffs: Optional[Tensor]
    alphabet: Alphabet

    @property
    def conditional(self):
        return self.coeffs is not None

    @classmethod
    def from_head(cls, raw, channels, mixtures, alphabet, conditional):
        """
        Split a 1x1-conv head output into mixture parameters

        Args:
            raw (Tensor): P x (channels * n * mixtures) x h x w, n = 4 if conditional else 3
            channels (int): Target channels
            mixtures (int): Components per channel
            alphabet (Alphabet): Target alphabet
            conditional (bool): Carry channel-mixing coefficients
        """
        n = 4 if conditional else 3
        P, total, h, w = raw.shape
        if total != channels * n * mixtures:
            raise DimensionError("channels", channels * n * mixtures, total, op="DlmParams.from_head")
        r = raw.reshape(P, channels, n, mixtures, h, w)
        return cls(
            logits=r[:, :, 0],
            means=r[:, :, 1],
            log_scales=r[:, :, 2].clamp_min(LOG_SCALE_MIN),
            coeffs=r[:, :, 3].tanh() if conditional else None,
            alphabet=alphabet,
        )

    def channel_arrays(self, channel=None):
        """
        Float64 arrays flattened to (positions, M)

        Args:
            channel (int): Restrict to one channel (positions ordered P, h, w);
                None flattens every channel (positions ordered P, C, h, w)
        """
        def flat(t):
            a = t.data.astype(np.float64)
            if channel is not None:
                return a[:, channel].transpose(0, 2, 3, 1).reshape(-1, a.shape[2])
            return a.transpose(0, 1, 3, 4, 2).reshape(-1, a.shape[2])

        return DlmArrays(
            logits=flat(self.logits),
            means=flat(self.means),
            log_scales=flat(self.log_scales),
            coeffs=flat(self.coeffs) if self.coeffs is not None else None,
            alphabet=self.alphabet,
        )


@dataclass
class DlmArrays:
    """Float64 mixture parameters for a flat run of positions, each (n, M)"""
    logits: np.ndarray
    means: np.ndarray
    log_scales: np.ndarray
    coeffs: Optional[np.ndarray]
    alphabet: Alphabet

    def __len__(self):
        return self.logits.shape[0]

    def take(self, index):
        """Subset of positions (mask or slice)"""
        return DlmArrays(
            self.logits[index], self.means[index], self.log_scales[index],
            None if self.coeffs is None else self.coeffs[index], self.alphabet,
        )


def bin_probabilities(arrays, context=None):
    """
    Probability of every symbol at every position

    The mixture CDF is evaluated at the A-1 interior bin edges; the outer bins
    extend to -inf / +inf, so each row telescopes to exactly 1.

    Args:
        arrays (DlmArrays): n positions
        context (np.ndarray): n previous-channel values in [-1, 1] (residual model only)

    Returns:
        np.ndarray: n x A float64
    """
    alphabet = arrays.alphabet
    means = arrays.means
    if arrays.coeffs is not None and context is not None:
        means = means + arrays.coeffs * np.asarray(context, dtype=np.float64)[:, None]
    inv_scales = np.exp(-np.maximum(arrays.log_scales, LOG_SCALE_MIN))
    edges = alphabet.values[:-1] + alphabet.half_width

    weights = np_softmax(arrays.logits, axis=1)
    cdf = expit((edges[None, None, :] - means[:, :, None]) * inv_scales[:, :, None])
    mixed = (weights[:, :, None] * cdf).sum(axis=1)

    n = mixed.shape[0]
    full = np.concatenate([np.zeros((n, 1)), mixed, np.ones((n, 1))], axis=1)
    return np.clip(np.diff(full, axis=1), 0.0, None)


def dlm_bin_prob(arrays, symbol, context=None):
    """
    P(symbol) at each position

    Raises:
        ValueError: symbol outside the alphabet
    """
    symbol = np.asarray(symbol)
    if np.any((symbol < 0) | (symbol >= arrays.alphabet.size)):
        raise ValueError(f"symbol outside the {arrays.alphabet.size}-symbol alphabet")
    probs = bin_probabilities(arrays, context)
    return probs[np.arange(len(probs)), np.broadcast_to(symbol, (len(probs),))]


def dlm_nll_bits(params, symbols, mask=None):
    """
    Code length -sum log2 P(symbols) under the mixture, differentiable

    Args:
        params (DlmParams): P x C x M x h x w parameters
        symbols (np.ndarray): P x C x h x w integer targets
        mask (np.ndarray): Optional P x C x h x w (or broadcastable) selection

    Returns:
        Tensor: Scalar bit count
    """
    alphabet = params.alphabet
    symbols = np.asarray(symbols, dtype=np.int64)
    expected = params.means.shape[:2] + params.means.shape[3:]
    if symbols.shape != expected:
        raise DimensionError("symbols", expected, symbols.shape, op="dlm_nll_bits")

    dtype = get_dtype()
    centres = alphabet.values[symbols].astype(dtype)[:, :, None]
    means = params.means
    if params.coeffs is not None:
        context = channel_context(symbols, alphabet).astype(dtype)[:, :, None]
        means = means + params.coeffs * context

    centred = Tensor(centres) - means
    inv_scales = (-params.log_scales).exp()
    plus_in = inv_scales * (centred + alphabet.half_width)
    minus_in = inv_scales * (centred - alphabet.half_width)

    top = (symbols == alphabet.size - 1)[:, :, None]
    bottom = (symbols == 0)[:, :, None]
    cdf_plus = masked_fill(plus_in.sigmoid(), top, 1.0)
    cdf_minus = masked_fill(minus_in.sigmoid(), bottom, 0.0)
    probs = (cdf_plus - cdf_minus).clamp_min(PROB_FLOOR)

    log_probs = logsumexp(log_softmax(params.logits, axis=2) + probs.log(), axis=2)
    if mask is not None:
        log_probs = log_probs * np.broadcast_to(np.asarray(mask, dtype=dtype), log_probs.shape)
    return log_probs.sum() * (-1.0 / math.log(2.0))


def cdf_from_probabilities(probs):
    """
    Integer CDF tables with total 2^16 and every width >= 1

    Each symbol first receives one unit; the remaining budget is distributed by
    floor plus largest remainder, ties going to the lower index. Non-finite or
    all-zero rows fall back to uniform.

    Args:
        probs (np.ndarray): n x A probabilities

    Returns:
        np.ndarray: n x (A+1) int64 cumulative table starting at 0
    """
    probs = np.nan_to_num(np.asarray(probs, dtype=np.float64), nan=0.0, posinf=0.0, neginf=0.0)
    probs = np.clip(probs, 0.0, None)
    n, A = probs.shape
    if A > CDF_TOTAL:
        raise ValueError(f"alphabet of {A} symbols exceeds {CDF_PRECISION}-bit precision")
    totals = probs.sum(axis=1, keepdims=True)
    degenerate = ~(totals[:, 0] > 0)
    probs[degenerate] = 1.0
    totals[degenerate] = A

    budget = CDF_TOTAL - A
    scaled = probs / totals * budget
    base = np.floor(scaled).astype(np.int64)
    remainder = scaled - base
    short = np.clip(budget - base.sum(axis=1), 0, A)

    widths = base + 1
    k = int(short.max()) if n else 0
    if k:
        # short-th largest remainder per row; only the top k columns get sorted
        top = np.take_along_axis(remainder, np.argpartition(-remainder, k - 1, axis=1)[:, :k], axis=1)
        top = -np.sort(-top, axis=1)
        threshold = top[np.arange(n), np.maximum(short - 1, 0)][:, None]
        above = remainder > threshold
        tied = remainder == threshold
        need = (short - above.sum(axis=1))[:, None]
        extra = above | (tied & (np.cumsum(tied, axis=1) <= need))
        widths += extra.astype(np.int64)

    # Float slop can leave the sum a unit off; settle it on the widest symbol
    drift = CDF_TOTAL - widths.sum(axis=1)
    widest = widths.argmax(axis=1)
    widths[np.arange(n), widest] += drift

    cdf = np.zeros((n, A + 1), dtype=np.int64)
    np.cumsum(widths, axis=1, out=cdf[:, 1:])
    return cdf


def iter_cdf_tables(arrays, context=None):
    """
    Yield (slice, tables) over fixed-size chunks of positions

    Encoder and decoder walk the same chunks, so tables never need to be held
    for a whole image at once.
    """
    for start in range(0, len(arrays), CHUNK_POSITIONS):
        part = slice(start, start + CHUNK_POSITIONS)
        ctx = None if context is None else np.asarray(context)[part]
        yield part, cdf_from_probabilities(bin_probabilities(arrays.take(part), ctx))


def dlm_cdf_table(arrays, context=None):
    """
    Coder tables for a run of positions

    Args:
        arrays (DlmArrays): n positions
        context (np.ndarray): Optional n context values

    Returns:
        np.ndarray: n x (A+1) int64
    """
    tables = [table for _, table in iter_cdf_tables(arrays, context)]
    if not tables:
        return np.zeros((0, arrays.alphabet.size + 1), dtype=np.int64)
    return np.concatenate(tables, axis=0)


def table_code_length(cdf, symbols):
    """Ideal bits -sum log2(width / 2^16) of symbols under integer tables"""
    symbols = np.asarray(symbols, dtype=np.int64)
    rows = np.arange(len(symbols))
    widths = cdf[rows, symbols + 1] - cdf[rows, symbols]
    return float(-np.log2(widths / CDF_TOTAL).sum())
