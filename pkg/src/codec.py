"""
Codec Pipeline
Compress an RGB image into a .glc container and decompress it back, bit-exactly.

Sections are produced in decode order: soft labels and shared latents first,
then each latent level and finally the residuals, every one coded under
tables computed by the same decoder_level call on both sides.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import checkpoint_fingerprint, load_checkpoint, serialize_state
from .clustering import SoftLabels
from .coder import ArithmeticDecoder, ArithmeticEncoder, Bitstream, decode_uniform, encode_uniform
from .container import (Container, ContainerHeader, Section, latent_section,
                        read_container, write_container)
from .entropy_model import iter_cdf_tables
from .exceptions import CheckpointError, CodecError, ContainerError
from .network import HierarchicalModel
from .preproc import ResidualStack, postprocess, preprocess, read_image, write_image
from .tensor import no_grad

logger = logging.getLogger(__name__)


def bpsp(bits, height, width):
    """Bits per sub-pixel: bits / (3 H W)"""
    return bits / (3.0 * height * width)


@dataclass
class CompressionStats:
    height: int
    width: int
    total_bits: int
    section_bits: Dict[str, int]
    components: Dict[str, float] = field(default_factory=dict)
    encode_seconds: float = 0.0

    @property
    def bpsp(self):
        return bpsp(self.total_bits, self.height, self.width)

    @property
    def header_bits(self):
        return self.total_bits - sum(self.section_bits.values())

    def component_bpsp(self):
        """Loss-term name -> bpsp of the section(s) that carry it, plus header_bpsp"""
        out = {name: bpsp(bits, self.height, self.width) for name, bits in self.components.items()}
        out["header_bpsp"] = bpsp(self.header_bits, self.height, self.width)
        return out


def _encode_positions(encoder, arrays, symbols, context=None):
    for part, table in iter_cdf_tables(arrays, context):
        encoder.encode_table(symbols[part], table)


def _decode_positions(decoder, arrays, context=None):
    out = np.zeros(len(arrays), dtype=np.int64)
    for part, table in iter_cdf_tables(arrays, context):
        out[part] = decoder.decode_table(table)
    return out


class Codec:
    """
    A model plus the fingerprint of the checkpoint it came from

    Args:
        model (HierarchicalModel): Trained (or freshly initialised) model
        fingerprint (bytes): SHA-256 of the checkpoint bytes and config
    """

    def __init__(self, model, fingerprint):
        self.model = model
        self.config = model.config
        self.fingerprint = bytes(fingerprint)

    @classmethod
    def from_checkpoint(cls, path):
        state, config, fingerprint, _ = load_checkpoint(path)
        model = HierarchicalModel(config)
        try:
            model.load_state_dict(state)
        except CheckpointError as e:
            raise CheckpointError(f"{path} does not match its config sidecar: {e}") from e
        return cls(model, fingerprint)

    @classmethod
    def from_model(cls, model):
        """Fingerprint an in-memory model as if it had been saved"""
        return cls(model, checkpoint_fingerprint(serialize_state(model.state_dict()), model.config))

    # ------------------------------------------------------------------
    # Section coding
    # ------------------------------------------------------------------

    def _encode_latent(self, params, symbols):
        encoder = ArithmeticEncoder()
        _encode_positions(encoder, params.channel_arrays(), symbols.reshape(-1).astype(np.int64))
        return Bitstream(encoder.finish(), symbols.size)

    def _decode_latent(self, params, stream, shape):
        decoder = ArithmeticDecoder(stream.data)
        return _decode_positions(decoder, params.channel_arrays()).reshape(shape).astype(np.uint8)

    def _encode_residuals(self, params, stack):
        """Y, then Cr, then Cb; only positions inside the original image are coded"""
        valid = stack.valid_mask().reshape(-1)
        values = params.alphabet.values
        encoder = ArithmeticEncoder()
        context = None
        for channel in range(3):
            channel_symbols = stack.symbols[:, channel].reshape(-1)[valid].astype(np.int64)
            arrays = params.channel_arrays(channel).take(valid)
            _encode_positions(encoder, arrays, channel_symbols, context)
            context = values[channel_symbols]
        return Bitstream(encoder.finish(), 3 * int(valid.sum()))

    def _decode_residuals(self, params, stream, orig_dims, P):
        N = self.config.N
        stack = ResidualStack(np.zeros((P, 3, N, N), dtype=np.uint8), N, orig_dims)
        valid = stack.valid_mask().reshape(-1)
        values = params.alphabet.values
        decoder = ArithmeticDecoder(stream.data)
        context = None
        for channel in range(3):
            arrays = params.channel_arrays(channel).take(valid)
            decoded = _decode_positions(decoder, arrays, context)
            flat = stack.symbols[:, channel].reshape(-1)
            flat[valid] = decoded
            stack.symbols[:, channel] = flat.reshape(P, N, N)
            context = values[decoded]
        return stack

    # ------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------

    def compress(self, img, verify=False):
        """
        Compress an RgbImage

        Args:
            img (RgbImage): Image to code
            verify (bool): Decode the result and compare before returning

        Returns:
            tuple: (container bytes, CompressionStats)
        """
        start = time.perf_counter()
        config = self.config
        model = self.model
        sections = {}

        with threadpool_limits(limits=1), no_grad():
            stack = preprocess(img, config.N)
            encoded = model.encode(stack)

            if config.uses_clustering:
                sections[Section.LABELS] = Bitstream(encoded.labels.to_bytes(), encoded.labels.words.size)
                sections[Section.SHARED] = encode_uniform(encoded.shared, config.quant_levels)
                latent = model.top_input(encoded.labels, encoded.shared)
            else:
                sections[Section.LATENT1] = encode_uniform(encoded.latents[1], config.quant_levels)
                latent = None

            incoming = None
            for level in range(model.levels, 0, -1):
                if level < model.levels or latent is None:
                    latent = model.latent_input(encoded.latents[level])
                incoming, params = model.decoder_level(level, latent, incoming)
                if level == 1:
                    sections[Section.RESIDUAL] = self._encode_residuals(params, stack)
                else:
                    sections[latent_section(level - 1)] = self._encode_latent(params, encoded.latents[level - 1])

        header = ContainerHeader(img.height, img.width, config.N, config.K, config.C_d,
                                 config.levels, self.fingerprint)
        data = write_container(header, sections)
        stats = self._stats(header, Container(header, sections), len(data) * 8)
        stats.encode_seconds = time.perf_counter() - start
        logger.info(f"Compressed {img.height}x{img.width} image to {len(data)} bytes ({stats.bpsp:.3f} bpsp)")

        if verify:
            restored = self.decompress(data)
            if not np.array_equal(restored.pixels, img.pixels):
                raise CodecError("verification failed: decoded image differs from the input")
            logger.info("✅ Verified round trip")
        return data, stats

    def decompress(self, data):
        """
        Rebuild the exact image from container bytes

        Raises:
            ContainerError: Malformed container or a different model's fingerprint
            StreamError: Payload that does not decode under the model's tables
        """
        config = self.config
        model = self.model
        container = read_container(data, fingerprint=self.fingerprint)
        header = container.header
        if (header.N, header.K, header.C_d, header.levels) != (config.N, config.K, config.C_d, config.levels):
            raise ContainerError(
                f"container geometry N={header.N} K={header.K} C_d={header.C_d} levels={header.levels} "
                f"does not match the model"
            )
        P = header.patches
        C_d = config.C_d

        with threadpool_limits(limits=1), no_grad():
            latents = {}
            if config.uses_clustering:
                labels = SoftLabels.from_bytes(container.section(Section.LABELS).data, P, config.K)
                shared = decode_uniform(container.section(Section.SHARED), config.quant_levels)
                shared = shared.reshape(config.K, config.shared_length).astype(np.uint8)
                latent = model.top_input(labels, shared)
            else:
                side = config.latent_side(1)
                latents[1] = decode_uniform(container.section(Section.LATENT1), config.quant_levels) \
                    .reshape(P, C_d, side, side).astype(np.uint8)
                latent = None

            incoming = None
            stack = None
            for level in range(model.levels, 0, -1):
                if level < model.levels or latent is None:
                    latent = model.latent_input(latents[level])
                incoming, params = model.decoder_level(level, latent, incoming)
                if level == 1:
                    stack = self._decode_residuals(params, container.section(Section.RESIDUAL),
                                                   (header.height, header.width), P)
                else:
                    side = config.latent_side(level - 1)
                    latents[level - 1] = self._decode_latent(
                        params, container.section(latent_section(level - 1)), (P, C_d, side, side)
                    )
            return postprocess(stack)

    def _stats(self, header, container, total_bits):
        bits = container.section_bits()
        components = {}
        for level in range(1, self.model.levels + 1):
            section = Section.RESIDUAL if level == 1 else latent_section(level - 1)
            components[self.model.target_name(level)] = bits[section]
        if self.config.uses_clustering:
            components["L_raw"] = bits[Section.LABELS] + bits[Section.SHARED]
        else:
            components["L_raw"] = bits[Section.LATENT1]
        return CompressionStats(
            height=header.height,
            width=header.width,
            total_bits=total_bits,
            section_bits={s.name: b for s, b in bits.items()},
            components=components,
        )


def compress(image_path, checkpoint_path, out_path, verify=False):
    """Read an image, compress it with a checkpoint and write the container"""
    codec = Codec.from_checkpoint(checkpoint_path)
    data, stats = codec.compress(read_image(image_path), verify=verify)
    with open(out_path, "wb") as f:
        f.write(data)
    logger.info(f"💾 Wrote {out_path}", extra={"bpsp": round(stats.bpsp, 4), "bytes": len(data)})
    return stats


def decompress(container_path, checkpoint_path, out_path):
    """Decode a container with a checkpoint and write the image"""
    codec = Codec.from_checkpoint(checkpoint_path)
    with open(container_path, "rb") as f:
        data = f.read()
    img = codec.decompress(data)
    write_image(out_path, img)
    logger.info(f"💾 Wrote {out_path} ({img.height}x{img.width})")
    return img
