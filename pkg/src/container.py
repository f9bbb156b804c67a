"""
Container Format
Little-endian .glc files: a fixed header, a five-entry section table and the
section payloads, each guarded by CRC-32.

Layout:
    magic "GLCC" | u16 version | u32 H | u32 W | u16 N | u16 K | u16 C_d | u8 levels | 32-byte model fingerprint
    5 x (u8 section id | u64 symbol count | u64 byte length | u32 payload CRC-32)
    u32 CRC-32 of everything above
    payloads in section order
"""

import logging
import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Optional

from .coder import Bitstream
from .exceptions import (BadMagicError, ChecksumError, ContainerError, FingerprintMismatchError,
                         LengthMismatchError, VersionMismatchError)
from .preproc import patch_grid

logger = logging.getLogger(__name__)

MAGIC = b"GLCC"
VERSION = 1
FINGERPRINT_BYTES = 32
MAX_PIXELS = 1 << 28

HEADER = struct.Struct("<4sHIIHHHB32s")
SECTION_ENTRY = struct.Struct("<BQQI")
CRC = struct.Struct("<I")


class Section(IntEnum):
    """Sections in decode order"""
    LABELS = 0
    SHARED = 1
    LATENT2 = 2
    LATENT1 = 3
    RESIDUAL = 4


def latent_section(level):
    return Section.LATENT2 if level == 2 else Section.LATENT1


@dataclass
class ContainerHeader:
    height: int
    width: int
    N: int
    K: int
    C_d: int
    levels: int
    fingerprint: bytes

    def validate(self):
        if not (1 <= self.height and 1 <= self.width and self.height * self.width <= MAX_PIXELS):
            raise ContainerError(f"implausible image size {self.height}x{self.width}")
        if self.N < 8 or self.N % 8 or self.levels not in (1, 2, 3) or self.K < 1 or self.C_d < 1:
            raise ContainerError(f"invalid geometry N={self.N} K={self.K} C_d={self.C_d} levels={self.levels}")
        if len(self.fingerprint) != FINGERPRINT_BYTES:
            raise ContainerError("fingerprint must be 32 bytes")
        return self

    @property
    def patches(self):
        rows, cols = patch_grid((self.height, self.width), self.N)
        return rows * cols

    def expected_counts(self):
        """Symbol count each section must carry for this geometry"""
        P = self.patches
        clustered = self.levels >= 2
        top_side = self.N >> self.levels
        return {
            Section.LABELS: P * self.K if clustered else 0,
            Section.SHARED: self.K * self.C_d * top_side * top_side if clustered else 0,
            Section.LATENT2: P * self.C_d * (self.N >> 2) ** 2 if self.levels == 3 else 0,
            Section.LATENT1: P * self.C_d * (self.N >> 1) ** 2,
            Section.RESIDUAL: 3 * self.height * self.width,
        }


@dataclass
class Container:
    header: ContainerHeader
    sections: Dict[Section, Bitstream] = field(default_factory=dict)

    def section(self, section):
        return self.sections.get(section, Bitstream(b"", 0))

    def section_bits(self):
        return {s: self.section(s).bits for s in Section}


def write_container(header, sections):
    """
    Serialize a container

    Args:
        header (ContainerHeader): Geometry and model fingerprint
        sections (dict): Section -> Bitstream; missing sections are written empty

    Returns:
        bytes: Container bytes
    """
    header.validate()
    container = Container(header, dict(sections))
    head = [HEADER.pack(MAGIC, VERSION, header.height, header.width, header.N, header.K,
                        header.C_d, header.levels, header.fingerprint)]
    payloads = []
    for section in Section:
        stream = container.section(section)
        head.append(SECTION_ENTRY.pack(int(section), stream.count, len(stream.data), zlib.crc32(stream.data)))
        payloads.append(stream.data)
    head_bytes = b"".join(head)
    data = head_bytes + CRC.pack(zlib.crc32(head_bytes)) + b"".join(payloads)
    logger.debug(f"Wrote container: {len(data)} bytes, header {header_size()} bytes")
    return data


def header_size():
    return HEADER.size + len(Section) * SECTION_ENTRY.size + CRC.size


def read_container(data, fingerprint=None):
    """
    Parse and validate a container

    Args:
        data (bytes): Container bytes
        fingerprint (bytes): If given, the model fingerprint the container must carry

    Returns:
        Container: Header and section bitstreams

    Raises:
        ContainerError: Any malformed input (bad magic, version, lengths, checksums, fingerprint)
    """
    data = bytes(data)
    try:
        if data[:4] != MAGIC:
            raise BadMagicError(f"not a .glc container (magic {data[:4]!r})")
        if len(data) < header_size():
            raise LengthMismatchError(f"container truncated inside header ({len(data)} bytes)")
        magic, version, H, W, N, K, C_d, levels, stored_fingerprint = HEADER.unpack_from(data, 0)
        if version != VERSION:
            raise VersionMismatchError(f"container version {version}, reader supports {VERSION}")

        entries = []
        offset = HEADER.size
        for expected in Section:
            section_id, count, length, crc = SECTION_ENTRY.unpack_from(data, offset)
            offset += SECTION_ENTRY.size
            if section_id != expected:
                raise ContainerError(f"section table out of order: got id {section_id}, expected {int(expected)}")
            entries.append((expected, count, length, crc))
        (header_crc,) = CRC.unpack_from(data, offset)
        if zlib.crc32(data[:offset]) != header_crc:
            raise ChecksumError("header checksum mismatch")
        offset += CRC.size

        header = ContainerHeader(H, W, N, K, C_d, levels, stored_fingerprint).validate()
        if fingerprint is not None and bytes(fingerprint) != stored_fingerprint:
            raise FingerprintMismatchError(
                f"container made with model {stored_fingerprint.hex()[:12]}, "
                f"loaded model is {bytes(fingerprint).hex()[:12]}"
            )

        total = sum(length for _, _, length, _ in entries)
        if offset + total != len(data):
            raise LengthMismatchError(f"section lengths sum to {total} but {len(data) - offset} payload bytes follow")

        expected_counts = header.expected_counts()
        sections = {}
        for section, count, length, crc in entries:
            if count != expected_counts[section]:
                raise LengthMismatchError(f"{section.name} carries {count} symbols, geometry needs {expected_counts[section]}")
            if section == Section.LABELS and length != 2 * count:
                raise LengthMismatchError(f"label section is {length} bytes for {count} words")
            payload = data[offset:offset + length]
            if zlib.crc32(payload) != crc:
                raise ChecksumError(f"{section.name} payload checksum mismatch")
            sections[section] = Bitstream(payload, count)
            offset += length
        return Container(header, sections)
    except struct.error as e:
        raise LengthMismatchError(f"container truncated: {e}") from e
