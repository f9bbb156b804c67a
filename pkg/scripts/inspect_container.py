#!/usr/bin/env python3
"""
🔍 Container Inspector
Print the header and section table of a .glc file

Usage:
    python scripts/inspect_container.py image.glc
"""

import argparse
import os
import sys

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.container import Section, read_container
from src.exceptions import ContainerError


def describe(data):
    """
    Summarise a container

    Returns:
        list: Printable lines
    """
    container = read_container(data)
    h = container.header
    total_bits = 8 * len(data)
    lines = [
        "📦 HEADER",
        "-" * 40,
        f"Image:        {h.width}x{h.height}",
        f"Patches:      {h.patches} of {h.N}x{h.N}",
        f"K / C_d:      {h.K} / {h.C_d}",
        f"Levels:       {h.levels}",
        f"Model:        {h.fingerprint.hex()[:16]}",
        "",
        "📋 SECTIONS",
        "-" * 40,
    ]
    for section in Section:
        stream = container.section(section)
        share = 100.0 * stream.bits / total_bits if total_bits else 0.0
        lines.append(f"{section.name:<10} {stream.count:>10} symbols {len(stream.data):>10} bytes {share:6.2f}%")
    lines.append("-" * 40)
    lines.append(f"Total: {len(data)} bytes, {total_bits / (3 * h.height * h.width):.4f} bpsp")
    return lines


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(description='Inspect a .glc container')
    parser.add_argument('path', help='Container file')

    args = parser.parse_args()
    try:
        with open(args.path, 'rb') as f:
            data = f.read()
        print("\n".join(describe(data)))
    except (OSError, ContainerError) as e:
        print(f"❌ Cannot inspect {args.path}: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
