#!/usr/bin/env python3
"""Regenerates src/unicode_tables.inc from the interpreter's Unicode database.

Emits two tables:
  - merged codepoint ranges whose general category is L* or N*
  - simple lowercase mappings (codepoint -> lowered codepoint) where they differ
"""
import sys
import unicodedata

MAX_CP = 0x110000


def alnum_ranges():
    ranges = []
    start = None
    for cp in range(MAX_CP):
        cat = unicodedata.category(chr(cp))
        is_alnum = cat[0] == "L" or cat[0] == "N"
        if is_alnum and start is None:
            start = cp
        elif not is_alnum and start is not None:
            ranges.append((start, cp - 1))
            start = None
    if start is not None:
        ranges.append((start, MAX_CP - 1))
    return ranges


def lower_pairs():
    pairs = []
    for cp in range(MAX_CP):
        low = chr(cp).lower()
        if len(low) == 1 and ord(low) != cp:
            pairs.append((cp, ord(low)))
    return pairs


def main(out_path):
    ranges = alnum_ranges()
    pairs = lower_pairs()
    with open(out_path, "w") as f:
        f.write("// Generated by scripts/gen_unicode_tables.py -- do not edit.\n")
        f.write("// Unicode data version: %s\n\n" % unicodedata.unidata_version)
        f.write("static constexpr CodepointRange kAlnumRanges[] = {\n")
        for i, (lo, hi) in enumerate(ranges):
            sep = "\n" if i % 6 == 5 else " "
            f.write("{0x%X,0x%X},%s" % (lo, hi, sep))
        f.write("\n};\n\n")
        f.write("static constexpr CasePair kLowerPairs[] = {\n")
        for i, (cp, low) in enumerate(pairs):
            sep = "\n" if i % 6 == 5 else " "
            f.write("{0x%X,0x%X},%s" % (cp, low, sep))
        f.write("\n};\n")
    print("wrote %s: %d ranges, %d case pairs" % (out_path, len(ranges), len(pairs)))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/unicode_tables.inc")
