"""Byte symbol vocabulary: 256 raw bytes plus BOS and EOS markers."""

BOS = 256
EOS = 257
VOCAB_SIZE = 258
