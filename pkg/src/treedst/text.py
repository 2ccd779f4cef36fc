"""Utterance tokenization shared by the tracker and the phenomenon tagger."""
from __future__ import annotations

import re

# bracketed open values stay one token; escapes inside them are kept verbatim
_TOKEN = re.compile(r"\[(?:\\.|[^\]\\])*\]|\S+")


def tokenize(utterance: str) -> list[str]:
    return _TOKEN.findall(utterance)
