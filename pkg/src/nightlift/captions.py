"""Templated scene captions over a closed vocabulary.

Captions are a pure function of per-class object counts, which keeps the
text-conditioning pathway exactly testable.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Mapping, Sequence

CLASS_ORDER = ("box", "cylinder", "sphere")

_PLURALS = {"box": "boxes", "cylinder": "cylinders", "sphere": "spheres"}

MAX_COUNT = 16

UNK_TOKEN = "<unk>"

# Closed template vocabulary; anything outside maps to UNK_TOKEN.
VOCABULARY: tuple[str, ...] = (
    UNK_TOKEN,
    "a",
    "daytime",
    "road",
    "scene",
    "with",
    "and",
    "empty",
    ",",
    *CLASS_ORDER,
    *(_PLURALS[c] for c in CLASS_ORDER),
    *(str(i) for i in range(MAX_COUNT + 1)),
)

TOKEN_IDS = {token: i for i, token in enumerate(VOCABULARY)}


def class_counts(annotations: Iterable) -> dict[str, int]:
    """Count annotations per class, in canonical class order."""
    counter = Counter(
        (ann.cls if hasattr(ann, "cls") else ann["cls"]) for ann in annotations
    )
    return {cls: counter.get(cls, 0) for cls in CLASS_ORDER}


def caption_from_counts(counts: Mapping[str, int]) -> str:
    """Render the deterministic caption for per-class counts."""
    parts = []
    for cls in CLASS_ORDER:
        n = min(int(counts.get(cls, 0)), MAX_COUNT)
        if n <= 0:
            continue
        noun = cls if n == 1 else _PLURALS[cls]
        parts.append(f"{n} {noun}")
    if not parts:
        return "a daytime road scene, empty road"
    if len(parts) == 1:
        listing = parts[0]
    else:
        listing = ", ".join(parts[:-1]) + " and " + parts[-1]
    return f"a daytime road scene with {listing}"


def template_caption(annotations: Iterable) -> str:
    return caption_from_counts(class_counts(annotations))


def caption_from_presence(present_classes: Sequence[str]) -> str:
    """Caption from class presence only (count unknown, reported as 1 each)."""
    return caption_from_counts({cls: 1 for cls in present_classes})


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenizer; commas become their own token."""
    tokens: list[str] = []
    for raw in text.lower().split():
        core = raw.rstrip(",")
        if core:
            tokens.append(core)
        tokens.extend([","] * (len(raw) - len(core)))
    return tokens


def encode(text: str) -> list[int]:
    """Token ids for a caption; out-of-vocabulary tokens map to UNK."""
    ids = [TOKEN_IDS.get(tok, TOKEN_IDS[UNK_TOKEN]) for tok in tokenize(text)]
    return ids if ids else [TOKEN_IDS[UNK_TOKEN]]
