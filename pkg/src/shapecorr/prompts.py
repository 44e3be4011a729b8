"""Prompt template assets with named placeholders."""
from __future__ import annotations

from importlib import resources

ANSWERS_LIST = "ANSWERS_LIST"
SHAPE_SRC_LABEL = "SHAPE_SRC_LABEL"
SHAPE_TRGT_LABEL = "SHAPE_TRGT_LABEL"

REPAIR_SUFFIX = (
    "\n\nYour previous reply could not be parsed. "
    "Respond in the exact format requested: a single JSON object and nothing else."
)


def _load(name: str) -> str:
    return resources.files("shapecorr").joinpath(f"prompts/{name}").read_text()


def caption_prompt() -> str:
    return _load("caption.txt").strip()


def unify_prompt(answers: list[str]) -> str:
    listing = "\n".join(f"- {a}" for a in answers)
    return _load("unify.txt").strip().replace(ANSWERS_LIST, listing)


def regions_prompt(src_label: str, trgt_label: str) -> str:
    return (
        _load("regions.txt")
        .strip()
        .replace(SHAPE_SRC_LABEL, src_label)
        .replace(SHAPE_TRGT_LABEL, trgt_label)
    )
