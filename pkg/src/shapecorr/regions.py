"""Semantic region sets per shape and the cross-shape mapping between them."""
from __future__ import annotations

import json
from dataclasses import dataclass

from . import prompts
from .oracle import OracleBackend
from .textnorm import normalize_label


class RegionParseError(ValueError):
    """The chat response could not be parsed into valid region structures."""


@dataclass(frozen=True)
class RegionSet:
    """Ordered, distinct, lowercase region names for one shape class."""

    class_name: str
    regions: tuple[str, ...]

    def __post_init__(self):
        if not self.regions:
            raise ValueError(f"region set for {self.class_name!r} is empty")
        if any(not r for r in self.regions):
            raise ValueError("region names must be non-empty")
        if len(set(self.regions)) != len(self.regions):
            raise ValueError(f"duplicate region names in {list(self.regions)}")

    def index(self, name: str) -> int:
        return self.regions.index(name)


@dataclass(frozen=True)
class SemanticMapping:
    """Relation between two region sets; a source region may map to several targets."""

    pairs: tuple[tuple[str, str], ...]

    def targets_of(self, source: str) -> tuple[str, ...]:
        return tuple(t for s, t in self.pairs if s == source)

    def sources(self) -> set[str]:
        return {s for s, _ in self.pairs}

    def targets(self) -> set[str]:
        return {t for _, t in self.pairs}

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self.pairs


def validate_mapping(mapping: SemanticMapping, regions1: RegionSet, regions2: RegionSet) -> SemanticMapping:
    for s, t in mapping.pairs:
        if s not in regions1.regions:
            raise RegionParseError(f"mapping pair ({s!r}, {t!r}) references undeclared source region {s!r}")
        if t not in regions2.regions:
            raise RegionParseError(f"mapping pair ({s!r}, {t!r}) references undeclared target region {t!r}")
    return mapping


def _first_json_object(text: str) -> dict:
    """First balanced-brace block that parses as a JSON object."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escape = False
        for i in range(start, len(text)):
            c = text[i]
            if in_string:
                if escape:
                    escape = False
                elif c == "\\":
                    escape = True
                elif c == '"':
                    in_string = False
                continue
            if c == '"':
                in_string = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start : i + 1]
                    try:
                        obj = json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    raise RegionParseError("no parseable JSON object found in response")


def _clean_names(raw, field: str) -> tuple[str, ...]:
    if not isinstance(raw, list) or not raw:
        raise RegionParseError(f"{field} must be a non-empty list")
    names = tuple(normalize_label(str(n)) for n in raw)
    if any(not n for n in names):
        raise RegionParseError(f"{field} contains an empty name")
    if len(set(names)) != len(names):
        raise RegionParseError(f"{field} contains duplicates: {list(names)}")
    return names


def parse_mapping_response(text: str, class1: str = "", class2: str = "") -> tuple[RegionSet, RegionSet, SemanticMapping]:
    """Parse {"regions_1": [...], "regions_2": [...], "mapping": [[s, t], ...]}.

    The JSON object may be embedded in surrounding prose; names are lowercased
    and trimmed; every mapping endpoint must be declared in its region list.
    """
    obj = _first_json_object(text)
    for key in ("regions_1", "regions_2", "mapping"):
        if key not in obj:
            raise RegionParseError(f"response JSON lacks key {key!r}")
    names1 = _clean_names(obj["regions_1"], "regions_1")
    names2 = _clean_names(obj["regions_2"], "regions_2")
    if not isinstance(obj["mapping"], list):
        raise RegionParseError("mapping must be a list of [source, target] pairs")
    pairs = []
    for entry in obj["mapping"]:
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise RegionParseError(f"malformed mapping entry: {entry!r}")
        pair = (normalize_label(str(entry[0])), normalize_label(str(entry[1])))
        if pair not in pairs:
            pairs.append(pair)
    regions1 = RegionSet(class_name=class1, regions=names1)
    regions2 = RegionSet(class_name=class2, regions=names2)
    mapping = validate_mapping(SemanticMapping(pairs=tuple(pairs)), regions1, regions2)
    return regions1, regions2, mapping


def generate_regions_and_mapping(
    class1: str, class2: str, oracle: OracleBackend
) -> tuple[RegionSet, RegionSet, SemanticMapping]:
    """Query the chat oracle for (R1, R2) and the mapping between them.

    Unparseable responses are retried once with a repair suffix. Same-class
    pairs ignore the model's mapping and use the identity relation on R1.
    """
    c1 = normalize_label(class1)
    c2 = normalize_label(class2)
    if not c1 or not c2:
        raise ValueError("class labels must be non-empty")
    prompt = prompts.regions_prompt(c1, c2)
    response = oracle.chat([{"role": "user", "content": prompt}])
    try:
        regions1, regions2, mapping = parse_mapping_response(response, c1, c2)
    except RegionParseError:
        retry = oracle.chat([{"role": "user", "content": prompt + prompts.REPAIR_SUFFIX}])
        regions1, regions2, mapping = parse_mapping_response(retry, c1, c2)

    if c1 == c2:
        regions2 = RegionSet(class_name=c2, regions=regions1.regions)
        mapping = SemanticMapping(pairs=tuple((r, r) for r in regions1.regions))
    return regions1, regions2, mapping


def to_json(regions1: RegionSet, regions2: RegionSet, mapping: SemanticMapping) -> dict:
    return {
        "class_1": regions1.class_name,
        "class_2": regions2.class_name,
        "regions_1": list(regions1.regions),
        "regions_2": list(regions2.regions),
        "mapping": [list(p) for p in mapping.pairs],
    }


def from_json(data: dict) -> tuple[RegionSet, RegionSet, SemanticMapping]:
    regions1 = RegionSet(class_name=data.get("class_1", ""), regions=tuple(data["regions_1"]))
    regions2 = RegionSet(class_name=data.get("class_2", ""), regions=tuple(data["regions_2"]))
    mapping = SemanticMapping(pairs=tuple((p[0], p[1]) for p in data["mapping"]))
    return regions1, regions2, validate_mapping(mapping, regions1, regions2)
