"""Entity and relation vocabularies of the five selected RE model families."""

import enum
import re

# Ordered by corpus frequency, most frequent first.
CANONICAL_ENTITY_TYPES = (
    "problem",
    "treatment",
    "test",
    "drug",
    "strength",
    "frequency",
    "form",
    "dosage",
    "internal_organ_or_component",
    "route",
    "direction",
    "symptom",
    "external_body_part_or_region",
    "duration",
)

# Entity types swept by the ablation study, in the reported order.
ABLATION_ENTITY_TYPES = ("problem", "treatment", "test", "drug")

# Relation labels that mean "no relationship"; such RE outputs are discarded.
NO_RELATION_LABELS = frozenset({"O", "0"})


class RelationFamily(str, enum.Enum):
    CR = "CR"
    TE = "TE"
    PR = "PR"
    BD = "BD"
    BP = "BP"

    @property
    def long_name(self):
        return _FAMILY_NAMES[self]

    @classmethod
    def parse(cls, value):
        """Accept the short code (``"PR"``) or the long name (``"posology relationship"``)."""
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        try:
            return cls(text.upper())
        except ValueError:
            pass
        key = _normalize_words(text)
        for family, name in _FAMILY_NAMES.items():
            if key == _normalize_words(name):
                return family
        raise ValueError(f"unknown relation family {value!r}")


_FAMILY_NAMES = {
    RelationFamily.CR: "clinical relationship",
    RelationFamily.TE: "temporal events",
    RelationFamily.PR: "posology relationship",
    RelationFamily.BD: "bodypart-directions",
    RelationFamily.BP: "bodypart-problem",
}


def _normalize_words(text):
    return re.sub(r"[\s\-]+", "_", text.strip().lower())


def normalize_entity_type(value):
    """Normalize an entity type tag to lowercase snake form.

    The 14 canonical types come back unchanged; anything else is passed
    through as an extension tag in the same normalized form.
    """
    tag = _normalize_words(str(value))
    if not tag:
        raise ValueError("empty entity type")
    return tag


def is_canonical_entity_type(tag):
    return normalize_entity_type(tag) in CANONICAL_ENTITY_TYPES
