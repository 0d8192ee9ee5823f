"""Prompt construction for guided generation.

Prompts follow the fixed schema "a <class label>, <domain description>".
Domain descriptions are free text; presets for the standard benchmark
suites are included so configs can reference them by name.
"""

from __future__ import annotations

# Hand-written per-domain style descriptions keyed by a lowercase suite
# name, then by domain directory name as it appears in the datasets.
DOMAIN_DESCRIPTIONS: dict[str, dict[str, str]] = {
    "pacs": {
        "photo": "photorealistic, extremely detailed",
        "sketch": "sketch drawing, black and white, less details",
        "cartoon": "cartoon, cartoonish",
        "art_painting": "art painting",
    },
    "officehome": {
        "Clipart": "Clipart, schematic, simplified",
        "Product": "Product, Merchandise",
        "Real World": "Real World, extremely detailed",
        "Art": "art painting, art",
    },
    "domainnet": {
        "clipart": "cartoon, cartoonish, drawing",
        "infograph": "infographic, data visualization, poster",
        "real": "photorealistic, extremely detailed",
        "painting": "art painting",
        "quickdraw": "extremely simple drawing, black and white",
        "sketch": "sketch drawing, black and white, less details",
    },
}


def build_prompt(class_label: str, domain_description: str = "") -> str:
    """Compose the generation prompt for one class in one target style.

    An empty description yields the bare label prompt "a <class label>"
    used by label-only guidance.
    """
    class_label = class_label.strip()
    if not class_label:
        raise ValueError("class label must be non-empty")
    domain_description = domain_description.strip()
    if not domain_description:
        return f"a {class_label}"
    return f"a {class_label}, {domain_description}"


def descriptions_for(suite: str) -> dict[str, str]:
    """Preset description table for a known suite name (case-insensitive)."""
    key = suite.strip().lower()
    if key not in DOMAIN_DESCRIPTIONS:
        known = ", ".join(sorted(DOMAIN_DESCRIPTIONS))
        raise KeyError(f"no preset descriptions for {suite!r}; known suites: {known}")
    return dict(DOMAIN_DESCRIPTIONS[key])
