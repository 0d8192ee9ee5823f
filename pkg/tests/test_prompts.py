"""Prompt schema and preset description tables."""

import pytest

from cdga.prompts import DOMAIN_DESCRIPTIONS, build_prompt, descriptions_for


def test_prompt_schema():
    assert build_prompt("dog", "sketch drawing, black and white, less details") == (
        "a dog, sketch drawing, black and white, less details"
    )


def test_label_only_prompt():
    assert build_prompt("elephant") == "a elephant"
    assert build_prompt("elephant", "") == "a elephant"


def test_whitespace_stripped():
    assert build_prompt(" dog ", " cartoon ") == "a dog, cartoon"


def test_empty_label_rejected():
    with pytest.raises(ValueError):
        build_prompt("   ")


def test_presets_cover_standard_suites():
    assert set(DOMAIN_DESCRIPTIONS) == {"pacs", "officehome", "domainnet"}
    assert descriptions_for("PACS")["sketch"] == (
        "sketch drawing, black and white, less details"
    )
    assert len(descriptions_for("domainnet")) == 6
    assert len(descriptions_for("officehome")) == 4


def test_unknown_suite():
    with pytest.raises(KeyError):
        descriptions_for("imagenet")


def test_descriptions_for_returns_copy():
    table = descriptions_for("pacs")
    table["photo"] = "changed"
    assert DOMAIN_DESCRIPTIONS["pacs"]["photo"] != "changed"
