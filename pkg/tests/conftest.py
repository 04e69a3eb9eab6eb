from __future__ import annotations

import pytest

import helpers
from cathodescout.formulas import parse_formula


@pytest.fixture(scope="session")
def seed():
    return parse_formula(helpers.SEED_TEXT)


@pytest.fixture(scope="session")
def reference_children():
    return helpers.reference_children()


@pytest.fixture(scope="session")
def golden_removed():
    return [parse_formula(f) for f in helpers.load_json("dedup_removed.json")]


@pytest.fixture(scope="session")
def golden_top29():
    return helpers.load_json("charge_ranked_top29.json")


@pytest.fixture(scope="session")
def golden_top20():
    return helpers.load_json("complexity_top20.json")


@pytest.fixture(scope="session")
def golden_top3():
    return [parse_formula(f) for f in helpers.load_json("voltage_top3.json")]
