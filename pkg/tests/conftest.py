"""Shared fixtures: small specifications, their expansions and the bundled protocols."""
from fractions import Fraction

import pytest

from protocols import load_bundled
from semantics import Expander, expand
from spec_parser import parse_spec, parse_term


@pytest.fixture
def spec_of():
    """Parse a specification; a bare term is taken as the init."""
    def build(text: str):
        if "init" not in text:
            text = f"init {text}"
        return parse_spec(text)
    return build


@pytest.fixture
def pts_of(spec_of):
    def build(text: str, limit=None):
        return expand(spec_of(text), limit)
    return build


@pytest.fixture
def ucp_spec():
    return load_bundled("ucp")


@pytest.fixture
def ucp_perfect():
    return load_bundled("ucp", {"all": Fraction(1)})


@pytest.fixture
def desired_pts():
    return expand(load_bundled("ucp-spec"))


@pytest.fixture
def term_pts():
    """Expand a term written against the declarations of `spec`."""
    def build(text: str, spec):
        return Expander(spec).expand(parse_term(text, spec))
    return build
