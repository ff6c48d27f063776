import numpy as np
import pytest

from formgen.backends import ToyBackend
from formgen.forms import parse_form
from formgen.rvq import random_codec


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    reports = [
        r
        for key in ("passed", "failed")
        for r in terminalreporter.stats.get(key, [])
        if "test_acceptance" in r.nodeid and r.when == "call"
    ]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        name = r.nodeid.split("::")[-1]
        terminalreporter.write_line(f"{status}  {name}")

# The canonical six-part sample response: an electro-dance piece with form
# A-B-C-B'-A'-C', lengths 25+25+20+30+25+25 = 150 s, parts 4/5/6 varying
# parts 2/1/3.
SAMPLE_RESPONSE = """Music Piece 3: "Electro Dance Journey"
Form: A-B-C-B'-A'-C'
Part A: Introduction of the main dance theme
Part B: Development with new elements
Part C: Bridge introducing contrast
Part B': Return of B with variations
Part A': Return of A with changes
Part C': Final contrasting section with a climax.
Prompts and Structure:{
"1": ["An energetic electro dance track with a driving beat, synth leads, and rhythmic bass. BPM: 130", 25, -1],
"2": ["A lively electro dance part with additional staccato synth chords and a more complex drum pattern. BPM: 132", 25, -1],
"3": ["A contrasting electro dance bridge with a softer tone, featuring melodic synth lines and a slower beat. BPM: 125", 20, -1],
"4": ["Return of the upbeat electro dance theme from Part 2, now with a richer arrangement including layered synths. BPM: 132", 30, 2],
"5": ["Variation of the initial electro dance theme, integrating elements from previous parts for a fuller sound. BPM: 130", 25, 1],
"6": ["A climactic electro dance finale, combining the energy of all parts with increased tempo and intensity. BPM: 135", 25, 3]}"""

SAMPLE_LENGTHS = [25, 25, 20, 30, 25, 25]
SAMPLE_REFS = [-1, -1, -1, 2, 1, 3]


@pytest.fixture
def sample_document() -> str:
    return SAMPLE_RESPONSE


@pytest.fixture
def sample_spec():
    return parse_form(SAMPLE_RESPONSE)


@pytest.fixture
def toy_backend() -> ToyBackend:
    return ToyBackend(num_codebooks=4, vocab_size=64, context_window=4)


@pytest.fixture
def small_backend() -> ToyBackend:
    return ToyBackend(num_codebooks=2, vocab_size=16, context_window=2)


@pytest.fixture
def toy_codec():
    return random_codec(d=8, num_codebooks=4, codebook_size=64, seed=7)


@pytest.fixture
def small_codec():
    return random_codec(d=4, num_codebooks=2, codebook_size=16, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
