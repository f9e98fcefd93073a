"""Regenerate the toy-dataset replay cassette from the scripted backend.

The cassette is a pure function of the toy dataset, the prompt templates,
and the scripted backend, so rebuilding it after editing any of those keeps
the replay fixtures in sync.  Golden digests frozen in the test suite must
be refreshed when this file's output changes.
"""

from pathlib import Path

from peerqda.scripted import write_cassette

ROOT = Path(__file__).parent.parent
OUT = ROOT / "tests" / "fixtures" / "toy_cassette.json"

if __name__ == "__main__":
    path = write_cassette(ROOT / "datasets" / "toy", OUT)
    print(f"wrote {path}")
