"""Rewrite the fixture corpus and the golden audit output.

Only run this after an intentional change to classification or report
layout; the acceptance suite compares fresh runs against these files.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from corpus import AT_TEXT, CORPUS_DIR, build, write  # noqa: E402

from pkiaudit.cli import main  # noqa: E402

GOLDEN_DIR = Path(__file__).parent / "data" / "golden"


def audit_argv(fixtures: Path, output: Path) -> list[str]:
    return ["audit", "--input", str(fixtures / "domains.csv"), "--fixtures", str(fixtures),
            "--at", AT_TEXT, "--concurrency", "8", "--output", str(output)]


if __name__ == "__main__":
    write(build(), CORPUS_DIR)
    code = main(audit_argv(CORPUS_DIR, GOLDEN_DIR))
    print(f"audit exit code {code}")
