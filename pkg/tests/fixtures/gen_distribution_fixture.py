"""Regenerate distribution_fixture.json.

The fixture reproduces the recorded production label distribution:
annotations per type (alligator 481, block 265, longitudinal 903,
patch 138, transverse 604) and per severity (low 178, medium 1466,
high 509).  The source tallies disagree on totals (2391 typed vs 2153
severity-labeled), so 238 entries deliberately carry a null severity
and the fixture must be loaded with strict=False.

Run from the repository root:  python3 tests/fixtures/gen_distribution_fixture.py
"""

import json
from pathlib import Path

TYPE_COUNTS = [
    ("alligator", 481),
    ("block", 265),
    ("longitudinal", 903),
    ("patch", 138),
    ("transverse", 604),
]
SEVERITY_COUNTS = [("low", 178), ("medium", 1466), ("high", 509)]

WIDTH = HEIGHT = 4096


def main() -> None:
    severities = [s for s, n in SEVERITY_COUNTS for _ in range(n)]
    total = sum(n for _, n in TYPE_COUNTS)
    severities += [None] * (total - len(severities))

    annotations = []
    i = 0
    for type_label, count in TYPE_COUNTS:
        for _ in range(count):
            x = float(4 + (i * 7) % (WIDTH - 16))
            y = float(4 + (i * 11) % (HEIGHT - 16))
            annotations.append(
                {
                    "type": type_label,
                    "severity": severities[i],
                    "vertices": [[x, y], [x + 6.0, y], [x, y + 6.0]],
                }
            )
            i += 1

    doc = {
        "image_id": "distribution_fixture",
        "width_px": WIDTH,
        "height_px": HEIGHT,
        "footprint_mm": [4096.0, 4096.0],
        "annotations": annotations,
        "pci_label": None,
    }
    out = Path(__file__).parent / "distribution_fixture.json"
    out.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out} with {len(annotations)} annotations")


if __name__ == "__main__":
    main()
