"""Regenerate the frozen case-study comparison used by the regression tests.

Runs the full pipeline for both case-study configs at the documented seeds
(metamodel 101, training 202) and copies the resulting comparison.json into
tests/golden/. Run from the repository root:

    python3 tools/make_golden.py
"""

import shutil
import sys
import tempfile
from pathlib import Path

import outageplan
from outageplan.cli import main

REPO = Path(__file__).resolve().parent.parent
GOLDEN = REPO / "tests" / "golden"
TRAJECTORY = Path(outageplan.__file__).parent / "data" / "trajectories" / "casestudy.csv"

METAMODEL_SEED = 101
TRAIN_SEED = 202


def run(argv: list[str]) -> None:
    print("+ outageplan " + " ".join(argv))
    rc = main(argv)
    if rc != 0:
        sys.exit(f"command failed with exit code {rc}")


def build_trace(config: str, label: str, out: Path) -> Path:
    run(["metamodel", "--config", config, "--seed", str(METAMODEL_SEED), "--out", str(out)])
    run(["train", "--config", config, "--seed", str(TRAIN_SEED), "--out", str(out)])
    run(
        [
            "evaluate",
            "--config",
            config,
            "--qtable",
            str(out / "qtable.bin"),
            "--trajectory",
            str(TRAJECTORY),
            "--label",
            label,
            "--out",
            str(out),
        ]
    )
    return out / f"trace-{label}.json"


def main_golden() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        trace_single = build_trace("casestudy-single", "single", work / "single")
        trace_super = build_trace("casestudy-superposed", "superposed", work / "superposed")
        cmp_dir = work / "cmp"
        run(
            [
                "compare",
                "--trace-a",
                str(trace_single),
                "--trace-b",
                str(trace_super),
                "--label-a",
                "single",
                "--label-b",
                "superposed",
                "--out",
                str(cmp_dir),
            ]
        )
        shutil.copy2(cmp_dir / "comparison.json", GOLDEN / "comparison.json")
    print(f"wrote {GOLDEN / 'comparison.json'}")


if __name__ == "__main__":
    main_golden()
