"""Regenerate the bundled demo data and check that the report is reproducible.

Run using uv:

    uv run make_demo.py --output-folder demo

Run using python:

    pip install -e .
    python make_demo.py --output-folder demo

The script writes the synthetic input tables from data/demo/scenario.json,
then runs the report twice (1 and 8 threads) and compares the outputs byte
for byte.
"""

# /// script
# dependencies = [
#   "recovera",
# ]
# ///

import argparse
import filecmp
import logging
import os

from recovera.cli import run_cli
from recovera.report import CHART_FILES, REPORT_FILES

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)

DEMO_DIR = os.path.join(os.path.dirname(__file__), "..", "data", "demo")


def compare_runs(first: str, second: str) -> bool:
    names = list(REPORT_FILES + CHART_FILES)
    _, mismatch, errors = filecmp.cmpfiles(first, second, names, shallow=False)
    for name in mismatch + errors:
        logging.error(f"{name} differs between {first} and {second}")
    return not mismatch and not errors


def main():
    parser = argparse.ArgumentParser(description="Regenerate the recovera demo.")
    parser.add_argument(
        "--output-folder",
        default="demo",
        help="Directory for the generated tables and reports (default: demo)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        help="Override the scenario seed",
    )
    parser.add_argument(
        "--logging-level",
        default="info",
        choices=["debug", "info", "warning", "error", "critical"],
        help="Set the logging level (default: info)",
    )

    args = parser.parse_args()

    data_dir = os.path.join(args.output_folder, "data")
    gen_args = ["gen", "--config", os.path.join(DEMO_DIR, "scenario.json"), "--out", data_dir]
    if args.seed is not None:
        gen_args += ["--seed", str(args.seed)]
    if run_cli(gen_args + ["--logging-level", args.logging_level]) != 0:
        logging.error("Scenario generation failed")
        return

    outputs = []
    for threads in (1, 8):
        out_dir = os.path.join(args.output_folder, f"report_{threads}")
        code = run_cli(
            [
                "report",
                "--config",
                os.path.join(DEMO_DIR, "config.json"),
                "--data",
                data_dir,
                "--out",
                out_dir,
                "--threads",
                str(threads),
                "--logging-level",
                args.logging_level,
            ]
        )
        if code != 0:
            logging.error(f"Report with {threads} threads failed with exit code {code}")
            return
        outputs.append(out_dir)

    if compare_runs(*outputs):
        logging.info(f"Reports in {outputs[0]} and {outputs[1]} are identical")


if __name__ == "__main__":
    main()
