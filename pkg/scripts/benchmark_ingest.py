"""Measure how long ingest and milestone detection take on a large scenario.

Run using uv:

    uv run benchmark_ingest.py --units 3200 --threads 4

Run using python:

    pip install -e .
    python benchmark_ingest.py --units 3200 --threads 4

With the default calendar every unit contributes a little over 300 visit
rows, so 3,200 units give roughly one million rows.
"""

# /// script
# dependencies = [
#   "recovera",
# ]
# ///

import argparse
import logging
import tempfile
import time

from recovera.ingest import VISITS_FILE, parse_dataset
from recovera.milestones import compute_milestones
from recovera.synth import ScenarioSpec, generate_scenario

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)


def main():
    parser = argparse.ArgumentParser(description="Benchmark recovera ingest.")
    parser.add_argument(
        "--units",
        type=int,
        default=3200,
        help="Number of synthetic spatial units (default: 3200)",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="Worker threads for parsing and detection (default: 1)",
    )
    parser.add_argument(
        "--logging-level",
        default="info",
        choices=["debug", "info", "warning", "error", "critical"],
        help="Set the logging level (default: info)",
    )

    args = parser.parse_args()
    logging.getLogger().setLevel(getattr(logging, args.logging_level.upper()))

    spec = ScenarioSpec(unit_count=args.units, seed=1)
    with tempfile.TemporaryDirectory() as directory:
        started = time.perf_counter()
        generate_scenario(spec, directory)
        logging.info(f"Generated {args.units} units in {time.perf_counter() - started:.2f}s")

        started = time.perf_counter()
        dataset = parse_dataset(directory, spec.study, args.threads)
        elapsed = time.perf_counter() - started
        rows = dataset.visits.height
        logging.info(f"Parsed {rows} rows of {VISITS_FILE} in {elapsed:.2f}s ({rows / elapsed:,.0f} rows/s)")

        started = time.perf_counter()
        table = compute_milestones(dataset, spec.study, args.threads)
        logging.info(f"Detected milestones for {len(table.units)} units in {time.perf_counter() - started:.2f}s")


if __name__ == "__main__":
    main()
