"""Replay the accuracy-by-type, source-share and stage-accuracy arithmetic on constructed fixtures.

    python scripts/replay_reference_metrics.py [--out DIR]
"""

import argparse
import tempfile
from pathlib import Path

from litmetrics.cli import dispatch
from litmetrics.fixtures import REFERENCE_COUNTS, accuracy_fixture, source_fixture, write_truth_csv
from litmetrics.store import RunWriter, SidecarBundle


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, help="keep the run and truth files here")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    root = args.out or Path(tempfile.mkdtemp(prefix="litmetrics-replay-"))
    records, truths = accuracy_fixture(REFERENCE_COUNTS, n_docs=24, seed=args.seed)
    writer = RunWriter(root / "run", run_id="reference-fixture")
    for rec in records:
        writer.store(rec.doc_id, rec, SidecarBundle(), "ok")
    writer.finalize()
    truth = write_truth_csv(root / "truth.csv", truths)
    sources = write_truth_csv(root / "sources.csv", source_fixture(29, 1, 70))

    print(f"# fixture files under {root}\n")
    dispatch(["eval", "--run", str(root / "run"), "--truth", str(truth), "--tolerance", "3"])
    print()
    dispatch(["report", "--truth", str(sources), "--crop", "0.7083", "--classifier", "0.8825"])


if __name__ == "__main__":
    main()
