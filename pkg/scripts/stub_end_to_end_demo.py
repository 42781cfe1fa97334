"""Run `litmetrics extract` and `eval` over a synthetic corpus against a local scripted model.

No network access is needed; the stub answers the mosaic, figure and text prompts.

    python scripts/stub_end_to_end_demo.py --out demo-run
"""

import argparse
import base64
import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from litmetrics.cli import dispatch
from litmetrics.evaluation import GroundTruthRecord
from litmetrics.fixtures import (
    figure_answer_json,
    routing_responder,
    synthetic_plot,
    text_answer_json,
    write_bundle,
    write_truth_csv,
)
from litmetrics.stubserver import StubChatServer, has_image

MOSAIC_RELEVANT = {"rows": 1, "cols": 2, "panel_labels": ["a", "b"], "target_panel": "b", "is_target": 0, "rotation": 0}
MOSAIC_OTHER = {"rows": 1, "cols": 1, "panel_labels": [], "target_panel": None, "is_target": 1, "rotation": 0}

CONFIG = """\
corpus = "corpus"
output = "run"
workers = 2

[vlm]
base_url = "{url}"
model = "stub-vlm"
base_delay = 0.1

[llm]
base_url = "{url}"
model = "stub-llm"
base_delay = 0.1
"""


def build_corpus(root: Path):
    pair = np.concatenate([synthetic_plot(160, 120, seed=1), synthetic_plot(160, 120, seed=2)], axis=1)
    write_bundle(
        root,
        "chart-paper",
        "Cells were cycled between 2.8 and 4.3 V (Figure 1b).\n",
        [{"figure_id": "fig1", "label": "1", "image": pair, "caption": "Figure 1. (a) Rate. (b) First cycle."}],
    )
    write_bundle(
        root,
        "text-paper",
        "The NMC811 cathode delivered 201.5 mAh/g between 3.0 and 4.4 V with 89.2% first-cycle efficiency.\n",
        [{"figure_id": "sem", "label": "1", "image": synthetic_plot(120, 120, seed=3), "caption": "Figure 1. SEM."}],
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("demo-run"))
    args = parser.parse_args()
    root = args.out
    build_corpus(root / "corpus")

    # the SEM image is square and gets marked irrelevant; the chart pair is wide
    responder = routing_responder(
        lambda r: json.dumps(MOSAIC_OTHER if _is_square(r) else MOSAIC_RELEVANT),
        figure_answer_json("2.8-4.3", 198.4, 221.0),
        text_answer_json(voltage_range="3.0-4.4", capacity=201.5, coulombic_efficiency_pct=89.2),
    )
    with StubChatServer(responder) as stub:
        config = root / "run.toml"
        config.write_text(CONFIG.format(url=stub.url))
        code = dispatch(["extract", "--config", str(config)])
    print(f"extract exit code {code}")

    for doc in ("chart-paper", "text-paper"):
        rec = json.loads((root / "run" / doc / "record.json").read_text())
        fields = {k: v for k, v in rec.items() if k not in ("provenance", "doc_id")}
        sources = {k: p["source"] for k, p in rec["provenance"].items()}
        print(f"{doc}: {fields}\n  sources: {sources}")

    truth = write_truth_csv(
        root / "truth.csv",
        [
            GroundTruthRecord("chart-paper", {"voltage_min": 2.8, "voltage_max": 4.3, "discharge_capacity": 200.0}),
            GroundTruthRecord("text-paper", {"voltage_min": 3.0, "voltage_max": 4.4, "discharge_capacity": 201.5}),
        ],
    )
    dispatch(["eval", "--run", str(root / "run"), "--truth", str(truth)])


def _is_square(request) -> bool:
    if not has_image(request):
        return False
    for part in request["messages"][1]["content"]:
        if part.get("type") == "image_url":
            data = base64.b64decode(part["image_url"]["url"].split(",", 1)[1])
            w, h = Image.open(io.BytesIO(data)).size
            return w == h
    return False


if __name__ == "__main__":
    main()
