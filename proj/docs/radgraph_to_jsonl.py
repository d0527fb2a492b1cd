#!/usr/bin/env python3
"""Convert a RadGraph annotation file into the triplet export read by `kgrag build`.

RadGraph stores one object per report:

    {"<report_id>": {"text": "...",
                     "entities": {"1": {"tokens": "opacity", "label": "OBS-DP",
                                        "relations": [["suggestive_of", "4"]]}, ...}}}

Each relation becomes one JSON line {"subject", "relation", "object", "source_id"}.
Relation filtering happens in the engine (`relation` in engine.toml), so every
relation type is emitted here.

    python3 radgraph_to_jsonl.py train.json > export.jsonl
"""

import argparse
import json
import sys


def triplets(reports):
    for report_id, report in reports.items():
        entities = report.get("entities", {})
        for entity in entities.values():
            for relation, target in entity.get("relations", []):
                obj = entities.get(str(target))
                if obj is None:
                    continue
                subject, object_ = entity["tokens"].strip().lower(), obj["tokens"].strip().lower()
                if subject and object_:
                    yield {"subject": subject, "relation": relation, "object": object_, "source_id": report_id}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("radgraph", type=argparse.FileType("r"))
    args = parser.parse_args()
    for t in triplets(json.load(args.radgraph)):
        sys.stdout.write(json.dumps(t, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
