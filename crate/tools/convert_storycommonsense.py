#!/usr/bin/env python3
"""Convert the Story Commonsense annotation release to the chae corpus format.

Reads the release's annotations.json (story id -> lines -> characters with
per-annotator Plutchik ratings and motivation text) and writes one JSON line
per story. A rating "joy:3" becomes the vote {"label": "joy", "conf": 1.0};
intensities 1..3 map to conf 1/3..1.
"""

import argparse
import json
import sys

PLUTCHIK = {"joy", "trust", "fear", "surprise", "sadness", "disgust", "anger", "anticipation"}


def votes(emotion):
    out = []
    for ann in (emotion or {}).values():
        for rating in ann.get("plutchik", []):
            label, _, level = rating.partition(":")
            label = label.strip().lower()
            if label in PLUTCHIK and level.strip().isdigit():
                out.append({"label": label, "conf": min(int(level), 3) / 3})
    return out


def actions(motiv):
    seen = []
    for ann in (motiv or {}).values():
        for text in ann.get("text", []):
            text = text.strip()
            if text and text.lower() != "none" and text not in seen:
                seen.append(text)
    return seen


def convert(story_id, story):
    lines = story.get("lines", {})
    sentences, annotations = [], []
    for key in sorted(lines, key=int):
        line = lines[key]
        sentences.append(line["text"])
        chars = []
        for name, c in line.get("characters", {}).items():
            if not c.get("app"):
                continue
            v, a = votes(c.get("emotion")), actions(c.get("motiv"))
            if v or a:
                chars.append({"char": name, "actions": a, "emotion_votes": v})
        annotations.append(chars)
    return {"id": story_id, "sentences": sentences, "annotations": annotations}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("annotations", help="annotations.json from the release")
    p.add_argument("--partition", choices=["train", "dev", "test"], help="keep one partition")
    p.add_argument("--require-emotion", action="store_true", help="drop stories without any emotion vote")
    p.add_argument("-o", "--out", default="-", help="output path, stdout by default")
    args = p.parse_args()

    with open(args.annotations, encoding="utf-8") as f:
        data = json.load(f)
    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    kept = 0
    for story_id, story in data.items():
        if args.partition and story.get("partition") != args.partition:
            continue
        record = convert(story_id, story)
        if args.require_emotion and not any(c["emotion_votes"] for s in record["annotations"] for c in s):
            continue
        out.write(json.dumps(record, ensure_ascii=False) + "\n")
        kept += 1
    if out is not sys.stdout:
        out.close()
    print(f"wrote {kept} stories", file=sys.stderr)


if __name__ == "__main__":
    main()
