"""Regenerates the bundled toy corpus under data/toy/."""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "data" / "toy"
OBJECTS = ["man", "woman", "dog", "cat", "table", "chair", "car", "tree",
           "plate", "cup", "horse", "bike", "shirt", "hat", "ball"]
ATTRIBUTES = ["red", "white", "black", "green", "blue", "wooden", "small", "large"]
RELATIONS = ["on", "on top of", "near", "next to", "holding", "wearing", "under",
             "behind", "riding"]
CANON = {"on top of": "on", "next to": "near"}
NUMBERS = ["one", "two", "three", "four"]


def image(rng, i):
    concepts = rng.sample(OBJECTS, 4)
    attributes = [[c, rng.choice(ATTRIBUTES)] for c in concepts[:3]]
    relationships = [[concepts[j], rng.choice(RELATIONS), concepts[j + 1]] for j in range(3)]
    return {
        "image_id": f"toy{i:03d}",
        "concepts": concepts,
        "attributes": attributes,
        "relationships": relationships,
    }


def questions(rng, img):
    out = []
    for s, r, o in img["relationships"]:
        out.append(("other", f"What is the {s} {CANON.get(r, r)}?", o))
    for s, a in img["attributes"]:
        out.append(("other", f"What color is the {s}?", a))
    c = rng.choice(img["concepts"])
    out.append(("yes/no", f"Is there a {c} in the picture?", "yes"))
    absent = rng.choice([o for o in OBJECTS if o not in img["concepts"]])
    out.append(("yes/no", f"Is there a {absent} in the picture?", "no"))
    out.append(("number", f"How many {c}s are there?", rng.choice(NUMBERS)))
    return out


def annotators(rng, answer, pool):
    votes = [answer] * rng.randint(6, 10)
    while len(votes) < 10:
        votes.append(rng.choice(pool))
    rng.shuffle(votes)
    return votes


def main():
    rng = random.Random(7)
    images = [image(rng, i) for i in range(40)]
    with open(OUT / "annotations.jsonl", "w") as f:
        for img in images:
            qa = [{"question": q, "answer": a} for _, q, a in questions(rng, img)]
            qa.append({"question": "What time of day is it?", "answer": rng.choice(["morning", "night"])})
            f.write(json.dumps({**img, "qa": qa}) + "\n")

    vqa = []
    for img in images:
        for kind, q, a in questions(rng, img):
            pool = {"yes/no": ["yes", "no"], "number": NUMBERS}.get(kind, OBJECTS + ATTRIBUTES)
            choices = sorted({a, *rng.sample([p for p in pool if p != a], min(3, len(pool) - 1))})
            vqa.append({
                "question_id": f"{img['image_id']}_{len(vqa):04d}",
                "image_id": img["image_id"],
                "question": q,
                "answers": annotators(rng, a, pool),
                "choices": choices,
                "question_type": kind,
            })
    rng.shuffle(vqa)
    n = len(vqa)
    splits = {"vqa_train.jsonl": vqa[: n * 6 // 10],
              "vqa_val.jsonl": vqa[n * 6 // 10: n * 8 // 10],
              "vqa_test.jsonl": vqa[n * 8 // 10:]}
    for name, rows in splits.items():
        with open(OUT / name, "w") as f:
            for r in rows:
                f.write(json.dumps(r) + "\n")

    with open(OUT / "aliases" / "relation.json", "w") as f:
        json.dump(CANON, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
