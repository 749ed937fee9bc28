#!/usr/bin/env python3
"""Regenerates the deterministic test fixtures under data/fixtures/.

The toxicity fixture's expected submetrics are computed here by brute-force
pairwise comparison, independently of the C++ implementation.
"""
import hashlib
import itertools
import json
import math
import pathlib
import random

ROOT = pathlib.Path(__file__).resolve().parents[2]
FIX = ROOT / "data" / "fixtures"

SUBGROUPS = ["black", "white", "female", "male", "homosexual_gay_or_lesbian", "muslim", "jewish", "christian",
             "psychiatric_or_mental_illness"]


def stable_unit(term: str) -> float:
    h = hashlib.sha256(term.lower().encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2**64


def frequencies():
    terms = set()
    for dim in ["gender", "race", "religion", "profession"]:
        for line in (ROOT / "data" / "pairs" / "source" / f"{dim}.tsv").read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            d, m, _ = line.split("\t")
            terms.add(d.lower())
            terms.add(m.lower())
    rows = []
    for t in sorted(terms):
        u = stable_unit(t)
        if u < 0.08:
            continue  # absent from the table: frequency 0
        # log-uniform between 0.001 and 1000 per million
        rows.append((t, round(10 ** (-3 + 6 * stable_unit("f:" + t)), 6)))
    with open(FIX / "frequencies.tsv", "w", encoding="utf-8") as f:
        for t, v in rows:
            f.write(f"{t}\t{v}\n")


def kb_dump():
    rng = random.Random(7)
    records = [
        {"id": "Q6581097", "property": "P21", "value": "male"},
        {"id": "Q6581072", "property": "P21", "value": "female"},
        {"id": "Q48270", "property": "P21", "value": "non-binary"},
        {"id": "Q1052281", "property": "P21", "value": "transgender woman"},
        {"id": "Q2449503", "property": "P21", "value": "transgender man"},
        {"id": "Q1", "property": "P6553", "value": "she"},
        {"id": "Q2", "property": "P6553", "value": "he"},
        {"id": "Q3", "property": "P6553", "value": "they"},
        {"id": "Q9089", "property": "P140", "value": "Hindu"},
        {"id": "Q9089b", "property": "P140", "value": "hindu"},
        {"id": "Q432", "property": "P140", "value": "Muslim"},
        {"id": "Q5043", "property": "P140", "value": "Christian"},
        {"id": "Q9268", "property": "P140", "value": "Jewish"},
        {"id": "Q748", "property": "P140", "value": "Buddhist"},
        {"id": "Q9316", "property": "P140", "value": "Sikh"},
        {"id": "Q49085", "property": "P172", "value": "African Americans"},
        {"id": "Q7435494", "property": "P172", "value": "White Americans"},
        {"id": "Q1344183", "property": "P172", "value": "Asian Americans"},
        {"id": "Q30", "property": "P27", "value": "United States"},
        {"id": "Q668", "property": "P27", "value": "India"},
        {"id": "Q148", "property": "P27", "value": "China"},
        {"id": "Q39631", "property": "P106", "value": "physician"},
        {"id": "Q186360", "property": "P106", "value": "nurse"},
        {"id": "Q37226", "property": "P106", "value": "teacher"},
        {"id": "Q82955", "property": "P106", "value": "politician"},
        {"id": "Q11063", "property": "P101", "value": "astronomy"},
        {"id": "Q5", "property": "P31", "value": "human"},
        {"id": "Q515", "property": "P9999", "value": "city"},
    ]
    rng.shuffle(records)
    lines = [json.dumps(r, ensure_ascii=False) for r in records]
    lines.insert(5, '{"id": "Q404", "property": "P21"')  # truncated record
    lines.insert(11, '{"id": "Q405", "value": "orphan"}')  # missing property
    lines.insert(17, "not json at all")
    (FIX / "kb_dump.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def auc(pos, neg):
    if not pos or not neg:
        return None
    wins = 0.0
    for p, n in itertools.product(pos, neg):
        wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def power_mean(values, p):
    return (sum(v ** p for v in values) / len(values)) ** (1.0 / p)


def jigsaw():
    rng = random.Random(2024)
    comments = []
    for i in range(200):
        groups = sorted({g for g in SUBGROUPS if rng.random() < 0.22})
        label = 1 if rng.random() < 0.35 else 0
        # Identity mentions shift scores up to model unintended bias.
        base = 0.62 if label else 0.30
        bias = 0.12 * len(groups)
        score = min(1.0, max(0.0, rng.gauss(base + bias, 0.18)))
        score = round(score, 2)  # coarse scores create ties
        comments.append({"text": f"comment {i}", "label": label, "score": score, "subgroups": groups})
    with open(FIX / "jigsaw_200.jsonl", "w", encoding="utf-8") as f:
        for c in comments:
            f.write(json.dumps(c) + "\n")

    def split(rows):
        return [r["score"] for r in rows if r["label"] == 1], [r["score"] for r in rows if r["label"] == 0]

    overall = auc(*split(comments))
    rows = []
    for g in SUBGROUPS:
        inside = [c for c in comments if g in c["subgroups"]]
        outside = [c for c in comments if g not in c["subgroups"]]
        sub = auc(*split(inside))
        bpsn = auc([c["score"] for c in outside if c["label"] == 1], [c["score"] for c in inside if c["label"] == 0])
        bnsp = auc([c["score"] for c in inside if c["label"] == 1], [c["score"] for c in outside if c["label"] == 0])
        rows.append({"subgroup": g, "count": len(inside), "subgroup_auc": sub, "bpsn_auc": bpsn, "bnsp_auc": bnsp})
    means = {k: power_mean([r[k] for r in rows], -5) for k in ["subgroup_auc", "bpsn_auc", "bnsp_auc"]}
    final = 0.25 * overall + 0.25 * sum(means.values())
    expected = {"overall_auc": overall, "subgroups": rows, "power_means": means, "overall": final}
    (FIX / "jigsaw_200.expected.json").write_text(json.dumps(expected, indent=2) + "\n", encoding="utf-8")


def toy_corpus():
    sentences = [
        "The man said that he would finish the report tomorrow.",
        "Her brother is a nurse at the city hospital.",
        "The woman fixed the engine of her car.",
        "My father and my mother visited the museum.",
        "The boy gave the girl a book about Christianity.",
        "A Muslim family opened a bakery downtown.",
        "The king spoke with the queen about the harvest.",
        "She is an engineer and he is a teacher.",
        "The actor thanked the director for the role.",
        "Several Asian students won the science fair.",
        "His wife works as a doctor in the village.",
        "The Hindu festival drew crowds to the river.",
    ]
    (FIX / "toy_corpus.txt").write_text("\n".join(sentences) + "\n", encoding="utf-8")


def sts_fixture():
    rng = random.Random(11)
    subjects = ["a man", "a woman", "the child", "a dog", "the chef", "a student"]
    actions = ["is walking", "is cooking", "is reading", "is singing", "is running", "is sleeping"]
    rows = []
    for _ in range(60):
        s1, a1 = rng.choice(subjects), rng.choice(actions)
        s2 = s1 if rng.random() < 0.5 else rng.choice(subjects)
        a2 = a1 if rng.random() < 0.5 else rng.choice(actions)
        score = 2.5 * (s1 == s2) + 2.5 * (a1 == a2)
        rows.append(f"{s1} {a1}\t{s2} {a2}\t{score:.1f}")
    (FIX / "sts_small.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")


if __name__ == "__main__":
    FIX.mkdir(parents=True, exist_ok=True)
    frequencies()
    kb_dump()
    jigsaw()
    toy_corpus()
    sts_fixture()
