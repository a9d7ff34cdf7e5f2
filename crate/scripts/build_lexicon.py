"""Regenerate crates/core/data/en_inflections.tsv from the lemminflect tables.

Usage: pip install lemminflect && python scripts/build_lexicon.py
"""
import gzip
import importlib.resources as res
import sys

POS = {"verb": "v", "noun": "n", "adj": "a"}

# Modal and auxiliary pairs missing from the lookup table.
EXTRA = [
    ("will", "v", ["would"]),
    ("can", "v", ["could"]),
    ("shall", "v", ["should"]),
    ("may", "v", ["might"]),
    ("be", "v", ["am", "is", "are", "was", "were", "been", "being"]),
]


def main(out):
    raw = (res.files("lemminflect") / "resources" / "infl_lu.csv.gz").read_bytes()
    rows = gzip.decompress(raw).decode("utf-8").splitlines()
    verbs = set()
    entries = {}
    for line in rows:
        parts = line.split(",")
        lemma, pos = parts[0], parts[1]
        if pos not in POS or not (lemma.isalpha() and lemma.islower()):
            continue
        forms = []
        for field in parts[2:]:
            forms.extend(f for f in field.split("/") if f)
        forms = [f for f in forms if f.isalpha() and " " not in f]
        if pos == "verb":
            verbs.add(lemma)
        entries[(lemma, POS[pos])] = forms
    keep = {}
    for (lemma, pos), forms in entries.items():
        if pos == "v":
            keep[(lemma, pos)] = forms
        elif pos == "a" and forms:
            keep[(lemma, pos)] = forms
        elif pos == "n" and lemma in verbs and forms:
            keep[(lemma, pos)] = forms
    for lemma, pos, forms in EXTRA:
        keep[(lemma, pos)] = sorted(set(keep.get((lemma, pos), [])) | set(forms))
    with open(out, "w", encoding="utf-8") as fh:
        for (lemma, pos) in sorted(keep):
            forms = sorted(set(keep[(lemma, pos)]) - {lemma})
            fh.write(f"{lemma}\t{pos}\t{','.join(forms)}\n")
    print(f"wrote {len(keep)} entries to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/data/en_inflections.tsv")
