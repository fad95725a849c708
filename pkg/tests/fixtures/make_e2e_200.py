"""Regenerate e2e_200.csv: the 24 handwritten rows plus 176 crowd-style rows.

The extra rows imitate E2E annotator habits that matter for value replacement:
free phrasing, values dropped from the text, capitalisation drift
("City Centre"), paraphrased values ("5 star"), and values that overlap
("The Rice Boat" near "Rice").

    python tests/fixtures/make_e2e_200.py
"""

import csv
import random
from pathlib import Path

from fewshot_d2t.synthetic import NAMES, VALUES

HERE = Path(__file__).parent

PHRASES = {
    "food": ["serves {v} food", "offers {v} cuisine", "has {v} dishes", "does {v} meals", "is a {v} place"],
    "priceRange": ["with prices {v}", "in the {v} price range", "charging {v}", "which is {v}"],
    "customer rating": ["rated {v}", "with a {v} customer rating", "that customers rate {v}"],
    "area": ["in the {v}", "located in {v}", "by the {v}", "in the {v} area"],
    "near": ["near {v}", "close to {v}", "not far from {v}", "next to {v}"],
}
FAMILY = {"yes": ["kid friendly", "family-friendly", "good for children"],
          "no": ["not family friendly", "adults only", "not child friendly"]}
OPEN = ["{name} is a {eat}", "{name}, a {eat},", "There is a {eat} named {name}", "The {eat} {name}", "{name}"]


def row(rng):
    slots = {"name": rng.choice(NAMES)}
    optional = ["eatType", "food", "priceRange", "customer rating", "area", "familyFriendly", "near"]
    for s in rng.sample(optional, rng.randint(2, 7)):
        key = "customerRating" if s == "customer rating" else s
        slots[s] = rng.choice(VALUES[key])
    if rng.random() < 0.1:
        slots["near"] = "The Rice Boat"
        slots["name"] = "Rice"
    eat = slots.get("eatType", "venue")
    parts = [rng.choice(OPEN).format(name=slots["name"], eat=eat)]
    for s in ["food", "priceRange", "customer rating", "area", "near"]:
        if s not in slots or rng.random() < 0.12:  # annotator skipped the value
            continue
        v = slots[s]
        if s == "area" and rng.random() < 0.3:
            v = v.title()
        if s == "customer rating" and v == "5 out of 5" and rng.random() < 0.5:
            parts.append("with a 5 star rating")
            continue
        parts.append(rng.choice(PHRASES[s]).format(v=v))
    if "familyFriendly" in slots:
        parts.append(rng.choice(FAMILY[slots["familyFriendly"]]))
    text = " ".join(parts[:2]) + (", " + ", ".join(parts[2:]) if len(parts) > 2 else "") + "."
    order = ["name", "eatType", "food", "priceRange", "customer rating", "area", "familyFriendly", "near"]
    mr = ", ".join(f"{s}[{slots[s]}]" for s in order if s in slots)
    return mr, text


def main():
    rng = random.Random(200)
    with (HERE / "e2e_handwritten.csv").open(newline="", encoding="utf-8") as fh:
        rows = [(r["mr"], r["ref"]) for r in csv.DictReader(fh)]
    while len(rows) < 200:
        rows.append(row(rng))
    with (HERE / "e2e_200.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mr", "ref"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
