"""A small E2E-style restaurant corpus generated from a template grammar.

Every MR gets a gold text, so the corpus can stand in for a benchmark at desk
scale: split it, hide most texts, and measure how well a model recovers them.
"""

from __future__ import annotations

import random

from .corpus import MeaningRepresentation, TextSample

NAMES = [
    "Blue Spice", "The Punter", "Aromi", "The Golden Curry", "Zizzi", "The Eagle", "Fitzbillies",
    "Green Man", "The Wrestlers", "Cotto", "Strada", "The Mill", "Loch Fyne", "Alimentum",
    "The Phoenix", "Midsummer House", "Clowns", "The Cricketers", "Bibimbap House", "Wildwood",
    "The Vaults", "Browns Cambridge", "Giraffe", "The Olive Grove", "Travellers Rest Beefeater",
    "The Waterman", "Taste of Cambridge", "The Rice Boat", "Cocum", "The Plough",
]
VALUES = {
    "eatType": ["restaurant", "pub", "coffee shop"],
    "food": ["Chinese", "English", "French", "Indian", "Italian", "Japanese", "fast food"],
    "priceRange": ["cheap", "moderate", "high", "less than £20", "£20-25", "more than £30"],
    "customerRating": ["low", "average", "high", "1 out of 5", "3 out of 5", "5 out of 5"],
    "area": ["city centre", "riverside"],
    "familyFriendly": ["yes", "no"],
    "near": [
        "Rainbow Vegetarian Café", "Café Sicilia", "The Bakers", "Burger King", "Crowne Plaza Hotel",
        "Raja Indian Cuisine", "The Portland Arms", "Express by Holiday Inn", "Café Rouge",
        "Avalon", "All Bar One", "Yippee Noodle Bar", "The Sorrento", "Ranch", "Café Brazil",
    ],
}
SLOT_ORDER = ["name", "eatType", "food", "priceRange", "customerRating", "area", "familyFriendly", "near"]

# clause templates per slot; {v} is the value, copied verbatim
CLAUSES = {
    "food": ["it serves {v} food", "they offer {v} food"],
    "priceRange": ["it has a {v} price range", "prices are {v}"],
    "customerRating": ["it has a {v} customer rating", "customers rate it {v}"],
    "area": ["it is located in the {v}", "it is in the {v} area"],
    "near": ["it is near {v}", "you can find it close to {v}"],
}
FAMILY = {"yes": ["it is family friendly", "it is kid friendly"],
          "no": ["it is not family friendly", "it is not kid friendly"]}
OPENERS = [
    "{name} is a {eat}",
    "there is a {eat} called {name}",
]


def _realize(slots: dict, rng: random.Random) -> str:
    eat = slots.get("eatType", "place")
    opener = rng.choice(OPENERS).format(name=slots["name"], eat=eat)
    clauses = []
    for slot in SLOT_ORDER[2:]:
        if slot not in slots:
            continue
        v = slots[slot]
        if slot == "familyFriendly":
            clauses.append(rng.choice(FAMILY[v]))
        else:
            clauses.append(rng.choice(CLAUSES[slot]).format(v=v))
    sentences = [opener]
    for i in range(0, len(clauses), 2):
        sentences.append(" and ".join(clauses[i:i + 2]))
    text = ". ".join(s[0].upper() + s[1:] for s in sentences) + "."
    return text


def make_synthetic(n: int, n_slots: int = 8, seed: int = 0) -> list:
    """Generate ``n`` (MR, gold text) pairs.

    ``n_slots`` (3-8) limits which slot types exist; every MR has ``name`` and
    between 3 and ``n_slots`` slots in total.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 3 <= n_slots <= 8:
        raise ValueError("n_slots must be between 3 and 8")
    rng = random.Random(seed)
    optional = SLOT_ORDER[1:n_slots]
    pairs = []
    for _ in range(n):
        k = rng.randint(2, len(optional))
        chosen = set(rng.sample(optional, k))
        slots = {"name": rng.choice(NAMES)}
        for s in optional:
            if s in chosen:
                slots[s] = rng.choice(VALUES[s])
        mr = MeaningRepresentation.from_pairs([(s, slots[s]) for s in SLOT_ORDER if s in slots])
        pairs.append((mr, TextSample(_realize(slots, rng))))
    return pairs
