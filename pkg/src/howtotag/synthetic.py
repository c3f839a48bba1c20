"""Deterministic generator of HowSumm-shaped instruction records.

Texts are short wikiHow-style paragraphs whose content words are drawn
mostly from the topic pools of the record's categories, with some
cross-topic and generic noise, so that labels are learnable but not
trivially separable.
"""

from __future__ import annotations

import numpy as np

from .corpus import Dataset, Record

TOPICS: dict[str, list[str]] = {
    "Health": ["doctor", "symptoms", "fever", "medicine", "blood", "pain", "heart", "infection",
               "vitamins", "clinic", "dizziness", "pulse", "rest", "nurse", "dose"],
    "Home and Garden": ["garden", "soil", "plants", "seeds", "lawn", "paint", "walls", "furniture",
                        "shelves", "roses", "compost", "hose", "fence", "carpet", "drill"],
    "Food and Entertaining": ["recipe", "oven", "flour", "butter", "sauce", "guests", "dinner", "onions",
                              "garlic", "dough", "pan", "spices", "dessert", "salad", "bake"],
    "Computers and Electronics": ["computer", "laptop", "software", "keyboard", "screen", "browser", "files",
                                  "password", "router", "settings", "battery", "cable", "printer", "app",
                                  "update"],
    "Education and Communications": ["essay", "author", "citation", "teacher", "grammar", "students", "lecture",
                                      "notes", "exam", "paragraph", "library", "thesis", "vocabulary",
                                      "reading", "homework"],
    "Finance and Business": ["budget", "money", "bank", "loan", "taxes", "invoice", "savings", "credit",
                             "investment", "salary", "clients", "profit", "account", "expenses", "market"],
    "Pets and Animals": ["dog", "cat", "puppy", "leash", "vet", "treats", "litter", "cage", "fur",
                         "kitten", "aquarium", "horse", "collar", "paws", "feeding"],
    "Travel": ["passport", "flight", "luggage", "hotel", "airport", "tickets", "map", "visa", "suitcase",
               "train", "tour", "border", "itinerary", "beach", "journey"],
    "Sports and Fitness": ["exercise", "muscles", "running", "stretch", "workout", "gym", "squats", "ball",
                           "coach", "team", "laps", "weights", "training", "bicycle", "swim"],
    "Hobbies and Crafts": ["yarn", "knitting", "glue", "scissors", "beads", "canvas", "sketch", "fabric",
                           "needle", "origami", "clay", "stitches", "pattern", "brushes", "sewing"],
    "Personal Care and Style": ["hair", "skin", "makeup", "shampoo", "nails", "lotion", "outfit", "shoes",
                                "razor", "perfume", "mirror", "moisturizer", "lipstick", "comb", "jewelry"],
    "Family Life": ["baby", "parents", "children", "toddler", "diaper", "bedtime", "siblings", "chores",
                    "grandparents", "stroller", "nursery", "crib", "allowance", "playdate", "bottle"],
    "Cars and Other Vehicles": ["engine", "tires", "brakes", "oil", "wheel", "gasoline", "mechanic",
                                "headlights", "windshield", "motorcycle", "trunk", "clutch", "bumper",
                                "dashboard", "steering"],
    "Arts and Entertainment": ["guitar", "piano", "song", "movie", "camera", "drawing", "painting", "chords",
                               "actor", "stage", "melody", "audience", "photo", "film", "drums"],
    "Youth": ["teen", "school", "friends", "crush", "locker", "prom", "curfew", "diary", "classmates",
              "party", "sleepover", "bully", "mall", "texting", "summer"],
    "Holidays and Traditions": ["christmas", "halloween", "costume", "gifts", "decorations", "candles",
                                "easter", "pumpkin", "wreath", "fireworks", "tree", "ornaments", "feast",
                                "card", "celebration"],
    "Work World": ["job", "interview", "resume", "boss", "office", "coworkers", "meeting", "career",
                   "deadline", "promotion", "email", "schedule", "manager", "contract", "shift"],
    "Relationships": ["partner", "date", "boyfriend", "girlfriend", "trust", "argument", "feelings",
                      "apology", "romance", "breakup", "marriage", "conversation", "kiss", "anniversary",
                      "compliment"],
    "Philosophy and Religion": ["prayer", "meditation", "church", "faith", "scripture", "ethics", "soul",
                                "temple", "ritual", "belief", "wisdom", "karma", "mosque", "sermon",
                                "virtue"],
    "Sports and Outdoor Recreation": ["tent", "hiking", "trail", "campfire", "fishing", "kayak", "compass",
                                      "backpack", "boots", "river", "mountain", "canoe", "sleeping",
                                      "lake", "forest"],
}

GENERIC = ["time", "step", "hand", "place", "side", "top", "bottom", "area", "minutes", "day", "way",
           "piece", "end", "water", "light", "order", "list", "corner", "week", "thing"]
VERBS = ["Place", "Keep", "Check", "Use", "Remove", "Add", "Try", "Make", "Put", "Find", "Hold", "Take",
         "Clean", "Choose", "Move", "Ask", "Wait", "Start", "Turn", "Look"]
CONNECTORS = ["with the", "near the", "after the", "before the", "on the", "into the", "around the",
              "under the", "for the", "beside your"]
OPENERS = ["", "", "", "Then, ", "First, ", "If possible, ", "Next, ", "Finally, ", "Don't forget: ",
           "For example, "]
ENDINGS = [".", ".", ".", "!", " (if needed).", ", then wait 5 minutes.", " & repeat.", ", about 10-15 times."]


def _zipf_weights(n: int, s: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def make_text(labels: list[str], rng: np.random.Generator, n_sentences: int | None = None,
              topic_rate: float = 0.7, cross_rate: float = 0.1) -> str:
    pools = [TOPICS[l] for l in labels]
    others = [l for l in TOPICS if l not in labels]
    n_sentences = n_sentences if n_sentences is not None else int(rng.integers(2, 5))

    def content_word() -> str:
        u = rng.random()
        if u < topic_rate:
            pool = pools[int(rng.integers(len(pools)))]
        elif u < topic_rate + cross_rate:
            pool = TOPICS[others[int(rng.integers(len(others)))]]
        else:
            pool = GENERIC
        return pool[int(rng.integers(len(pool)))]

    sentences = []
    for _ in range(n_sentences):
        opener = OPENERS[int(rng.integers(len(OPENERS)))]
        verb = VERBS[int(rng.integers(len(VERBS)))]
        body = f"{verb} the {content_word()} {CONNECTORS[int(rng.integers(len(CONNECTORS)))]} {content_word()}"
        if rng.random() < 0.5:
            body += f" and the {content_word()}'s {content_word()}"
        ending = ENDINGS[int(rng.integers(len(ENDINGS)))]
        if opener:
            body = opener + body[0].lower() + body[1:]
        sentences.append(body + ending)
    return " ".join(sentences)


def synthetic_corpus(n_records: int, n_labels: int = 20, seed: int = 0, second_label_rate: float = 0.45,
                     third_label_rate: float = 0.12, id_prefix: str = "syn") -> Dataset:
    """``n_records`` multi-label records over the first ``n_labels`` topics, with Zipf label frequencies."""
    names = list(TOPICS)[:n_labels]
    if n_labels < 1 or n_labels > len(TOPICS):
        raise ValueError(f"n_labels must be in 1..{len(TOPICS)}")
    rng = np.random.default_rng(seed)
    weights = _zipf_weights(len(names), 0.8)
    records = []
    width = len(str(n_records))
    for i in range(n_records):
        k = 1 + int(rng.random() < second_label_rate) + int(rng.random() < third_label_rate)
        k = min(k, len(names))
        chosen = list(rng.choice(len(names), size=k, replace=False, p=weights))
        labels = [names[j] for j in chosen]
        records.append(Record(f"{id_prefix}-{i:0{width}d}", make_text(labels, rng), frozenset(labels)))
    return Dataset(records, {"generator": "synthetic_corpus", "seed": seed, "n_labels": n_labels})


def fixture_label_sets() -> list[list[str]]:
    """Label assignment of the 60-record, 9-label fixture (before shuffling)."""
    H, G, F = "Health", "Home and Garden", "Food and Entertaining"
    P, T, B = "Pets and Animals", "Travel", "Finance and Business"
    S, C, Y = "Sports and Fitness", "Hobbies and Crafts", "Youth"
    sets = ([[H]] * 16 + [[H, G]] * 4 + [[H, F]] * 4 + [[H, S]] * 2 + [[G]] * 11 + [[G, P]] * 2
            + [[G, C]] + [[F]] * 8 + [[F, T]] + [[T]] * 3 + [[P]] * 2 + [[B]] * 3 + [[S]] + [[C]] + [[Y]])
    return [list(s) for s in sets]


def fixture_dataset(seed: int = 2021) -> Dataset:
    sets = fixture_label_sets()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sets))
    records = []
    for n, i in enumerate(order, start=1):
        labels = sets[i]
        records.append(Record(f"howsumm-{n:04d}", make_text(labels, rng), frozenset(labels)))
    return Dataset(records, {"generator": "fixture_dataset", "seed": seed})
