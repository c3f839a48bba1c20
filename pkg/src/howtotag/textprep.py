"""Text cleanup applied before tokenization.

Stage order is fixed: special-character removal, lowercasing, whitespace
tokenization, stopword removal, lemmatization, re-join.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources

STOPWORD_LISTS = {"english_v1": "stopwords_en_v1.txt"}

_SPECIAL = re.compile(r"[^\w\s]|_")
_SPACES = re.compile(r"\s+")
_VOWELS = set("aeiou")


@dataclass(frozen=True)
class PreprocessConfig:
    remove_special: bool = True
    remove_stopwords: bool = True
    lemmatize: bool = True
    lowercase: bool = True
    stopword_list_id: str = "english_v1"

    @property
    def any_enabled(self) -> bool:
        return self.remove_special or self.remove_stopwords or self.lemmatize or self.lowercase

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=None)
def load_stopwords(list_id: str = "english_v1") -> frozenset[str]:
    try:
        fname = STOPWORD_LISTS[list_id]
    except KeyError:
        raise ValueError(f"unknown stopword list {list_id!r}; known: {sorted(STOPWORD_LISTS)}") from None
    text = resources.files("howtotag.data").joinpath(fname).read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


def remove_special_chars(text: str) -> str:
    return _SPACES.sub(" ", _SPECIAL.sub(" ", text)).strip()


def to_lowercase(text: str) -> str:
    # lower() can emit combining marks (e.g. U+0130); drop them so the output stays alphanumeric
    return "".join(ch for ch in text.lower() if not unicodedata.combining(ch))


def remove_stopwords(tokens: list[str], list_id: str = "english_v1") -> list[str]:
    stop = load_stopwords(list_id)
    return [t for t in tokens if t not in stop]


# Irregular and rule-resistant forms.
LEMMA_EXCEPTIONS = {
    "went": "go", "gone": "go", "goes": "go",
    "made": "make", "given": "give", "gave": "give", "taken": "take", "took": "take",
    "children": "child", "men": "man", "women": "woman", "people": "person",
    "feet": "foot", "teeth": "tooth", "mice": "mouse", "geese": "goose",
    "leaves": "leaf", "knives": "knife", "lives": "life", "wives": "wife", "halves": "half",
    "better": "good", "best": "good", "worse": "bad", "worst": "bad",
    "ran": "run", "ate": "eat", "eaten": "eat", "wrote": "write", "written": "write",
    "bought": "buy", "brought": "bring", "thought": "think", "found": "find",
    "kept": "keep", "left": "leave", "felt": "feel", "told": "tell", "said": "say",
    "paid": "pay", "laid": "lay", "held": "hold", "built": "build", "sent": "send",
    "spent": "spend", "meant": "mean", "chosen": "choose", "chose": "choose",
    "choosing": "choose", "using": "use", "used": "use", "uses": "use",
    "seen": "see", "saw": "see", "known": "know", "knew": "know", "grew": "grow",
    "grown": "grow", "drove": "drive", "driven": "drive", "began": "begin", "begun": "begin",
    "fell": "fall", "fallen": "fall", "sat": "sit", "stood": "stand", "won": "win",
    "caught": "catch", "taught": "teach", "slept": "sleep", "dried": "dry",
    "news": "news", "series": "series", "species": "species", "lens": "lens",
    "something": "something", "anything": "anything", "everything": "everything",
    "nothing": "nothing", "morning": "morning", "evening": "evening", "ceiling": "ceiling",
    "bring": "bring", "spring": "spring", "string": "string", "thing": "thing",
    "during": "during", "clothes": "clothes", "glasses": "glasses", "scissors": "scissors",
    "cookies": "cookie", "movies": "movie", "ties": "tie", "lies": "lie", "dies": "die",
    "needed": "need", "seeded": "seed", "exceeded": "exceed", "proceeded": "proceed",
    "provided": "provide", "decided": "decide", "divided": "divide", "included": "include",
    "including": "include", "added": "add", "adding": "add",
}

# Stem endings after which a dropped "e" is restored (stat-ed -> state, mak-ing -> make).
_E_RESTORE_ENDINGS = (
    "at", "iz", "yz", "is", "id", "ud", "ur", "iv", "ov", "ag", "ak", "ok", "ar", "os", "us",
    "bl", "pl", "cl", "gl", "tl", "dl", "rg", "rs", "nc", "rc", "ag", "ug", "ut", "ap", "ab",
)
_NO_UNDOUBLE = set("lsz")


def _restore_e(stem: str) -> str:
    if len(stem) < 2:
        return stem
    if stem.endswith(_E_RESTORE_ENDINGS):
        # only a single vowel before the ending, as in "stat", not "heat"
        end = next(e for e in _E_RESTORE_ENDINGS if stem.endswith(e))
        before = stem[: -len(end)]
        if end[0] in _VOWELS and before and before[-1] in _VOWELS:
            return stem
        return stem + "e"
    groups = re.findall(r"[aeiouy]+", stem)
    if (len(groups) == 1 and len(stem) >= 3 and stem[-1] not in _VOWELS | set("wxy")
            and stem[-2] in _VOWELS | {"y"} and stem[-3] not in _VOWELS):
        return stem + "e"
    return stem


def _strip_verb_suffix(word: str, suffix: str) -> str:
    stem = word[: -len(suffix)]
    if len(stem) < 3 or not re.search("[aeiouy]", stem):
        return word
    if suffix == "ed" and stem.endswith("e"):
        return word
    if len(stem) > 3 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS | _NO_UNDOUBLE:
        return stem[:-1]
    if suffix == "ed" and stem.endswith("i"):
        return stem[:-1] + "y"
    return _restore_e(stem)


def _lemma_step(word: str) -> str:
    if word in LEMMA_EXCEPTIONS:
        return LEMMA_EXCEPTIONS[word]
    if len(word) <= 3 or not word.isalpha():
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith(("xes", "ches", "shes", "zes")):
        return word[:-2]
    if word.endswith("ing"):
        return _strip_verb_suffix(word, "ing")
    if word.endswith("ed"):
        return _strip_verb_suffix(word, "ed")
    if word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


@lru_cache(maxsize=65536)
def lemmatize_word(word: str) -> str:
    # iterate to a fixed point so that lemmatize_word is idempotent
    for _ in range(len(word) + 1):
        nxt = _lemma_step(word)
        if nxt == word:
            break
        word = nxt
    return word


def lemmatize(tokens: list[str]) -> list[str]:
    return [lemmatize_word(t) for t in tokens]


def preprocess(text: str, cfg: PreprocessConfig = PreprocessConfig()) -> str:
    if not cfg.any_enabled:
        return text
    if cfg.remove_special:
        text = remove_special_chars(text)
    if cfg.lowercase:
        text = to_lowercase(text)
    tokens = text.split()
    if cfg.remove_stopwords:
        tokens = remove_stopwords(tokens, cfg.stopword_list_id)
    if cfg.lemmatize:
        lemmas = lemmatize(tokens)
        if cfg.remove_stopwords:
            # a lemma that is itself a stopword would vanish on a second pass
            stop = load_stopwords(cfg.stopword_list_id)
            lemmas = [t if l in stop else l for t, l in zip(tokens, lemmas)]
        tokens = lemmas
    return " ".join(tokens)
