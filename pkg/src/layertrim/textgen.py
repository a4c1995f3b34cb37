"""Deterministic synthetic English-like corpus generator.

Desk-scale experiments need a reproducible text corpus with no external
assets or licensing strings attached; this module synthesizes one from a
seeded template grammar (the generated text is released to the public
domain). Word choice follows a Zipf-like distribution so byte-level models
see realistic frequency structure; sentences carry enough agreement and
phrase structure that deeper models hold a measurable perplexity edge.

Usage: python -m layertrim.textgen out.txt --docs 20000 --seed 0
"""

from __future__ import annotations

import argparse

import numpy as np

NOUNS = (
    "stone river garden tower bridge lantern valley harbor meadow forest "
    "letter ledger engine compass mirror beacon orchard cellar granary archive "
    "map candle barrel wagon anchor bell chart crate flag hammer kettle knot "
    "mast needle oar pulley quill rope sail spade telescope thread vane wheel "
    "basket bucket canal chisel cistern derrick dock ferry furnace gate "
    "hinge jetty keel kiln ladder levee lock mill mooring pier plough press "
    "quarry rudder saw scale shed sluice smithy stable tally tiller trough "
    "vault vice weir wharf winch windlass yard"
).split()

ADJECTIVES = (
    "old quiet bright cold narrow distant heavy pale green iron wooden silent "
    "broken careful crooked dusty faded hollow long patient round rusted sharp "
    "shallow steep warm worn amber brittle coarse crisp damp gaunt gray "
    "leaning mended oiled polished scorched seasoned tarred weathered"
).split()

VERBS_T = (
    "carries repairs measures crosses watches records counts follows guards "
    "lowers raises signals sketches stores traces unloads weighs anchors "
    "bundles caulks fastens hoists inspects loads numbers oils paints rigs "
    "scrubs seals sorts stacks tallies tests trims"
).split()

VERBS_I = (
    "waits turns settles drifts fades gleams leans rests rusts sways creaks "
    "drips flickers groans shudders sinks steams tilts"
).split()

NAMES = (
    "Arden Bram Cato Dara Edwin Fen Greta Hale Ines Jorun Kest Lena Merek "
    "Nuala Orrin Petra Quill Rook Sera Tam Ulfa Vesna Wren Yorick Anse "
    "Beryl Corin Dellow Eamon Fleur Gorse Hesper"
).split()

PLACES = (
    "the north gate", "the lower bridge", "the salt market", "the old mill",
    "the east tower", "the ferry landing", "the long pier", "the grain hall",
    "the map room", "the lighthouse", "the dry dock", "the rope walk",
    "the tide gauge", "the coal yard", "the signal mast", "the harbor office",
)

TIME_PHRASES = (
    "before dawn", "after the rain", "at low tide", "in late autumn",
    "by lantern light", "on market day", "through the winter", "under a pale sky",
    "past midnight", "between the bells", "at first frost", "before the thaw",
)


def _zipf_probs(n: int) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    p = 1.0 / ranks
    return p / p.sum()


_ZIPF_CACHE: dict[int, np.ndarray] = {}


def _pick(rng: np.random.Generator, words) -> str:
    probs = _ZIPF_CACHE.setdefault(len(words), _zipf_probs(len(words)))
    return words[int(rng.choice(len(words), p=probs))]


def _article(word: str) -> str:
    return "an" if word[0] in "aeiou" else "a"


def _sentence(rng: np.random.Generator) -> str:
    form = int(rng.integers(0, 8))
    noun = _pick(rng, NOUNS)
    adj = _pick(rng, ADJECTIVES)
    place = _pick(rng, PLACES)
    name = _pick(rng, NAMES)
    if form == 0:
        return f"The {adj} {noun} {_pick(rng, VERBS_I)} near {place}."
    if form == 1:
        return f"{name} {_pick(rng, VERBS_T)} the {noun} at {place}."
    if form == 2:
        count = int(rng.integers(2, 400))
        return f"{name} counted {count} {_pick(rng, NOUNS)}s {_pick(rng, TIME_PHRASES)}."
    if form == 3:
        adj2, noun2 = _pick(rng, ADJECTIVES), _pick(rng, NOUNS)
        return f"{_article(adj).capitalize()} {adj} {noun} and {_article(adj2)} {adj2} {noun2} rested by {place}."
    if form == 4:
        return f'"{_pick(rng, VERBS_T).capitalize()} the {adj} {noun}," said {name}.'
    if form == 5:
        return (
            f"The {noun} that {name} {_pick(rng, VERBS_T)} {_pick(rng, TIME_PHRASES)} "
            f"{_pick(rng, VERBS_I)} by {place}."
        )
    if form == 6:
        name2 = _pick(rng, NAMES)
        return (
            f"{name} {_pick(rng, VERBS_T)} the {adj} {noun}, and {name2} "
            f"{_pick(rng, VERBS_T)} the {_pick(rng, ADJECTIVES)} {_pick(rng, NOUNS)}."
        )
    return f"{_pick(rng, TIME_PHRASES).capitalize()}, {name} {_pick(rng, VERBS_T)} the {adj} {noun}."


def generate_document(rng: np.random.Generator) -> str:
    return " ".join(_sentence(rng) for _ in range(int(rng.integers(3, 9))))


def generate_corpus(path: str, n_docs: int, seed: int = 0) -> str:
    """Write ``n_docs`` documents, one per line; fully determined by seed."""
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for _ in range(n_docs):
            fh.write(generate_document(rng))
            fh.write("\n")
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="generate a synthetic corpus, one document per line")
    parser.add_argument("out")
    parser.add_argument("--docs", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    generate_corpus(args.out, args.docs, args.seed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
