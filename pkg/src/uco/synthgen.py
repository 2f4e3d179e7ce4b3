"""Synthetic query-title data with central products and hard-negative accessories.

Three query kinds are produced:

* common-str: the full query string appears in both the product titles
  (central) and the accessory titles (non-central), e.g. "3d printer" in
  "Creality CR10 3D Printer" and in "3D Printer Filament".
* alphanum: the query is a single model code such as ``S2716DG``; one
  non-central title carries the same product with a one-character-different
  code, the others are accessories naming the exact code.
* ambiguous (the rest): accessory titles carry the query words, but not as one
  contiguous string.

Labels are set by construction: product titles get relevance 5 and
centrality 1, accessory/look-alike titles relevance 1 and centrality 0. Two
grade levels keep relevance a monotone function of centrality, so all rank
correlations between the two are exactly 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .curation import CurationConfig, build_cq, filter_pairs
from .datamodel import EvalSplit, GradedPair, ValidationError
from .encoder import normalize_text

DEFAULT_NOISE_WORDS = (
    "case", "cover", "stand", "mount", "cable", "charger", "strap", "filament",
    "shoes", "outfit", "sticker", "decal", "skin", "manual", "box only",
    "replacement parts", "adapter", "battery", "screen protector", "bracket",
    "cleaning kit", "carry bag", "remote", "fan", "nozzle", "spare knob",
)

# name, brands, product lines, nouns/variants that pair with a line, product descriptors
ARCHETYPES = (
    ("phone", ("apple", "samsung", "google", "motorola", "oneplus", "xiaomi"),
     ("iphone", "galaxy", "pixel", "moto", "nord", "redmi"),
     ("13", "12", "14", "s21", "note", "a52", "pro", "mini", "ultra", "plus"),
     ("unlocked", "128gb", "256gb", "smartphone", "dual sim", "5g", "refurbished", "graphite", "sealed")),
    ("monitor", ("dell", "asus", "lg", "benq", "acer", "samsung"),
     ("ultrasharp", "proart", "ultragear", "zowie", "predator", "odyssey"),
     ("monitor", "display", "27", "32", "curved", "gaming monitor", "24"),
     ("ips panel", "144hz", "qhd", "led", "hdmi", "1440p", "freesync", "widescreen")),
    ("doll", ("mattel", "hasbro", "mga", "spin master", "kenner", "ideal"),
     ("barbie", "bratz", "polly pocket", "monster high", "sindy", "american girl"),
     ("model", "doll", "fashionista", "collector", "princess", "dreamhouse", "top model"),
     ("ginger hair", "blonde", "collectible", "nrfb", "vintage", "2008", "articulated", "mint")),
    ("printer", ("creality", "prusa", "anycubic", "elegoo", "bambu", "flashforge"),
     ("3d", "ender", "kobra", "mars", "photon", "adventurer"),
     ("printer", "3 v2", "s1", "pro", "max", "neo", "resin printer"),
     ("fdm", "auto leveling", "assembled", "direct drive", "large build volume", "silent board")),
    ("gpu", ("nvidia", "msi", "gigabyte", "evga", "zotac", "sapphire"),
     ("geforce", "rtx", "gtx", "radeon", "arc", "quadro"),
     ("1080", "3070", "2060", "4090", "rx 6800", "a770", "ti", "super"),
     ("graphics card", "8gb", "gddr6", "pcie", "gpu", "dual fan", "12gb")),
    ("console", ("sony", "nintendo", "microsoft", "sega", "valve", "atari"),
     ("playstation", "switch", "xbox", "dreamcast", "steam deck", "megadrive"),
     ("5", "4", "oled", "series x", "one", "lite", "console", "slim"),
     ("console", "1tb", "bundle", "boxed", "with controller", "complete", "disc edition")),
    ("camera", ("canon", "nikon", "sony", "fujifilm", "olympus", "panasonic"),
     ("eos", "coolpix", "alpha", "x100", "om", "lumix"),
     ("r6", "d750", "a7", "camera", "mirrorless", "dslr", "body"),
     ("24mp", "body only", "with lens", "4k video", "low shutter count", "full frame")),
    ("watch", ("casio", "seiko", "garmin", "fossil", "citizen", "timex"),
     ("g shock", "prospex", "forerunner", "gen 6", "eco drive", "ironman"),
     ("watch", "smartwatch", "diver", "945", "chronograph", "automatic"),
     ("stainless steel", "water resistant", "solar", "sapphire crystal", "gps", "mens")),
)

FILLERS = ("for", "fits", "compatible with", "suits", "made for")
CODE_LETTERS = "ABCDEFGHJKLMNPRSTUVWXZ"
CENTRAL_GRADE = 5
NON_CENTRAL_GRADE = 1


@dataclass(frozen=True)
class GenConfig:
    n_queries: int = 200
    titles_per_query: int = 6
    frac_common_str: float = 0.5
    frac_alphanum: float = 0.3
    noise_word_pool: Tuple[str, ...] = DEFAULT_NOISE_WORDS
    rng_seed: int = 0
    id_prefix: str = ""

    def __post_init__(self):
        if self.n_queries < 1:
            raise ValidationError("n_queries must be >= 1")
        if self.titles_per_query < 2:
            raise ValidationError("titles_per_query must be >= 2")
        for f in (self.frac_common_str, self.frac_alphanum):
            if not 0.0 <= f <= 1.0:
                raise ValidationError("fractions must lie in [0, 1]")
        if self.frac_common_str + self.frac_alphanum > 1.0 + 1e-12:
            raise ValidationError("frac_common_str + frac_alphanum must not exceed 1")
        if not self.noise_word_pool:
            raise ValidationError("noise_word_pool must not be empty")


def _cap(text: str) -> str:
    return " ".join(w if any(c.isdigit() for c in w) and any(c.isalpha() for c in w) and w.isupper()
                    else w.capitalize() for w in text.split())


class _Draw:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def sample(self, seq, n):
        idx = self.rng.choice(len(seq), size=min(n, len(seq)), replace=False)
        return [seq[i] for i in sorted(idx)]

    def between(self, lo, hi):
        return int(self.rng.integers(lo, hi + 1))


def _model_code(draw: _Draw) -> str:
    head = "".join(draw.pick(CODE_LETTERS) for _ in range(draw.between(1, 2)))
    digits = "".join(str(draw.between(0, 9)) for _ in range(draw.between(3, 4)))
    tail = "".join(draw.pick(CODE_LETTERS) for _ in range(draw.between(0, 2)))
    return head + digits + tail


def _mutate_code(code: str, draw: _Draw) -> str:
    """Change exactly one character, keeping its class (letter/digit)."""
    pos = draw.between(len(code) // 2, len(code) - 1)
    old = code[pos]
    pool = "0123456789" if old.isdigit() else CODE_LETTERS
    new = draw.pick([c for c in pool if c != old])
    return code[:pos] + new + code[pos + 1:]


def _product_title(draw: _Draw, brand: str, core: str, descriptors: Sequence[str]) -> str:
    extras = draw.sample(descriptors, draw.between(2, 4))
    head = extras[:1] if draw.rng.random() < 0.3 else []
    tail = extras[len(head):]
    return _cap(" ".join([brand] + head + [core] + tail))


def _accessory_title(draw: _Draw, core: str, noise: Sequence[str]) -> str:
    acc = draw.sample(noise, draw.between(1, 2))
    if draw.rng.random() < 0.5:
        return _cap(" ".join([core] + acc))
    return _cap(" ".join(acc + [draw.pick(FILLERS), core]))


def _broken_accessory_title(draw: _Draw, query: str, noise: Sequence[str]) -> str:
    """Accessory title with the query words present but never as one contiguous string."""
    words = query.split()
    acc = draw.sample(noise, draw.between(1, 2))
    if len(words) == 1:
        words = [words[0][: max(1, len(words[0]) - 1)], words[0][-1:]]
    # a separator ending in the query's first letters ("bag" before "shock watch")
    # can re-form the query, so redraw until it is genuinely broken
    for _ in range(100):
        cut = draw.between(1, len(words) - 1)
        middle = draw.pick(acc)
        title = _cap(" ".join(words[:cut] + [middle] + words[cut:] + [w for w in acc if w != middle]))
        if not contains_query(query, title):
            return title
    return _cap(" ".join(words[:cut] + ["|"] + words[cut:] + acc))


def _split_counts(draw: _Draw, m: int) -> Tuple[int, int]:
    n_pos = draw.between(1, m - 1)
    return n_pos, m - n_pos


def generate(cfg: GenConfig) -> List[GradedPair]:
    """Labelled pairs, ``titles_per_query`` per query, deterministic in ``cfg.rng_seed``."""
    rng = np.random.default_rng(cfg.rng_seed)
    draw = _Draw(rng)
    n = cfg.n_queries
    n_common = int(round(cfg.frac_common_str * n))
    n_alpha = min(int(round(cfg.frac_alphanum * n)), n - n_common)
    kinds = np.array(["common"] * n_common + ["alpha"] * n_alpha + ["ambiguous"] * (n - n_common - n_alpha))
    kinds = kinds[rng.permutation(n)]
    noise = list(cfg.noise_word_pool)
    width = max(4, len(str(n)))
    pairs: List[GradedPair] = []
    title_counter = 0

    for qi, kind in enumerate(kinds):
        _, brands, lines, variants, descriptors = ARCHETYPES[draw.between(0, len(ARCHETYPES) - 1)]
        brand = draw.pick(brands)
        if kind == "alpha":
            code = _model_code(draw)
            query = code if rng.random() < 0.5 else code.lower()
            core = code
        else:
            query = f"{draw.pick(lines)} {draw.pick(variants)}"
            core = query
        n_pos, n_neg = _split_counts(draw, cfg.titles_per_query)
        titles: List[Tuple[str, int, int]] = []
        for _ in range(n_pos):
            titles.append((_product_title(draw, brand, core, descriptors), CENTRAL_GRADE, 1))
        for j in range(n_neg):
            if kind == "alpha" and j == 0:
                twin = _mutate_code(code, draw)
                text = _product_title(draw, brand, twin, descriptors)
            elif kind == "ambiguous":
                text = _broken_accessory_title(draw, query, noise)
            else:
                text = _accessory_title(draw, core, noise)
            titles.append((text, NON_CENTRAL_GRADE, 0))
        qid = f"{cfg.id_prefix}q{qi:0{width}d}"
        for text, rel, cen in titles:
            pairs.append(GradedPair(qid, query, f"{cfg.id_prefix}t{title_counter:0{width + 1}d}", text, rel, cen))
            title_counter += 1
    return pairs


def contains_query(query: str, title: str) -> bool:
    return normalize_text(query) in normalize_text(title)


@dataclass(frozen=True)
class Benchmark:
    train_pairs: List[GradedPair]
    eval_pairs: List[GradedPair]
    split: EvalSplit


def make_benchmark(seed: int, n_queries: int = 1000, titles_per_query: int = 6,
                   frac_common_str: float = 0.5, frac_alphanum: float = 0.3,
                   n_train_queries: int | None = None) -> Benchmark:
    """Independent train draw plus a curated CQ evaluation split (80:20 dev/test)."""
    from .seeding import child_seed

    base = dict(titles_per_query=titles_per_query, frac_common_str=frac_common_str, frac_alphanum=frac_alphanum)
    train = generate(GenConfig(n_queries=n_train_queries or n_queries, rng_seed=child_seed(seed, "train-data"),
                               id_prefix="tr-", **base))
    evaluation = generate(GenConfig(n_queries=n_queries, rng_seed=child_seed(seed, "eval-data"), **base))
    split = build_cq(filter_pairs(evaluation), CurationConfig(rng_seed=child_seed(seed, "curation")))
    return Benchmark(train, evaluation, split)
