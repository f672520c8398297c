"""Synthetic images and question families with known entailment structure.

Every image has a scene and one subject with a colour and a material. It
yields two families: the global family (verify/query/choose the scene) and
the attribute family (verify/query/choose the subject's colour and
material). Entailed links follow the edges of the two task graphs among the
questions actually present, so some links go missing, as in real data.

Features concatenate a question-template one-hot, two mentioned-value
slots, a noisy encoding of the image (scene, colour, material) and, with
``fusion``, the products of each slot with the image encoding, a fixed
stand-in for a learned question-image fusion stage. The image
noise is drawn once per image, so every question about it sees the same
corruption; a smaller per-question noise is added on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batcher import QuestionRecord

__all__ = [
    "SyntheticConfig", "SyntheticWorld", "SCENES", "COLORS", "MATERIALS", "TEMPLATES",
    "GLOBAL_EDGES", "ATTR_EDGES", "answer_vocabulary", "feature_dim", "sample_world",
    "questions_for", "generate_synthetic", "split_by_image",
]

SCENES = ("beach", "forest", "city", "kitchen", "desert", "farm")
COLORS = ("red", "blue", "green", "white", "black", "yellow", "brown", "gray")
MATERIALS = ("wood", "metal", "glass", "plastic", "cloth", "stone")
VALUES = SCENES + COLORS + MATERIALS
TEMPLATES = ("verify_global", "query_global", "choose_global", "verify_attr", "query_attr",
             "choose_attr", "verify_attrs", "verify_attr_and")

# directed task-graph edges: question of src entails the question of dst
GLOBAL_EDGES = (
    ("verifyGlobalTrue", "verifyGlobalFalse"),
    ("verifyGlobalTrue", "queryGlobal"),
    ("queryGlobal", "verifyGlobalTrue"),
    ("verifyGlobalFalse", "chooseGlobal"),
)
ATTR_EDGES = (
    ("verifyAttrsTrue", "verifyAttrTrue"),
    ("verifyAttrAndTrue", "verifyAttrTrue"),
    ("verifyAttrTrue", "queryAttr"),
    ("queryAttr", "verifyAttrFalse"),
    ("verifyAttrFalse", "verifyAttrAndFalse"),
    ("verifyAttrAndFalse", "chooseAttr"),
    ("queryAttr", "chooseAttr"),
)
GLOBAL_TASKS = ("verifyGlobalTrue", "verifyGlobalFalse", "queryGlobal", "chooseGlobal")
ATTR_TASKS = ("verifyAttrsTrue", "verifyAttrAndTrue", "verifyAttrTrue", "queryAttr",
              "verifyAttrFalse", "verifyAttrAndFalse", "chooseAttr")


@dataclass(frozen=True)
class SyntheticConfig:
    image_noise: float = 0.3
    question_noise: float = 0.15
    scale: float = 2.0  # multiplies the whole feature vector
    fusion: bool = True  # append slot-times-image products
    min_global: int = 2  # questions kept per global family
    min_attr: int = 3
    max_attr: int = 6


@dataclass(frozen=True)
class SyntheticWorld:
    image_id: str
    scene: str
    subject: str
    color: str
    material: str


def answer_vocabulary() -> tuple[str, ...]:
    return ("yes", "no") + VALUES


def feature_dim(cfg: "SyntheticConfig | None" = None) -> int:
    n = len(TEMPLATES) + 3 * len(VALUES)
    return n + 2 * len(VALUES) if cfg is not None and cfg.fusion else n


def sample_world(rng: np.random.Generator, image_id: str) -> SyntheticWorld:
    return SyntheticWorld(image_id, SCENES[rng.integers(len(SCENES))], f"{image_id}/subject",
                          COLORS[rng.integers(len(COLORS))], MATERIALS[rng.integers(len(MATERIALS))])


def _other(rng, choices, value):
    rest = [c for c in choices if c != value]
    return rest[rng.integers(len(rest))]


def questions_for(world: SyntheticWorld, rng: np.random.Generator) -> dict[str, tuple[str, str, str | None, str | None]]:
    """task -> (template, answer, slot A value, slot B value) for every template task."""
    w = world
    cs, cc, cm = _other(rng, SCENES, w.scene), _other(rng, COLORS, w.color), _other(rng, MATERIALS, w.material)
    pair_s = (w.scene, cs) if rng.random() < 0.5 else (cs, w.scene)
    pair_c = (w.color, cc) if rng.random() < 0.5 else (cc, w.color)
    # the false conjunction falsifies one conjunct at random
    and_false = (cc, w.material) if rng.random() < 0.5 else (w.color, cm)
    return {
        "verifyGlobalTrue": ("verify_global", "yes", w.scene, None),
        "verifyGlobalFalse": ("verify_global", "no", cs, None),
        "queryGlobal": ("query_global", w.scene, None, None),
        "chooseGlobal": ("choose_global", w.scene, *pair_s),
        "verifyAttrsTrue": ("verify_attrs", "yes", w.color, w.material),
        "verifyAttrAndTrue": ("verify_attr_and", "yes", w.color, w.material),
        "verifyAttrTrue": ("verify_attr", "yes", w.color, None),
        "queryAttr": ("query_attr", w.color, None, None),
        "verifyAttrFalse": ("verify_attr", "no", cc, None),
        "verifyAttrAndFalse": ("verify_attr_and", "no", *and_false),
        "chooseAttr": ("choose_attr", w.color, *pair_c),
    }


def _encode(template, a, b, image_vec, rng, cfg):
    t = np.zeros(len(TEMPLATES))
    t[TEMPLATES.index(template)] = 1.0
    sa, sb = np.zeros(len(VALUES)), np.zeros(len(VALUES))
    if a is not None:
        sa[VALUES.index(a)] = 1.0
    if b is not None:
        sb[VALUES.index(b)] = 1.0
    img = image_vec + rng.normal(0.0, cfg.question_noise, image_vec.shape)
    parts = [t, sa, sb, img]
    if cfg.fusion:
        parts += [sa * img, sb * img]
    return cfg.scale * np.concatenate(parts)


def _links(present, edges, ids):
    return {task: tuple(ids[d] for s, d in edges if s == task and d in present) for task in present}


def generate_synthetic(n_images: int, seed: int = 0, cfg: SyntheticConfig = SyntheticConfig()) -> list[QuestionRecord]:
    """Two families (global, attribute) per image; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    out: list[QuestionRecord] = []
    for k in range(n_images):
        image_id = f"img{k:06d}"
        w = sample_world(rng, image_id)
        qs = questions_for(w, rng)
        clean = np.zeros(len(VALUES))
        for v in (w.scene, w.color, w.material):
            clean[VALUES.index(v)] = 1.0
        image_vec = clean + rng.normal(0.0, cfg.image_noise, clean.shape)
        n_g = int(rng.integers(cfg.min_global, len(GLOBAL_TASKS) + 1))
        n_a = int(rng.integers(cfg.min_attr, cfg.max_attr + 1))
        fams = (
            ("global", [GLOBAL_TASKS[i] for i in sorted(rng.choice(len(GLOBAL_TASKS), n_g, replace=False))], GLOBAL_EDGES),
            (w.subject, [ATTR_TASKS[i] for i in sorted(rng.choice(len(ATTR_TASKS), n_a, replace=False))], ATTR_EDGES),
        )
        for argument, tasks, edges in fams:
            ids = {t: f"{image_id}-{t}" for t in tasks}
            links = _links(set(tasks), edges, ids)
            for t in tasks:
                template, answer, a, b = qs[t]
                feats = _encode(template, a, b, image_vec, rng, cfg)
                out.append(QuestionRecord(ids[t], image_id, argument, t, answer, links[t],
                                          tuple(round(float(v), 6) for v in feats)))
    return out


def split_by_image(records, test_fraction: float = 0.2, seed: int = 0):
    """Train/test split that keeps every image on one side."""
    images = sorted({r.image_id for r in records})
    rng = np.random.default_rng(seed)
    test = set(rng.choice(images, size=int(round(test_fraction * len(images))), replace=False).tolist()) if images else set()
    return [r for r in records if r.image_id not in test], [r for r in records if r.image_id in test]
