"""Synthetic referring-segmentation benchmark.

Each sample is a grayscale image with several non-overlapping lesions on a
smoothly varying background, a referring expression built from a closed
grammar, and the exact mask of the one lesion the expression refers to.

The grammar composes a head ("the lesion", optionally carrying a size
superlative) with clauses for position, border and shape::

    the largest lesion in the lower right with a fuzzy border

Expressions are built so that the clauses needed for unique resolution come
first; trailing clauses are redundant but truthful.  A rule-based resolver
(attribute filters, then the superlative over what is left) verifies
uniqueness at generation time and is reused by partial_text.

Twin samples place two lesions that agree in shape, border, size and
brightness and differ only in position, so only the expression can tell
them apart; these form the disambiguation subset.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass

import numpy as np

from .config import GeneratorConfig
from .errors import GenerationRetryExceeded

POSITION_KINDS = ("quadrant", "vhalf", "hhalf")
CLAUSE_ORDER = {"pos": 0, "boundary": 1, "shape": 2}
# Area ratio a superlative must win by before the generator will use it.
SUPERLATIVE_MARGIN = 1.2


@dataclass
class LesionSpec:
    """Geometry and appearance of one lesion."""

    shape: str  # "ellipse" | "blob"
    center: tuple  # (row, col)
    axes: tuple  # semi-axes (along row, col before rotation), px
    angle: float  # rotation, radians
    intensity: float  # peak brightness in [0, 1]
    boundary: str  # "sharp" | "fuzzy"
    wobble_amps: tuple = ()
    wobble_phases: tuple = ()

    def radius_bound(self) -> float:
        return max(self.axes) * (1.0 + sum(self.wobble_amps))

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "center": [float(self.center[0]), float(self.center[1])],
            "axes": [float(self.axes[0]), float(self.axes[1])],
            "angle": float(self.angle),
            "intensity": float(self.intensity),
            "boundary": self.boundary,
            "wobble_amps": [float(a) for a in self.wobble_amps],
            "wobble_phases": [float(p) for p in self.wobble_phases],
        }

    @staticmethod
    def from_dict(d: dict) -> "LesionSpec":
        return LesionSpec(
            shape=d["shape"],
            center=tuple(d["center"]),
            axes=tuple(d["axes"]),
            angle=d["angle"],
            intensity=d["intensity"],
            boundary=d["boundary"],
            wobble_amps=tuple(d.get("wobble_amps", ())),
            wobble_phases=tuple(d.get("wobble_phases", ())),
        )


@dataclass
class ReferringSample:
    image: np.ndarray  # float32 (H, W) in [0, 1]
    mask: np.ndarray  # uint8 (H, W), values {0, 1}
    expression: str
    clauses: list
    lesions: list
    target_index: int
    seed: int
    disambiguation: bool = False

    @property
    def size(self) -> int:
        return self.image.shape[0]


def rasterize(spec: LesionSpec, size: int) -> np.ndarray:
    """Boolean mask of the lesion geometry (no boundary blur)."""
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    dr = rr - spec.center[0]
    dc = cc - spec.center[1]
    ca, sa = math.cos(spec.angle), math.sin(spec.angle)
    u = ca * dr + sa * dc
    v = -sa * dr + ca * dc
    norm = np.sqrt((u / spec.axes[0]) ** 2 + (v / spec.axes[1]) ** 2)
    if spec.shape == "blob" and spec.wobble_amps:
        theta = np.arctan2(v, u)
        bound = np.ones_like(norm)
        for k, (amp, phase) in enumerate(zip(spec.wobble_amps, spec.wobble_phases)):
            bound = bound + amp * np.cos((k + 2) * theta + phase)
        return norm <= bound
    return norm <= 1.0


def _gaussian_blur(a: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return a
    r = max(1, int(round(3 * sigma)))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    p = np.pad(a, ((r, r), (0, 0)), mode="reflect")
    a = np.stack([np.convolve(p[:, j], k, mode="valid") for j in range(p.shape[1])],
                 axis=1)
    p = np.pad(a, ((0, 0), (r, r)), mode="reflect")
    a = np.stack([np.convolve(p[i, :], k, mode="valid") for i in range(p.shape[0])],
                 axis=0)
    return a


def render(specs, rng, cfg: GeneratorConfig) -> np.ndarray:
    """Compose background and lesions into a quantized grayscale image."""
    s = cfg.image_size
    base = rng.uniform(0.25, 0.40)
    angle = rng.uniform(0, 2 * math.pi)
    amp = rng.uniform(0.0, 0.08)
    rr, cc = np.mgrid[0:s, 0:s].astype(np.float64) / s
    img = base + amp * (math.cos(angle) * (rr - 0.5) + math.sin(angle) * (cc - 0.5))
    texture = _gaussian_blur(rng.standard_normal((s, s)), 10.0)
    img = img + texture * (0.05 / (texture.std() + 1e-8))
    for spec in specs:
        alpha = rasterize(spec, s).astype(np.float64)
        if spec.boundary == "fuzzy":
            alpha = _gaussian_blur(alpha, 1.8)
        img = img * (1.0 - alpha) + spec.intensity * alpha
    img = img + rng.normal(0.0, cfg.noise, (s, s))
    img = np.clip(img, 0.0, 1.0)
    # Snap to the uint8 grid so in-memory and PNG round-tripped pixels agree.
    return (np.round(img * 255.0) / 255.0).astype(np.float32)


# --- expression grammar and resolver ----------------------------------------


def lesion_position(spec: LesionSpec, size: int) -> tuple:
    v = "upper" if spec.center[0] < size / 2 else "lower"
    h = "left" if spec.center[1] < size / 2 else "right"
    return v, h


_SUP_WORDS = {"largest": "largest", "biggest": "largest", "smallest": "smallest"}
_SHAPE_WORDS = {"oval": "ellipse", "round": "ellipse", "irregular": "blob",
                "blob": "blob"}
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def parse_expression(text: str) -> dict:
    """Extract the attribute constraints mentioned in an expression."""
    words = _TOKEN_RE.findall(text.lower())
    attrs = {"superlative": None, "v": None, "h": None, "shape": None,
             "boundary": None}
    for w in words:
        if w in _SUP_WORDS:
            attrs["superlative"] = _SUP_WORDS[w]
        elif w in ("upper", "top"):
            attrs["v"] = "upper"
        elif w in ("lower", "bottom"):
            attrs["v"] = "lower"
        elif w in ("left", "right"):
            attrs["h"] = w
        elif w in _SHAPE_WORDS:
            attrs["shape"] = _SHAPE_WORDS[w]
        elif w in ("sharp", "fuzzy"):
            attrs["boundary"] = w
    return attrs


def resolve(lesions, attrs: dict, size: int, areas=None) -> list:
    """Indices of lesions matching the constraints; categorical filters
    first, then the superlative over whatever survived."""
    if areas is None:
        areas = [int(rasterize(s, size).sum()) for s in lesions]
    out = []
    for i, spec in enumerate(lesions):
        v, h = lesion_position(spec, size)
        if attrs.get("v") and attrs["v"] != v:
            continue
        if attrs.get("h") and attrs["h"] != h:
            continue
        if attrs.get("shape") and attrs["shape"] != spec.shape:
            continue
        if attrs.get("boundary") and attrs["boundary"] != spec.boundary:
            continue
        out.append(i)
    sup = attrs.get("superlative")
    if sup and out:
        pick = max(out, key=lambda i: areas[i]) if sup == "largest" else \
            min(out, key=lambda i: areas[i])
        return [pick]
    return out


def resolve_expression(sample: ReferringSample, text: str) -> list:
    return resolve(sample.lesions, parse_expression(text), sample.size)


def _clause_pool(idx, specs, areas, size, rng):
    """Truthful candidate clauses for lesion ``idx``, in shuffled order."""
    spec = specs[idx]
    v, h = lesion_position(spec, size)
    pool = [
        {"kind": "pos", "pos": "quadrant", "text": f"in the {v} {h}",
         "attrs": {"v": v, "h": h}},
        {"kind": "pos", "pos": "vhalf", "text": f"in the {v} half",
         "attrs": {"v": v}},
        {"kind": "pos", "pos": "hhalf", "text": f"in the {h} half",
         "attrs": {"h": h}},
        {"kind": "boundary", "text": f"with a {spec.boundary} border",
         "attrs": {"boundary": spec.boundary}},
        {"kind": "shape",
         "text": "with an oval shape" if spec.shape == "ellipse"
         else "with an irregular shape",
         "attrs": {"shape": spec.shape}},
    ]
    others = [a for i, a in enumerate(areas) if i != idx]
    if others:
        if areas[idx] >= SUPERLATIVE_MARGIN * max(others):
            pool.append({"kind": "sup", "text": "largest",
                         "attrs": {"superlative": "largest"}})
        elif min(others) >= SUPERLATIVE_MARGIN * areas[idx]:
            pool.append({"kind": "sup", "text": "smallest",
                         "attrs": {"superlative": "smallest"}})
    order = rng.permutation(len(pool))
    return [pool[i] for i in order]


def _merge_attrs(clauses) -> dict:
    attrs = {}
    for c in clauses:
        attrs.update(c["attrs"])
    return attrs


def _minimal_clause_set(idx, specs, areas, size, rng):
    """Smallest clause combination that resolves to exactly lesion idx."""
    pool = _clause_pool(idx, specs, areas, size, rng)
    if resolve(specs, {}, size, areas) == [idx]:
        return []
    for k in range(1, len(pool) + 1):
        for combo in itertools.combinations(pool, k):
            if sum(c["kind"] == "pos" for c in combo) > 1:
                continue
            if resolve(specs, _merge_attrs(combo), size, areas) == [idx]:
                return list(combo)
    return None


def _build_expression(idx, specs, areas, size, rng):
    """-> (clauses as text list, expression) or None when unresolvable."""
    minimal = _minimal_clause_set(idx, specs, areas, size, rng)
    if minimal is None:
        return None
    used_kinds = {c["kind"] for c in minimal}
    used_pos = "pos" in used_kinds

    extras = []
    for c in _clause_pool(idx, specs, areas, size, rng):
        if any(c["text"] == m["text"] for m in minimal):
            continue
        if c["kind"] == "pos" and (used_pos or any(e["kind"] == "pos" for e in extras)):
            continue
        if c["kind"] == "sup" and "sup" in used_kinds:
            continue
        p = 0.3 if c["kind"] == "sup" else 0.5
        if rng.random() < p:
            extras.append(c)

    sup_text = next((c["text"] for c in minimal + extras if c["kind"] == "sup"), None)
    head = f"the {sup_text} lesion" if sup_text else "the lesion"

    def attr_sort(cs):
        return sorted((c for c in cs if c["kind"] != "sup"),
                      key=lambda c: CLAUSE_ORDER[c["kind"]])

    clauses = [head] + [c["text"] for c in attr_sort(minimal)] \
        + [c["text"] for c in attr_sort(extras)]
    expression = " ".join(clauses)
    if resolve(specs, parse_expression(expression), size, areas) != [idx]:
        return None
    return clauses, expression


# --- placement --------------------------------------------------------------


def _sample_spec(rng, cfg: GeneratorConfig, max_axis: float) -> LesionSpec:
    shape = "ellipse" if rng.random() < 0.5 else "blob"
    a = rng.uniform(cfg.min_axis, max_axis)
    ratio = rng.uniform(1.0, 1.8)
    b = max(cfg.min_axis, a / ratio)
    if rng.random() < 0.5:
        a, b = b, a
    if shape == "blob":
        amps = tuple(rng.uniform(0.10, 0.20, 2))
        phases = tuple(rng.uniform(0, 2 * math.pi, 2))
    else:
        amps, phases = (), ()
    spec = LesionSpec(
        shape=shape, center=(0.0, 0.0), axes=(a, b),
        angle=rng.uniform(0, math.pi),
        intensity=rng.uniform(0.60, 0.95),
        boundary="sharp" if rng.random() < 0.5 else "fuzzy",
        wobble_amps=amps, wobble_phases=phases,
    )
    return spec


def _place(rng, spec: LesionSpec, placed, size, quadrant=None, tries=25):
    """Find a center keeping the lesion inside the frame, clear of the
    midlines and clear of already placed lesions.  Returns a new spec or
    None."""
    rb = spec.radius_bound()
    lo, hi = rb + 2.0, size - 1 - rb - 2.0
    if lo >= hi:
        return None
    half = size / 2
    for _ in range(tries):
        r = rng.uniform(lo, hi)
        c = rng.uniform(lo, hi)
        if abs(r - half) < 6 or abs(c - half) < 6:
            continue
        if quadrant is not None:
            v = "upper" if r < half else "lower"
            h = "left" if c < half else "right"
            if (v, h) != quadrant:
                continue
        ok = True
        for q in placed:
            dist = math.hypot(r - q.center[0], c - q.center[1])
            if dist < rb + q.radius_bound() + 4.0:
                ok = False
                break
        if ok:
            return LesionSpec(**{**spec.__dict__, "center": (r, c)})
    return None


def _twin_of(rng, spec: LesionSpec) -> LesionSpec:
    """Same shape, border, size and brightness; only the pose may differ."""
    return LesionSpec(
        shape=spec.shape, center=spec.center, axes=spec.axes,
        angle=rng.uniform(0, math.pi), intensity=spec.intensity,
        boundary=spec.boundary, wobble_amps=spec.wobble_amps,
        wobble_phases=spec.wobble_phases,
    )


def _other_quadrant(rng, quadrant):
    options = [(v, h) for v in ("upper", "lower") for h in ("left", "right")
               if (v, h) != quadrant]
    return options[rng.integers(len(options))]


def generate_sample(cfg: GeneratorConfig, seed) -> ReferringSample:
    """Deterministically generate one sample from a seed (int or sequence)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    size = cfg.image_size
    seed_tag = int(np.random.SeedSequence(seed).generate_state(1)[0])

    for _ in range(cfg.max_retries):
        n = int(rng.integers(cfg.min_lesions, cfg.max_lesions + 1))
        twin_mode = bool(rng.random() < cfg.twin_fraction) and n >= 2
        max_axis = min(cfg.max_axis, max(cfg.min_axis + 1.0, 44.0 / n))

        specs = []
        if twin_mode:
            base = _sample_spec(rng, cfg, max_axis)
            first = _place(rng, base, specs, size)
            if first is None:
                continue
            specs.append(first)
            quad = lesion_position(first, size)
            twin = _place(rng, _twin_of(rng, first), specs, size,
                          quadrant=_other_quadrant(rng, quad))
            if twin is None:
                continue
            specs.append(twin)
        while len(specs) < n:
            spec = _place(rng, _sample_spec(rng, cfg, max_axis), specs, size)
            if spec is None:
                break
            specs.append(spec)
        if len(specs) < n:
            continue

        areas = [int(rasterize(s, size).sum()) for s in specs]
        if twin_mode:
            target = int(rng.integers(2))
        else:
            target = int(rng.integers(n))
        built = _build_expression(target, specs, areas, size, rng)
        if built is None:
            continue
        clauses, expression = built
        image = render(specs, rng, cfg)
        mask = rasterize(specs[target], size).astype(np.uint8)
        return ReferringSample(
            image=image, mask=mask, expression=expression, clauses=clauses,
            lesions=specs, target_index=target, seed=seed_tag,
            disambiguation=twin_mode,
        )
    raise GenerationRetryExceeded(
        f"gave up after {cfg.max_retries} attempts (seed {seed})"
    )


def generate_dataset(cfg: GeneratorConfig, master_seed: int, count: int,
                     offset: int = 0) -> list:
    """Samples i = offset .. offset+count-1, each seeded independently from
    (master_seed, i), so any sample can be regenerated in isolation."""
    return [generate_sample(cfg, [master_seed, offset + i]) for i in range(count)]


# --- partial expressions ----------------------------------------------------


def minimal_prefix_length(sample: ReferringSample) -> int:
    for k in range(1, len(sample.clauses) + 1):
        text = " ".join(sample.clauses[:k])
        if resolve_expression(sample, text) == [sample.target_index]:
            return k
    return len(sample.clauses)


def partial_text(sample: ReferringSample, fraction: float) -> str:
    """Keep the first ceil(fraction * n) clauses, never dropping below the
    minimal uniquely-resolving prefix."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(sample.clauses)
    keep = max(math.ceil(fraction * n), minimal_prefix_length(sample))
    return " ".join(sample.clauses[:min(keep, n)])
