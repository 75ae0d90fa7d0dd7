"""Synthetic audio-visual question answering samples.

A :class:`SceneSpec` lists instruments with a patch position, a frequency
band, an activity schedule and a loudness. Features are built from fixed
random codebooks drawn once per run seed, with shapes matching the frame,
patch, audio, time-frequency, word and sentence encoders of the model.

The first two classes form the frequency-critical pair: their visual and
audio codes are the same array, so only the time-frequency features can
tell them apart.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .qcr import ASPECTS, PromptBank
from .tensor import Tensor

CLASS_NAMES = ("flute", "clarinet", "violin", "cello", "drum", "piano", "guitar", "trumpet")
CRITICAL_PAIR = (0, 1)
ANSWERS = ("zero", "one", "two", "three", "four", "yes", "no")
YES, NO = ANSWERS.index("yes"), ANSWERS.index("no")
TAGS = ("audio", "visual", "audio-visual")
SIDES = ("left", "right")
MAX_INSTRUMENTS = 4

TEMPLATES = (
    "count_sounding",
    "count_types",
    "existential",
    "louder_than",
    "first_sounding_side",
    "always_playing",
)
TEMPLATE_TAGS = {
    "count_sounding": "audio",
    "count_types": "visual",
    "existential": "audio",
    "louder_than": "audio",
    "first_sounding_side": "audio-visual",
    "always_playing": "audio-visual",
}
PAD = "<pad>"
LOUDER_GAP = 0.3
MOTION_GAIN = 2.0
# probability that a template instance is built as a frequency-critical one
CRITICAL_SHARE = {"existential": 0.6, "always_playing": 0.4}


class DanglingReferenceError(ValueError):
    """A question refers to a class or side the scene world does not have."""


@dataclass(frozen=True)
class Instrument:
    class_id: int
    position: int
    band: int
    schedule: tuple[bool, ...]
    loudness: float

    @property
    def sounding(self) -> bool:
        return any(self.schedule)

    @property
    def onset(self) -> int | None:
        return self.schedule.index(True) if self.sounding else None


@dataclass(frozen=True)
class SceneSpec:
    instruments: tuple[Instrument, ...]

    def validate(self, config: RunConfig) -> None:
        if len(self.instruments) > config.m_prime:
            raise ValueError("more instruments than patches")
        positions = [i.position for i in self.instruments]
        if len(set(positions)) != len(positions):
            raise ValueError(f"instrument positions collide: {positions}")
        for inst in self.instruments:
            if not (0 <= inst.class_id < config.classes and 0 <= inst.position < config.m_prime):
                raise ValueError(f"instrument out of range: {inst}")
            if not 0 <= inst.band < config.f or len(inst.schedule) != config.t:
                raise ValueError(f"instrument band or schedule malformed: {inst}")
            if not 0.2 <= inst.loudness <= 1.0:
                raise ValueError(f"loudness {inst.loudness} outside [0.2, 1.0]")


@dataclass(frozen=True)
class QuestionSpec:
    template_id: str
    arguments: tuple
    modality_tag: str
    answer: int

    def tokens(self) -> list[str]:
        args = self.arguments
        if self.template_id == "count_sounding":
            words = ["how", "many", "instruments", "sounding"]
        elif self.template_id == "count_types":
            words = ["how", "many", "instrument", "types"]
        elif self.template_id == "existential":
            words = ["is", "there", "a", CLASS_NAMES[args[0]], "sounding"]
        elif self.template_id == "louder_than":
            words = ["is", CLASS_NAMES[args[0]], "louder", "than", CLASS_NAMES[args[1]]]
        elif self.template_id == "first_sounding_side":
            words = ["is", "first", "sounding", "on", args[0]]
        else:
            words = ["does", CLASS_NAMES[args[0]], "play", "throughout"]
        return words


@dataclass(eq=False)
class FeatureBundle:
    F_v: np.ndarray
    F_p: np.ndarray
    F_a: np.ndarray
    F_ast: np.ndarray
    F_w: np.ndarray
    F_sentence: np.ndarray
    label: int
    question_type: str

    TENSORS = ("F_v", "F_p", "F_a", "F_ast", "F_w", "F_sentence")

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureBundle):
            return NotImplemented
        same = all(
            getattr(self, k).shape == getattr(other, k).shape and getattr(self, k).tobytes() == getattr(other, k).tobytes()
            for k in self.TENSORS
        )
        return same and self.label == other.label and self.question_type == other.question_type


@dataclass(frozen=True)
class Sample:
    scene: SceneSpec
    question: QuestionSpec
    bundle: FeatureBundle = field(compare=False)

    @property
    def frequency_critical(self) -> bool:
        return is_frequency_critical(self.scene, self.question)


# -- codebooks ------------------------------------------------------------------


def _orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True, eq=False)
class Codebooks:
    """Fixed random codes standing in for frozen pretrained encoders."""

    visual: np.ndarray  # [C, D]; rows of the critical pair are identical
    background: np.ndarray  # [D]
    motion: np.ndarray  # [D]
    patch_rot: np.ndarray  # [M', D, D]
    time: np.ndarray  # [T, D]
    audio: np.ndarray  # [C, D]; rows of the critical pair are identical
    energy: np.ndarray  # [F, D]
    words: dict  # word -> [D]
    word_rot: np.ndarray  # [N, D, D]

    @classmethod
    def from_config(cls, config: RunConfig) -> "Codebooks":
        return _codebooks(config.seed, config.t, config.d, config.m_prime, config.n, config.f, config.classes)

    def word(self, w: str) -> np.ndarray:
        return self.words[w]


@functools.lru_cache(maxsize=32)
def _codebooks(seed: int, t: int, d: int, m: int, n: int, f: int, c: int) -> Codebooks:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
    visual = rng.standard_normal((c, d))
    audio = rng.standard_normal((c, d))
    a, b = CRITICAL_PAIR
    visual[b] = visual[a]
    audio[b] = audio[a]
    vocab = sorted(
        {PAD, *CLASS_NAMES[:c], *SIDES}
        | {w for aspect in ASPECTS for w in aspect.split()}
        | {"how", "many", "instruments", "sounding", "instrument", "types", "is", "there", "a", "louder", "than",
           "first", "on", "does", "play", "throughout"}
    )
    word_codes = rng.standard_normal((len(vocab), d))
    energy = rng.standard_normal((f, d))
    background, motion = rng.standard_normal(d), rng.standard_normal(d)
    patch_rot = np.stack([_orthogonal(rng, d) for _ in range(m)])
    # class names live near the codes of what they name, like a jointly trained text encoder
    for cid, name in enumerate(CLASS_NAMES[:c]):
        i = vocab.index(name)
        word_codes[i] = (visual[cid] + audio[cid] + energy[cid] + word_codes[i]) / 2
    books = Codebooks(
        visual=visual,
        background=background,
        motion=motion,
        patch_rot=patch_rot,
        time=rng.standard_normal((t, d)),
        audio=audio,
        energy=energy,
        words={w: word_codes[i] for i, w in enumerate(vocab)},
        word_rot=np.stack([_orthogonal(rng, d) for _ in range(n)]),
    )
    for arr in (books.visual, books.audio, books.patch_rot, books.time, books.energy, books.word_rot, word_codes):
        arr.flags.writeable = False
    return books


def prompt_bank(config: RunConfig, codebooks: Codebooks | None = None) -> PromptBank:
    """Keyword embeddings: the mean word code of each aspect phrase."""
    books = codebooks or Codebooks.from_config(config)
    rows = [np.mean([books.word(w) for w in aspect.split()], axis=0) for aspect in config.prompt_keywords]
    return PromptBank(config.prompt_keywords, Tensor(np.stack(rows)))


# -- scenes -----------------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed))


def sample_seed(run_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(run_seed), int(index)])


def _schedule(rng: np.random.Generator, t: int, sounding: bool, start: int | None = None, full: bool = False) -> tuple[bool, ...]:
    if not sounding:
        return (False,) * t
    if full:
        return (True,) * t
    shortest = max(1, t // 2)
    s = int(rng.integers(0, t - shortest + 1)) if start is None else start
    length = int(rng.integers(min(shortest, t - s), t - s + 1))
    return tuple(s <= i < s + length for i in range(t))


def _loudness(rng: np.random.Generator) -> float:
    return float(np.round(rng.uniform(0.2, 1.0), 6))


def generate_scene(
    seed,
    config: RunConfig,
    n_instruments: int | None = None,
    n_sounding: int | None = None,
    include: tuple[int, ...] = (),
    exclude: tuple[int, ...] = (),
) -> SceneSpec:
    """Random scene: 1..min(4, M') instruments on distinct patches, distinct classes.

    ``include`` classes are placed first; ``exclude`` classes never appear.
    Each instrument's schedule is one contiguous active run (or silent).
    """
    if config.m_prime < 1:
        raise ValueError("scenes need at least one patch")
    rng = _rng(seed)
    top = min(MAX_INSTRUMENTS, config.m_prime)
    k = int(rng.integers(1, top + 1)) if n_instruments is None else n_instruments
    if not max(1, len(include)) <= k <= top:
        raise ValueError(f"cannot place {k} instruments (include={include}) on {config.m_prime} patches")
    pool = [c for c in range(config.classes) if c not in include and c not in exclude]
    rest = rng.permutation(pool)[: k - len(include)].tolist()
    classes = list(include) + rest
    if len(classes) < k:
        raise ValueError("not enough distinct classes for the requested scene")
    positions = rng.permutation(config.m_prime)[:k].tolist()
    if n_sounding is None:
        sounding = [bool(s) for s in rng.random(k) < 0.7]
    else:
        sounding = [i < n_sounding for i in range(k)]
        rng.shuffle(sounding)
    insts = tuple(
        Instrument(int(c), int(p), int(c), _schedule(rng, config.t, s), _loudness(rng))
        for c, p, s in zip(classes, positions, sounding)
    )
    return SceneSpec(insts)


def _with(inst: Instrument, **changes) -> Instrument:
    vals = dict(inst.__dict__)
    vals.update(changes)
    return Instrument(**vals)


def _side(position: int, m_prime: int) -> str:
    return "left" if position < m_prime / 2 else "right"


# -- answer oracle -------------------------------------------------------------------


def _check_class(c, config_classes: int | None) -> None:
    limit = len(CLASS_NAMES) if config_classes is None else config_classes
    if not isinstance(c, (int, np.integer)) or not 0 <= c < limit:
        raise DanglingReferenceError(f"question references unknown class {c!r}")


def answer_oracle(scene: SceneSpec, question: QuestionSpec, m_prime: int = 4, classes: int | None = None) -> int:
    """Rule-based answer index for ``question`` about ``scene``.

    Ties: ``louder_than`` with equal loudness is "no"; when several
    instruments share the earliest onset the one on the smallest patch
    index decides ``first_sounding_side``; with nothing sounding that
    question is "no".
    """
    tid, args = question.template_id, question.arguments
    insts = scene.instruments
    by_class = {i.class_id: i for i in insts}
    if tid == "count_sounding":
        return sum(i.sounding for i in insts)
    if tid == "count_types":
        return len({i.class_id for i in insts})
    if tid == "existential":
        _check_class(args[0], classes)
        inst = by_class.get(args[0])
        return YES if inst is not None and inst.sounding else NO
    if tid == "louder_than":
        _check_class(args[0], classes)
        _check_class(args[1], classes)
        a, b = by_class.get(args[0]), by_class.get(args[1])
        if a is None or b is None:
            raise DanglingReferenceError(f"louder_than refers to absent classes {args}")
        return YES if a.loudness > b.loudness else NO
    if tid == "first_sounding_side":
        if args[0] not in SIDES:
            raise DanglingReferenceError(f"unknown side {args[0]!r}")
        live = [i for i in insts if i.sounding]
        if not live:
            return NO
        first = min(live, key=lambda i: (i.onset, i.position))
        return YES if _side(first.position, m_prime) == args[0] else NO
    if tid == "always_playing":
        _check_class(args[0], classes)
        inst = by_class.get(args[0])
        return YES if inst is not None and all(inst.schedule) else NO
    raise ValueError(f"unknown template {tid!r}")


def is_frequency_critical(scene: SceneSpec, question: QuestionSpec) -> bool:
    """Questions about a pair class that only the band features can answer.

    Exactly one pair member is present; for ``existential`` it is sounding,
    for ``always_playing`` it plays throughout. Swapping it for its partner
    leaves every visual and audio feature unchanged but flips the answer.
    """
    tid = question.template_id
    if tid not in ("existential", "always_playing") or question.arguments[0] not in CRITICAL_PAIR:
        return False
    members = [i for i in scene.instruments if i.class_id in CRITICAL_PAIR]
    if len(members) != 1:
        return False
    return members[0].sounding if tid == "existential" else all(members[0].schedule)


# -- per-template construction ----------------------------------------------------------


def _question(tid: str, args: tuple, scene: SceneSpec, config: RunConfig) -> QuestionSpec:
    draft = QuestionSpec(tid, args, TEMPLATE_TAGS[tid], -1)
    ans = answer_oracle(scene, draft, config.m_prime, config.classes)
    return QuestionSpec(tid, args, TEMPLATE_TAGS[tid], ans)


def _build_count_sounding(rng, config):
    top = min(MAX_INSTRUMENTS, config.m_prime)
    target = int(rng.integers(0, top + 1))
    k = int(rng.integers(max(1, target), top + 1))
    return generate_scene(rng, config, n_instruments=k, n_sounding=target), ()


def _build_count_types(rng, config):
    top = min(MAX_INSTRUMENTS, config.m_prime)
    k = int(rng.integers(1, top + 1))
    return generate_scene(rng, config, n_instruments=k), ()


def _build_existential(rng, config):
    a, b = CRITICAL_PAIR
    top = min(MAX_INSTRUMENTS, config.m_prime)
    want_yes = bool(rng.random() < 0.5)
    others = tuple(c for c in range(config.classes) if c not in CRITICAL_PAIR)
    if rng.random() < CRITICAL_SHARE["existential"]:
        # only the band features separate the asked class from the one present
        q = int(rng.choice(CRITICAL_PAIR))
        member = q if want_yes else (b if q == a else a)
        k = int(rng.integers(1, min(top, 1 + len(others)) + 1))
        scene = generate_scene(rng, config, n_instruments=k, include=(member,), exclude=(b if member == a else a,))
        insts = list(scene.instruments)
        insts[0] = _with(insts[0], schedule=_schedule(rng, config.t, True))
        return SceneSpec(tuple(insts)), (q,)
    q = int(rng.integers(0, config.classes))
    partner = (b if q == a else a) if q in CRITICAL_PAIR else None
    exclude = () if partner is None else (partner,)
    k = int(rng.integers(1, min(top, config.classes - len(exclude)) + 1))
    if want_yes or rng.random() < 0.5:
        scene = generate_scene(rng, config, n_instruments=k, include=(q,), exclude=exclude)
        insts = list(scene.instruments)
        insts[0] = _with(insts[0], schedule=_schedule(rng, config.t, want_yes))
        scene = SceneSpec(tuple(insts))
    else:
        scene = generate_scene(rng, config, n_instruments=min(k, config.classes - 1 - len(exclude)), exclude=(q, *exclude))
    return scene, (q,)


def _build_louder_than(rng, config):
    top = min(MAX_INSTRUMENTS, config.m_prime)
    pair = rng.permutation(config.classes)[:2].tolist()
    k = int(rng.integers(2, top + 1)) if top >= 2 else 2
    scene = generate_scene(rng, config, n_instruments=k, include=tuple(pair))
    lo = float(np.round(rng.uniform(0.2, 1.0 - LOUDER_GAP), 6))
    hi = float(np.round(rng.uniform(lo + LOUDER_GAP, 1.0), 6))
    want_yes = bool(rng.random() < 0.5)
    loud_a, loud_b = (hi, lo) if want_yes else (lo, hi)
    insts = list(scene.instruments)
    # both play throughout so loudness is not confounded with duration
    insts[0] = _with(insts[0], loudness=loud_a, schedule=(True,) * config.t)
    insts[1] = _with(insts[1], loudness=loud_b, schedule=(True,) * config.t)
    return SceneSpec(tuple(insts)), (int(pair[0]), int(pair[1]))


def _build_first_sounding_side(rng, config):
    top = min(MAX_INSTRUMENTS, config.m_prime)
    k = int(rng.integers(2, top + 1)) if top >= 2 else 1
    scene = generate_scene(rng, config, n_instruments=k)
    insts = list(scene.instruments)
    first = int(rng.integers(0, k))
    # the first instrument opens the clip; every other sounding one enters later
    insts[first] = _with(insts[first], schedule=_schedule(rng, config.t, True, start=0))
    for j in range(k):
        if j != first and insts[j].sounding:
            start = int(rng.integers(1, config.t)) if config.t > 1 else None
            insts[j] = _with(insts[j], schedule=_schedule(rng, config.t, start is not None, start=start))
    side = _side(insts[first].position, config.m_prime)
    if rng.random() < 0.5 and config.m_prime > 1:
        side = "right" if side == "left" else "left"
    return SceneSpec(tuple(insts)), (side,)


def _build_always_playing(rng, config):
    top = min(MAX_INSTRUMENTS, config.m_prime)
    if rng.random() < CRITICAL_SHARE["always_playing"]:
        a, b = CRITICAL_PAIR
        q = int(rng.choice(CRITICAL_PAIR))
        member = q if rng.random() < 0.5 else (b if q == a else a)
        k = int(rng.integers(1, min(top, config.classes - 1) + 1))
        scene = generate_scene(rng, config, n_instruments=k, include=(member,), exclude=(b if member == a else a,))
        insts = list(scene.instruments)
        insts[0] = _with(insts[0], schedule=(True,) * config.t)
        return SceneSpec(tuple(insts)), (q,)
    q = int(rng.integers(0, config.classes))
    k = int(rng.integers(1, top + 1))
    roll = rng.random()
    if roll < 0.5:
        scene = generate_scene(rng, config, n_instruments=k, include=(q,))
        insts = list(scene.instruments)
        insts[0] = _with(insts[0], schedule=(True,) * config.t)
        return SceneSpec(tuple(insts)), (q,)
    if roll < 0.85:
        scene = generate_scene(rng, config, n_instruments=k, include=(q,))
        insts = list(scene.instruments)
        sched = _schedule(rng, config.t, rng.random() < 0.8)
        if all(sched):
            sched = (False,) + sched[1:]
        insts[0] = _with(insts[0], schedule=sched)
        return SceneSpec(tuple(insts)), (q,)
    scene = generate_scene(rng, config, n_instruments=min(k, config.classes - 1), exclude=(q,))
    return scene, (q,)


_BUILDERS = {
    "count_sounding": _build_count_sounding,
    "count_types": _build_count_types,
    "existential": _build_existential,
    "louder_than": _build_louder_than,
    "first_sounding_side": _build_first_sounding_side,
    "always_playing": _build_always_playing,
}


def generate_question(seed, config: RunConfig, template: str | None = None) -> tuple[SceneSpec, QuestionSpec]:
    """A scene and question whose answers are balanced within each template."""
    rng = _rng(seed)
    if template is None:
        usable = [t for t in TEMPLATES if config.m_prime > 1 or t != "first_sounding_side"]
        template = usable[int(rng.integers(0, len(usable)))]
    scene, args = _BUILDERS[template](rng, config)
    scene.validate(config)
    return scene, _question(template, args, scene, config)


# -- features ----------------------------------------------------------------------------


def question_features(question: QuestionSpec, config: RunConfig, books: Codebooks) -> tuple[np.ndarray, np.ndarray]:
    words = question.tokens()
    words = words + [PAD] * (config.n - len(words))
    F_w = np.stack([(books.word(w) + books.word_rot[i] @ books.word(w)) / np.sqrt(2) for i, w in enumerate(words)])
    return F_w, F_w.mean(axis=0)


def synthesize_features(
    scene: SceneSpec,
    question: QuestionSpec,
    rng_seed,
    config: RunConfig,
    codebooks: Codebooks | None = None,
) -> FeatureBundle:
    """Additive feature synthesis from codebooks plus Gaussian noise of scale ``noise_sigma``."""
    books = codebooks or Codebooks.from_config(config)
    rng = _rng(rng_seed)
    T, D, M, F = config.t, config.d, config.m_prime, config.f
    sigma = config.noise_sigma

    content = np.tile(books.background, (T, M, 1))
    for inst in scene.instruments:
        active = np.asarray(inst.schedule, dtype=np.float64)[:, None]
        content[:, inst.position] = books.visual[inst.class_id] + MOTION_GAIN * active * books.motion
    F_p = np.einsum("mij,tmj->tmi", books.patch_rot, content) + books.time[:, None, :]
    F_p = F_p + sigma * rng.standard_normal((T, M, D))
    F_v = F_p.mean(axis=1)

    F_a = books.time.copy()
    energy = np.zeros((T, F))
    for inst in scene.instruments:
        active = np.asarray(inst.schedule, dtype=np.float64)
        F_a += inst.loudness * active[:, None] * books.audio[inst.class_id]
        energy[:, inst.band] += inst.loudness * active
    F_a = F_a + sigma * rng.standard_normal((T, D))
    F_ast = energy[:, :, None] * books.energy[None, :, :] + sigma * rng.standard_normal((T, F, D))

    F_w, F_sentence = question_features(question, config, books)
    return FeatureBundle(F_v, F_p, F_a, F_ast, F_w, F_sentence, question.answer, question.modality_tag)


def make_sample(index: int, config: RunConfig, codebooks: Codebooks | None = None) -> Sample:
    """Sample ``index`` of the run; its randomness is seeded by ``(config.seed, index)``."""
    rng = np.random.default_rng(sample_seed(config.seed, index))
    scene, question = generate_question(rng, config)
    bundle = synthesize_features(scene, question, rng, config, codebooks)
    return Sample(scene, question, bundle)


# -- datasets -------------------------------------------------------------------------------


@dataclass
class Dataset:
    """Stacked bundles plus per-sample metadata for batching and grouped metrics."""

    F_v: np.ndarray
    F_p: np.ndarray
    F_a: np.ndarray
    F_ast: np.ndarray
    F_w: np.ndarray
    F_sentence: np.ndarray
    labels: np.ndarray
    tags: np.ndarray  # index into TAGS
    templates: np.ndarray  # index into TEMPLATES
    critical: np.ndarray  # bool

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(**{k: v[idx] for k, v in self.__dict__.items()})

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> "Dataset":
        if not samples:
            raise ValueError("dataset needs at least one sample")
        b = [s.bundle for s in samples]
        return cls(
            **{k: np.stack([getattr(x, k) for x in b]) for k in FeatureBundle.TENSORS},
            labels=np.array([x.label for x in b], dtype=np.int64),
            tags=np.array([TAGS.index(x.question_type) for x in b], dtype=np.int64),
            templates=np.array([TEMPLATES.index(s.question.template_id) for s in samples], dtype=np.int64),
            critical=np.array([s.frequency_critical for s in samples], dtype=bool),
        )


def build_split(config: RunConfig, split: str) -> Dataset:
    """``train`` uses sample indices ``[0, n_train)``, ``val`` the next ``n_val``."""
    if split == "train":
        idx = range(config.n_train)
    elif split == "val":
        idx = range(config.n_train, config.n_train + config.n_val)
    else:
        raise ValueError(f"unknown split {split!r}")
    books = Codebooks.from_config(config)
    return Dataset.from_samples([make_sample(i, config, books) for i in idx])
