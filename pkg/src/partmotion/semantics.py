"""Interaction extraction: which body parts engage an object, and with what phrase.

Expected model answer, one pair per line::

    left arm: wipes the table
    right leg: kicks a ball

or the single token ``none``.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Callable

from .llm import QUESTION_MARKER, LlmClient, LlmTransportError
from .motion import PART_NAMES

MAX_ATTEMPTS = 3

OBJECTIVE = (
    "Identify all possible body parts involved in interacting with an object from the given "
    "sentence and extract the exact phrase that describes their action."
)
DEFINITION = (
    "An 'interaction' involves any purposeful physical engagement with an object, such as "
    "holding, touching, lifting, carrying, moving, manipulating, or using it in any way."
)
CHOICES = (
    "If no body parts are interacting with an object, respond with 'none'. "
    "Choose body parts from: left arm, right arm, left leg, right leg, torso, pelvis."
)
FEW_SHOT = (
    ("a person wipes the table with their left hand",
     "left arm: wipes the table with their left hand"),
    ("a man walks forward and kicks a ball with his right foot",
     "right leg: kicks a ball with his right foot"),
    ("someone picks up a box with both hands and carries it away",
     "left arm: picks up a box with both hands\nright arm: picks up a box with both hands"),
    ("a person jogs in a circle", "none"),
)


def build_prompt(sentence: str) -> str:
    if not sentence.strip():
        raise ValueError("sentence must be non-empty")
    examples = "\n\n".join(f"Sentence: {q}\nAnswer:\n{a}" for q, a in FEW_SHOT)
    return (
        f"{OBJECTIVE}\n"
        f"{DEFINITION}\n"
        f"{CHOICES} "
        "Answer with one line per body part in the form '<body part>: <exact phrase>'.\n"
        f"Here are examples of how to format your responses:\n\n{examples}\n\n"
        f"{QUESTION_MARKER}{sentence}"
    )


@dataclass(frozen=True)
class InteractionSpec:
    pairs: tuple[tuple[str, str], ...] = ()
    residual_text: str = ""

    @property
    def is_none(self) -> bool:
        return not self.pairs

    @property
    def parts(self) -> frozenset[str]:
        return frozenset(p for p, _ in self.pairs)

    @property
    def phrases(self) -> list[str]:
        return [ph for _, ph in self.pairs]

    @property
    def instruction_text(self) -> str:
        return " ".join(dict.fromkeys(self.phrases))

    def to_response(self) -> str:
        if self.is_none:
            return "none"
        return "\n".join(f"{p}: {ph}" for p, ph in self.pairs)

    def to_dict(self) -> dict:
        return {"pairs": [{"part": p, "phrase": ph} for p, ph in self.pairs],
                "residual_text": self.residual_text}

    @classmethod
    def from_dict(cls, doc: dict) -> "InteractionSpec":
        return cls(tuple((d["part"], d["phrase"]) for d in doc.get("pairs", [])),
                   doc.get("residual_text", ""))


def none_spec(sentence: str) -> InteractionSpec:
    return InteractionSpec((), _normalize_ws(sentence))


class Verdict(str, enum.Enum):
    ACCEPTED = "accepted"
    AMENDED = "amended"
    FORMAT_REJECTED = "format_rejected"
    CONTENT_REJECTED = "content_rejected"
    TRANSPORT_ERROR = "transport_error"

    @property
    def rejected(self) -> bool:
        return self not in (Verdict.ACCEPTED, Verdict.AMENDED)


@dataclass(frozen=True)
class LlmTranscript:
    prompt: str
    response: str | None
    attempt: int
    verdict: Verdict
    detail: str = ""

    def __post_init__(self):
        if self.attempt not in (1, 2, 3):
            raise ValueError("attempt index must be 1, 2 or 3")

    def to_record(self, sentence: str) -> dict:
        return {"sentence": sentence, "attempt": self.attempt, "prompt": self.prompt,
                "response": self.response, "verdict": self.verdict.value, "detail": self.detail}


class Rejection(ValueError):
    verdict = Verdict.CONTENT_REJECTED


class FormatRejection(Rejection):
    verdict = Verdict.FORMAT_REJECTED


class ContentRejection(Rejection):
    verdict = Verdict.CONTENT_REJECTED


# single words -> limb/region; sided limbs need an explicit left/right
_ARM = {"arm", "arms", "hand", "hands", "wrist", "wrists", "elbow", "elbows", "shoulder",
        "shoulders", "collarbone", "clavicle", "forearm", "palm", "finger", "fingers", "fist"}
_LEG = {"leg", "legs", "foot", "feet", "ankle", "ankles", "knee", "knees", "hip", "thigh",
        "shin", "heel", "toe", "toes"}
_TORSO = {"torso", "spine", "chest", "back", "waist", "abdomen", "belly", "trunk", "neck", "head"}
_PELVIS = {"pelvis", "hips", "buttocks", "butt", "bottom"}
_PLURAL_LIMB = {"arms", "hands", "wrists", "elbows", "shoulders", "legs", "feet", "ankles",
                "knees", "toes", "fingers"}


def canonicalize_part(text: str) -> tuple[list[str], bool]:
    """Map a free-form body part to canonical names; returns (parts, amended)."""
    raw = _normalize_ws(text.lower().strip(" '\"`*"))
    if raw in PART_NAMES:
        return [raw], False
    words = re.findall(r"[a-z]+", raw)
    if "upper" in words and "body" in words:
        return ["torso"], True
    kinds = set()
    for w in words:
        if w in _ARM:
            kinds.add("arm")
        elif w in _LEG:
            kinds.add("leg")
        elif w in _TORSO:
            kinds.add("torso")
        elif w in _PELVIS:
            kinds.add("pelvis")
    if len(kinds) != 1:
        raise ContentRejection(f"cannot map body part {text!r}")
    kind = kinds.pop()
    if kind in ("torso", "pelvis"):
        return [kind], True
    sides = {w for w in words if w in ("left", "right")}
    both = "both" in words or (not sides and any(w in _PLURAL_LIMB for w in words))
    if both and not sides:
        return [f"left {kind}", f"right {kind}"], True
    if len(sides) != 1:
        raise ContentRejection(f"body part {text!r} needs exactly one left/right modifier")
    return [f"{sides.pop()} {kind}"], True


_LINE = re.compile(r"^(?:[-*•]\s*)?([^:]+?)\s*:\s*(.+?)\s*$")


def _normalize_ws(s: str) -> str:
    s = re.sub(r"\s+", " ", s).strip()
    return re.sub(r"\s+([.,;!?])", r"\1", s)


def _is_none_token(s: str) -> bool:
    return s.strip().strip(" '\"`.").lower() == "none"


def _locate(phrase: str, sentence: str) -> str:
    if phrase in sentence:
        return phrase
    i = sentence.lower().find(phrase.lower())
    if i < 0:
        raise ContentRejection(f"phrase {phrase!r} not found in the sentence")
    return sentence[i:i + len(phrase)]


def _parse(response: str, sentence: str) -> tuple[InteractionSpec, bool]:
    lines = [ln.strip() for ln in (response or "").strip().splitlines() if ln.strip()]
    if not lines:
        raise FormatRejection("empty response")
    if len(lines) == 1 and _is_none_token(lines[0]):
        return none_spec(sentence), False
    pairs: list[tuple[str, str]] = []
    amended = False
    for ln in lines:
        m = _LINE.match(ln)
        if not m or _is_none_token(m.group(1)):
            raise FormatRejection(f"unparseable line {ln!r}")
        phrase = m.group(2).strip().strip("'\"`").rstrip(".").strip()
        if not phrase:
            raise FormatRejection(f"empty phrase in {ln!r}")
        parts, was_amended = canonicalize_part(m.group(1))
        amended |= was_amended
        located = _locate(phrase, sentence)
        amended |= located != phrase
        for part in parts:
            if (part, located) not in pairs:
                pairs.append((part, located))
    spec = InteractionSpec(tuple(pairs))
    return InteractionSpec(spec.pairs, split_residual(sentence, spec)), amended


def parse_and_validate(response: str, sentence: str) -> InteractionSpec:
    """Validated, canonical spec; raises ``FormatRejection``/``ContentRejection``."""
    return _parse(response, sentence)[0]


def split_residual(sentence: str, spec: InteractionSpec) -> str:
    out = sentence
    for phrase in sorted(set(spec.phrases), key=len, reverse=True):
        out = out.replace(phrase, " ", 1)
    return _normalize_ws(out)


def extract_with_retry(sentence: str, client: LlmClient,
                       attempts: int = MAX_ATTEMPTS) -> tuple[InteractionSpec, list[LlmTranscript]]:
    if not sentence.strip():
        return none_spec(sentence), []
    prompt = build_prompt(sentence)
    transcripts: list[LlmTranscript] = []
    for attempt in range(1, min(attempts, MAX_ATTEMPTS) + 1):
        try:
            response = client.complete(prompt)
        except LlmTransportError as exc:
            transcripts.append(LlmTranscript(prompt, None, attempt, Verdict.TRANSPORT_ERROR, str(exc)))
            continue
        try:
            spec, amended = _parse(response, sentence)
        except Rejection as exc:
            transcripts.append(LlmTranscript(prompt, response, attempt, exc.verdict, str(exc)))
            continue
        verdict = Verdict.AMENDED if amended else Verdict.ACCEPTED
        transcripts.append(LlmTranscript(prompt, response, attempt, verdict))
        return spec, transcripts
    return none_spec(sentence), transcripts


# ---------------------------------------------------------------- fallback

def _forms(*bases: str) -> set[str]:
    out = set()
    for b in bases:
        out |= {b, b + "s", b + "es", b + "ed", b + "d", b + "ing"}
        if b.endswith("e"):
            out.add(b[:-1] + "ing")
        if len(b) > 2 and b[-1] in "bpt" and b[-2] in "aeiou" and b[-3] not in "aeiou":
            out |= {b + b[-1] + "ing", b + b[-1] + "ed"}
    return out


INTERACTION_VERBS = _forms(
    "wave", "kick", "bend", "lean", "pick", "lift", "hold", "wipe", "grab", "throw", "push",
    "pull", "raise", "touch", "carry", "swing", "stomp", "tap", "reach", "clean", "open",
    "close", "catch", "hit", "punch", "scratch", "point", "stir", "shake", "pat", "rub",
) | {"threw", "thrown", "held", "caught", "bent", "swung", "carries", "carried", "hits"}

_SIDED = re.compile(r"\b(left|right)\s+(" + "|".join(sorted(_ARM | _LEG)) + r")\b")
_BOTH = re.compile(r"\bboth\s+(" + "|".join(sorted(_ARM | _LEG)) + r")\b")
_TORSO_MENTION = re.compile(r"\b(upper body|" + "|".join(sorted(_TORSO - {"head", "neck", "back"})) + r")\b")
_CLAUSE_SEP = re.compile(r",|;|\.|!|\?|\band\b|\bthen\b|\bwhile\b")


def _clauses(sentence: str):
    start = 0
    for m in _CLAUSE_SEP.finditer(sentence):
        yield start, m.start()
        start = m.end()
    yield start, len(sentence)


def _mentioned_parts(clause: str) -> list[str]:
    low = clause.lower()
    parts = []
    for m in _SIDED.finditer(low):
        kind = "arm" if m.group(2) in _ARM else "leg"
        parts.append(f"{m.group(1)} {kind}")
    for m in _BOTH.finditer(low):
        kind = "arm" if m.group(1) in _ARM else "leg"
        parts += [f"left {kind}", f"right {kind}"]
    if _TORSO_MENTION.search(low):
        parts.append("torso")
    return list(dict.fromkeys(parts))


def fallback_rule_extractor(sentence: str) -> InteractionSpec:
    """Deterministic lexicon extractor used when no language model is available.

    A clause yields pairs only when it holds an interaction verb and an
    explicit body-part mention; unsided limbs are never guessed.
    """
    pairs: list[tuple[str, str]] = []
    for lo, hi in _clauses(sentence):
        clause = sentence[lo:hi]
        verb = None
        for m in re.finditer(r"[A-Za-z]+", clause):
            if m.group(0).lower() in INTERACTION_VERBS:
                verb = m
                break
        if verb is None:
            continue
        phrase = clause[verb.start():].strip()
        for part in _mentioned_parts(phrase):
            if all(p != part for p, _ in pairs):
                pairs.append((part, phrase))
    if not pairs:
        return none_spec(sentence)
    spec = InteractionSpec(tuple(pairs))
    return InteractionSpec(spec.pairs, split_residual(sentence, spec))


Extractor = Callable[[str], tuple[InteractionSpec, list[LlmTranscript]]]


def llm_extractor(client: LlmClient) -> Extractor:
    return lambda sentence: extract_with_retry(sentence, client)


def fallback_extractor(sentence: str) -> tuple[InteractionSpec, list[LlmTranscript]]:
    return fallback_rule_extractor(sentence), []
