"""Label functions: compilation, application, weak-label matrices, statistics.

Two LF kinds exist: keyword LFs (a 1-3 token phrase implies a class, text
tasks only) and pattern LFs (a regex with {{E1}}/{{E2}} entity placeholders
implies a class, relation tasks only). Regex payloads are untrusted input
and are restricted to a linear-time-matchable subset.
"""

from __future__ import annotations

import functools
import json
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import RELATION_TASK, TEXT_TASK, Instance, extract_ngrams, tokenize

try:  # the sre modules moved under re in 3.11
    from re import _constants as sre_constants
    from re import _parser as sre_parser
except ImportError:  # pragma: no cover
    import sre_constants
    import sre_parse as sre_parser

ABSTAIN = -1

KEYWORD = "keyword"
PATTERN = "pattern"

# Source-length cap standing in for a compiled-program size cap; CPython does
# not expose the compiled size, and program size is linear in source length
# once backreferences and lookaround are excluded.
MAX_PATTERN_SOURCE = 100_000

_E1 = "{{E1}}"
_E2 = "{{E2}}"

_FORBIDDEN_OPS = {
    sre_constants.GROUPREF,
    sre_constants.GROUPREF_EXISTS,
    sre_constants.ASSERT,
    sre_constants.ASSERT_NOT,
}


class LFError(ValueError):
    """Invalid label-function specification or misuse."""


@dataclass(frozen=True)
class Provenance:
    iteration: int = -1
    query_id: int = -1
    response_index: int = -1


@dataclass(frozen=True)
class LabelFunction:
    kind: str  # KEYWORD | PATTERN
    payload: str
    target_class: int
    provenance: Provenance = field(default_factory=Provenance)
    tokens: tuple = ()  # keyword LFs: the tokenized phrase

    def __str__(self):
        return "%s(%r -> %d)" % (self.kind, self.payload, self.target_class)


def _walk_parsed(parsed):
    for op, av in parsed:
        if op in _FORBIDDEN_OPS:
            raise LFError("regex uses forbidden construct %s (backreference/lookaround)" % op)
        if op is sre_constants.SUBPATTERN:
            _walk_parsed(av[3])
        elif op is sre_constants.BRANCH:
            for branch in av[1]:
                _walk_parsed(branch)
        elif op in (sre_constants.MAX_REPEAT, sre_constants.MIN_REPEAT):
            _walk_parsed(av[2])
        elif op is getattr(sre_constants, "ATOMIC_GROUP", None):
            _walk_parsed(av)


def _check_pattern_safe(source: str):
    if len(source) > MAX_PATTERN_SOURCE:
        raise LFError("regex source exceeds %d characters" % MAX_PATTERN_SOURCE)
    try:
        parsed = sre_parser.parse(source, re.IGNORECASE)
    except re.error as exc:
        raise LFError("regex fails to compile: %s" % exc)
    _walk_parsed(parsed)


def _substitute_entities(source: str, e1: str, e2: str) -> str:
    return source.replace(_E1, re.escape(e1)).replace(_E2, re.escape(e2))


@functools.lru_cache(maxsize=4096)
def _compiled(source: str):
    return re.compile(source, re.IGNORECASE)


def compile_lf(kind, payload, target_class, classes, task_kind, provenance=None) -> LabelFunction:
    """Validate and compile a candidate LF; raises LFError on any violation."""
    if provenance is None:
        provenance = Provenance()
    if not isinstance(target_class, int) or not 0 <= target_class < len(classes):
        raise LFError("label not in candidate classes: %r" % (target_class,))
    if kind == KEYWORD:
        if task_kind != TEXT_TASK:
            raise LFError("keyword LFs apply only to text classification tasks")
        tokens = tuple(tokenize(payload))
        if not 1 <= len(tokens) <= 3:
            raise LFError("ngram length %d outside 1-3" % len(tokens))
        return LabelFunction(kind=KEYWORD, payload=payload, target_class=target_class,
                             provenance=provenance, tokens=tokens)
    if kind == PATTERN:
        if task_kind != RELATION_TASK:
            raise LFError("pattern LFs apply only to relation classification tasks")
        if not isinstance(payload, str) or not payload:
            raise LFError("empty pattern payload")
        _check_pattern_safe(payload)
        probe = _substitute_entities(payload, "x", "x")
        _check_pattern_safe(probe)
        compiled = _compiled(probe)
        if compiled.search("") is not None:
            raise LFError("pattern matches the empty string")
        return LabelFunction(kind=PATTERN, payload=payload, target_class=target_class,
                             provenance=provenance)
    raise LFError("unknown LF kind %r" % (kind,))


def _contains_seq(tokens, sub) -> bool:
    n, k = len(tokens), len(sub)
    if k == 0 or k > n:
        return False
    first = sub[0]
    for i in range(n - k + 1):
        if tokens[i] == first and tuple(tokens[i : i + k]) == sub:
            return True
    return False


def apply_lf(lf: LabelFunction, instance: Instance) -> int:
    """Evaluate one LF on one instance, returning a class index or ABSTAIN."""
    if lf.kind == KEYWORD:
        if _contains_seq(tokenize(instance.text), lf.tokens):
            return lf.target_class
        return ABSTAIN
    if instance.entity1 is None or instance.entity2 is None:
        raise LFError("pattern LF applied to an instance without entities")
    source = _substitute_entities(lf.payload, instance.entity1.text, instance.entity2.text)
    if _compiled(source).search(instance.text) is not None:
        return lf.target_class
    return ABSTAIN


class KeywordIndex:
    """Per-instance n-gram sets enabling O(1) keyword-LF application."""

    def __init__(self, instances):
        self.instances = list(instances)
        self.ngram_sets = [set(extract_ngrams(tokenize(i.text), 1, 3)) for i in self.instances]

    def votes(self, lf: LabelFunction) -> np.ndarray:
        out = np.full(len(self.instances), ABSTAIN, dtype=np.int64)
        if lf.kind == KEYWORD:
            gram = " ".join(lf.tokens)
            for i, grams in enumerate(self.ngram_sets):
                if gram in grams:
                    out[i] = lf.target_class
        else:
            for i, inst in enumerate(self.instances):
                out[i] = apply_lf(lf, inst)
        return out


@dataclass
class WeakLabelMatrix:
    entries: np.ndarray  # (n, m), values in {0..C-1} | {ABSTAIN}
    instance_ids: list
    lfs: list

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]


def build_matrix(lfs, instances, index: Optional[KeywordIndex] = None) -> WeakLabelMatrix:
    """Apply every LF to every instance; column order is LF admission order."""
    instances = list(instances)
    if index is None:
        index = KeywordIndex(instances)
    if lfs:
        entries = np.stack([index.votes(lf) for lf in lfs], axis=1)
    else:
        entries = np.zeros((len(instances), 0), dtype=np.int64)
    return WeakLabelMatrix(entries=entries, instance_ids=[i.id for i in instances], lfs=list(lfs))


@dataclass(frozen=True)
class LFStats:
    coverage: float
    accuracy: Optional[float]  # None when no active instance or gold missing
    n_active: int


def lf_stats(lf: LabelFunction, instances, votes: Optional[np.ndarray] = None) -> LFStats:
    """Coverage and accuracy of one LF over a split (accuracy needs gold labels)."""
    instances = list(instances)
    if votes is None:
        votes = np.array([apply_lf(lf, inst) for inst in instances])
    active = votes != ABSTAIN
    n_active = int(active.sum())
    coverage = n_active / len(instances) if instances else 0.0
    if n_active == 0:
        return LFStats(coverage=coverage, accuracy=None, n_active=0)
    golds = [instances[i].gold_label for i in np.nonzero(active)[0]]
    if any(g is None for g in golds):
        return LFStats(coverage=coverage, accuracy=None, n_active=n_active)
    correct = sum(1 for i, g in zip(np.nonzero(active)[0], golds) if votes[i] == g)
    return LFStats(coverage=coverage, accuracy=correct / n_active, n_active=n_active)


def lf_to_record(lf: LabelFunction) -> dict:
    return {
        "kind": lf.kind,
        "payload": lf.payload,
        "class": lf.target_class,
        "iteration": lf.provenance.iteration,
        "query_id": lf.provenance.query_id,
        "response_index": lf.provenance.response_index,
    }


def lf_from_record(record, classes, task_kind) -> LabelFunction:
    prov = Provenance(
        iteration=record.get("iteration", -1),
        query_id=record.get("query_id", -1),
        response_index=record.get("response_index", -1),
    )
    return compile_lf(record["kind"], record["payload"], record["class"], classes, task_kind, prov)


def save_lfs(lfs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for lf in lfs:
            fh.write(json.dumps(lf_to_record(lf), sort_keys=True))
            fh.write("\n")


def load_lfs(path, classes, task_kind):
    lfs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                lfs.append(lf_from_record(record, classes, task_kind))
            except (json.JSONDecodeError, KeyError) as exc:
                raise LFError("line %d: bad LF record (%s)" % (line_no, exc))
    return lfs
