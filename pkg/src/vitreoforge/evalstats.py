"""Reader-study response types and the statistics computed from them.

Covers the three question formats (six-way ranking, real-vs-generated spot
checks, anatomy preservation sub-questions): mean ranks with bootstrap
percentile confidence intervals, paired two-sided Wilcoxon signed-rank tests
against a reference label (exact null for n <= 25, normal approximation with
continuity correction above), Holm step-down adjustment, fool rate,
preservation percentages, experience stratification, and metric/rank
correlation matrices.

Everything here is a pure function over immutable response collections;
`compute_statistics` is the single shared entry point so that a live service
and an offline rerun of the same log produce identical documents.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, MalformedFileError
from .seeding import substream

__all__ = [
    "RANK_LABELS",
    "ANATOMY_ANSWERS",
    "RankingResponse",
    "SpotResponse",
    "AnatomyResponse",
    "GraderProfile",
    "RankStat",
    "mean_rank",
    "wilcoxon_signed_rank",
    "sign_test",
    "pairwise_vs_reference",
    "holm_adjust",
    "fool_rate",
    "preservation",
    "stratify",
    "CorrelationResult",
    "correlation_matrix",
    "read_log",
    "parse_record",
    "responses_from_records",
    "compute_statistics",
]

# fixed label vocabulary for the six-way ranking questions
RANK_LABELS = ("signal-averaging", "cDDPM", "BBDM", "U-Net", "Pix2Pix", "VQ-GAN")
ANATOMY_ANSWERS = ("Yes", "No", "NotPresent")
SPOT_CHOICES = ("real", "generated")


@dataclass(frozen=True)
class GraderProfile:
    grader_id: str
    years_experience: int

    def __post_init__(self):
        if not self.grader_id:
            raise InvalidInputError("grader_id must be non-empty")
        if not isinstance(self.years_experience, int) or self.years_experience < 0:
            raise InvalidInputError("years_experience must be a non-negative integer")


@dataclass(frozen=True)
class RankingResponse:
    """One grader's complete ranking (1 = best) of the six labels on one question."""

    grader_id: str
    question_id: str
    ranking: dict

    def __post_init__(self):
        if set(self.ranking) != set(RANK_LABELS):
            raise InvalidInputError(
                f"ranking must cover exactly the labels {RANK_LABELS}"
            )
        ranks = sorted(self.ranking.values())
        if ranks != list(range(1, len(RANK_LABELS) + 1)):
            raise InvalidInputError(
                f"ranking values must be a permutation of 1..{len(RANK_LABELS)}, "
                f"got {ranks}"
            )


@dataclass(frozen=True)
class SpotResponse:
    """One pick in a which-image-is-real question."""

    grader_id: str
    question_id: str
    chosen: str
    correct: bool

    def __post_init__(self):
        if self.chosen not in SPOT_CHOICES:
            raise InvalidInputError(f"chosen must be one of {SPOT_CHOICES}")
        if bool(self.correct) != (self.chosen == "real"):
            raise InvalidInputError("correct flag inconsistent with chosen label")


@dataclass(frozen=True)
class AnatomyResponse:
    """One structure sub-question answer from an anatomy question."""

    grader_id: str
    question_id: str
    structure_id: str
    answer: str
    comment: str | None = None

    def __post_init__(self):
        if not self.structure_id:
            raise InvalidInputError("structure_id must be non-empty")
        if self.answer not in ANATOMY_ANSWERS:
            raise InvalidInputError(f"answer must be one of {ANATOMY_ANSWERS}")


# ---- ranking statistics ---------------------------------------------------------


@dataclass(frozen=True)
class RankStat:
    mean: float
    ci_low: float
    ci_high: float


def _rank_matrix(responses) -> np.ndarray:
    if not responses:
        raise InvalidInputError("need at least one ranking response")
    return np.array(
        [[r.ranking[lab] for lab in RANK_LABELS] for r in responses],
        dtype=np.float64,
    )


def mean_rank(responses, n_boot: int = 10000, seed: int = 0,
              level: float = 0.95) -> dict:
    """Mean rank per label with a seeded bootstrap percentile CI over responses."""
    mat = _rank_matrix(responses)
    n = mat.shape[0]
    means = mat.mean(axis=0)
    rng = substream(seed, "rank-bootstrap")
    idx = rng.integers(0, n, size=(n_boot, n))
    boot = mat[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0 * 100.0
    lo = np.percentile(boot, alpha, axis=0)
    hi = np.percentile(boot, 100.0 - alpha, axis=0)
    return {
        lab: RankStat(float(means[k]), float(lo[k]), float(hi[k]))
        for k, lab in enumerate(RANK_LABELS)
    }


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


_EXACT_LIMIT = 25


def wilcoxon_signed_rank(diffs) -> float:
    """Two-sided signed-rank p-value on paired differences.

    Zero differences are dropped; if everything drops the test is vacuous and
    p = 1. Up to 25 effective pairs the null distribution is enumerated
    exactly (over the observed tie structure); beyond that a normal
    approximation with tie correction and continuity correction is used.
    """
    d = np.asarray(diffs, dtype=np.float64)
    if d.ndim != 1:
        raise InvalidInputError("differences must form a 1D sequence")
    if not np.all(np.isfinite(d)):
        raise InvalidInputError("differences must be finite")
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 1.0
    absd = np.abs(d)
    ranks = _average_ranks(absd)
    w_plus = float(ranks[d > 0].sum())

    if n <= _EXACT_LIMIT:
        # doubled ranks are exact integers even with .5 average ranks
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        total = int(doubled.sum())
        counts = np.zeros(total + 1, dtype=np.float64)
        counts[0] = 1.0
        for r in doubled:
            nxt = counts.copy()
            nxt[r:] += counts[: total + 1 - r]
            counts = nxt
        denom = 2.0 ** n
        w2 = int(round(2.0 * w_plus))
        cdf = counts[: w2 + 1].sum() / denom
        sf = counts[w2:].sum() / denom
        return min(1.0, 2.0 * min(cdf, sf))

    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction over groups of equal |d|
    _, tie_counts = np.unique(absd, return_counts=True)
    var -= float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
    if var <= 0:
        return 1.0
    dev = w_plus - mu
    if dev == 0:
        return 1.0
    z = (dev - 0.5 * math.copysign(1.0, dev)) / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def sign_test(diffs) -> float:
    """Two-sided exact binomial sign test; zero differences are dropped."""
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 1.0
    k = int(np.sum(d > 0))
    denom = 2.0 ** n
    cdf = sum(math.comb(n, i) for i in range(0, k + 1)) / denom
    sf = sum(math.comb(n, i) for i in range(k, n + 1)) / denom
    return min(1.0, 2.0 * min(cdf, sf))


_PAIRED_TESTS = {"wilcoxon": wilcoxon_signed_rank, "sign": sign_test}
MIN_PAIRS = 6


def pairwise_vs_reference(responses, reference_label: str,
                          method: str = "wilcoxon") -> dict:
    """Raw two-sided p-values of each non-reference label vs the reference.

    Pairing is per response (one grader on one question ranks all labels at
    once, so the differences are within-response).
    """
    if reference_label not in RANK_LABELS:
        raise InvalidInputError(f"unknown reference label {reference_label!r}")
    if method not in _PAIRED_TESTS:
        raise InvalidInputError(
            f"unknown test {method!r}; available: {sorted(_PAIRED_TESTS)}"
        )
    responses = list(responses)
    if len(responses) < MIN_PAIRS:
        raise InvalidInputError(
            f"need at least {MIN_PAIRS} paired responses, got {len(responses)}"
        )
    test = _PAIRED_TESTS[method]
    out = {}
    for lab in RANK_LABELS:
        if lab == reference_label:
            continue
        diffs = [r.ranking[lab] - r.ranking[reference_label] for r in responses]
        out[lab] = test(diffs)
    return out


def holm_adjust(pvals) -> list:
    """Holm step-down adjustment, output aligned with the input order."""
    p = [float(v) for v in pvals]
    for v in p:
        if not (0.0 <= v <= 1.0):
            raise InvalidInputError(f"p-value {v} outside [0, 1]")
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    adj = [0.0] * m
    running = 0.0
    for pos, i in enumerate(order):
        running = max(running, min(1.0, (m - pos) * p[i]))
        adj[i] = running
    return adj


# ---- spot / anatomy -------------------------------------------------------------


def fool_rate(responses) -> float:
    """Percentage of incorrect real-vs-generated picks."""
    responses = list(responses)
    if not responses:
        raise InvalidInputError("need at least one spot response")
    wrong = sum(1 for r in responses if not r.correct)
    return 100.0 * wrong / len(responses)


def preservation(responses, structures=None) -> float:
    """Percentage of Yes or NotPresent answers over the filtered structures."""
    responses = list(responses)
    if structures is not None:
        keep = set(structures)
        responses = [r for r in responses if r.structure_id in keep]
    if not responses:
        raise InvalidInputError("structure filter matched no responses")
    pos = sum(1 for r in responses if r.answer in ("Yes", "NotPresent"))
    return 100.0 * pos / len(responses)


def stratify(responses, profiles, threshold_years: int = 5):
    """Split responses into (>= threshold, < threshold) experience groups."""
    if isinstance(profiles, dict):
        lookup = {g: (p.years_experience if isinstance(p, GraderProfile) else int(p))
                  for g, p in profiles.items()}
    else:
        lookup = {p.grader_id: p.years_experience for p in profiles}
    senior, junior = [], []
    for r in responses:
        if r.grader_id not in lookup:
            raise InvalidInputError(f"no profile for grader {r.grader_id!r}")
        (senior if lookup[r.grader_id] >= threshold_years else junior).append(r)
    return senior, junior


# ---- correlations ---------------------------------------------------------------


@dataclass(frozen=True)
class CorrelationResult:
    names: tuple
    matrix: np.ndarray
    undefined: np.ndarray  # True where a zero-variance series made r undefined

    def as_dict(self) -> dict:
        return {
            "names": list(self.names),
            "matrix": [[None if u else float(v) for v, u in zip(row, urow)]
                       for row, urow in zip(self.matrix, self.undefined)],
        }


def correlation_matrix(series: dict, method: str = "pearson") -> CorrelationResult:
    """Pairwise correlation of equal-length named vectors."""
    if method not in ("pearson", "spearman"):
        raise InvalidInputError(f"unknown correlation method {method!r}")
    if not series:
        raise InvalidInputError("need at least one series")
    names = tuple(series)
    cols = [np.asarray(series[k], dtype=np.float64) for k in names]
    n = len(cols[0])
    if n < 3:
        raise InvalidInputError(f"series length {n} < 3")
    for k, c in zip(names, cols):
        if c.ndim != 1 or len(c) != n:
            raise InvalidInputError(f"series {k!r} length mismatch")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError(f"series {k!r} contains non-finite values")
    if method == "spearman":
        cols = [_average_ranks(c) for c in cols]
    centered = [c - c.mean() for c in cols]
    norms = [float(np.sqrt(np.dot(c, c))) for c in centered]
    m = len(names)
    mat = np.zeros((m, m), dtype=np.float64)
    undef = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(m):
            if norms[i] == 0.0 or norms[j] == 0.0:
                mat[i, j] = np.nan
                undef[i, j] = True
            elif i == j:
                mat[i, j] = 1.0
            else:
                mat[i, j] = float(np.dot(centered[i], centered[j])
                                  / (norms[i] * norms[j]))
    return CorrelationResult(names, mat, undef)


# ---- response-log ingestion -----------------------------------------------------

RECORD_FIELDS = ("timestamp", "session_id", "grader_id", "years_experience",
                 "test_kind", "question_id", "payload", "manifest_checksum")
TEST_KINDS = ("rank6", "spot", "anatomy")


def read_log(path) -> list:
    """Parse a line-delimited response log into record dicts."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedFileError(f"{path}:{lineno}: invalid record: {exc}")
            records.append(obj)
    return records


def parse_record(record: dict):
    """Convert one log record into (GraderProfile, [typed responses])."""
    missing = [f for f in RECORD_FIELDS if f not in record]
    if missing:
        raise MalformedFileError(f"record missing fields {missing}")
    kind = record["test_kind"]
    if kind not in TEST_KINDS:
        raise MalformedFileError(f"unknown test_kind {kind!r}")
    profile = GraderProfile(record["grader_id"], int(record["years_experience"]))
    gid = record["grader_id"]
    qid = str(record["question_id"])
    payload = record["payload"]
    if not isinstance(payload, dict):
        raise MalformedFileError("payload must be an object")
    try:
        if kind == "rank6":
            ranking = {str(k): int(v) for k, v in payload["ranking"].items()}
            return profile, [RankingResponse(gid, qid, ranking)]
        if kind == "spot":
            return profile, [SpotResponse(gid, qid, payload["chosen"],
                                          bool(payload["correct"]))]
        answers = payload["answers"]
        out = [AnatomyResponse(gid, qid, a["structure_id"], a["answer"],
                               a.get("comment"))
               for a in answers]
        if not out:
            raise InvalidInputError("anatomy payload has no answers")
        return profile, out
    except (KeyError, TypeError, AttributeError) as exc:
        raise MalformedFileError(f"malformed {kind} payload: {exc}")


def responses_from_records(records, test_kind: str):
    """Filter records to one kind; returns (responses, {grader_id: profile})."""
    if test_kind not in TEST_KINDS:
        raise InvalidInputError(f"unknown test_kind {test_kind!r}")
    responses = []
    profiles = {}
    for rec in records:
        if rec.get("test_kind") != test_kind:
            continue
        profile, resp = parse_record(rec)
        profiles[profile.grader_id] = profile
        responses.extend(resp)
    return responses, profiles


# ---- the shared statistics document ---------------------------------------------


def _rank_block(responses, seed, n_boot, reference_label, method):
    stats = mean_rank(responses, n_boot=n_boot, seed=seed)
    block = {
        "n_responses": len(responses),
        "mean_ranks": {
            lab: {"mean": s.mean, "ci_low": s.ci_low, "ci_high": s.ci_high}
            for lab, s in stats.items()
        },
    }
    if len(responses) >= MIN_PAIRS:
        raw = pairwise_vs_reference(responses, reference_label, method=method)
        labs = list(raw)
        adj = holm_adjust([raw[lab] for lab in labs])
        block["p_values"] = {lab: float(raw[lab]) for lab in labs}
        block["p_adjusted"] = {lab: float(a) for lab, a in zip(labs, adj)}
        block["significant"] = {lab: bool(a < 0.05) for lab, a in zip(labs, adj)}
    else:
        block["p_values"] = None
        block["p_adjusted"] = None
        block["significant"] = None
    return block


def compute_statistics(records, test_kind: str, seed: int = 0,
                       n_boot: int = 10000,
                       reference_label: str = "signal-averaging",
                       method: str = "wilcoxon") -> dict:
    """One statistics document per test kind, shared by service and CLI.

    Deterministic given (records, seed); holds no state, so replaying a log
    reproduces the document field-for-field.
    """
    responses, profiles = responses_from_records(records, test_kind)
    if not responses:
        raise InvalidInputError(f"no {test_kind} responses in the log")

    if test_kind == "rank6":
        doc = {"test_kind": "rank6", "reference": reference_label, "test": method}
        doc.update(_rank_block(responses, seed, n_boot, reference_label, method))
        senior, junior = stratify(responses, profiles)
        doc["stratified"] = {}
        for name, group in (("experienced", senior), ("less_experienced", junior)):
            if group:
                stats = mean_rank(group, n_boot=n_boot, seed=seed)
                doc["stratified"][name] = {
                    "n_responses": len(group),
                    "mean_ranks": {
                        lab: {"mean": s.mean, "ci_low": s.ci_low,
                              "ci_high": s.ci_high}
                        for lab, s in stats.items()
                    },
                }
            else:
                doc["stratified"][name] = {"n_responses": 0, "mean_ranks": None}
        return doc

    if test_kind == "spot":
        raw = fool_rate(responses)
        doc = {
            "test_kind": "spot",
            "n_responses": len(responses),
            "n_incorrect": sum(1 for r in responses if not r.correct),
            "fool_rate": round(raw, 1),
            "fool_rate_raw": raw,
        }
        senior, junior = stratify(responses, profiles)
        doc["stratified"] = {}
        for name, group in (("experienced", senior), ("less_experienced", junior)):
            if group:
                g = fool_rate(group)
                doc["stratified"][name] = {
                    "n_responses": len(group),
                    "fool_rate": round(g, 1),
                    "fool_rate_raw": g,
                }
            else:
                doc["stratified"][name] = {"n_responses": 0, "fool_rate": None,
                                           "fool_rate_raw": None}
        return doc

    # anatomy
    overall = preservation(responses)
    by_structure = {}
    for sid in sorted({r.structure_id for r in responses}):
        sub = [r for r in responses if r.structure_id == sid]
        pct = preservation(sub)
        by_structure[sid] = {
            "n_responses": len(sub),
            "preservation": round(pct, 1),
            "preservation_raw": pct,
        }
    return {
        "test_kind": "anatomy",
        "n_responses": len(responses),
        "overall": {"preservation": round(overall, 1), "preservation_raw": overall},
        "per_structure": by_structure,
    }
