"""Reader-study service: question manifests, sessions, and the response log.

Three question formats are served over HTTP: six-way ranking against a
reference, real-vs-generated spot checks, and per-structure anatomy
preservation. A manifest freezes the image selection and display order at
creation time so every participant sees identical questions; sessions bind
to the manifest checksum and submissions append to a line-delimited log that
is the only persistent state. Statistics are always recomputed from the log
(see evalstats), never cached, so replaying the log reproduces them exactly.

Blinding: for ranking questions the candidate labels stay server-side and
clients rank display slots; for spot questions the real/generated key never
appears in any response payload sent to the client.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
from PIL import Image

from .errors import InvalidInputError, MalformedFileError
from .evalstats import (
    RANK_LABELS,
    ANATOMY_ANSWERS,
    AnatomyResponse,
    GraderProfile,
    RankingResponse,
    compute_statistics,
    read_log,
)
from .imagecore import load_image
from .seeding import substream

__all__ = [
    "StructureSpec",
    "STRUCTURES",
    "STRUCTURE_GROUPS",
    "LocationImages",
    "QuestionManifest",
    "create_manifest",
    "save_manifest",
    "load_manifest",
    "Session",
    "create_app",
]


@dataclass(frozen=True)
class StructureSpec:
    structure_id: str
    group: str
    prompt: str


# the nine anatomy sub-questions, asked for every anatomy question
STRUCTURES = (
    StructureSpec("posterior-vitreous-membrane", "vitreous",
                  "Is the Posterior Vitreous Membrane clearly visible in the "
                  "generated image?"),
    StructureSpec("bursa-praemacularis", "vitreous",
                  "Is the Bursa Praemacularis visible and clearly delineated "
                  "in the generated image?"),
    StructureSpec("area-of-martegiani", "vitreous",
                  "Is the Area of Martegiani visible and clearly delineated "
                  "in the generated image?"),
    StructureSpec("hyalocytes", "vitreous",
                  "Are Vitreous Cells (Hyalocytes) visible in the generated "
                  "image?"),
    StructureSpec("retinal-layers", "other",
                  "Are the Retinal Layers clearly identifiable in the "
                  "generated image?"),
    StructureSpec("optic-nerve-head", "other",
                  "Are the structures of the Optic Nerve Head clearly "
                  "identifiable in the generated image?"),
    StructureSpec("choroid", "other",
                  "Is the Choroid clearly identifiable in the generated "
                  "image?"),
    StructureSpec("choroidal-sclera-interface", "other",
                  "Is the Choroidal-sclera interface identifiable in the "
                  "generated image?"),
    StructureSpec("pathological-structures", "other",
                  "Are any pathological structures clearly identifiable in "
                  "the generated image?"),
)

STRUCTURE_IDS = tuple(s.structure_id for s in STRUCTURES)
STRUCTURE_GROUPS = {
    "vitreous": tuple(s.structure_id for s in STRUCTURES if s.group == "vitreous"),
    "other": tuple(s.structure_id for s in STRUCTURES if s.group == "other"),
}

TEST_KINDS = ("rank6", "spot", "anatomy")


@dataclass(frozen=True)
class LocationImages:
    """Image paths available at one eye location.

    ``candidates`` (label -> path) feeds ranking questions; ``reference`` is
    the high-quality image; ``real``/``generated`` form the spot pair and
    ``reference``/``generated`` the anatomy pair.
    """

    location_id: str
    reference: str = ""
    candidates: dict | None = None
    real: str = ""
    generated: str = ""

    def __post_init__(self):
        if not self.location_id:
            raise InvalidInputError("location_id must be non-empty")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvalidInputError(message)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _checksum(test_kind: str, questions, images: dict) -> str:
    body = _canonical({"test_kind": test_kind, "questions": list(questions),
                       "images": images})
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def _validate_questions(test_kind: str, questions, images: dict) -> None:
    if test_kind not in TEST_KINDS:
        raise InvalidInputError(f"unknown test_kind {test_kind!r}")
    seen_ids = set()
    for q in questions:
        qid = q.get("question_id")
        _require(bool(qid) and qid not in seen_ids, "question ids must be unique")
        seen_ids.add(qid)
        if test_kind == "rank6":
            _require(len(q["display"]) == len(RANK_LABELS),
                     "rank6 question needs exactly 6 candidates")
            _require(sorted(q["display_labels"]) == sorted(RANK_LABELS),
                     "display_labels must cover all six labels")
            _require(q["reference"] in images, "missing reference image")
            tokens = list(q["display"]) + [q["reference"]]
        elif test_kind == "spot":
            _require(len(q["display"]) == 2, "spot question needs exactly 2 images")
            _require(q["real_slot"] in (0, 1), "real_slot must be 0 or 1")
            tokens = list(q["display"])
        else:
            _require(tuple(q["structures"]) == STRUCTURE_IDS,
                     "anatomy question must carry all nine structure ids")
            tokens = [q["reference"], q["evaluated"]]
        for tok in tokens:
            _require(tok in images, f"token {tok!r} not in image table")


@dataclass(frozen=True)
class QuestionManifest:
    """A frozen question set; identical display order for every participant."""

    test_kind: str
    questions: tuple
    images: dict
    checksum: str

    def __post_init__(self):
        _validate_questions(self.test_kind, self.questions, self.images)
        expect = _checksum(self.test_kind, self.questions, self.images)
        if self.checksum != expect:
            raise MalformedFileError("manifest checksum mismatch")

    @property
    def n_questions(self) -> int:
        return len(self.questions)

    def public_question(self, index: int) -> dict:
        """Client-facing payload; hidden answer keys are stripped."""
        q = self.questions[index]
        out = {
            "question_index": index,
            "question_id": q["question_id"],
            "test_kind": self.test_kind,
        }
        if self.test_kind == "rank6":
            out["reference_url"] = f"/v1/images/{q['reference']}"
            out["candidates"] = [f"/v1/images/{tok}" for tok in q["display"]]
        elif self.test_kind == "spot":
            out["images"] = [f"/v1/images/{tok}" for tok in q["display"]]
        else:
            out["reference_url"] = f"/v1/images/{q['reference']}"
            out["evaluated_url"] = f"/v1/images/{q['evaluated']}"
            out["structures"] = [
                {"structure_id": s.structure_id, "prompt": s.prompt,
                 "group": s.group, "answers": list(ANATOMY_ANSWERS)}
                for s in STRUCTURES
            ]
        return out


def _pick_locations(images, n_questions: int, rng) -> list:
    """Each location at most once; at most twice when demand exceeds supply."""
    locs = list(images)
    ids = [loc.location_id for loc in locs]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("duplicate location_id")
    _require(n_questions >= 1, "need at least one question")
    if n_questions > 2 * len(locs):
        raise InvalidInputError(
            f"{n_questions} questions need more than two uses of some of the "
            f"{len(locs)} locations"
        )
    order = rng.permutation(len(locs))
    chosen = [locs[i] for i in order[:min(n_questions, len(locs))]]
    if n_questions > len(locs):
        second = rng.permutation(len(locs))
        chosen += [locs[i] for i in second[: n_questions - len(locs)]]
    return chosen


def _token(seed: int, test_kind: str, path: str) -> str:
    h = hashlib.sha256(f"{seed}|{test_kind}|{path}".encode("utf-8"))
    return h.hexdigest()[:32]


def create_manifest(images, test_kind: str, n_questions: int,
                    seed: int = 0) -> QuestionManifest:
    """Deterministically select locations and shuffle display orders."""
    if test_kind not in TEST_KINDS:
        raise InvalidInputError(f"unknown test_kind {test_kind!r}")
    rng = substream(seed, "manifest", test_kind)
    chosen = _pick_locations(images, n_questions, rng)
    table = {}

    def register(path: str) -> str:
        _require(bool(path), "question slot missing an image path")
        tok = _token(seed, test_kind, path)
        table[tok] = path
        return tok

    questions = []
    for idx, loc in enumerate(chosen):
        qid = f"{test_kind}-{idx:03d}"
        if test_kind == "rank6":
            _require(loc.candidates is not None
                     and set(loc.candidates) == set(RANK_LABELS),
                     f"location {loc.location_id}: candidates must cover "
                     f"{RANK_LABELS}")
            order = [RANK_LABELS[i] for i in rng.permutation(len(RANK_LABELS))]
            questions.append({
                "question_id": qid,
                "location_id": loc.location_id,
                "reference": register(loc.reference),
                "display": [register(loc.candidates[lab]) for lab in order],
                "display_labels": order,
            })
        elif test_kind == "spot":
            real_slot = int(rng.integers(0, 2))
            real_tok = register(loc.real)
            gen_tok = register(loc.generated)
            pair = [real_tok, gen_tok] if real_slot == 0 else [gen_tok, real_tok]
            questions.append({
                "question_id": qid,
                "location_id": loc.location_id,
                "display": pair,
                "real_slot": real_slot,
            })
        else:
            questions.append({
                "question_id": qid,
                "location_id": loc.location_id,
                "reference": register(loc.reference),
                "evaluated": register(loc.generated),
                "structures": list(STRUCTURE_IDS),
            })
    checksum = _checksum(test_kind, questions, table)
    return QuestionManifest(test_kind, tuple(questions), table, checksum)


def save_manifest(manifest: QuestionManifest, path) -> None:
    doc = {
        "test_kind": manifest.test_kind,
        "questions": list(manifest.questions),
        "images": manifest.images,
        "checksum": manifest.checksum,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> QuestionManifest:
    """Read a manifest; relative image paths resolve against the file's folder."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: invalid manifest: {exc}")
    try:
        kind = doc["test_kind"]
        questions = tuple(doc["questions"])
        images = dict(doc["images"])
        stored = doc["checksum"]
    except (KeyError, TypeError) as exc:
        raise MalformedFileError(f"{path}: manifest missing field: {exc}")
    if _checksum(kind, questions, images) != stored:
        raise MalformedFileError(f"{path}: manifest checksum mismatch")
    base = os.path.dirname(os.path.abspath(os.fspath(path)))
    resolved = {tok: p if os.path.isabs(p) else os.path.join(base, p)
                for tok, p in images.items()}
    manifest = QuestionManifest(kind, questions, images, stored)
    # same frozen manifest, but with servable paths
    object.__setattr__(manifest, "images", resolved)
    return manifest


# ---- answer validation / record building -----------------------------------------


def _resolve_rank_answer(question: dict, body: dict) -> dict:
    ranks = body.get("ranks")
    if (not isinstance(ranks, list) or len(ranks) != len(RANK_LABELS)
            or not all(isinstance(r, int) for r in ranks)):
        raise InvalidInputError("ranks must be a list of six integers")
    ranking = {lab: rank for lab, rank in zip(question["display_labels"], ranks)}
    # permutation and label-coverage checks live in the response type
    RankingResponse("_", "_", ranking)
    return {"ranking": ranking}


def _resolve_spot_answer(question: dict, body: dict) -> dict:
    slot = body.get("chosen_slot")
    if slot not in (0, 1):
        raise InvalidInputError("chosen_slot must be 0 or 1")
    chosen = "real" if slot == question["real_slot"] else "generated"
    return {"chosen": chosen, "correct": chosen == "real"}


def _resolve_anatomy_answer(question: dict, body: dict) -> dict:
    answers = body.get("answers")
    if not isinstance(answers, list):
        raise InvalidInputError("answers must be a list")
    seen = {}
    for entry in answers:
        if not isinstance(entry, dict):
            raise InvalidInputError("each answer must be an object")
        sid = entry.get("structure_id")
        if sid not in STRUCTURE_IDS:
            raise InvalidInputError(f"unknown structure_id {sid!r}")
        if sid in seen:
            raise InvalidInputError(f"duplicate structure_id {sid!r}")
        comment = entry.get("comment")
        if comment is not None and not isinstance(comment, str):
            raise InvalidInputError("comment must be a string")
        AnatomyResponse("_", "_", sid, entry.get("answer"), comment)
        item = {"structure_id": sid, "answer": entry["answer"]}
        if comment:
            item["comment"] = comment
        seen[sid] = item
    if set(seen) != set(STRUCTURE_IDS):
        missing = sorted(set(STRUCTURE_IDS) - set(seen))
        raise InvalidInputError(f"missing answers for structures {missing}")
    return {"answers": [seen[sid] for sid in STRUCTURE_IDS]}


_RESOLVERS = {
    "rank6": _resolve_rank_answer,
    "spot": _resolve_spot_answer,
    "anatomy": _resolve_anatomy_answer,
}


@dataclass
class Session:
    session_id: str
    grader_id: str
    years_experience: int
    test_kind: str
    manifest_checksum: str
    created: str
    cursor: int = 0


def _png_bytes(path: str) -> bytes:
    img = load_image(path)
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(q, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def create_app(manifest: QuestionManifest, log_path, results_seed: int = 0,
               n_boot: int = 10000):
    """Single-process HTTP app over one manifest and one append-only log."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import Response

    for tok, path in manifest.images.items():
        if not os.path.exists(path):
            raise InvalidInputError(f"manifest image missing on disk: {path}")

    log_path = os.fspath(log_path)
    app = FastAPI(title="vitreoforge reader study")
    sessions: dict = {}
    lock = threading.Lock()

    def append_record(record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def get_session(sid: str) -> Session:
        ses = sessions.get(sid)
        if ses is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return ses

    @app.post("/v1/sessions", status_code=201)
    def start_session(body: dict):
        try:
            profile = GraderProfile(str(body.get("grader_id", "")),
                                    body.get("years_experience"))
        except InvalidInputError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        ses = Session(
            session_id=uuid.uuid4().hex,
            grader_id=profile.grader_id,
            years_experience=profile.years_experience,
            test_kind=manifest.test_kind,
            manifest_checksum=manifest.checksum,
            created=datetime.now(timezone.utc).isoformat(),
        )
        sessions[ses.session_id] = ses
        return {
            "session_id": ses.session_id,
            "test_kind": ses.test_kind,
            "n_questions": manifest.n_questions,
            "manifest_checksum": ses.manifest_checksum,
            "cursor": ses.cursor,
        }

    @app.get("/v1/sessions/{sid}/question")
    def next_question(sid: str):
        ses = get_session(sid)
        if ses.cursor >= manifest.n_questions:
            return {"done": True, "cursor": ses.cursor,
                    "n_questions": manifest.n_questions}
        payload = manifest.public_question(ses.cursor)
        payload["done"] = False
        payload["cursor"] = ses.cursor
        payload["n_questions"] = manifest.n_questions
        return payload

    @app.post("/v1/sessions/{sid}/answers")
    def submit_answer(sid: str, body: dict):
        ses = get_session(sid)
        if ses.manifest_checksum != manifest.checksum:
            raise HTTPException(status_code=409, detail="manifest changed")
        with lock:
            if ses.cursor >= manifest.n_questions:
                raise HTTPException(status_code=409,
                                    detail="all questions already answered")
            qid = body.get("question_id")
            current = manifest.questions[ses.cursor]
            if qid != current["question_id"]:
                answered = {q["question_id"]
                            for q in manifest.questions[: ses.cursor]}
                if qid in answered:
                    raise HTTPException(status_code=409,
                                        detail=f"{qid} already answered")
                upcoming = {q["question_id"] for q in manifest.questions}
                if qid in upcoming:
                    raise HTTPException(
                        status_code=409,
                        detail=f"out of order: expected "
                               f"{current['question_id']}, got {qid}")
                raise HTTPException(status_code=400,
                                    detail=f"unknown question_id {qid!r}")
            try:
                payload = _RESOLVERS[manifest.test_kind](current, body)
            except InvalidInputError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            record = {
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "session_id": ses.session_id,
                "grader_id": ses.grader_id,
                "years_experience": ses.years_experience,
                "test_kind": ses.test_kind,
                "question_id": current["question_id"],
                "payload": payload,
                "manifest_checksum": ses.manifest_checksum,
            }
            append_record(record)
            ses.cursor += 1
            return {"accepted": True, "cursor": ses.cursor,
                    "n_questions": manifest.n_questions}

    @app.get("/v1/results/{test_kind}")
    def results(test_kind: str):
        if test_kind not in TEST_KINDS:
            raise HTTPException(status_code=400,
                                detail=f"unknown test_kind {test_kind!r}")
        records = read_log(log_path) if os.path.exists(log_path) else []
        try:
            return compute_statistics(records, test_kind, seed=results_seed,
                                      n_boot=n_boot)
        except InvalidInputError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/v1/images/{token}")
    def image(token: str):
        path = manifest.images.get(token)
        if path is None:
            raise HTTPException(status_code=404, detail="unknown image token")
        return Response(content=_png_bytes(path), media_type="image/png")

    return app
