"""Mean-opinion-score aggregation and the listening-study bookkeeping.

Scores are integers 1..5. Group summaries report the mean and *sample*
standard deviation, rendered "m.mm±s.ss". Rater screening follows the
qualification protocol: 10 pre-study tasks of which 3 carry an instructed
score, 1 is silence (must be scored 1), and 6 are plain clips. Group
comparison uses Welch's two-sample t-test, two-sided.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

from scipy import stats as _scipy_stats

VALID_SCORES = (1, 2, 3, 4, 5)

CONTEXT_QUALIFICATION = "qualification"
CONTEXT_STUDY = "study"

CHECK_SILENCE = "silence"
CHECK_INSTRUCTED = "instructed"
CHECK_INCOMPLETE = "incomplete"

CSV_HEADER = ["rater_id", "clip_id", "score", "timestamp", "context"]

ALPHA = 0.05


class MosError(Exception):
    pass


class EmptyGroup(MosError):
    pass


class IncompleteQualification(MosError):
    pass


@dataclass(frozen=True)
class RatingRecord:
    rater_id: str
    clip_id: str
    score: int
    timestamp: str = ""
    context: str = CONTEXT_STUDY

    def __post_init__(self):
        if self.score not in VALID_SCORES:
            raise ValueError(f"score {self.score} not in 1..5")
        if self.context not in (CONTEXT_QUALIFICATION, CONTEXT_STUDY):
            raise ValueError(f"unknown context {self.context!r}")


@dataclass(frozen=True)
class GroupSummary:
    label: str
    mean: float
    sd: float
    n: int

    def render(self) -> str:
        return f"{self.mean:.2f}±{self.sd:.2f}"


@dataclass(frozen=True)
class QualificationResult:
    rater_id: str
    passed: bool
    failures: tuple[str, ...] = ()


@dataclass(frozen=True)
class QualificationSpec:
    """Which qualification clip expects what: instructed clips map to their
    announced score, the silence clip must be scored 1."""

    instructed: dict[str, int]
    silence_clip_id: str
    plain_clip_ids: tuple[str, ...] = ()
    required_tasks: int = 10

    def all_clip_ids(self) -> list[str]:
        return [*self.instructed, self.silence_clip_id, *self.plain_clip_ids]


def mos_summary(ratings: list[RatingRecord], label: str) -> GroupSummary:
    """Mean and sample (n-1) standard deviation over study scores."""
    scores = sorted(r.score for r in ratings if r.context == CONTEXT_STUDY)
    if not scores:
        raise EmptyGroup(f"group {label!r} has no study ratings")
    n = len(scores)
    mean = sum(scores) / n
    sd = math.sqrt(sum((s - mean) ** 2 for s in scores) / (n - 1)) if n > 1 else 0.0
    return GroupSummary(label=label, mean=mean, sd=sd, n=n)


def exclude_raters(ratings: list[RatingRecord], rater_ids: set[str]) -> list[RatingRecord]:
    """Drop every rating by the given raters (disqualification removes a
    rater's study ratings from all groups)."""
    return [r for r in ratings if r.rater_id not in rater_ids]


def qualify_rater(records: list[RatingRecord], spec: QualificationSpec) -> QualificationResult:
    """Screen one rater's qualification submissions.

    Raises :class:`IncompleteQualification` when fewer than the required
    tasks were completed; otherwise failures are reported as data.
    """
    if not records:
        raise IncompleteQualification("no qualification records")
    rater_id = records[0].rater_id
    by_clip: dict[str, int] = {}
    for r in records:
        if r.context != CONTEXT_QUALIFICATION or r.rater_id != rater_id:
            continue
        by_clip.setdefault(r.clip_id, r.score)
    if len(by_clip) < spec.required_tasks:
        raise IncompleteQualification(
            f"rater {rater_id} completed {len(by_clip)}/{spec.required_tasks} qualification tasks"
        )

    failures: list[str] = []
    silence_score = by_clip.get(spec.silence_clip_id)
    if silence_score is None or silence_score > 1:
        failures.append(CHECK_SILENCE)
    for clip_id, expected in spec.instructed.items():
        if by_clip.get(clip_id) != expected:
            if CHECK_INSTRUCTED not in failures:
                failures.append(CHECK_INSTRUCTED)
    return QualificationResult(rater_id=rater_id, passed=not failures, failures=tuple(failures))


@dataclass(frozen=True)
class ComparisonResult:
    statistic: float
    p_value: float
    significant: bool


def compare_groups(a: list[RatingRecord], b: list[RatingRecord]) -> ComparisonResult:
    """Welch two-sample t statistic with two-sided p-value at alpha=0.05.

    Degenerate variances are resolved by convention: two constant, equal
    groups compare at p=1; constant unequal groups at p=0.
    """
    xa = [r.score for r in a if r.context == CONTEXT_STUDY]
    xb = [r.score for r in b if r.context == CONTEXT_STUDY]
    if not xa or not xb:
        raise EmptyGroup("both groups need at least one study rating")

    var_a = _variance(xa)
    var_b = _variance(xb)
    if var_a == 0.0 and var_b == 0.0:
        same = (sum(xa) / len(xa)) == (sum(xb) / len(xb))
        if same:
            return ComparisonResult(statistic=0.0, p_value=1.0, significant=False)
        sign = 1.0 if sum(xa) / len(xa) > sum(xb) / len(xb) else -1.0
        return ComparisonResult(statistic=sign * math.inf, p_value=0.0, significant=True)

    stat, p = _scipy_stats.ttest_ind(xa, xb, equal_var=False)
    return ComparisonResult(statistic=float(stat), p_value=float(p), significant=p < ALPHA)


def _variance(xs: list[int]) -> float:
    n = len(xs)
    if n < 2:
        return 0.0
    mean = sum(xs) / n
    return sum((x - mean) ** 2 for x in xs) / (n - 1)


def render_table(summaries: list[GroupSummary]) -> str:
    """Two-column text table: group label and mean±SD."""
    label_w = max(len("Model/Source"), *(len(s.label) for s in summaries))
    lines = [f"{'Model/Source':<{label_w}}  MOS"]
    for s in summaries:
        lines.append(f"{s.label:<{label_w}}  {s.render()}")
    return "\n".join(lines)


def summaries_to_json(summaries: list[GroupSummary]) -> str:
    return json.dumps(
        [
            {"label": s.label, "mean": round(s.mean, 4), "sd": round(s.sd, 4),
             "n": s.n, "rendered": s.render()}
            for s in summaries
        ],
        indent=2,
    )


def write_ratings_csv(path: str | Path, ratings: list[RatingRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in ratings:
            writer.writerow([r.rater_id, r.clip_id, r.score, r.timestamp, r.context])


def read_ratings_csv(path: str | Path) -> list[RatingRecord]:
    return parse_ratings_csv(Path(path).read_text())


def parse_ratings_csv(text: str) -> list[RatingRecord]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(CSV_HEADER) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"ratings CSV missing columns: {sorted(missing)}")
    return [
        RatingRecord(
            rater_id=row["rater_id"],
            clip_id=row["clip_id"],
            score=int(row["score"]),
            timestamp=row["timestamp"],
            context=row["context"],
        )
        for row in reader
    ]
