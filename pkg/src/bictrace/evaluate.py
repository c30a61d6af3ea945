"""Dataset ingestion, metrics, hard-case classification and reporting.

Metrics are micro-averaged: intersection, prediction and ground-truth
counts are summed over all cases before dividing, so multi-candidate
baselines and single-answer agents are measured on the same scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import gitio
from .caseprep import CaseSpec, FixContext
from .gitio import GitStatus, RepoHandle

DATASET_SCHEMA = "bictrace-dataset/v1"
RESULTS_SCHEMA = "bictrace-results/v1"
REPORT_SCHEMA = "bictrace-report/v1"


class DatasetError(Exception):
    """A dataset file that cannot be used as ground truth."""


class MissingGroundTruth(Exception):
    """A result refers to a case the dataset does not define."""


@dataclass
class Dataset:
    name: str
    cases: list[CaseSpec] = field(default_factory=list)

    def by_id(self) -> dict[str, CaseSpec]:
        return {case.case_id: case for case in self.cases}


def load_dataset(path: str, name: str | None = None) -> Dataset:
    """Read a line-delimited dataset file of fix commits and their BICs."""
    cases = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            record = json.loads(line)
            if record.get("schema") == DATASET_SCHEMA:
                name = name or record.get("name")
                continue
            bics = record.get("bics") or []
            if not bics:
                raise DatasetError(f"{path}:{i}: case without ground-truth bics")
            case = CaseSpec(
                repo_path=record["repo"],
                fix_commit=record["fix_commit"],
                ground_truth=set(bics),
                dataset_tag=record.get("dataset_tag", ""),
                case_id=record.get("case_id", ""),
            )
            if case.case_id in seen:
                raise DatasetError(f"{path}:{i}: duplicate case id {case.case_id}")
            seen.add(case.case_id)
            cases.append(case)
    return Dataset(name=name or path, cases=cases)


@dataclass
class CaseResult:
    case_id: str
    predicted: list[str] = field(default_factory=list)
    transcript_ref: str | None = None
    category_flags: dict = field(default_factory=dict)  # {"ghost": bool, "cross_file": bool}
    cost: dict = field(default_factory=dict)  # tokens, turns, seconds, dollars?
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "predicted": sorted(self.predicted),
            "transcript_ref": self.transcript_ref,
            "category_flags": self.category_flags,
            "cost": self.cost,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CaseResult":
        return cls(
            case_id=data["case_id"],
            predicted=list(data.get("predicted", [])),
            transcript_ref=data.get("transcript_ref"),
            category_flags=data.get("category_flags", {}),
            cost=data.get("cost", {}),
            error=data.get("error"),
        )


def write_results(path: str, method: str, results: list[CaseResult]):
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"schema": RESULTS_SCHEMA, "method": method}, sort_keys=True) + "\n")
        for result in results:
            f.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")


def read_results(path: str) -> tuple[str, list[CaseResult]]:
    with open(path, encoding="utf-8") as f:
        lines = [json.loads(ln) for ln in f if ln.strip()]
    if not lines or lines[0].get("schema") != RESULTS_SCHEMA:
        raise DatasetError(f"{path} is not a {RESULTS_SCHEMA} file")
    method = lines[0].get("method", path)
    return method, [CaseResult.from_dict(record) for record in lines[1:]]


def metrics(
    results: list[CaseResult], ground_truth: dict[str, set[str]]
) -> tuple[float, float, float]:
    """Micro-averaged precision, recall, F1 over all cases.

    With zero predictions overall, precision is 0 by convention. F1 is
    computed as 2*I/(P+G), which equals the harmonic mean of the micro
    precision and recall and keeps the division exact.
    """
    intersection = predicted_total = truth_total = 0
    for result in results:
        if result.case_id not in ground_truth:
            raise MissingGroundTruth(f"no ground truth for case {result.case_id}")
        truth = ground_truth[result.case_id]
        predicted = set(result.predicted)
        intersection += len(truth & predicted)
        predicted_total += len(predicted)
        truth_total += len(truth)
    precision = intersection / predicted_total if predicted_total else 0.0
    recall = intersection / truth_total if truth_total else 0.0
    f1 = 2 * intersection / (predicted_total + truth_total) if (predicted_total + truth_total) else 0.0
    if intersection == 0:
        f1 = 0.0
    return precision, recall, f1


def classify_ghost(fc: FixContext) -> bool:
    """True when the fix deletes or modifies nothing (addition-only)."""
    return not any(fc.deleted_or_modified_lines.values())


def classify_cross_file(
    repo: RepoHandle, case: CaseSpec, fc: FixContext, follow_renames: bool = True
) -> bool:
    """True when no ground-truth BIC appears in any fix-touched file's history."""
    if not case.ground_truth:
        return False
    history: set[str] = set()
    for path in fc.changed_files:
        cmd = ["log", "--format=%H"]
        if follow_renames:
            cmd.append("--follow")
        cmd += [fc.fix_id, "--", path]
        out = gitio.run_git(repo, cmd)
        if out.status is GitStatus.OK:
            history.update(out.stdout.split())
    return all(bic not in history for bic in case.ground_truth)


@dataclass
class EvalReport:
    name: str
    n_cases: int
    precision: float
    recall: float
    f1: float
    category_recall: dict = field(default_factory=dict)  # {"ghost": {...}, "cross_file": {...}}
    cost_means: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "name": self.name,
            "n_cases": self.n_cases,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "category_recall": self.category_recall,
            "cost_means": self.cost_means,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        if data.get("schema") != REPORT_SCHEMA:
            raise DatasetError(f"not a {REPORT_SCHEMA} record")
        return cls(
            name=data["name"],
            n_cases=data["n_cases"],
            precision=data["precision"],
            recall=data["recall"],
            f1=data["f1"],
            category_recall=data.get("category_recall", {}),
            cost_means=data.get("cost_means", {}),
        )

    def render_table(self) -> str:
        lines = [
            f"Report: {self.name} ({self.n_cases} cases)",
            f"  precision: {self.precision:.4f}",
            f"  recall:    {self.recall:.4f}",
            f"  f1:        {self.f1:.4f}",
        ]
        for category, stats in self.category_recall.items():
            lines.append(
                f"  {category}: {stats['n_cases']} cases, recall {stats['recall']:.4f}"
            )
        for key, value in self.cost_means.items():
            lines.append(f"  mean {key}: {value:.4f}")
        return "\n".join(lines)


class IncompleteResults(Exception):
    """A report was requested over results missing dataset cases."""


def aggregate_report(
    dataset: Dataset,
    results: list[CaseResult],
    name: str = "",
    price_table: dict | None = None,
) -> EvalReport:
    by_case = dataset.by_id()
    unknown = [r.case_id for r in results if r.case_id not in by_case]
    if unknown:
        raise MissingGroundTruth(f"results for unknown case ids: {', '.join(sorted(unknown))}")
    ground_truth = {cid: case.ground_truth or set() for cid, case in by_case.items()}
    precision, recall, f1 = metrics(results, ground_truth)

    category_recall = {}
    for category in ("ghost", "cross_file"):
        subset = [r for r in results if r.category_flags.get(category)]
        if subset:
            _, cat_recall, _ = metrics(subset, ground_truth)
            category_recall[category] = {"n_cases": len(subset), "recall": cat_recall}
        else:
            category_recall[category] = {"n_cases": 0, "recall": 0.0}

    cost_means = {}
    for key in ("tokens", "turns", "seconds"):
        values = [r.cost.get(key) for r in results if r.cost.get(key) is not None]
        if values:
            cost_means[key] = sum(values) / len(values)
    if price_table:
        dollars = []
        for result in results:
            prompt = result.cost.get("prompt_tokens", 0)
            completion = result.cost.get("completion_tokens", 0)
            dollars.append(
                prompt / 1000 * price_table.get("prompt_usd_per_1k", 0.0)
                + completion / 1000 * price_table.get("completion_usd_per_1k", 0.0)
            )
        if dollars:
            cost_means["dollars"] = sum(dollars) / len(dollars)

    return EvalReport(
        name=name or dataset.name,
        n_cases=len(results),
        precision=precision,
        recall=recall,
        f1=f1,
        category_recall=category_recall,
        cost_means=cost_means,
    )


def emit_report(report: EvalReport, path_json: str, path_text: str | None = None):
    with open(path_json, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    if path_text:
        with open(path_text, "w", encoding="utf-8") as f:
            f.write(report.render_table() + "\n")
