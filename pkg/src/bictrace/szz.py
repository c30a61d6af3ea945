"""Classic blame-based baselines for bug-inducing commit identification.

b_szz traces every deleted or modified line of the fix back to the commit
that last touched it at the fix's first parent. r_szz and l_szz pick a
single candidate: the most recent one, or the one owning the most traced
lines. Ties resolve to the lexicographically smallest commit id so results
are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import gitio
from .caseprep import load_fix_context
from .compress import parse_blame_porcelain
from .gitio import GitStatus, RepoHandle


@dataclass(frozen=True)
class BlameCandidate:
    commit: str
    file: str
    lines_attributed: int


def blame_candidates(repo: RepoHandle, fix: str) -> list[BlameCandidate]:
    """Blame attribution counts for the fix's pre-image lines, per file."""
    fc = load_fix_context(repo, fix)
    counts: dict[tuple[str, str], int] = {}
    for path, removed in fc.deleted_or_modified_lines.items():
        out = gitio.run_git(
            repo, ["blame", "--line-porcelain", fc.fix_parent, "--", path]
        )
        if out.status is not GitStatus.OK:
            continue
        by_line = {rec["final_line"]: rec["commit"] for rec in parse_blame_porcelain(out.stdout)}
        for line_no, _ in removed:
            commit = by_line.get(line_no)
            if commit:
                key = (commit, path)
                counts[key] = counts.get(key, 0) + 1
    return [
        BlameCandidate(commit=c, file=p, lines_attributed=n)
        for (c, p), n in sorted(counts.items())
    ]


def b_szz(repo: RepoHandle, fix: str) -> set[str]:
    """All commits that last touched a line deleted or modified by the fix."""
    return {cand.commit for cand in blame_candidates(repo, fix)}


def r_szz(repo: RepoHandle, fix: str) -> str | None:
    """Most recent blame candidate; equal timestamps break to smallest id."""
    candidates = b_szz(repo, fix)
    if not candidates:
        return None
    return min(candidates, key=lambda c: (-gitio.commit_timestamp(repo, c), c))


def l_szz(repo: RepoHandle, fix: str) -> str | None:
    """Candidate owning the most traced lines; ties break to smallest id."""
    per_commit: dict[str, int] = {}
    for cand in blame_candidates(repo, fix):
        per_commit[cand.commit] = per_commit.get(cand.commit, 0) + cand.lines_attributed
    if not per_commit:
        return None
    return min(per_commit, key=lambda c: (-per_commit[c], c))
