"""Initial-context assembly for one investigation case.

Pulls the bug-fixing commit's message and diff, scrubs anything that could
reveal the answer (Fixes trailers, hash-like tokens), extracts the temporal
bound, and renders the system prompt from the shipped template.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import gitio
from .compress import strip_trailers
from .gitio import RepoHandle
from .tools import ToolSchema

HASH_PLACEHOLDER = "[commit-ref-removed]"

_FIXES_LINE_RE = re.compile(r"^\s*Fixes:\s", re.IGNORECASE)
_HEX_TOKEN_RE = re.compile(r"\b[0-9a-fA-F]{7,40}\b")


class RootCommit(Exception):
    """The fix commit has no parent, so there is no pre-fix state to blame."""


class TemplateSlotMissing(Exception):
    """The prompt template lacks a required placeholder."""


@dataclass
class CaseSpec:
    repo_path: str
    fix_commit: str
    ground_truth: set[str] | None = None
    dataset_tag: str = ""
    case_id: str = ""

    def __post_init__(self):
        if not self.case_id:
            self.case_id = f"{self.dataset_tag or 'case'}:{self.fix_commit[:12]}"


@dataclass
class FixContext:
    fix_id: str
    fix_parent: str
    fix_date: int
    message_redacted: str
    diff_text: str
    changed_files: list[str]
    deleted_or_modified_lines: dict[str, list[tuple[int, str]]] = field(default_factory=dict)


@dataclass
class InitialContext:
    system_prompt: str
    tool_specs: list[ToolSchema]
    fix_block: str
    constraints_block: str


def redact_leakage(message: str, dataset_tag: str = "") -> str:
    """Remove Fixes trailers and hash-like tokens from a commit message.

    Any standalone hexadecimal run of 7-40 characters could be (part of)
    the answer, so all of them are replaced regardless of dataset.
    """
    kept = [ln for ln in message.splitlines() if not _FIXES_LINE_RE.match(ln)]
    out = "\n".join(kept)
    out = _HEX_TOKEN_RE.sub(HASH_PLACEHOLDER, out)
    if message.endswith("\n") and out and not out.endswith("\n"):
        out += "\n"
    return out


_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


def preimage_lines_from_diff(diff_text: str) -> dict[str, list[tuple[int, str]]]:
    """Per-file pre-image (line number, text) pairs for '-' lines of a diff."""
    result: dict[str, list[tuple[int, str]]] = {}
    current_file = None
    old_line = 0
    in_hunk = False
    for ln in diff_text.splitlines():
        if ln.startswith("--- "):
            name = ln[4:]
            current_file = None if name == "/dev/null" else name.split("\t")[0]
            if current_file and current_file.startswith("a/"):
                current_file = current_file[2:]
            in_hunk = False
            continue
        if ln.startswith("+++ "):
            continue
        m = _HUNK_RE.match(ln)
        if m:
            old_line = int(m.group(1))
            in_hunk = True
            continue
        if not in_hunk or current_file is None:
            continue
        if ln.startswith("-"):
            result.setdefault(current_file, []).append((old_line, ln[1:]))
            old_line += 1
        elif ln.startswith("+"):
            pass
        elif ln.startswith("\\"):
            pass
        else:
            old_line += 1
    return result


def load_fix_context(repo: RepoHandle, fix: str) -> FixContext:
    fix_id = gitio.resolve_commit(repo, fix)
    if fix_id is None:
        raise gitio.CommitNotFound(f"fix commit {fix!r} does not resolve")
    parent = gitio.parent_of(repo, fix_id, 1)
    if parent is None:
        raise RootCommit(f"fix commit {fix_id} has no parent")
    fix_date = gitio.commit_timestamp(repo, fix_id)

    message = gitio.run_git(repo, ["show", "-s", "--format=%B", fix_id]).stdout
    diff = gitio.run_git(
        repo, ["diff", "--no-color", "--unified=3", parent, fix_id]
    ).stdout
    names = gitio.run_git(repo, ["diff", "--name-only", parent, fix_id]).stdout
    changed_files = [ln for ln in names.splitlines() if ln.strip()]

    return FixContext(
        fix_id=fix_id,
        fix_parent=parent,
        fix_date=fix_date,
        message_redacted=redact_leakage(strip_trailers(message)),
        diff_text=diff,
        changed_files=changed_files,
        deleted_or_modified_lines=preimage_lines_from_diff(diff),
    )


def render_fix_block(fc: FixContext) -> str:
    # The parent is referenced symbolically: printing its id would leak the
    # answer whenever the bug was introduced by the immediately preceding
    # commit. Blame and grep default to the parent revision server-side.
    files = "\n".join(f"  - {p}" for p in fc.changed_files) or "  (none)"
    return (
        f"Bug-fixing commit: {fc.fix_id}\n"
        f"Pre-fix state: {fc.fix_id}~1 (the default revision for git_blame and git_grep)\n"
        f"Changed files:\n{files}\n\n"
        f"Commit message (metadata removed):\n{fc.message_redacted.rstrip()}\n\n"
        f"Diff against the parent:\n{fc.diff_text.rstrip()}"
    )


def render_constraints_block(fc: FixContext) -> str:
    when = datetime.fromtimestamp(fc.fix_date, tz=timezone.utc).strftime(
        "%Y-%m-%d %H:%M:%S UTC"
    )
    return (
        f"All history searches are bounded by the fix commit date: {when} "
        f"(epoch {fc.fix_date}). Any 'before' parameter later than this is "
        "capped automatically; the bug-inducing commit must predate the fix."
    )


def assemble_initial_context(
    fc: FixContext, schemas: list[ToolSchema], prompt_template: str
) -> InitialContext:
    fix_block = render_fix_block(fc)
    constraints_block = render_constraints_block(fc)
    for slot in ("{{fix_block}}", "{{constraints_block}}"):
        if slot not in prompt_template:
            raise TemplateSlotMissing(f"prompt template is missing slot {slot}")
    system_prompt = prompt_template.replace("{{fix_block}}", fix_block).replace(
        "{{constraints_block}}", constraints_block
    )
    return InitialContext(
        system_prompt=system_prompt,
        tool_specs=schemas,
        fix_block=fix_block,
        constraints_block=constraints_block,
    )
