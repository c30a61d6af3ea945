"""Brute-force per-line last-writer oracle.

Replays the whole history in topological order, carrying a per-file map of
line -> writing commit. Line matching between revisions uses difflib, not
git's blame machinery, so this is an independent check of the blame-based
baselines. Git is used only as plumbing (listing commits, reading blobs,
detecting renames).
"""

from __future__ import annotations

import os
import subprocess
from difflib import SequenceMatcher


def _git(repo_path: str, *args: str) -> str:
    proc = subprocess.run(
        ["git", "-C", repo_path, *args],
        capture_output=True,
        text=True,
        env={
            "PATH": os.environ["PATH"],
            "HOME": os.environ.get("HOME", "/"),
            "GIT_CONFIG_GLOBAL": os.devnull,
            "GIT_CONFIG_SYSTEM": os.devnull,
        },
    )
    if proc.returncode != 0:
        raise RuntimeError(f"git {' '.join(args)}: {proc.stderr}")
    return proc.stdout


def _parents(repo_path: str, commit: str) -> list[str]:
    return _git(repo_path, "rev-list", "--parents", "-n", "1", commit).split()[1:]


def _content(repo_path: str, commit: str, path: str) -> list[str]:
    return _git(repo_path, "show", f"{commit}:{path}").splitlines()


def _name_status(repo_path: str, old: str, new: str) -> list[tuple[str, str, str]]:
    """(code, old_path, new_path) triples with rename detection on."""
    out = _git(repo_path, "diff", "--name-status", "-M", old, new)
    triples = []
    for line in out.splitlines():
        parts = line.split("\t")
        code = parts[0]
        if code.startswith("R") or code.startswith("C"):
            triples.append((code, parts[1], parts[2]))
        else:
            triples.append((code, parts[1], parts[1]))
    return triples


def _match(base_lines, base_writers, new_lines, commit):
    writers = [commit] * len(new_lines)
    sm = SequenceMatcher(a=list(base_lines), b=new_lines, autojunk=False)
    for tag, i1, i2, j1, j2 in sm.get_opcodes():
        if tag == "equal":
            for k in range(j2 - j1):
                writers[j1 + k] = base_writers[i1 + k]
    return writers


def _inherit(lines, writers, parent_lines, parent_writers, commit):
    out = list(writers)
    sm = SequenceMatcher(a=list(parent_lines), b=list(lines), autojunk=False)
    for tag, i1, i2, j1, j2 in sm.get_opcodes():
        if tag == "equal":
            for k in range(j2 - j1):
                if out[j1 + k] == commit:
                    out[j1 + k] = parent_writers[i1 + k]
    return out


class AttributionOracle:
    """Last-writer state for every commit reachable from HEAD."""

    def __init__(self, repo_path: str):
        self.repo_path = repo_path
        self.state: dict[str, dict[str, tuple[tuple[str, ...], tuple[str, ...]]]] = {}
        self._build()

    def _build(self):
        order = _git(self.repo_path, "rev-list", "--topo-order", "--reverse", "HEAD").split()
        for commit in order:
            parents = _parents(self.repo_path, commit)
            if not parents:
                files = _git(self.repo_path, "ls-tree", "-r", "--name-only", commit).split("\n")
                st = {}
                for path in filter(None, files):
                    lines = _content(self.repo_path, commit, path)
                    st[path] = (tuple(lines), (commit,) * len(lines))
                self.state[commit] = st
                continue
            p1 = parents[0]
            st = dict(self.state[p1])
            for code, old, new in _name_status(self.repo_path, p1, commit):
                if code == "D":
                    st.pop(old, None)
                    continue
                lines = _content(self.repo_path, commit, new)
                if old in self.state[p1] and code != "A":
                    base_lines, base_writers = self.state[p1][old]
                else:
                    base_lines, base_writers = (), ()
                if old != new:
                    st.pop(old, None)
                st[new] = (tuple(lines), tuple(_match(base_lines, base_writers, lines, commit)))
            for parent in parents[1:]:
                for path, (lines, writers) in list(st.items()):
                    if commit not in writers or path not in self.state[parent]:
                        continue
                    plines, pwriters = self.state[parent][path]
                    st[path] = (lines, tuple(_inherit(lines, writers, plines, pwriters, commit)))
            self.state[commit] = st

    def last_writer_b_szz(self, fix: str) -> set[str]:
        """Expected b_szz output: writers of the fix's pre-image lines."""
        parents = _parents(self.repo_path, fix)
        if not parents:
            raise ValueError("fix must have a parent")
        p1 = parents[0]
        writers: set[str] = set()
        for code, old, new in _name_status(self.repo_path, p1, fix):
            if code == "A" or old not in self.state[p1]:
                continue
            base_lines, base_writers = self.state[p1][old]
            new_lines = [] if code == "D" else _content(self.repo_path, fix, new)
            sm = SequenceMatcher(a=list(base_lines), b=new_lines, autojunk=False)
            for tag, i1, i2, _, _ in sm.get_opcodes():
                if tag in ("delete", "replace"):
                    writers.update(base_writers[i1:i2])
        return writers
