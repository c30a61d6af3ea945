"""Blame baselines against hand fixtures and the brute-force oracle."""

import pytest

from oracle import AttributionOracle
from repo_helpers import RepoBuilder, generate_random_repo

from bictrace.gitio import RepoHandle
from bictrace.szz import b_szz, blame_candidates, l_szz, r_szz


@pytest.fixture
def three_commit_repo(tmp_path):
    """c1 seeds, c2 introduces a line, c3 (fix) deletes exactly that line."""
    rb = RepoBuilder(tmp_path / "three")
    c1 = rb.commit({"m.c": "keep one\nkeep two\nkeep three\n"}, "seed")
    c2 = rb.commit({"m.c": "keep one\nbuggy line\nkeep two\nkeep three\n"}, "introduce")
    c3 = rb.commit({"m.c": "keep one\nkeep two\nkeep three\n"}, "fix: drop buggy line")
    return rb, [c1, c2, c3]


class TestBSzz:
    def test_single_introducer(self, three_commit_repo):
        rb, shas = three_commit_repo
        assert b_szz(RepoHandle(rb.path), shas[2]) == {shas[1]}

    def test_addition_only_fix_empty(self, ghost_repo):
        rb, info = ghost_repo
        assert b_szz(RepoHandle(rb.path), info["fix"]) == set()

    def test_two_introducers_match_oracle(self, tmp_path):
        rb = RepoBuilder(tmp_path / "two")
        c1 = rb.commit({"m.c": "alpha original\nbeta original\ngamma original\n"}, "seed")
        c2 = rb.commit({"m.c": "alpha changed\nbeta original\ngamma original\n"}, "change alpha")
        c3 = rb.commit({"m.c": "alpha changed\nbeta changed\ngamma original\n"}, "change beta")
        fix = rb.commit({"m.c": "alpha fixed\nbeta fixed\ngamma original\n"}, "fix both")
        repo = RepoHandle(rb.path)
        got = b_szz(repo, fix)
        oracle = AttributionOracle(rb.path)
        assert got == oracle.last_writer_b_szz(fix) == {c2, c3}
        assert c1 not in got


class TestSelectors:
    def test_r_szz_picks_latest(self, tmp_path):
        rb = RepoBuilder(tmp_path / "rsel")
        rb.commit({"m.c": "one v1\ntwo v1\n"}, "seed")
        early = rb.commit({"m.c": "one v2\ntwo v1\n"}, "early change")
        late = rb.commit({"m.c": "one v2\ntwo v2\n"}, "late change")
        fix = rb.commit({"m.c": "one v3\ntwo v3\n"}, "fix both lines")
        repo = RepoHandle(rb.path)
        assert b_szz(repo, fix) == {early, late}
        assert r_szz(repo, fix) == late

    def test_l_szz_picks_most_lines(self, tmp_path):
        rb = RepoBuilder(tmp_path / "lsel")
        rb.commit({"m.c": "a v1\nb v1\nc v1\nd v1\ne v1\nf v1\ng v1\n"}, "seed")
        big = rb.commit({"m.c": "a v2\nb v2\nc v2\nd v2\ne v2\nf v1\ng v1\n"}, "touch five")
        small = rb.commit({"m.c": "a v2\nb v2\nc v2\nd v2\ne v2\nf v2\ng v2\n"}, "touch two")
        fix = rb.commit(
            {"m.c": "a v3\nb v3\nc v3\nd v3\ne v3\nf v3\ng v3\n"}, "rewrite all"
        )
        repo = RepoHandle(rb.path)
        per_commit = {}
        for cand in blame_candidates(repo, fix):
            per_commit[cand.commit] = per_commit.get(cand.commit, 0) + cand.lines_attributed
        assert per_commit == {big: 5, small: 2}
        assert l_szz(repo, fix) == big

    def test_ghost_fix_yields_none(self, ghost_repo):
        rb, info = ghost_repo
        repo = RepoHandle(rb.path)
        assert r_szz(repo, info["fix"]) is None
        assert l_szz(repo, info["fix"]) is None

    def test_selectors_within_b_szz(self, three_commit_repo):
        rb, shas = three_commit_repo
        repo = RepoHandle(rb.path)
        full = b_szz(repo, shas[2])
        assert r_szz(repo, shas[2]) in full
        assert l_szz(repo, shas[2]) in full

    def test_timestamp_tie_breaks_to_smallest_id(self, tmp_path):
        rb = RepoBuilder(tmp_path / "tie")
        shared = 1600000000
        rb.commit({"m.c": "p v1\nq v1\n"}, "seed", date=shared - 86400)
        t1 = rb.commit({"m.c": "p v2\nq v1\n"}, "first same-time", date=shared)
        t2 = rb.commit({"m.c": "p v2\nq v2\n"}, "second same-time", date=shared)
        fix = rb.commit({"m.c": "p v3\nq v3\n"}, "fix", date=shared + 86400)
        repo = RepoHandle(rb.path)
        assert b_szz(repo, fix) == {t1, t2}
        assert r_szz(repo, fix) == min(t1, t2)

    def test_line_count_tie_breaks_to_smallest_id(self, tmp_path):
        rb = RepoBuilder(tmp_path / "ltie")
        rb.commit({"m.c": "u v1\nv v1\n"}, "seed")
        a = rb.commit({"m.c": "u v2\nv v1\n"}, "one line each A")
        b = rb.commit({"m.c": "u v2\nv v2\n"}, "one line each B")
        fix = rb.commit({"m.c": "u v3\nv v3\n"}, "fix")
        repo = RepoHandle(rb.path)
        assert l_szz(repo, fix) == min(a, b)


class TestRenames:
    def test_blame_traces_through_rename(self, tmp_path):
        rb = RepoBuilder(tmp_path / "ren")
        origin = rb.commit({"old.c": "stable line\nbuggy line v1\n"}, "seed old.c")
        rb.move("old.c", "lib/new.c", "move into lib/")
        fix = rb.commit({"lib/new.c": "stable line\n"}, "fix: drop buggy line")
        repo = RepoHandle(rb.path)
        assert b_szz(repo, fix) == {origin}


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(4))
    def test_random_history_agreement(self, tmp_path, seed):
        rb, commits = generate_random_repo(tmp_path / f"rand{seed}", seed=seed * 101 + 7)
        repo = RepoHandle(rb.path)
        oracle = AttributionOracle(rb.path)
        fixes = [c for c in commits[1:]][-6:]
        for fix in fixes:
            assert b_szz(repo, fix) == oracle.last_writer_b_szz(fix), (seed, fix)
