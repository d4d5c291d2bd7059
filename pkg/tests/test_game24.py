"""Game-of-24 solver and checker: exact arithmetic, duality, file formats."""
from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from metareason.game24 import (
    check_24,
    difficulty_split,
    enumerate_instances,
    load_puzzle_file,
    random_expression,
    solve_24,
    solve_24_stats,
    task_text,
    write_puzzle_file,
)


class TestSolver:
    def test_known_solvable(self):
        witness = solve_24((4, 9, 10, 13))
        assert witness is not None
        ok, diag = check_24((4, 9, 10, 13), witness)
        assert ok, diag

    def test_all_ones_unsolvable(self):
        assert solve_24((1, 1, 1, 1)) is None

    def test_all_sixes(self):
        witness = solve_24((6, 6, 6, 6))
        assert witness is not None
        assert check_24((6, 6, 6, 6), witness)[0]

    def test_fraction_only_solution(self):
        # classic instance whose only solutions pass through 8/3
        witness = solve_24((3, 3, 8, 8))
        assert witness is not None
        assert check_24((3, 3, 8, 8), witness)[0]

    def test_deterministic_witness(self):
        assert solve_24((2, 3, 5, 12)) == solve_24((2, 3, 5, 12))

    def test_stats_counts_nodes(self):
        _, nodes = solve_24_stats((1, 1, 1, 1))
        assert nodes > 100  # exhausted the whole tree

    def test_range_validation(self):
        with pytest.raises(ValueError):
            solve_24((0, 5, 5, 5))
        with pytest.raises(ValueError):
            solve_24((1, 2, 3))


class TestChecker:
    def test_simple_sum(self):
        assert check_24((6, 6, 6, 6), "6+6+6+6") == (True, "ok")

    def test_unicode_operators(self):
        ok, diag = check_24((4, 9, 10, 13), "(13−9)×(10−4)")
        assert ok, diag

    def test_wrong_value_diagnostic(self):
        ok, diag = check_24((4, 9, 10, 13), "4*9-10-13")
        assert not ok
        assert diag == "value 13 != 24"

    def test_multiset_mismatch(self):
        ok, diag = check_24((4, 9, 10, 13), "6*4*(10-9)")
        assert not ok
        assert "numbers used" in diag

    def test_number_reuse_rejected(self):
        ok, diag = check_24((4, 9, 10, 13), "4*4+4+4")
        assert not ok

    def test_parse_failure(self):
        ok, diag = check_24((4, 9, 10, 13), "4 ** 9 --")
        assert not ok
        assert "parse error" in diag

    def test_unary_minus_rejected(self):
        ok, diag = check_24((4, 9, 10, 13), "-4+9+10+13")
        assert not ok

    def test_float_literal_rejected(self):
        ok, diag = check_24((4, 9, 10, 13), "4.0*9-10-13")
        assert not ok

    def test_division_by_zero(self):
        ok, diag = check_24((5, 5, 5, 5), "5/(5-5)+5")
        assert not ok
        assert diag == "division by zero"

    def test_exact_rational_division(self):
        # 8/(3-8/3) = 24: float arithmetic would wobble, fractions must not
        assert check_24((3, 3, 8, 8), "8/(3-8/3)")[0]

    def test_power_operator_rejected(self):
        ok, _ = check_24((2, 2, 2, 3), "2**2*2*3")
        assert not ok


class TestDuality:
    def test_sample_of_instances(self):
        rng = np.random.default_rng(5)
        combos = [tuple(sorted(rng.integers(1, 14, size=4))) for _ in range(40)]
        for numbers in combos:
            witness, _ = solve_24_stats(numbers)
            if witness is not None:
                assert check_24(numbers, witness)[0]
            else:
                for _ in range(300):
                    expr = random_expression(numbers, rng)
                    assert not check_24(numbers, expr)[0]

    def test_random_expression_always_parses(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            expr = random_expression((1, 5, 7, 13), rng)
            ok, diag = check_24((1, 5, 7, 13), expr)
            assert "parse error" not in diag


class TestInstanceFiles:
    def test_puzzle_file_round_trip(self, tmp_path):
        instances = [i for i in (enumerate_instances_cached())][:25]
        path = tmp_path / "puzzles.csv"
        write_puzzle_file(path, instances)
        loaded = load_puzzle_file(path)
        assert [(i.numbers, i.solvable) for i in loaded] == [
            (i.numbers, i.solvable) for i in instances
        ]

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y\n1,2\n")
        with pytest.raises(ValueError):
            load_puzzle_file(path)

    def test_difficulty_split_holds_out_hardest_decile(self):
        instances = enumerate_instances_cached()
        train, held_out = difficulty_split(instances, holdout=0.1)
        solvable = sum(1 for i in instances if i.solvable)
        assert len(train) + len(held_out) == solvable
        assert len(held_out) == solvable - int(round(solvable * 0.9))
        assert max(i.search_nodes for i in train) <= min(i.search_nodes for i in held_out)

    def test_task_text_mentions_numbers(self):
        text = task_text((4, 9, 10, 13))
        for n in (4, 9, 10, 13):
            assert str(n) in text


_CACHE: list = []


def enumerate_instances_cached():
    if not _CACHE:
        _CACHE.extend(enumerate_instances())
    return list(_CACHE)
