"""Game-of-24 oracle: exhaustive solver, strict checker, instance sets.

All arithmetic is exact (fractions); the checker never compares floats.
An expression is accepted iff it parses as +,-,*,/ over parenthesized
integers, uses the four given numbers exactly once each (as a multiset),
and evaluates to exactly 24.
"""
from __future__ import annotations

import ast
import itertools
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

TARGET = Fraction(24)
MIN_NUMBER, MAX_NUMBER = 1, 13

# Unicode operator spellings accepted from model output.
_NORMALIZE = str.maketrans({"−": "-", "×": "*", "÷": "/", "⋅": "*"})


@dataclass(frozen=True)
class Game24Instance:
    numbers: tuple[int, int, int, int]
    solvable: bool
    search_nodes: int = 0  # exhaustive-search size; proxy for difficulty


def _validate_numbers(numbers) -> tuple[int, ...]:
    nums = tuple(int(n) for n in numbers)
    if len(nums) != 4:
        raise ValueError(f"expected 4 numbers, got {len(nums)}")
    for n in nums:
        if not MIN_NUMBER <= n <= MAX_NUMBER:
            raise ValueError(f"number {n} outside [{MIN_NUMBER}, {MAX_NUMBER}]")
    return nums


def _combine(a: Fraction, b: Fraction, ea: str, eb: str):
    yield a + b, f"({ea}+{eb})"
    yield a - b, f"({ea}-{eb})"
    yield b - a, f"({eb}-{ea})"
    yield a * b, f"({ea}*{eb})"
    if b != 0:
        yield a / b, f"({ea}/{eb})"
    if a != 0:
        yield b / a, f"({eb}/{ea})"


def _search(values: list[tuple[Fraction, str]], counter: list[int]) -> str | None:
    counter[0] += 1
    if len(values) == 1:
        value, expr = values[0]
        return expr[1:-1] if value == TARGET else None
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            rest = [values[k] for k in range(len(values)) if k not in (i, j)]
            (va, ea), (vb, eb) = values[i], values[j]
            for value, expr in _combine(va, vb, ea, eb):
                found = _search(rest + [(value, expr)], counter)
                if found is not None:
                    return found
    return None


def solve_24_stats(numbers) -> tuple[str | None, int]:
    """Witness expression (or None) plus the number of search nodes visited."""
    nums = _validate_numbers(numbers)
    counter = [0]
    witness = _search([(Fraction(n), str(n)) for n in nums], counter)
    return witness, counter[0]


def solve_24(numbers) -> str | None:
    """Exhaustive exact search; returns an expression equal to 24, or None."""
    return solve_24_stats(numbers)[0]


_ALLOWED_OPS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/"}


def _eval_node(node: ast.AST, leaves: list[int]) -> Fraction:
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _ALLOWED_OPS:
            raise ValueError(f"operator {type(node.op).__name__} not allowed")
        left = _eval_node(node.left, leaves)
        right = _eval_node(node.right, leaves)
        op = _ALLOWED_OPS[type(node.op)]
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if right == 0:
            raise ZeroDivisionError("division by zero")
        return left / right
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, int):
            raise ValueError(f"only integer literals allowed, got {node.value!r}")
        leaves.append(node.value)
        return Fraction(node.value)
    raise ValueError(f"disallowed syntax: {type(node).__name__}")


def check_24(numbers, expression: str) -> tuple[bool, str]:
    """Accept iff the expression uses each number once and equals 24 exactly."""
    nums = _validate_numbers(numbers)
    text = expression.translate(_NORMALIZE).strip()
    if not text:
        return False, "empty expression"
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        return False, f"parse error: {exc.msg}"
    leaves: list[int] = []
    try:
        value = _eval_node(tree.body, leaves)
    except ZeroDivisionError:
        return False, "division by zero"
    except ValueError as exc:
        return False, str(exc)
    if sorted(leaves) != sorted(nums):
        return False, f"numbers used {sorted(leaves)} != given {sorted(nums)}"
    if value != TARGET:
        return False, f"value {value} != 24"
    return True, "ok"


def task_text(numbers) -> str:
    nums = _validate_numbers(numbers)
    listing = ", ".join(str(n) for n in nums)
    return (
        f"Using the numbers {listing}, build an arithmetic expression with +, -, *, / "
        "and parentheses that evaluates to exactly 24. Each number must be used exactly once."
    )


# -- instance sets -------------------------------------------------------


def enumerate_instances() -> list[Game24Instance]:
    """All 1820 multisets of four numbers in [1, 13], solved exhaustively."""
    out = []
    for combo in itertools.combinations_with_replacement(range(MIN_NUMBER, MAX_NUMBER + 1), 4):
        witness, nodes = solve_24_stats(combo)
        out.append(Game24Instance(numbers=combo, solvable=witness is not None, search_nodes=nodes))
    return out


def difficulty_split(instances: list[Game24Instance], holdout: float = 0.1):
    """Split solvable instances; the hardest decile (by search size) is held out."""
    solvable = sorted((i for i in instances if i.solvable), key=lambda i: (i.search_nodes, i.numbers))
    cut = int(round(len(solvable) * (1.0 - holdout)))
    return solvable[:cut], solvable[cut:]


def write_puzzle_file(path, instances: list[Game24Instance]) -> None:
    lines = ["a,b,c,d,solvable"]
    for inst in instances:
        lines.append(",".join(str(n) for n in inst.numbers) + f",{int(inst.solvable)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_puzzle_file(path) -> list[Game24Instance]:
    rows = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not rows or rows[0].strip() != "a,b,c,d,solvable":
        raise ValueError("puzzle file must start with header 'a,b,c,d,solvable'")
    out = []
    for line in rows[1:]:
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 5:
            raise ValueError(f"malformed puzzle row: {line!r}")
        numbers = _validate_numbers(parts[:4])
        out.append(Game24Instance(numbers=numbers, solvable=bool(int(parts[4]))))
    return out


# -- fuzzing -------------------------------------------------------------

_SHAPES = (
    "(({a}{o1}{b}){o2}{c}){o3}{d}",
    "({a}{o1}({b}{o2}{c})){o3}{d}",
    "{a}{o1}(({b}{o2}{c}){o3}{d})",
    "{a}{o1}({b}{o2}({c}{o3}{d}))",
    "({a}{o1}{b}){o2}({c}{o3}{d})",
)

_OPS = ("+", "-", "*", "/")


def random_expression(numbers, rng: np.random.Generator) -> str:
    """Random well-formed candidate over the given numbers (fuzzer input)."""
    nums = list(_validate_numbers(numbers))
    order = rng.permutation(4)
    a, b, c, d = (nums[i] for i in order)
    o1, o2, o3 = (str(_OPS[i]) for i in rng.integers(0, len(_OPS), size=3))
    shape = _SHAPES[int(rng.integers(len(_SHAPES)))]
    return shape.format(a=a, b=b, c=c, d=d, o1=o1, o2=o2, o3=o3)
