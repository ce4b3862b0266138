"""Answer extraction, canonicalization, and grading, end to end.

Run: python demos/01_grading.py
"""

from textreward.grading import (
    accuracy,
    extract_final_answer,
    grade,
    judge_completion,
    make_answer,
    normalize_answer,
)

print("== numeric extraction ==")
for completion in [
    "She makes 9 * 2 = $18 every day. The answer is 18.",
    "Adding it up gives us a final answer: 1,234.50 meters",
    "First I get 12, then 30, and finally 42",
]:
    answer = extract_final_answer(completion, "gsm8k")
    print(f"  {completion!r}")
    print(f"    -> token {answer.raw!r}, canonical {answer.canonical!r}")

print("\n== normalization is canonical and idempotent ==")
for raw in ["$1,234.50", "0.500", "+7", "3/6"]:
    canonical = normalize_answer(raw, "gsm8k")
    print(f"  {raw!r} -> {canonical!r} -> {normalize_answer(canonical, 'gsm8k')!r}")

print("\n== LaTeX expression cleanup ==")
for raw in [r"\boxed{\frac{1}{2}}", r"\left( 3, 4 \right)", r"90^{\circ}", r"5\text{ cm}"]:
    print(f"  {raw!r} -> {normalize_answer(raw, 'math')!r}")

print("\n== the binary metric ==")
pairs = [("18", "18.0"), ("18", "17"), ("1/2", "0.5")]
for left, right in pairs:
    result = grade(make_answer(left, "gsm8k"), make_answer(right, "gsm8k"))
    print(f"  grade({left!r}, {right!r}) = {result}")

print("\n== grading a batch of completions ==")
gold = make_answer("72", "gsm8k")
completions = [
    "9 rows of 8 gives 72. The answer is 72.",
    "I think the answer is 70.",
    "I cannot solve this one.",
    "#### 72",
]
outcomes = [judge_completion(f"q{i}", c, gold, "gsm8k") for i, c in enumerate(completions)]
for outcome, completion in zip(outcomes, completions):
    print(f"  grade {outcome.grade}  <- {completion!r}")
print(f"  accuracy: {accuracy(outcomes):.2f}")
