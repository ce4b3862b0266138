"""Greedy textual-reward search, shown with a scripted scorer.

The search accepts a rewritten reward only on strict validation improvement,
so the incumbent's score never decreases. Here the scorer is scripted to
make the accept/reject decisions visible; demo 04 runs the live pathway.

Run: python demos/03_reward_search.py
"""

from textreward.evaluation import FailureCase
from textreward.gateway import ChatGateway, GenerationParams
from textreward.reward_search import DEFAULT_INITIAL_REWARD, RewardSearch
from textreward.templating import TemplateSet

gateway = ChatGateway()
searcher = RewardSearch(
    gateway, TemplateSet.load(),
    prompt_params=GenerationParams(0.9, 256),
    answer_params=GenerationParams(0.001, 512),
    optimizer_params=GenerationParams(0.001, 512),
)

print("shipped initial reward text:")
print(f"  {DEFAULT_INITIAL_REWARD[:88]}...")

# a scripted score sequence: 0.25 incumbent, then candidates 0.30 / 0.20 / 0.30
scores = iter([0.25, 0.30, 0.20, 0.30])
failure = FailureCase("What is 4 x 4?", "Just answer.", "17", "16")
counter = {"n": 0}


def score_fn(text):
    value = next(scores)
    return value, [failure] if value < 1.0 else []


def propose_fn(text, digest):
    counter["n"] += 1
    return f"rewrite #{counter['n']} of the guidance"


result = searcher.search("the starting guidance", None, budget=3,
                         score_fn=score_fn, propose_fn=propose_fn)

print("\nsearch trace (accept only on strict improvement):")
incumbent = 0.25
for entry in result.lineage:
    verdict = "ACCEPT" if entry.accepted else "reject"
    print(f"  step {entry.iteration}: candidate scored {entry.score} "
          f"vs incumbent {incumbent} -> {verdict}")
    if entry.accepted:
        incumbent = entry.score
print(f"\nfinal: score {result.score} (started at {result.initial_score}), "
      f"text {result.text!r}")

gateway.close()
