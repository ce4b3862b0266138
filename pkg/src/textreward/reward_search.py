"""Greedy search over the textual-reward space (pipeline step 3).

The incumbent reward is scored once on the validation split; each search step
collects a capped digest of failure cases from the incumbent's most recent
scoring, asks the optimizer model for a critique (the textual gradient) and a
rewrite, scores the candidate on the same validation questions, and accepts
only on strict improvement. Ties and losses keep the incumbent, so the
recorded score is nondecreasing and the result can never be worse than the
starting reward under a fixed evaluation configuration.

The scoring and proposal callables are injectable, which is how the property
tests drive the loop with scripted score sequences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .corpus import QuestionSet
from .evaluation import EvaluationError, FailureCase, run_eval_pass
from .gateway import ChatGateway, GatewayError, GenerationParams, ModelRole
from .grading import accuracy
from .hashing import text_digest
from .templating import TemplateSet

DEFAULT_INITIAL_REWARD = (
    "The prompt guided the solver to a fully correct, clearly reasoned answer. "
    "It restated exactly what the question asks for, kept the intermediate steps "
    "organized, and made the solver finish with a single unambiguous final answer "
    "that matches the ground truth."
)


class RewardSearchError(RuntimeError):
    pass


@dataclass
class FailureDigest:
    cases: list[FailureCase] = field(default_factory=list)

    def render(self) -> str:
        blocks = []
        for i, case in enumerate(self.cases, 1):
            blocks.append(
                f"Case {i}:\n"
                f"Question: {case.question}\n"
                f"Prompt: {case.prompt}\n"
                f"Solver's wrong answer: {case.wrong_answer}\n"
                f"Ground truth: {case.gold}"
            )
        return "\n\n".join(blocks)


@dataclass(frozen=True)
class LineageEntry:
    iteration: int
    accepted: bool
    candidate_digest: str
    score: Optional[float]

    def as_dict(self) -> dict:
        return {"iteration": self.iteration, "accepted": self.accepted,
                "candidate_digest": self.candidate_digest, "score": self.score}


@dataclass
class OptimalReward:
    text: str
    score: float
    lineage: list[LineageEntry] = field(default_factory=list)
    aborted: bool = False
    abort_reason: Optional[str] = None
    initial_score: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "text": self.text,
            "digest": text_digest(self.text),
            "score": self.score,
            "initial_score": self.initial_score,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "lineage": [entry.as_dict() for entry in self.lineage],
        }


class RewardSearch:
    def __init__(self, gateway: ChatGateway, templates: TemplateSet,
                 prompt_params: GenerationParams, answer_params: GenerationParams,
                 optimizer_params: GenerationParams,
                 failure_digest_size: int = 16,
                 deterministic_eval: bool = False,
                 max_workers: int = 16, skip_threshold: float = 0.05):
        self.gateway = gateway
        self.templates = templates
        self.answer_params = answer_params
        self.optimizer_params = optimizer_params
        self.deterministic_eval = deterministic_eval
        self.prompt_params = (
            GenerationParams(temperature=0.001, max_tokens=prompt_params.max_tokens,
                             stop=prompt_params.stop)
            if deterministic_eval else prompt_params)
        self.failure_digest_size = failure_digest_size
        self.max_workers = max_workers
        self.skip_threshold = skip_threshold

    def score_reward(self, t: str, val: QuestionSet) -> tuple[float, list[FailureCase]]:
        """Validation accuracy of prompts conditioned on t; failures retained."""
        if not t:
            raise RewardSearchError("cannot score an empty reward text")
        ev = run_eval_pass(self.gateway, self.templates, val,
                           answer_params=self.answer_params, t_star=t,
                           prompt_params=self.prompt_params,
                           max_workers=self.max_workers,
                           skip_threshold=self.skip_threshold)
        return accuracy(ev.outcomes), ev.failures

    def propose_candidate(self, t: str, digest: FailureDigest) -> str:
        """Two optimizer calls: critique the incumbent, then rewrite it."""
        if not digest.cases:
            return t
        critique_msgs = self.templates.render_reward_critique(t, digest.render())
        critique = self.gateway.complete(ModelRole.OPTIMIZER_MODEL, critique_msgs,
                                         self.optimizer_params).strip()
        if not critique:
            critique = "(the optimizer returned no critique)"
        for _ in range(2):
            rewrite_msgs = self.templates.render_reward_rewrite(t, critique)
            rewritten = self.gateway.complete(ModelRole.OPTIMIZER_MODEL, rewrite_msgs,
                                              self.optimizer_params).strip()
            if rewritten:
                return rewritten
        raise RewardSearchError("optimizer produced an empty rewrite twice")

    def search(self, t0: str, val: Optional[QuestionSet], budget: int = 10,
               score_fn: Optional[Callable] = None,
               propose_fn: Optional[Callable] = None,
               trace_path=None) -> OptimalReward:
        """Greedy hill-climb; accepts a candidate only on strict improvement.

        score_fn(text) -> (score, failures) and propose_fn(text, digest) ->
        text default to the live pathways and are injectable for tests.
        """
        if budget < 1:
            raise RewardSearchError("search budget must be >= 1")
        if not t0:
            raise RewardSearchError("initial reward text must be nonempty")
        score_fn = score_fn or (lambda t: self.score_reward(t, val))
        propose_fn = propose_fn or self.propose_candidate

        trace_fh = Path(trace_path).open("w", encoding="utf-8") if trace_path else None

        def trace(entry: LineageEntry) -> None:
            if trace_fh is not None:
                trace_fh.write(json.dumps(entry.as_dict(), sort_keys=True) + "\n")
                trace_fh.flush()

        lineage: list[LineageEntry] = []
        try:
            incumbent, (inc_score, failures) = t0, score_fn(t0)
            initial_score = inc_score
            for iteration in range(1, budget + 1):
                digest = FailureDigest(list(failures[: self.failure_digest_size]))
                if not digest.cases:
                    break
                try:
                    candidate = propose_fn(incumbent, digest)
                except (GatewayError, EvaluationError) as exc:
                    return self._aborted(incumbent, inc_score, initial_score, lineage, exc)
                if candidate == incumbent:
                    entry = LineageEntry(iteration, False, text_digest(candidate), None)
                    lineage.append(entry)
                    trace(entry)
                    continue
                try:
                    cand_score, cand_failures = score_fn(candidate)
                except (GatewayError, EvaluationError) as exc:
                    return self._aborted(incumbent, inc_score, initial_score, lineage, exc)
                accepted = cand_score > inc_score
                entry = LineageEntry(iteration, accepted, text_digest(candidate), cand_score)
                lineage.append(entry)
                trace(entry)
                if accepted:
                    incumbent, inc_score, failures = candidate, cand_score, cand_failures
            return OptimalReward(incumbent, inc_score, lineage, aborted=False,
                                 initial_score=initial_score)
        except (GatewayError, EvaluationError) as exc:
            raise RewardSearchError(f"initial scoring failed: {exc}") from exc
        finally:
            if trace_fh is not None:
                trace_fh.close()

    @staticmethod
    def _aborted(incumbent, score, initial_score, lineage, exc) -> OptimalReward:
        return OptimalReward(incumbent, score, lineage, aborted=True,
                             abort_reason=str(exc), initial_score=initial_score)
