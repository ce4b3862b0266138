"""Accuracy evaluation of (prompt model, optimal reward) pairs and baselines.

The single eval pass here is shared with reward search: per question, obtain
a prompt (either generated by the prompt model conditioned on the reward
text, or a fixed baseline prompt), answer with the target model, grade.
Outcomes are ordered by question id so reports are deterministic regardless
of completion order; gateway failures skip individual questions up to a
threshold, beyond which the pass errors out.

Baseline modes: ``cot`` (the fixed step-by-step prompt) and ``no_prompt``
(bare question). The full-pipeline mode is tagged ``optimized``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .corpus import QuestionSet
from .gateway import ChatGateway, GatewayError, GenerationParams, ModelRole
from .grading import EvalOutcome, accuracy, judge_completion
from .hashing import text_digest
from .templating import TemplateSet

COT_PROMPT = "Let's think step by step."

MODES = ("optimized", "cot", "no_prompt")


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FailureCase:
    question: str
    prompt: str
    wrong_answer: str
    gold: str


@dataclass
class EvalPass:
    outcomes: list[EvalOutcome]
    failures: list[FailureCase]
    skipped: list[tuple[str, str]]  # (question_id, reason)


def run_eval_pass(gateway: ChatGateway, templates: TemplateSet, qset: QuestionSet,
                  *, answer_params: GenerationParams,
                  t_star: Optional[str] = None,
                  prompt_params: Optional[GenerationParams] = None,
                  fixed_prompt: str = "",
                  max_workers: int = 16,
                  skip_threshold: float = 0.05) -> EvalPass:
    """One grading pass over a question set; see module docstring."""
    if not qset.records:
        raise EvaluationError("cannot evaluate an empty question set")
    if t_star is not None and not t_star:
        raise EvaluationError("reward text must be nonempty")
    kind = qset.kind.value

    def _one(record):
        try:
            if t_star is not None:
                msgs = templates.render_prompt_generation(record.text, t_star)
                prompt = gateway.complete(ModelRole.PROMPT_MODEL, msgs, prompt_params).strip()
            else:
                prompt = fixed_prompt
            answer_msgs = templates.render_answering(record.text, prompt)
            completion = gateway.complete(ModelRole.TARGET_MODEL, answer_msgs, answer_params)
        except GatewayError as exc:
            return record.id, None, str(exc)
        outcome = judge_completion(record.id, completion, record.gold, kind)
        failure = None
        if outcome.grade == 0:
            wrong = outcome.predicted.canonical if outcome.predicted else "(no parseable answer)"
            failure = FailureCase(record.text, prompt, wrong, record.gold.canonical)
        return record.id, (outcome, failure), None

    results = {}
    skipped = []
    workers = max(1, min(len(qset.records), max_workers))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for rid, payload, err in pool.map(_one, qset.records):
            if err is not None:
                skipped.append((rid, err))
            else:
                results[rid] = payload
    if len(skipped) / len(qset.records) > skip_threshold:
        raise EvaluationError(
            f"{len(skipped)}/{len(qset.records)} questions skipped, above the "
            f"{skip_threshold:.0%} threshold")
    outcomes, failures = [], []
    for record in sorted(qset.records, key=lambda r: r.id):
        if record.id not in results:
            continue
        outcome, failure = results[record.id]
        outcomes.append(outcome)
        if failure is not None:
            failures.append(failure)
    if not outcomes:
        raise EvaluationError("every question was skipped")
    return EvalPass(outcomes=outcomes, failures=failures, skipped=sorted(skipped))


@dataclass
class EvalReport:
    kind: str
    split: str
    prompt_model_id: str
    t_star_digest: str
    mode: str
    accuracy: float
    outcomes: list[EvalOutcome]
    config_digest: str = ""
    trained_on: Optional[str] = None
    tested_on: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise EvaluationError(f"unknown mode {self.mode!r}")
        recomputed = accuracy(self.outcomes)
        if abs(recomputed - self.accuracy) > 1e-12:
            raise EvaluationError("report accuracy does not match its outcomes")

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "split": self.split,
            "prompt_model_id": self.prompt_model_id,
            "t_star_digest": self.t_star_digest,
            "mode": self.mode,
            "accuracy": self.accuracy,
            "outcomes": [
                {"question_id": o.question_id,
                 "predicted": o.predicted.canonical if o.predicted else None,
                 "grade": o.grade}
                for o in self.outcomes
            ],
            "config_digest": self.config_digest,
            "trained_on": self.trained_on,
            "tested_on": self.tested_on,
        }


class Evaluator:
    def __init__(self, gateway: ChatGateway, templates: TemplateSet,
                 prompt_params: GenerationParams, answer_params: GenerationParams,
                 deterministic_eval: bool = False, max_workers: int = 16,
                 skip_threshold: float = 0.05, config_digest: str = ""):
        self.gateway = gateway
        self.templates = templates
        self.answer_params = answer_params
        self.deterministic_eval = deterministic_eval
        self.prompt_params = (
            GenerationParams(temperature=0.001, max_tokens=prompt_params.max_tokens,
                             stop=prompt_params.stop)
            if deterministic_eval else prompt_params)
        self.max_workers = max_workers
        self.skip_threshold = skip_threshold
        self.config_digest = config_digest

    def _report(self, qset: QuestionSet, ev: EvalPass, mode: str, prompt_model_id: str,
                t_star: str, trained_on=None, tested_on=None) -> EvalReport:
        return EvalReport(
            kind=qset.kind.value, split=qset.split,
            prompt_model_id=prompt_model_id,
            t_star_digest=text_digest(t_star) if t_star else "",
            mode=mode, accuracy=accuracy(ev.outcomes), outcomes=ev.outcomes,
            config_digest=self.config_digest,
            trained_on=trained_on, tested_on=tested_on)

    def evaluate(self, prompt_model_id: str, t_star: str, qset: QuestionSet) -> EvalReport:
        """Full-pipeline evaluation: per-question generated prompts conditioned on t_star."""
        ev = run_eval_pass(self.gateway, self.templates, qset,
                           answer_params=self.answer_params, t_star=t_star,
                           prompt_params=self.prompt_params,
                           max_workers=self.max_workers,
                           skip_threshold=self.skip_threshold)
        return self._report(qset, ev, "optimized", prompt_model_id, t_star)

    def baseline_cot(self, qset: QuestionSet) -> EvalReport:
        ev = run_eval_pass(self.gateway, self.templates, qset,
                           answer_params=self.answer_params, fixed_prompt=COT_PROMPT,
                           max_workers=self.max_workers,
                           skip_threshold=self.skip_threshold)
        return self._report(qset, ev, "cot", "none", "")

    def baseline_no_prompt(self, qset: QuestionSet) -> EvalReport:
        ev = run_eval_pass(self.gateway, self.templates, qset,
                           answer_params=self.answer_params, fixed_prompt="",
                           max_workers=self.max_workers,
                           skip_threshold=self.skip_threshold)
        return self._report(qset, ev, "no_prompt", "none", "")

    def cross_evaluate(self, prompt_model_id: str, t_star: str, qset: QuestionSet,
                       trained_on: str, tested_on: str) -> EvalReport:
        """Same pathway as evaluate, tagged with the train/test dataset pair."""
        if trained_on == tested_on:
            raise EvaluationError("cross evaluation requires different datasets")
        ev = run_eval_pass(self.gateway, self.templates, qset,
                           answer_params=self.answer_params, t_star=t_star,
                           prompt_params=self.prompt_params,
                           max_workers=self.max_workers,
                           skip_threshold=self.skip_threshold)
        return self._report(qset, ev, "optimized", prompt_model_id, t_star,
                            trained_on=trained_on, tested_on=tested_on)


@dataclass
class GainSeries:
    entries: list[dict] = field(default_factory=list)  # {index, accuracy, delta_points}

    def as_dict(self) -> dict:
        return {"entries": self.entries}


def gains(reports: list[EvalReport]) -> GainSeries:
    """Per-report accuracy deltas, in percentage points, against the first report."""
    if not reports:
        raise EvaluationError("gains require at least one report")
    kinds = {(r.kind, r.split) for r in reports}
    if len(kinds) > 1:
        raise EvaluationError(f"mixed dataset/split in gains input: {sorted(kinds)}")
    base = reports[0].accuracy
    series = GainSeries()
    for i, report in enumerate(reports):
        series.entries.append({
            "index": i,
            "accuracy": report.accuracy,
            "delta_points": round((report.accuracy - base) * 100, 10),
        })
    return series


def summary_table(rows: list[tuple[str, str, float]]) -> str:
    """Plain-text method x dataset x accuracy table."""
    header = ("method", "dataset", "accuracy")
    widths = [max(len(header[0]), *(len(r[0]) for r in rows)) if rows else len(header[0]),
              max(len(header[1]), *(len(r[1]) for r in rows)) if rows else len(header[1]),
              len("accuracy")]
    lines = [
        f"{header[0]:<{widths[0]}}  {header[1]:<{widths[1]}}  {header[2]}",
        f"{'-' * widths[0]}  {'-' * widths[1]}  {'-' * widths[2]}",
    ]
    for method, dataset, acc in rows:
        lines.append(f"{method:<{widths[0]}}  {dataset:<{widths[1]}}  {acc * 100:6.2f}%")
    return "\n".join(lines)
