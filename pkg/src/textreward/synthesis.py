"""Synthetic training-data construction (pipeline step 1).

For each sampled question the three-call chain runs: the prompt model writes
a query-specific prompt conditioned on the current optimal reward (sampling
temperature), the target model answers the question with that prompt appended
(near-greedy), the answer is graded, and the reward model critiques the
prompt given the answer and the ground truth (near-greedy). A failed call
skips the sample with a recorded reason — samples are never fabricated — and
a skip fraction above the configured threshold rejects the whole dataset.

Every sample carries provenance sufficient to re-render the exact reward
request that produced its textual reward; digest equality over that render is
the provenance-chain invariant checked by the acceptance suite.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .corpus import QuestionRecord
from .gateway import ChatGateway, GatewayError, GenerationParams, ModelRole
from .grading import Answer, grade as grade_answers, ExtractionError, extract_final_answer
from .hashing import file_digest, json_digest, text_digest
from .templating import TASK_NAMES, TemplateSet, UNPARSEABLE_ANSWER_NOTICE, messages_digest


class SynthesisError(RuntimeError):
    pass


class SampleSkipped(RuntimeError):
    def __init__(self, stage: str, reason: str):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason


@dataclass(frozen=True)
class TextualReward:
    text: str
    polarity_hint: int  # grade of the underlying answer


@dataclass(frozen=True)
class SampleProvenance:
    iteration: int
    prompt_model_id: str
    t_star_digest: str
    params_digest: str
    reward_request_digest: str
    task: str


@dataclass(frozen=True)
class TrainingSample:
    question_id: str
    question_text: str
    gold_canonical: str
    prompt: str
    target_answer_text: str
    extracted: Optional[Answer]
    grade: int
    reward: TextualReward
    provenance: SampleProvenance


@dataclass(frozen=True)
class SkipRecord:
    question_id: str
    stage: str
    reason: str


@dataclass
class SyntheticDataset:
    iteration: int
    samples: list[TrainingSample]
    skipped: list[SkipRecord] = field(default_factory=list)

    @property
    def stats(self) -> dict:
        count = len(self.samples)
        positive = sum(s.grade for s in self.samples)
        return {
            "count": count,
            "positive_fraction": positive / count if count else 0.0,
        }


def reward_request_sections(sample_fields: dict) -> dict:
    """The exact slot values the reward request was rendered from.

    ``sample_fields`` needs question_text, prompt, target_answer_text,
    gold_canonical, the task name, and whether extraction succeeded.
    """
    model_answer = sample_fields["target_answer_text"]
    if not sample_fields["extraction_ok"]:
        model_answer = model_answer + "\n\n" + UNPARSEABLE_ANSWER_NOTICE
    return {
        "prompt": sample_fields["prompt"],
        "question": sample_fields["question_text"],
        "model_answer": model_answer,
        "gold": sample_fields["gold_canonical"],
        "task": sample_fields["task"],
    }


class Synthesizer:
    def __init__(self, gateway: ChatGateway, templates: TemplateSet, kind: str,
                 prompt_params: GenerationParams, answer_params: GenerationParams,
                 reward_params: GenerationParams, prompt_model_id: str = "base",
                 skip_threshold: float = 0.05, max_workers: int = 16,
                 rebalance_max_positive: Optional[float] = None,
                 rebalance_seed: int = 0):
        self.gateway = gateway
        self.templates = templates
        self.kind = str(getattr(kind, "value", kind))
        self.task = TASK_NAMES.get(self.kind, "mathematical reasoning problems")
        self.prompt_params = prompt_params
        self.answer_params = answer_params
        self.reward_params = reward_params
        self.prompt_model_id = prompt_model_id
        self.skip_threshold = skip_threshold
        self.max_workers = max_workers
        self.rebalance_max_positive = rebalance_max_positive
        self.rebalance_seed = rebalance_seed

    def _params_digest(self) -> str:
        return json_digest({
            "prompt": [self.prompt_params.temperature, self.prompt_params.max_tokens],
            "answer": [self.answer_params.temperature, self.answer_params.max_tokens],
            "reward": [self.reward_params.temperature, self.reward_params.max_tokens],
        })

    def synthesize_one(self, q: QuestionRecord, t_star: str, iteration: int) -> TrainingSample:
        """Run the prompt -> answer -> reward chain for one question."""
        if not t_star:
            raise SynthesisError("optimal reward text must be nonempty")
        try:
            prompt_msgs = self.templates.render_prompt_generation(q.text, t_star)
            prompt = self.gateway.complete(ModelRole.PROMPT_MODEL, prompt_msgs,
                                           self.prompt_params).strip()
        except GatewayError as exc:
            raise SampleSkipped("prompt_generation", str(exc)) from exc
        if not prompt:
            raise SampleSkipped("prompt_generation", "empty prompt")
        try:
            answer_msgs = self.templates.render_answering(q.text, prompt)
            completion = self.gateway.complete(ModelRole.TARGET_MODEL, answer_msgs,
                                               self.answer_params)
        except GatewayError as exc:
            raise SampleSkipped("answering", str(exc)) from exc
        try:
            extracted: Optional[Answer] = extract_final_answer(completion, self.kind)
            sample_grade = grade_answers(extracted, q.gold)
        except ExtractionError:
            extracted, sample_grade = None, 0
        sections = reward_request_sections({
            "question_text": q.text,
            "prompt": prompt,
            "target_answer_text": completion,
            "gold_canonical": q.gold.canonical,
            "task": self.task,
            "extraction_ok": extracted is not None,
        })
        reward_msgs = self.templates.render_reward_generation(
            sections["prompt"], sections["question"], sections["model_answer"],
            sections["gold"], task=sections["task"])
        try:
            reward_text = self.gateway.complete(ModelRole.REWARD_MODEL, reward_msgs,
                                                self.reward_params).strip()
        except GatewayError as exc:
            raise SampleSkipped("reward", str(exc)) from exc
        if not reward_text:
            raise SampleSkipped("reward", "empty reward")
        return TrainingSample(
            question_id=q.id,
            question_text=q.text,
            gold_canonical=q.gold.canonical,
            prompt=prompt,
            target_answer_text=completion,
            extracted=extracted,
            grade=sample_grade,
            reward=TextualReward(reward_text, sample_grade),
            provenance=SampleProvenance(
                iteration=iteration,
                prompt_model_id=self.prompt_model_id,
                t_star_digest=text_digest(t_star),
                params_digest=self._params_digest(),
                reward_request_digest=messages_digest(reward_msgs),
                task=self.task,
            ),
        )

    def build_dataset(self, questions: list[QuestionRecord], t_star: str,
                      iteration: int) -> SyntheticDataset:
        """Synthesize one dataset with bounded parallelism; output ordered by id."""
        samples: list[TrainingSample] = []
        skipped: list[SkipRecord] = []

        def _one(q: QuestionRecord):
            try:
                return self.synthesize_one(q, t_star, iteration)
            except SampleSkipped as exc:
                return SkipRecord(q.id, exc.stage, exc.reason)

        workers = max(1, min(len(questions), self.max_workers))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_one, questions):
                if isinstance(result, SkipRecord):
                    skipped.append(result)
                else:
                    samples.append(result)
        if questions and len(skipped) / len(questions) > self.skip_threshold:
            raise SynthesisError(
                f"{len(skipped)}/{len(questions)} samples skipped, above the "
                f"{self.skip_threshold:.0%} threshold")
        samples.sort(key=lambda s: s.question_id)
        skipped.sort(key=lambda s: s.question_id)
        samples = self._rebalance(samples, iteration)
        return SyntheticDataset(iteration=iteration, samples=samples, skipped=skipped)

    def _rebalance(self, samples: list[TrainingSample], iteration: int) -> list[TrainingSample]:
        cap = self.rebalance_max_positive
        if cap is None or not samples:
            return samples
        positives = [s for s in samples if s.grade == 1]
        negatives = [s for s in samples if s.grade == 0]
        if not positives or len(positives) / len(samples) <= cap:
            return samples
        keep = int(cap / (1 - cap) * len(negatives)) if cap < 1 else len(positives)
        rng = random.Random(json_digest({"seed": self.rebalance_seed, "k": iteration})[:16])
        kept = set(s.question_id for s in rng.sample(positives, min(keep, len(positives))))
        return [s for s in samples if s.grade == 0 or s.question_id in kept]


def sample_record(sample: TrainingSample) -> dict:
    """Full provenance record for the samples sidecar file."""
    return {
        "question_id": sample.question_id,
        "question_text": sample.question_text,
        "gold_canonical": sample.gold_canonical,
        "prompt": sample.prompt,
        "target_answer_text": sample.target_answer_text,
        "extracted_canonical": sample.extracted.canonical if sample.extracted else None,
        "grade": sample.grade,
        "reward_text": sample.reward.text,
        "polarity_hint": sample.reward.polarity_hint,
        "provenance": {
            "iteration": sample.provenance.iteration,
            "prompt_model_id": sample.provenance.prompt_model_id,
            "t_star_digest": sample.provenance.t_star_digest,
            "params_digest": sample.provenance.params_digest,
            "reward_request_digest": sample.provenance.reward_request_digest,
            "task": sample.provenance.task,
        },
    }


def emit_sft_file(ds: SyntheticDataset, path, templates: TemplateSet) -> str:
    """Write the SFT JSON Lines file; returns its content digest."""
    if not ds.samples:
        raise SynthesisError("refusing to emit an empty dataset")
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sample in ds.samples:
            record_input, target = templates.render_sft_record(
                sample.question_text, sample.reward.text, sample.prompt)
            fh.write(json.dumps({
                "input": record_input,
                "target": target,
                "meta": {
                    "question_id": sample.question_id,
                    "grade": sample.grade,
                    "iteration": ds.iteration,
                },
            }, ensure_ascii=False, sort_keys=True) + "\n")
    return file_digest(path)


def emit_samples_file(ds: SyntheticDataset, path) -> str:
    """Write the full-provenance sidecar file; returns its content digest."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sample in ds.samples:
            fh.write(json.dumps(sample_record(sample), ensure_ascii=False, sort_keys=True) + "\n")
    return file_digest(path)


def emit_skip_log(ds: SyntheticDataset, path) -> str:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for skip in ds.skipped:
            fh.write(json.dumps({
                "question_id": skip.question_id,
                "stage": skip.stage,
                "reason": skip.reason,
            }, ensure_ascii=False, sort_keys=True) + "\n")
    return file_digest(path)


def verify_sample_provenance(record: dict, templates: TemplateSet) -> bool:
    """Re-render the reward request from a stored record and compare digests."""
    sections = reward_request_sections({
        "question_text": record["question_text"],
        "prompt": record["prompt"],
        "target_answer_text": record["target_answer_text"],
        "gold_canonical": record["gold_canonical"],
        "task": record["provenance"]["task"],
        "extraction_ok": record["extracted_canonical"] is not None,
    })
    msgs = templates.render_reward_generation(
        sections["prompt"], sections["question"], sections["model_answer"],
        sections["gold"], task=sections["task"])
    return messages_digest(msgs) == record["provenance"]["reward_request_digest"]
