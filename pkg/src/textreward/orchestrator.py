"""The outer optimization loop: synthesize -> train -> search -> evaluate.

Each iteration k synthesizes a dataset with the previous checkpoint and the
previous optimal reward, fine-tunes a new checkpoint from the previous one,
searches for the next optimal reward, and evaluates on validation. Stage
completions are recorded in the manifest as they happen, so a killed run
resumes from the first incomplete stage without re-executing finished work;
with deterministic backends the resumed manifest is byte-identical to an
uninterrupted one.

Checkpoint rebinding: an adapter whose locator is an HTTP URL becomes the new
prompt-model endpoint; a non-URL locator keeps the endpoint and switches the
served model name to the adapter id.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from .config import RunConfig
from .corpus import DatasetKind, QuestionSet, load_dataset, sample_iteration_batch, split_train_val
from .evaluation import Evaluator
from .gateway import ChatGateway, EndpointBinding, GenerationParams, ModelRole
from .hashing import file_digest, text_digest
from .manifest import STAGES, ManifestError, RunManifest
from .reward_search import RewardSearch
from .synthesis import Synthesizer, emit_samples_file, emit_sft_file, emit_skip_log
from .templating import TemplateSet
from .training import (
    CheckpointRegistry,
    CommandTrainerBackend,
    MockTrainerBackend,
    ModelRef,
    ServiceTrainerBackend,
    TrainerSpec,
    select_checkpoint,
    train as run_training,
)


class OrchestratorError(RuntimeError):
    pass


class Orchestrator:
    def __init__(self, config: RunConfig, run_dir: Optional[Path] = None,
                 templates: Optional[TemplateSet] = None,
                 gateway: Optional[ChatGateway] = None):
        self.config = config
        self.run_dir = Path(run_dir if run_dir is not None else config.run_dir)
        self.templates = templates or TemplateSet.load()
        self.gateway = gateway or self._build_gateway()
        self.backend = self._build_backend()
        self.prompt_params = GenerationParams(config.temp_prompt, config.max_tokens_prompt)
        self.answer_params = GenerationParams(config.temp_answer, config.max_tokens_answer)
        self.reward_params = GenerationParams(config.temp_reward, config.max_tokens_reward)
        self.optimizer_params = GenerationParams(config.temp_optimizer, config.max_tokens_optimizer)
        # mutable loop state
        self.registry = CheckpointRegistry()
        self.t_star = config.initial_reward
        self.model_ref = self._base_ref()
        self.train_set: Optional[QuestionSet] = None
        self.val_set: Optional[QuestionSet] = None

    # -- wiring ------------------------------------------------------------

    def _build_gateway(self) -> ChatGateway:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        gw = ChatGateway(retries=self.config.retries,
                         usage_log_path=self.run_dir / "usage.jsonl",
                         enable_cache=self.config.enable_cache)
        for name, rc in self.config.roles.items():
            gw.bind_role(ModelRole(name), EndpointBinding(
                rc.base_url, rc.model_name, rc.credential_ref, rc.max_in_flight))
        return gw

    def _build_backend(self):
        trainer = self.config.trainer
        if trainer.backend == "mock":
            serve_url = trainer.mock_serve_url or self.config.roles["prompt_model"].base_url
            return MockTrainerBackend(serve_url=serve_url)
        if trainer.backend == "command":
            return CommandTrainerBackend(trainer.command)
        if trainer.backend == "service":
            if not trainer.service_url:
                raise OrchestratorError("service trainer backend requires service_url")
            return ServiceTrainerBackend(trainer.service_url)
        raise OrchestratorError(f"unknown trainer backend {trainer.backend!r}")

    def _base_ref(self) -> ModelRef:
        prompt_role = self.config.roles["prompt_model"]
        return ModelRef(
            id=self.config.trainer.base_model_id or prompt_role.model_name,
            kind="base", locator=prompt_role.base_url)

    def _load_sets(self) -> None:
        cfg = self.config
        kind = DatasetKind(cfg.dataset_kind)
        if cfg.val_path:
            self.train_set = load_dataset(cfg.train_path, kind, "train")
            self.val_set = load_dataset(cfg.val_path, kind, "validation")
        else:
            full = load_dataset(cfg.train_path, kind, "unsplit")
            self.train_set, self.val_set = split_train_val(full, cfg.train_fraction, cfg.seed)

    def _rebind_prompt_model(self, ref: ModelRef) -> None:
        prompt_role = self.config.roles["prompt_model"]
        if ref.locator.startswith(("http://", "https://")):
            base_url = ref.locator
        else:
            base_url = self.gateway.binding_for(ModelRole.PROMPT_MODEL).base_url
        self.gateway.bind_role(ModelRole.PROMPT_MODEL, EndpointBinding(
            base_url, ref.id, prompt_role.credential_ref, prompt_role.max_in_flight))

    def _iter_dir(self, k: int) -> Path:
        path = self.run_dir / f"iter_{k}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def _rel(self, path: Path) -> str:
        return str(path.relative_to(self.run_dir))

    # -- entry points --------------------------------------------------------

    def run(self, stop_after: Optional[int] = None) -> RunManifest:
        """Execute (or continue) the full loop; stop_after caps completed stages."""
        cfg = self.config
        self.run_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = self.run_dir / "manifest.json"
        if manifest_path.exists():
            manifest = RunManifest.load(manifest_path)
            if manifest.data["config_digest"] != cfg.digest():
                raise ManifestError(
                    "config does not match the manifest in this run directory")
            manifest.verify_artifacts(self.run_dir)
        else:
            manifest = RunManifest.create(
                manifest_path, cfg.as_dict(), cfg.digest(),
                {"text": cfg.initial_reward, "digest": text_digest(cfg.initial_reward)},
                self.templates.digests())
        self._load_sets()

        steps = 0
        for k in range(1, cfg.iterations + 1):
            for stage in STAGES:
                if manifest.stage_done(k, stage):
                    self._restore_stage(manifest, k, stage)
                else:
                    try:
                        self._execute_stage(manifest, k, stage)
                    except Exception as exc:
                        manifest.record_failure(k, stage, str(exc))
                        raise OrchestratorError(
                            f"iteration {k} stage {stage} failed: {exc}") from exc
                steps += 1
                if stop_after is not None and steps >= stop_after:
                    return manifest
        self._finalize(manifest)
        return manifest

    # -- stage restoration (resume path) -------------------------------------

    def _restore_stage(self, manifest: RunManifest, k: int, stage: str) -> None:
        entry = manifest.iteration(k)
        if stage == "train":
            ref = ModelRef.from_dict(entry["checkpoint"])
            self.registry.add(ref, k, entry["dataset_digest"])
            self._rebind_prompt_model(ref)
            self.model_ref = ref
        elif stage == "search":
            self.t_star = entry["reward"]["text"]
        elif stage == "evaluate":
            accuracy = entry.get("validation_accuracy")
            if accuracy is not None:
                self.registry.record_score(self.model_ref.id, accuracy)

    # -- stage execution ------------------------------------------------------

    def _execute_stage(self, manifest: RunManifest, k: int, stage: str) -> None:
        handler = {
            "synthesize": self._stage_synthesize,
            "train": self._stage_train,
            "search": self._stage_search,
            "evaluate": self._stage_evaluate,
        }[stage]
        handler(manifest, k)

    def _stage_synthesize(self, manifest: RunManifest, k: int) -> None:
        cfg = self.config
        iter_dir = self._iter_dir(k)
        batch = sample_iteration_batch(self.train_set, cfg.synthesis_size, cfg.seed, k)
        synth = Synthesizer(
            self.gateway, self.templates, cfg.dataset_kind,
            self.prompt_params, self.answer_params, self.reward_params,
            prompt_model_id=self.model_ref.id,
            skip_threshold=cfg.skip_threshold, max_workers=cfg.max_workers,
            rebalance_max_positive=cfg.rebalance_max_positive,
            rebalance_seed=cfg.seed)
        dataset = synth.build_dataset(batch, self.t_star, k)
        dataset_file = iter_dir / "dataset.jsonl"
        samples_file = iter_dir / "samples.jsonl"
        skip_log = iter_dir / "skips.jsonl"
        manifest.mark_stage(
            k, "synthesize",
            dataset_file=self._rel(dataset_file),
            dataset_digest=emit_sft_file(dataset, dataset_file, self.templates),
            samples_file=self._rel(samples_file),
            samples_digest=emit_samples_file(dataset, samples_file),
            skip_log=self._rel(skip_log),
            skip_log_digest=emit_skip_log(dataset, skip_log),
            skip_count=len(dataset.skipped),
            synthesis_stats=dataset.stats,
            synthesis_t_star_digest=text_digest(self.t_star),
            synthesis_prompt_model=self.model_ref.id,
        )

    def _stage_train(self, manifest: RunManifest, k: int) -> None:
        cfg = self.config
        entry = manifest.iteration(k)
        dataset_file = self.run_dir / entry["dataset_file"]
        spec = TrainerSpec(
            base_model=self.model_ref,
            lora_rank=cfg.trainer.lora_rank, lora_alpha=cfg.trainer.lora_alpha,
            epochs=cfg.trainer.epochs, learning_rate=cfg.trainer.learning_rate,
            optimizer=cfg.trainer.optimizer, schedule=cfg.trainer.schedule,
            batch_size=cfg.trainer.batch_size, warmup_steps=cfg.trainer.warmup_steps,
            max_seq_len=cfg.trainer.max_seq_len)
        ref = run_training(dataset_file, spec, self.backend, self._iter_dir(k) / "train")
        self.registry.add(ref, k, entry["dataset_digest"])
        self._rebind_prompt_model(ref)
        self.model_ref = ref
        manifest.mark_stage(k, "train", checkpoint=ref.as_dict())

    def _stage_search(self, manifest: RunManifest, k: int) -> None:
        cfg = self.config
        if cfg.skip_reward_search or cfg.sft_only:
            manifest.mark_stage(
                k, "search",
                reward={"text": self.t_star, "digest": text_digest(self.t_star),
                        "score": None, "initial_score": None, "aborted": False,
                        "abort_reason": None, "carried_forward": True, "lineage": []},
                search_trace=None, search_trace_digest=None, post_sft_accuracy=None)
            return
        searcher = RewardSearch(
            self.gateway, self.templates,
            self.prompt_params, self.answer_params, self.optimizer_params,
            failure_digest_size=cfg.failure_digest_size,
            deterministic_eval=cfg.deterministic_eval,
            max_workers=cfg.max_workers, skip_threshold=cfg.skip_threshold)
        trace_path = self._iter_dir(k) / "search_trace.jsonl"
        result = searcher.search(self.t_star, self.val_set, budget=cfg.search_budget,
                                 trace_path=trace_path)
        if result.aborted:
            raise OrchestratorError(f"reward search aborted: {result.abort_reason}")
        self.t_star = result.text
        reward_info = result.as_dict()
        reward_info["carried_forward"] = False
        manifest.mark_stage(
            k, "search", reward=reward_info,
            search_trace=self._rel(trace_path),
            search_trace_digest=file_digest(trace_path),
            post_sft_accuracy=result.initial_score)

    def _stage_evaluate(self, manifest: RunManifest, k: int) -> None:
        cfg = self.config
        if cfg.sft_only:
            manifest.mark_stage(k, "evaluate", validation_accuracy=None,
                                eval_report=None, eval_report_digest=None,
                                eval_skipped=True)
            return
        evaluator = Evaluator(
            self.gateway, self.templates, self.prompt_params, self.answer_params,
            deterministic_eval=cfg.deterministic_eval, max_workers=cfg.max_workers,
            skip_threshold=cfg.skip_threshold, config_digest=cfg.digest())
        report = evaluator.evaluate(self.model_ref.id, self.t_star, self.val_set)
        report_path = self._iter_dir(k) / "eval.json"
        report_path.write_text(
            json.dumps(report.as_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8")
        self.registry.record_score(self.model_ref.id, report.accuracy)
        manifest.mark_stage(
            k, "evaluate", validation_accuracy=report.accuracy,
            eval_report=self._rel(report_path),
            eval_report_digest=file_digest(report_path))

    def _finalize(self, manifest: RunManifest) -> None:
        scored = [cid for cid in self.registry.ids()
                  if self.registry.get(cid).val_score is not None]
        if scored:
            best = select_checkpoint(self.registry, scored)
        elif self.model_ref.kind == "adapter":
            best = self.model_ref
        else:
            best = None
        manifest.complete(
            best.as_dict() if best else None,
            {"text": self.t_star, "digest": text_digest(self.t_star)})


def run(config: RunConfig, stop_after: Optional[int] = None) -> RunManifest:
    return Orchestrator(config).run(stop_after=stop_after)


def resume(manifest_path, stop_after: Optional[int] = None) -> RunManifest:
    """Continue a run from its manifest; completed stages are not re-executed."""
    manifest = RunManifest.load(manifest_path)
    config = RunConfig.from_dict(manifest.data["config"])
    orch = Orchestrator(config, run_dir=Path(manifest_path).parent)
    return orch.run(stop_after=stop_after)
