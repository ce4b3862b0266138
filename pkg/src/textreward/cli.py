"""Command-line entry point.

Subcommands: run, resume, eval, search-reward, synthesize, grade, serve-sim.
Exit code 0 on success; 1 with a single-line ``error: ...`` on stderr for
runtime failures; 2 with usage text for bad invocations (argparse default).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .corpus import DatasetKind, load_dataset, split_train_val
from .evaluation import Evaluator, summary_table
from .gateway import ChatGateway, EndpointBinding, GenerationParams, ModelRole
from .grading import accuracy, judge_completion
from .hashing import text_digest
from .orchestrator import Orchestrator, resume as resume_run
from .reward_search import RewardSearch
from .simserver import load_script_rules, serve_script
from .templating import TemplateSet


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textreward",
        description="Query-dependent prompt optimization driven by textual rewards.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--deterministic-eval", action="store_true",
                       help="score prompts near-greedily for reproducible accepts")

    p_run = sub.add_parser("run", help="execute the full iterative pipeline")
    add_config_args(p_run)

    p_resume = sub.add_parser("resume", help="continue a run from its manifest")
    p_resume.add_argument("--manifest", required=True, help="path to manifest.json")

    p_eval = sub.add_parser("eval", help="evaluate a (prompt model, reward) pair")
    add_config_args(p_eval)
    p_eval.add_argument("--mode", choices=("optimized", "cot", "no_prompt"),
                        default="optimized")
    p_eval.add_argument("--split", choices=("validation", "test"), default="validation")
    p_eval.add_argument("--reward-file", help="text file holding the reward to condition on")
    p_eval.add_argument("--report", help="write the full report JSON here")

    p_search = sub.add_parser("search-reward", help="search for an improved reward text")
    add_config_args(p_search)
    p_search.add_argument("--trace", help="write the search trace JSONL here")

    p_synth = sub.add_parser("synthesize", help="build one synthetic dataset")
    add_config_args(p_synth)
    p_synth.add_argument("--iteration", type=int, default=1)
    p_synth.add_argument("--output-dir", help="defaults to <run_dir>/synth_<k>")

    p_grade = sub.add_parser("grade", help="grade completions against gold answers")
    p_grade.add_argument("--kind", choices=("gsm8k", "gsmhard", "math"), required=True)
    p_grade.add_argument("--completion-file", required=True,
                         help="JSON Lines of {\"completion\": ...}")
    p_grade.add_argument("--gold-file", required=True,
                         help="dataset file in any accepted layout, aligned by index")

    p_sim = sub.add_parser("serve-sim", help="serve the scripted simulator")
    p_sim.add_argument("--script", help="JSON or JSONL rule file")
    p_sim.add_argument("--port", type=int, default=8123)

    return parser


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "deterministic_eval", False):
        config.deterministic_eval = True
    return config


def _gateway_for(config: RunConfig) -> ChatGateway:
    gw = ChatGateway(retries=config.retries, enable_cache=config.enable_cache)
    for name, rc in config.roles.items():
        gw.bind_role(ModelRole(name), EndpointBinding(
            rc.base_url, rc.model_name, rc.credential_ref, rc.max_in_flight))
    return gw


def _question_set(config: RunConfig, split: str):
    kind = DatasetKind(config.dataset_kind)
    if split == "test":
        if not config.test_path:
            raise ConfigError("eval --split test requires [dataset] test_path")
        return load_dataset(config.test_path, kind, "test")
    if config.val_path:
        return load_dataset(config.val_path, kind, "validation")
    full = load_dataset(config.train_path, kind, "unsplit")
    return split_train_val(full, config.train_fraction, config.seed)[1]


def _cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    manifest = Orchestrator(config).run()
    final = manifest.data["final_reward"]
    best = manifest.data["best_checkpoint"]
    print(f"run complete: {len(manifest.data['iterations'])} iterations")
    print(f"manifest: {manifest.path}")
    if best:
        print(f"best checkpoint: {best['id']}")
    if final:
        print(f"final reward digest: {final['digest'][:16]}")
    return 0


def _cmd_resume(args) -> int:
    manifest = resume_run(args.manifest)
    print(f"resume complete: status {manifest.data['status']}")
    return 0


def _cmd_eval(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    qset = _question_set(config, args.split)
    gw = _gateway_for(config)
    try:
        evaluator = Evaluator(
            gw, TemplateSet.load(),
            GenerationParams(config.temp_prompt, config.max_tokens_prompt),
            GenerationParams(config.temp_answer, config.max_tokens_answer),
            deterministic_eval=config.deterministic_eval,
            max_workers=config.max_workers, skip_threshold=config.skip_threshold,
            config_digest=config.digest())
        if args.mode == "cot":
            report = evaluator.baseline_cot(qset)
        elif args.mode == "no_prompt":
            report = evaluator.baseline_no_prompt(qset)
        else:
            reward = (Path(args.reward_file).read_text(encoding="utf-8").strip()
                      if args.reward_file else config.initial_reward)
            report = evaluator.evaluate(
                config.roles["prompt_model"].model_name, reward, qset)
    finally:
        gw.close()
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8")
    print(summary_table([(report.mode, f"{report.kind}/{report.split}", report.accuracy)]))
    print(f"accuracy {report.accuracy:.4f}")
    return 0


def _cmd_search_reward(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    qset = _question_set(config, "validation")
    gw = _gateway_for(config)
    try:
        searcher = RewardSearch(
            gw, TemplateSet.load(),
            GenerationParams(config.temp_prompt, config.max_tokens_prompt),
            GenerationParams(config.temp_answer, config.max_tokens_answer),
            GenerationParams(config.temp_optimizer, config.max_tokens_optimizer),
            failure_digest_size=config.failure_digest_size,
            deterministic_eval=config.deterministic_eval,
            max_workers=config.max_workers, skip_threshold=config.skip_threshold)
        result = searcher.search(config.initial_reward, qset,
                                 budget=config.search_budget, trace_path=args.trace)
    finally:
        gw.close()
    print(f"final score {result.score:.4f} (initial {result.initial_score:.4f})")
    print(f"reward digest {text_digest(result.text)[:16]}")
    print(result.text)
    return 0


def _cmd_synthesize(args) -> int:
    from .corpus import sample_iteration_batch
    from .synthesis import Synthesizer, emit_samples_file, emit_sft_file

    config = _apply_overrides(load_config(args.config), args)
    kind = DatasetKind(config.dataset_kind)
    if config.val_path:
        train = load_dataset(config.train_path, kind, "train")
    else:
        full = load_dataset(config.train_path, kind, "unsplit")
        train = split_train_val(full, config.train_fraction, config.seed)[0]
    out_dir = Path(args.output_dir) if args.output_dir else (
        Path(config.run_dir) / f"synth_{args.iteration}")
    out_dir.mkdir(parents=True, exist_ok=True)
    gw = _gateway_for(config)
    try:
        templates = TemplateSet.load()
        synth = Synthesizer(
            gw, templates, config.dataset_kind,
            GenerationParams(config.temp_prompt, config.max_tokens_prompt),
            GenerationParams(config.temp_answer, config.max_tokens_answer),
            GenerationParams(config.temp_reward, config.max_tokens_reward),
            prompt_model_id=config.roles["prompt_model"].model_name,
            skip_threshold=config.skip_threshold, max_workers=config.max_workers,
            rebalance_max_positive=config.rebalance_max_positive,
            rebalance_seed=config.seed)
        batch = sample_iteration_batch(train, config.synthesis_size,
                                       config.seed, args.iteration)
        dataset = synth.build_dataset(batch, config.initial_reward, args.iteration)
        digest = emit_sft_file(dataset, out_dir / "dataset.jsonl", templates)
        emit_samples_file(dataset, out_dir / "samples.jsonl")
    finally:
        gw.close()
    stats = dataset.stats
    print(f"dataset {out_dir / 'dataset.jsonl'}")
    print(f"digest {digest}")
    print(f"count {stats['count']} positive_fraction {stats['positive_fraction']:.3f}")
    return 0


def _cmd_grade(args) -> int:
    completions = []
    for lineno, line in enumerate(
            Path(args.completion_file).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if "completion" not in obj:
            raise ConfigError(f"{args.completion_file}:{lineno}: missing 'completion'")
        completions.append(obj["completion"])
    gold_set = load_dataset(args.gold_file, DatasetKind(args.kind))
    if len(completions) != len(gold_set.records):
        raise ConfigError(
            f"{len(completions)} completions vs {len(gold_set.records)} gold records")
    outcomes = [judge_completion(rec.id, completion, rec.gold, args.kind)
                for completion, rec in zip(completions, gold_set.records)]
    print(f"accuracy {accuracy(outcomes):.4f}")
    return 0


def _cmd_serve_sim(args) -> int:
    rules = load_script_rules(args.script) if args.script else []
    handle = serve_script(rules, port=args.port)
    print(f"simulator serving on {handle.base_url} ({len(rules)} rules)", flush=True)
    try:
        import time
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        handle.stop()
        return 0


_COMMANDS = {
    "run": _cmd_run,
    "resume": _cmd_resume,
    "eval": _cmd_eval,
    "search-reward": _cmd_search_reward,
    "synthesize": _cmd_synthesize,
    "grade": _cmd_grade,
    "serve-sim": _cmd_serve_sim,
}


def cli_entry(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # single-line machine-parseable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_entry())
