import json
from pathlib import Path

import pytest

from textreward.simserver import ScriptRule, serve_script
from textreward.templating import TemplateSet

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def templates() -> TemplateSet:
    return TemplateSet.load()


@pytest.fixture
def sim():
    """Start a scripted simulator for one test; yields a factory."""
    handles = []

    def start(rules: list[ScriptRule], port: int = 0):
        handle = serve_script(rules, port=port)
        handles.append(handle)
        return handle

    yield start
    for handle in handles:
        handle.stop()


def load_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()]


def golden(name: str):
    return json.loads((FIXTURES / "golden" / f"{name}.json").read_text(encoding="utf-8"))


# --- hermetic end-to-end scaffolding -------------------------------------
#
# Ten train questions plus two validation questions with planted answers:
# the simulator scripts the answering stage per question (some deliberately
# wrong), while stage-distinctive template phrases route the prompt, reward,
# and optimizer calls.

HERMETIC_TRAIN = [
    ("hq01", "If a crate holds 6 melons and you buy 4 crates, how many melons?", 24, "6 x 4 = 24. The answer is 24.", True),
    ("hq02", "A runner does 5 km each day for 6 days. Total distance?", 30, "5 x 6 = 30. The answer is 30.", True),
    ("hq03", "Tickets cost 12 each and you buy 3. Total cost?", 36, "12 x 3 = 36. The answer is 36.", True),
    ("hq04", "A shelf has 9 rows of 8 books. How many books?", 72, "Roughly 70. The answer is 70.", False),
    ("hq05", "You read 14 pages a night for 7 nights. Pages read?", 98, "14 x 7 = 98. The answer is 98.", True),
    ("hq06", "A tank loses 3 liters per hour for 11 hours. Liters lost?", 33, "3 x 11 = 33. The answer is 33.", True),
    ("hq07", "Four friends split 52 marbles evenly. Marbles each?", 13, "52 / 4 = 13. The answer is 13.", True),
    ("hq08", "A baker uses 2 eggs per cake for 15 cakes. Eggs used?", 30, "2 x 15 = 31. The answer is 31.", False),
    ("hq09", "A bus seats 45 and three buses are full. Riders total?", 135, "45 x 3 = 135. The answer is 135.", True),
    ("hq10", "Socks come in packs of 5; you need 35 socks. Packs?", 7, "35 / 5 = 7. The answer is 7.", True),
]

HERMETIC_VAL = [
    ("hv01", "A box of 18 pens is shared by 2 desks. Pens per desk?", 9, "18 / 2 = 9. The answer is 9.", True),
    ("hv02", "A plane flies 400 km/h for 3 hours. Distance flown?", 1200, "400 x 3 = 1300. The answer is 1300.", False),
]

HERMETIC_PROMPT_TEXT = "Lay out each step and end with the final number."
HERMETIC_REWARD_TEXT = "The prompt was concrete and the solver reached the stated result."


def hermetic_rules() -> list:
    rules = [
        ScriptRule(match="Feedback the prompt should earn:", response=HERMETIC_PROMPT_TEXT),
        ScriptRule(match="Prompt under review:", response=HERMETIC_REWARD_TEXT),
        ScriptRule(match="Failure cases:",
                   response="The guidance never asks for a double-check of the arithmetic."),
        ScriptRule(match="Rewritten guidance text:",
                   response="The prompt made the solver double-check arithmetic and state one final number."),
    ]
    for _, text, _, answer, _ in HERMETIC_TRAIN + HERMETIC_VAL:
        anchor = " ".join(text.split()[:4])
        rules.append(ScriptRule(match=anchor, response=answer))
    return rules


def write_hermetic_corpus(directory: Path) -> tuple[Path, Path]:
    train = directory / "train.jsonl"
    val = directory / "val.jsonl"
    for path, rows in ((train, HERMETIC_TRAIN), (val, HERMETIC_VAL)):
        with path.open("w", encoding="utf-8") as fh:
            for qid, text, gold, _, _ in rows:
                fh.write(json.dumps({"id": qid, "question": text,
                                     "answer": f"#### {gold}"}) + "\n")
    return train, val


def write_hermetic_config(directory: Path, base_url: str, *, iterations=2,
                          synthesis_size=8, seed=7, search_budget=2,
                          skip_reward_search=False, sft_only=False,
                          run_dir_name="run") -> Path:
    train, val = write_hermetic_corpus(directory)
    config_path = directory / "hermetic.toml"
    config_path.write_text(f"""\
[run]
run_dir = "{(directory / run_dir_name).as_posix()}"
iterations = {iterations}
synthesis_size = {synthesis_size}
failure_digest_size = 4
seed = {seed}
search_budget = {search_budget}
deterministic_eval = true
skip_reward_search = {str(skip_reward_search).lower()}
sft_only = {str(sft_only).lower()}

[dataset]
kind = "gsm8k"
train_path = "{train.as_posix()}"
val_path = "{val.as_posix()}"

[limits]
max_tokens_prompt = 256
max_tokens_answer = 512
max_tokens_reward = 512
max_tokens_optimizer = 512

[roles.prompt_model]
base_url = "{base_url}"
model_name = "sim-prompt"

[roles.target_model]
base_url = "{base_url}"
model_name = "sim-target"

[roles.reward_model]
base_url = "{base_url}"
model_name = "sim-reward"

[roles.optimizer_model]
base_url = "{base_url}"
model_name = "sim-optimizer"

[trainer]
backend = "mock"
""", encoding="utf-8")
    return config_path
