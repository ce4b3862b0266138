"""Byte-deterministic rendering of the meta-instruction message sequences.

Every render produces a two-message sequence (system instruction + user
payload) from template files shipped with the package. Slots use double-brace
markers like ``{{question}}``; payload text that happens to contain a full
slot-marker pattern is minimally broken (``{{name}}`` -> ``{ {name} }``) so a
rendered message never contains anything that parses as an unsubstituted
slot. Single braces — e.g. LaTeX — pass through untouched.

The SFT record's input side reuses the prompt-generation user layout
verbatim, so training-time conditioning matches generation-time conditioning
byte for byte.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

_SLOT = re.compile(r"\{\{([a-z_]+)\}\}")

_EXPECTED_SLOTS = {
    "prompt_generation": {"question", "optimal_reward"},
    "answering": {"question", "prompt"},
    "reward_generation": {"task", "question", "prompt", "model_answer", "gold_answer"},
    "reward_critique": {"incumbent", "failures"},
    "reward_rewrite": {"incumbent", "critique"},
}

TASK_NAMES = {
    "gsm8k": "grade-school math word problems",
    "gsmhard": "grade-school math word problems with large-magnitude numbers",
    "math": "competition mathematics problems",
}
DEFAULT_TASK = "mathematical reasoning problems"

ANSWER_DELIMITER = "\n"

UNPARSEABLE_ANSWER_NOTICE = (
    "[NOTE: no parseable final answer could be extracted from this response.]"
)


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user"):
            raise TemplateError(f"invalid role {self.role!r}")
        if not self.content:
            raise TemplateError("empty message content")

    def as_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


def escape_payload(text: str) -> str:
    """Break anything in a payload that would read back as a slot marker."""
    return _SLOT.sub(r"{ {\1} }", text)


def _substitute(template: str, values: dict[str, str]) -> str:
    def repl(m: re.Match) -> str:
        name = m.group(1)
        if name not in values:
            raise TemplateError(f"template slot {name!r} has no value")
        return escape_payload(values[name])

    return _SLOT.sub(repl, template)


class TemplateSet:
    """The template pair files for each render, versioned by content digest."""

    NAMES = ("prompt_generation", "answering", "reward_generation",
             "reward_critique", "reward_rewrite")

    def __init__(self, pairs: dict[str, tuple[str, str]]):
        self._pairs = dict(pairs)
        for name in self.NAMES:
            if name not in self._pairs:
                raise TemplateError(f"missing template {name!r}")
            system, user = self._pairs[name]
            slots = _SLOT.findall(user)
            expected = _EXPECTED_SLOTS[name]
            if set(slots) != expected or len(slots) != len(expected):
                raise TemplateError(
                    f"template {name!r} must use each of {sorted(expected)} exactly once, got {slots}")
            if _SLOT.findall(system):
                raise TemplateError(f"system template {name!r} must not contain slots")

    @classmethod
    def load(cls, directory: Optional[Path] = None) -> "TemplateSet":
        pairs = {}
        for name in cls.NAMES:
            if directory is not None:
                system = (Path(directory) / f"{name}.system.txt").read_text(encoding="utf-8")
                user = (Path(directory) / f"{name}.user.txt").read_text(encoding="utf-8")
            else:
                base = resources.files("textreward").joinpath("templates")
                system = base.joinpath(f"{name}.system.txt").read_text(encoding="utf-8")
                user = base.joinpath(f"{name}.user.txt").read_text(encoding="utf-8")
            pairs[name] = (system, user)
        return cls(pairs)

    def digest(self, name: str) -> str:
        system, user = self._pairs[name]
        payload = system.encode("utf-8") + b"\x00" + user.encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def digests(self) -> dict[str, str]:
        return {name: self.digest(name) for name in self.NAMES}

    def _render(self, name: str, values: dict[str, str]) -> list[ChatMessage]:
        system, user = self._pairs[name]
        return [ChatMessage("system", system),
                ChatMessage("user", _substitute(user, values))]

    def render_prompt_generation(self, question: str, t_star: str) -> list[ChatMessage]:
        """Messages asking the prompt model for a prompt conditioned on t_star."""
        if not question or not t_star:
            raise TemplateError("question and optimal reward must be nonempty")
        return self._render("prompt_generation",
                            {"question": question, "optimal_reward": t_star})

    def render_answering(self, question: str, prompt: str = "") -> list[ChatMessage]:
        """Messages asking the target model to answer; prompt appended after the question.

        An empty prompt yields the bare question (the no-prompt baseline).
        """
        if not question:
            raise TemplateError("question must be nonempty")
        system, _ = self._pairs["answering"]
        content = escape_payload(question)
        if prompt:
            content = content + ANSWER_DELIMITER + escape_payload(prompt)
        return [ChatMessage("system", system), ChatMessage("user", content)]

    def render_reward_generation(self, prompt: str, question: str, model_answer: str,
                                 gold: str, task: str = DEFAULT_TASK) -> list[ChatMessage]:
        """Messages asking the reward model to critique a prompt's effectiveness."""
        for label, value in (("prompt", prompt), ("question", question),
                             ("model_answer", model_answer), ("gold", gold), ("task", task)):
            if not value:
                raise TemplateError(f"{label} must be nonempty")
        return self._render("reward_generation", {
            "task": task, "question": question, "prompt": prompt,
            "model_answer": model_answer, "gold_answer": gold,
        })

    def render_sft_record(self, question: str, textual_reward: str, prompt: str) -> tuple[str, str]:
        """(input text, target text) for one fine-tuning record.

        The input reuses the prompt-generation user layout so the trained
        conditioning matches what the model sees at generation time; the
        target is the prompt, byte-exact.
        """
        if not question or not textual_reward or not prompt:
            raise TemplateError("question, textual reward, and prompt must be nonempty")
        messages = self.render_prompt_generation(question, textual_reward)
        return messages[1].content, prompt

    def render_reward_critique(self, incumbent: str, failures: str) -> list[ChatMessage]:
        if not incumbent or not failures:
            raise TemplateError("incumbent and failures must be nonempty")
        return self._render("reward_critique", {"incumbent": incumbent, "failures": failures})

    def render_reward_rewrite(self, incumbent: str, critique: str) -> list[ChatMessage]:
        if not incumbent or not critique:
            raise TemplateError("incumbent and critique must be nonempty")
        return self._render("reward_rewrite", {"incumbent": incumbent, "critique": critique})


def messages_digest(messages: list[ChatMessage]) -> str:
    """Stable digest of a rendered message sequence."""
    h = hashlib.sha256()
    for msg in messages:
        h.update(msg.role.encode("utf-8"))
        h.update(b"\x00")
        h.update(msg.content.encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()
