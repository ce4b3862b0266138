"""Template rendering: golden bytes, fuzz, and the layout-sharing invariant."""

import random
import re
import string

import pytest

from textreward.templating import TemplateError, TemplateSet, escape_payload

from conftest import golden

SLOT_MARKER = re.compile(r"\{\{[a-z_]+\}\}")

INPUTS = golden("inputs")


def test_prompt_generation_matches_golden(templates):
    msgs = templates.render_prompt_generation(INPUTS["question"], INPUTS["reward"])
    assert [m.as_dict() for m in msgs] == golden("prompt_generation")


def test_answering_matches_golden(templates):
    msgs = templates.render_answering(INPUTS["question"], "Let's think step by step.")
    assert [m.as_dict() for m in msgs] == golden("answering")


def test_reward_generation_matches_golden(templates):
    msgs = templates.render_reward_generation(
        INPUTS["prompt"], INPUTS["question"], INPUTS["model_answer"], INPUTS["gold"])
    assert [m.as_dict() for m in msgs] == golden("reward_generation")


def test_sft_record_matches_golden(templates):
    inp, target = templates.render_sft_record(
        INPUTS["question"], INPUTS["reward"], INPUTS["prompt"])
    assert {"input": inp, "target": target} == golden("sft_record")


def test_template_digests_frozen(templates):
    assert templates.digests() == golden("template_digests")


def test_rendered_text_contains_inputs_verbatim(templates):
    q, r = "What is 6 * 7?", "A clean, correct walk to the product."
    user = templates.render_prompt_generation(q, r)[1].content
    assert q in user and r in user


def test_swapped_sections_render_differently(templates):
    a = templates.render_reward_generation("p", "q", "model-ans", "gold-ans")
    b = templates.render_reward_generation("p", "q", "gold-ans", "model-ans")
    assert a[1].content != b[1].content


def test_render_is_deterministic(templates):
    first = templates.render_prompt_generation("q?", "fine work")
    second = templates.render_prompt_generation("q?", "fine work")
    assert [m.as_dict() for m in first] == [m.as_dict() for m in second]


def test_empty_inputs_rejected(templates):
    with pytest.raises(TemplateError):
        templates.render_prompt_generation("", "reward")
    with pytest.raises(TemplateError):
        templates.render_prompt_generation("q", "")
    with pytest.raises(TemplateError):
        templates.render_answering("")
    with pytest.raises(TemplateError):
        templates.render_reward_generation("p", "q", "", "g")


def test_answering_empty_prompt_is_bare_question(templates):
    msgs = templates.render_answering("Q1 only?")
    assert msgs[1].content == "Q1 only?"


def test_answering_appends_prompt_after_question(templates):
    msgs = templates.render_answering("Q1?", "Let's think step by step.")
    assert msgs[1].content == "Q1?\nLet's think step by step."


def test_target_is_prompt_byte_exact(templates):
    prompt = "Exact prompt é text {with braces}"
    _, target = templates.render_sft_record("q", "r", prompt)
    assert target == prompt


def test_sft_input_equals_prompt_generation_user_content(templates):
    q, r = "Some question?", "Some feedback."
    inp, _ = templates.render_sft_record(q, r, "p")
    assert inp == templates.render_prompt_generation(q, r)[1].content


def _random_payload(rng: random.Random) -> str:
    pieces = []
    for _ in range(rng.randint(1, 6)):
        choice = rng.random()
        if choice < 0.25:
            pieces.append(rng.choice([
                "{{question}}", "{{optimal_reward}}", "{{prompt}}", "{{", "}}",
                "{ {x} }", "\\frac{1}{2}", "{", "}", "\n",
            ]))
        elif choice < 0.5:
            pieces.append("".join(rng.choice(string.printable) for _ in range(rng.randint(1, 12))))
        else:
            pieces.append("".join(chr(rng.randint(0x20, 0x2FF)) for _ in range(rng.randint(1, 8))))
    return "".join(pieces) or "x"


def test_fuzz_no_unsubstituted_slots_and_layout_equality(templates):
    rng = random.Random(1234)
    for _ in range(1000):
        q, r, p = (_random_payload(rng) for _ in range(3))
        msgs = templates.render_prompt_generation(q, r)
        for msg in msgs:
            assert not SLOT_MARKER.search(msg.content)
        answer_msgs = templates.render_answering(q, p)
        assert not SLOT_MARKER.search(answer_msgs[1].content)
        reward_msgs = templates.render_reward_generation(p, q, "ans", "gold")
        assert not SLOT_MARKER.search(reward_msgs[1].content)
        inp, target = templates.render_sft_record(q, r, p)
        assert inp == msgs[1].content
        assert target == p


def test_escape_breaks_only_full_slot_patterns():
    assert escape_payload("{{question}}") == "{ {question} }"
    assert escape_payload("\\frac{\\frac{1}{2}}{3}") == "\\frac{\\frac{1}{2}}{3}"
    assert escape_payload("{{") == "{{"


def test_digest_changes_when_template_changes(templates):
    pairs = {name: templates._pairs[name] for name in TemplateSet.NAMES}
    system, user = pairs["prompt_generation"]
    pairs["prompt_generation"] = (system + " ", user)
    other = TemplateSet(pairs)
    assert other.digest("prompt_generation") != templates.digest("prompt_generation")


def test_template_set_validates_slot_usage(templates):
    pairs = {name: templates._pairs[name] for name in TemplateSet.NAMES}
    pairs["prompt_generation"] = ("sys", "only {{question}} here")
    with pytest.raises(TemplateError):
        TemplateSet(pairs)
