from __future__ import annotations

import json
import random
import string

import pytest

from ragfuzz.errors import MissingBinding, UnknownTemplate
from ragfuzz.prompts import TEMPLATE_PLACEHOLDERS, PromptFactory

ALL_MARKERS = [
    "{REQS}",
    "{CODES}",
    "{Generated code}",
    "{Compilation Error}",
    "{Optimization Pass Name}",
    "{Name of optimization pass}",
    "{Code of function in optimization pass}",
]


@pytest.fixture(scope="module")
def factory() -> PromptFactory:
    return PromptFactory()


@pytest.fixture(scope="module")
def golden_bindings(fixtures_dir):
    raw = json.loads((fixtures_dir / "golden" / "bindings.json").read_text())
    raw["characteristics"] = {
        "pass_name": raw["characteristics"]["pass_name"],
        "function_code": (
            fixtures_dir / raw["characteristics"]["function_code_file"]
        ).read_text(),
    }
    return raw


@pytest.mark.parametrize("template_id", sorted(TEMPLATE_PLACEHOLDERS))
def test_rendered_prompt_matches_golden(template_id, factory, golden_bindings, fixtures_dir):
    rendered = factory.render(template_id, golden_bindings[template_id])
    golden = (fixtures_dir / "golden" / f"{template_id}.golden.txt").read_text()
    assert rendered.text == golden


def test_characteristics_contains_pass_and_code(factory, pass_function_source):
    rendered = factory.characteristics_prompt("DeviceGlobals", pass_function_source)
    assert "describe the characteristics of the device" in rendered.text
    assert "WITHOUT EXPLICITLY CALLING THE FUNCTION ITSELF" in rendered.text
    assert pass_function_source in rendered.text
    # the function code is the tail of the prompt
    assert rendered.text.rstrip().endswith(pass_function_source.rstrip())


def test_characteristics_pass_name_slot(factory):
    rendered = factory.characteristics_prompt("P", "int f(){}")
    assert "optimization pass P in LLVM" in rendered.text


def test_codegen_preamble_and_compile_sentence(factory):
    rendered = factory.codegen_prompt("DeviceGlobals", "some requirements")
    assert "generate a valid device kernel Code" in rendered.text
    assert "#include <sycl/sycl.hpp>" in rendered.text
    assert "ALL GENERATED CODE MUST BE COMPLETE AND MUST COMPILE CORRECTLY." in rendered.text
    assert "some requirements" in rendered.text


def test_repair_orders_code_then_error(factory):
    rendered = factory.repair_prompt("CODE_SNIPPET", "ERROR_TEXT")
    assert "fix this error and generate" in rendered.text
    assert rendered.text.index("CODE_SNIPPET") < rendered.text.index("ERROR_TEXT")
    assert "sycl::ext::oneapi::experimental" in rendered.text


def test_mutation_slots(factory):
    rendered = factory.mutation_prompt("THE_CODE", "THE_REQS")
    assert "modify the code below as per" in rendered.text
    assert "THE_CODE" in rendered.text
    assert "THE_REQS" in rendered.text


def test_missing_binding(factory):
    with pytest.raises(MissingBinding) as exc:
        factory.render("codegen", {"pass_name": "P"})
    assert exc.value.name == "reqs"


def test_empty_binding_rejected(factory):
    with pytest.raises(MissingBinding):
        factory.render("repair", {"code": "", "error": "e"})


def test_unknown_template(factory):
    with pytest.raises(UnknownTemplate):
        factory.render("nonsense", {})


def test_unexpected_binding_rejected(factory):
    with pytest.raises(ValueError):
        factory.render("repair", {"code": "c", "error": "e", "bogus": "x"})


def test_render_is_pure(factory, golden_bindings):
    a = factory.render("mutation", golden_bindings["mutation"])
    b = factory.render("mutation", golden_bindings["mutation"])
    assert a.text == b.text


def _random_value(rng: random.Random) -> str:
    alphabet = string.ascii_letters + string.digits + " \n\t(){}[]<>;:+-*/=_\"'"
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 300)))


def test_no_placeholder_survives_1000_random_bindings(factory):
    rng = random.Random(20240601)
    template_ids = sorted(TEMPLATE_PLACEHOLDERS)
    for i in range(1000):
        template_id = template_ids[i % len(template_ids)]
        names = TEMPLATE_PLACEHOLDERS[template_id]
        bindings = {}
        for name in names:
            value = _random_value(rng)
            while any(marker in value for marker in ALL_MARKERS):
                value = _random_value(rng)
            bindings[name] = value
        rendered = factory.render(template_id, bindings)
        for marker in ALL_MARKERS:
            assert marker not in rendered.text, (template_id, marker)
