"""Two-stage test-case generation with a bounded repair loop and mutation.

Stage 1 asks the model to describe what source-level characteristics trigger
the pass function; stage 2 turns those characteristics plus a random feature
selection into a compilable program. Compile failures feed a repair prompt at
most ``max_attempts`` times; compiling cases are then mutated X times with
freshly sampled features.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib.resources import files
from pathlib import Path
from typing import Callable

from .errors import EmptyCatalog, EmptyResponse, NoCodeBlock, ProviderError
from .extraction import PassFunction
from .prompts import PromptFactory
from .providers import LLMService
from .rag import RetrievedChunk, VectorIndex
from .toolchain import CompileResult

SYCL_PREAMBLE = """#include <sycl/sycl.hpp>
#include <array>
#include <iostream>
#include <string>
#if FPGA_HARDWARE || FPGA_EMULATOR || FPGA_SIMULATOR
#include <sycl/ext/intel/fpga_extensions.hpp>
#endif

using namespace sycl;
"""


class CaseStatus(str, Enum):
    DRAFT = "draft"
    COMPILES = "compiles"
    ABANDONED = "abandoned"


@dataclass(frozen=True)
class Characteristics:
    pass_name: str
    function_key: str
    text: str


@dataclass(frozen=True)
class FeatureSelection:
    optimization_feature: str
    memory_access: str
    data_structure: str
    kernel_count: int
    seed: int


@dataclass(frozen=True)
class FeatureCatalog:
    optimization_features: tuple[str, ...]
    memory_access: tuple[str, ...]
    data_structures: tuple[str, ...]
    kernel_count_range: tuple[int, int] = (1, 4)

    def validate(self) -> None:
        for axis in ("optimization_features", "memory_access", "data_structures"):
            if not getattr(self, axis):
                raise EmptyCatalog(f"catalog axis {axis} is empty")
        lo, hi = self.kernel_count_range
        if lo < 1 or hi < lo:
            raise EmptyCatalog(f"bad kernel_count_range {self.kernel_count_range}")

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureCatalog":
        catalog = cls(
            optimization_features=tuple(data["optimization_features"]),
            memory_access=tuple(data["memory_access"]),
            data_structures=tuple(data["data_structures"]),
            kernel_count_range=tuple(data.get("kernel_count_range", (1, 4))),
        )
        catalog.validate()
        return catalog

    @classmethod
    def load(cls, path: Path) -> "FeatureCatalog":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_catalog() -> FeatureCatalog:
    return FeatureCatalog.from_dict(
        json.loads(files("ragfuzz").joinpath("data/catalogs.json").read_text())
    )


@dataclass
class RepairAttempt:
    error: str
    fix_source: str


@dataclass
class TestCase:
    __test__ = False  # domain type, not a pytest class

    case_id: str
    pass_name: str
    source: str
    status: CaseStatus = CaseStatus.DRAFT
    characteristics_key: str = ""
    selection: FeatureSelection | None = None
    parent_id: str | None = None
    repair_transcript: list[RepairAttempt] = field(default_factory=list)
    abandon_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "pass_name": self.pass_name,
            "source": self.source,
            "status": self.status.value,
            "characteristics_key": self.characteristics_key,
            "selection": self.selection.__dict__ if self.selection else None,
            "parent_id": self.parent_id,
            "repair_transcript": [a.__dict__ for a in self.repair_transcript],
            "abandon_reason": self.abandon_reason,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TestCase":
        return cls(
            case_id=data["case_id"],
            pass_name=data["pass_name"],
            source=data["source"],
            status=CaseStatus(data["status"]),
            characteristics_key=data.get("characteristics_key", ""),
            selection=FeatureSelection(**data["selection"]) if data.get("selection") else None,
            parent_id=data.get("parent_id"),
            repair_transcript=[RepairAttempt(**a) for a in data.get("repair_transcript", [])],
            abandon_reason=data.get("abandon_reason", ""),
        )


@dataclass(frozen=True)
class RepairOutcome:
    case: TestCase
    attempts: int
    succeeded: bool


def derive_seed(*parts: object) -> int:
    """Stable sub-seed from arbitrary labels; independent of process hashing."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def sample_features(catalog: FeatureCatalog, rng_seed: int) -> FeatureSelection:
    """Uniform independent draw per catalog axis, reproducible from the seed."""
    catalog.validate()
    rng = random.Random(rng_seed)
    lo, hi = catalog.kernel_count_range
    return FeatureSelection(
        optimization_feature=rng.choice(catalog.optimization_features),
        memory_access=rng.choice(catalog.memory_access),
        data_structure=rng.choice(catalog.data_structures),
        kernel_count=rng.randint(lo, hi),
        seed=rng_seed,
    )


def render_feature_requirements(selection: FeatureSelection) -> str:
    kernels = "kernel" if selection.kernel_count == 1 else "kernels"
    return (
        "Additional requirements:\n"
        f"- Use the SYCL optimization feature: {selection.optimization_feature}.\n"
        f"- Use the memory access technique: {selection.memory_access}.\n"
        f"- Use the data structure: {selection.data_structure}.\n"
        f"- The code must contain exactly {selection.kernel_count} device {kernels}."
    )


_FENCE_RE = re.compile(
    r"^```[ \t]*[A-Za-z0-9_+-]*[ \t]*\n(.*?)^```[ \t]*$", re.DOTALL | re.MULTILINE
)

_CODE_LINE_PREFIXES = (
    "#include", "#if", "#ifdef", "#ifndef", "#else", "#endif", "#define",
    "//", "/*", "*", "}", "using ", "template", "namespace", "class ",
    "struct ", "return", "int ", "void ", "auto ", "const ", "static ",
)


def _line_is_code(line: str) -> bool:
    s = line.strip()
    if not s:
        return True  # blank lines do not break a code region
    if s.startswith(_CODE_LINE_PREFIXES):
        return True
    return s.endswith((";", "{", "}", ":", ","))


def extract_code_block(response: str) -> str:
    """Contents of the last fenced code block in an LLM response.

    Without a fence, falls back to the longest contiguous region of
    code-looking lines, accepted only when it spans at least three non-blank
    lines and mentions ``#include`` or ``int main``.
    """
    if not response.strip():
        raise NoCodeBlock("empty response")
    blocks = _FENCE_RE.findall(response)
    if blocks:
        return blocks[-1]

    lines = response.split("\n")
    regions: list[tuple[int, int]] = []
    start = None
    for i, line in enumerate(lines + [""]):
        if i < len(lines) and _line_is_code(line):
            if start is None:
                start = i
        else:
            if start is not None:
                regions.append((start, i))
                start = None
    best = ""
    for lo, hi in regions:
        text = "\n".join(lines[lo:hi]).strip("\n")
        non_blank = sum(1 for l in text.split("\n") if l.strip())
        if non_blank >= 3 and ("#include" in text or "int main" in text):
            if len(text) > len(best):
                best = text
    if not best:
        raise NoCodeBlock("no fenced block and no plausible code region")
    return best


def ensure_sycl_preamble(source: str) -> str:
    """Prepend the mandatory header block when the model dropped it."""
    if "#include <sycl/sycl.hpp>" in source:
        return source
    return SYCL_PREAMBLE + "\n" + source


class GenerationPipeline:
    """Wires prompts, retrieval and the LLM into the generation stages."""

    def __init__(
        self,
        prompts: PromptFactory,
        llm: LLMService,
        index: VectorIndex | None = None,
        embedder=None,
        retrieval_threshold: float = 0.5,
        retrieval_k: int = 4,
    ):
        self.prompts = prompts
        self.llm = llm
        self.index = index
        self.embedder = embedder
        self.retrieval_threshold = retrieval_threshold
        self.retrieval_k = retrieval_k
        self._characteristics_cache: dict[str, Characteristics] = {}

    def _context(self, prompt) -> list[RetrievedChunk]:
        if self.index is None or self.embedder is None or len(self.index) == 0:
            return []
        return self.index.retrieve(
            prompt.text, self.retrieval_threshold, self.retrieval_k, self.embedder
        )

    def generate_characteristics(self, fn: PassFunction) -> Characteristics:
        """Stage 1; generated once per function per campaign (cached)."""
        cache_key = f"{fn.pass_name}|{fn.qualified_name}|{derive_seed(fn.body)}"
        cached = self._characteristics_cache.get(cache_key)
        if cached is not None:
            return cached
        prompt = self.prompts.characteristics_prompt(fn.pass_name, fn.body)
        completion = self.llm.llm_complete(prompt, self._context(prompt), "characteristics")
        if not completion.text.strip():
            raise EmptyResponse(f"blank characteristics for {fn.qualified_name}")
        result = Characteristics(
            pass_name=fn.pass_name, function_key=fn.qualified_name, text=completion.text
        )
        self._characteristics_cache[cache_key] = result
        return result

    def seed_characteristics_cache(self, fn: PassFunction, ch: Characteristics) -> None:
        """Used on resume so persisted results suppress provider calls."""
        cache_key = f"{fn.pass_name}|{fn.qualified_name}|{derive_seed(fn.body)}"
        self._characteristics_cache[cache_key] = ch

    def generate_testcase(
        self, ch: Characteristics, selection: FeatureSelection, case_id: str
    ) -> TestCase:
        """Stage 2: characteristics plus feature requirements -> draft case."""
        reqs = f"{ch.text}\n\n{render_feature_requirements(selection)}"
        prompt = self.prompts.codegen_prompt(ch.pass_name, reqs)
        completion = self.llm.llm_complete(prompt, self._context(prompt), "codegen")
        source = ensure_sycl_preamble(extract_code_block(completion.text))
        return TestCase(
            case_id=case_id,
            pass_name=ch.pass_name,
            source=source,
            status=CaseStatus.DRAFT,
            characteristics_key=ch.function_key,
            selection=selection,
        )

    def repair_loop(
        self,
        case: TestCase,
        gate_compile: Callable[[str], CompileResult],
        max_attempts: int = 5,
    ) -> RepairOutcome:
        """Compile; on failure ask for a fix and retry, at most max_attempts.

        The gate is one configured (compiler, target, opt level) triple; the
        full matrix only sees cases that pass it.
        """
        result = gate_compile(case.source)
        if result.ok:
            case.status = CaseStatus.COMPILES
            return RepairOutcome(case, 0, True)
        attempts = 0
        while attempts < max_attempts:
            attempts += 1
            prompt = self.prompts.repair_prompt(case.source, result.stderr)
            try:
                completion = self.llm.llm_complete(prompt, self._context(prompt), "repair")
            except ProviderError as exc:
                case.status = CaseStatus.ABANDONED
                case.abandon_reason = f"provider_error: {exc}"
                return RepairOutcome(case, attempts, False)
            try:
                fixed = ensure_sycl_preamble(extract_code_block(completion.text))
            except NoCodeBlock:
                case.repair_transcript.append(RepairAttempt(result.stderr, ""))
                continue  # burn the attempt; the old source recompiles below
            case.repair_transcript.append(RepairAttempt(result.stderr, fixed))
            case.source = fixed
            result = gate_compile(case.source)
            if result.ok:
                case.status = CaseStatus.COMPILES
                return RepairOutcome(case, attempts, True)
        case.status = CaseStatus.ABANDONED
        case.abandon_reason = "compile_failed"
        return RepairOutcome(case, attempts, False)

    def mutate_one(
        self, case: TestCase, index: int, catalog: FeatureCatalog, base_seed: int
    ) -> TestCase:
        """The index-th mutation draft of a compiling case."""
        child_seed = derive_seed(base_seed, case.case_id, index)
        selection = sample_features(catalog, child_seed)
        prompt = self.prompts.mutation_prompt(
            case.source, render_feature_requirements(selection)
        )
        completion = self.llm.llm_complete(prompt, self._context(prompt), "mutation")
        source = ensure_sycl_preamble(extract_code_block(completion.text))
        return TestCase(
            case_id=f"{case.case_id}.m{index}",
            pass_name=case.pass_name,
            source=source,
            status=CaseStatus.DRAFT,
            characteristics_key=case.characteristics_key,
            selection=selection,
            parent_id=case.case_id,
        )

    def mutate(
        self,
        case: TestCase,
        count: int,
        catalog: FeatureCatalog,
        base_seed: int,
    ) -> list[TestCase]:
        """X fresh-feature variants of a compiling case, as drafts."""
        if count < 0:
            raise ValueError("mutation count must be >= 0")
        return [self.mutate_one(case, j, catalog, base_seed) for j in range(count)]
