"""Reference implementations used as oracles by the test suite.

brute_force_classify restates the discrepancy rules as a naive scan over
every unordered cell pair, deliberately sharing no pairing or grouping logic
with the production classifier. It stays the slow, obviously-correct
benchmark that classify() is checked against.
"""
from __future__ import annotations

import re
from itertools import combinations

from .difftest import (
    Axis,
    ComparisonPolicy,
    Discrepancy,
    DiscrepancyKind,
    IssueClass,
    ResultsMatrix,
    Witness,
    normalize_output,
)
from .toolchain import RunResult, RunStatus


def _axis_of(a: RunResult, b: RunResult) -> Axis | None:
    """Axis the pair differs on, or None when the pair is not comparable.

    Coordinates are (compiler, target, opt, device). A lone differing
    coordinate maps to its axis; compiler+device together still count as the
    compiler axis because each compiler's binaries run on their own device.
    """
    diffs = set()
    if a.cell.compiler_id != b.cell.compiler_id:
        diffs.add("compiler")
    if a.cell.target != b.cell.target:
        diffs.add("target")
    if a.cell.opt_level != b.cell.opt_level:
        diffs.add("opt")
    if a.cell.device_id != b.cell.device_id:
        diffs.add("device")
    if diffs == {"opt"}:
        return Axis.CROSS_OPT_LEVEL
    if diffs == {"device"}:
        return Axis.CROSS_DEVICE
    if diffs == {"compiler"} or diffs == {"compiler", "device"}:
        return Axis.CROSS_COMPILER
    return None


def brute_force_classify(
    matrix: ResultsMatrix, policy: ComparisonPolicy | None = None
) -> list[Discrepancy]:
    policy = policy or ComparisonPolicy()
    assert len(matrix.cells) <= 64, "reference classifier is for small matrices"
    results = list(matrix.cells.values())
    found: dict[tuple[DiscrepancyKind, Axis], tuple[tuple, Discrepancy]] = {}

    for x, y in combinations(results, 2):
        a, b = (x, y) if x.cell <= y.cell else (y, x)
        axis = _axis_of(a, b)
        if axis is None:
            continue

        kinds: list[DiscrepancyKind] = []
        a_ok = a.status == RunStatus.OK
        b_ok = b.status == RunStatus.OK
        if a_ok and b_ok:
            out_a = normalize_output(a.stdout, policy.float_sig_digits)
            out_b = normalize_output(b.stdout, policy.float_sig_digits)
            if out_a != out_b:
                kinds.append(DiscrepancyKind.OUTPUT_MISMATCH)
        a_crash = a.status == RunStatus.CRASH_SIGNAL
        b_crash = b.status == RunStatus.CRASH_SIGNAL
        if a_crash != b_crash:
            kinds.append(DiscrepancyKind.CRASH_ON_SOME)
        a_err = a.status in (RunStatus.NONZERO_EXIT, RunStatus.LAUNCH_ERROR)
        b_err = b.status in (RunStatus.NONZERO_EXIT, RunStatus.LAUNCH_ERROR)
        if a_err != b_err:
            kinds.append(DiscrepancyKind.RUNTIME_ERROR_ON_SOME)
        a_to = a.status == RunStatus.TIMEOUT
        b_to = b.status == RunStatus.TIMEOUT
        if a_to != b_to:
            kinds.append(DiscrepancyKind.TIMEOUT_DIVERGENCE)
        a_unsup = any(re.search(p, a.stderr) for p in policy.unsupported_patterns)
        b_unsup = any(re.search(p, b.stderr) for p in policy.unsupported_patterns)
        if a_unsup != b_unsup:
            kinds.append(DiscrepancyKind.UNSUPPORTED_FEATURE)

        if not kinds:
            continue
        issue = (
            IssueClass.INCONSISTENT_ACROSS_ARCH
            if a_ok and b_ok
            else IssueClass.IMPL_ISSUE_ON_ARCH
        )
        witness = Witness(
            cell_a=a.cell,
            cell_b=b.cell,
            status_a=a.status.value,
            status_b=b.status.value,
            output_a=normalize_output(a.stdout, policy.float_sig_digits),
            output_b=normalize_output(b.stdout, policy.float_sig_digits),
        )
        order_key = (a.cell, b.cell)
        for kind in kinds:
            prior = found.get((kind, axis))
            if prior is None or order_key < prior[0]:
                found[(kind, axis)] = (
                    order_key,
                    Discrepancy(matrix.case_id, kind, axis, witness, issue),
                )

    out = [d for _, d in found.values()]
    out.sort(key=lambda d: (d.kind.value, d.axis.value))
    return out
