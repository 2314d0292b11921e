"""Fixture builders for CLI and acceptance tests."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from selfcorrect.builder import NV_TEXTS, PV_TEXTS
from selfcorrect.grading import write_questions

from helpers import make_question


def run_cli(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "selfcorrect", *args],
        cwd=cwd, capture_output=True, text=True,
    )


def positive_completion(label, option_text, pv=PV_TEXTS[0]):
    return (
        f"working through the choices step by step\n"
        f"Therefore, the correct answer is {label}. {option_text}\n"
        f"Thinking about the correctness of the previous answer...\n"
        f"Thinking result: {pv}"
    )


def negative_completion(initial, revised, options, nv=NV_TEXTS[0]):
    return (
        f"working through the choices step by step\n"
        f"So the answer is {initial}. {options[initial]}\n"
        f"Thinking about the correctness of the previous answer...\n"
        f"Thinking result: {nv}\n"
        f"reconsidering the options once more\n"
        f"So the correct option is {revised}. {options[revised]}."
    )


def plain_answer(label, option_text):
    return f"thinking it over carefully\nthe answer is {label}. {option_text}"


def write_pipeline_fixture(root: Path, n: int = 20) -> dict:
    """Questions plus build/eval stubs for the end-to-end pipeline.

    Build stub: 13 correct answers, 6 wrong (with corrected explanations),
    1 unparseable. Eval stub (two rounds): 11 items initially right with a
    positive verdict, 3 initially wrong with a positive verdict, and 6
    negative-verdict items of which round 2 fixes 3.
    """
    assert n == 20, "fixture is scripted for exactly 20 questions"
    root.mkdir(parents=True, exist_ok=True)
    questions = [make_question(f"e{i:02d}", n_options=4, ground_truth="A") for i in range(n)]
    write_questions(questions, root / "questions.jsonl")

    build_stub: dict[str, list[str]] = {}
    for i, q in enumerate(questions):
        if i < 13:
            build_stub[q.id] = [plain_answer("A", q.options["A"])]
        elif i < 19:
            build_stub[q.id] = [plain_answer("B", q.options["B"])]
            build_stub[f"{q.id}::explain"] = [
                f"reviewing every option shows option a text fits best for {q.id}"
            ]
        else:
            build_stub[q.id] = ["there is simply no telling"]
    (root / "build_stub.json").write_text(json.dumps(build_stub, indent=2), encoding="utf-8")

    eval_stub: dict[str, list[str]] = {}
    for i, q in enumerate(questions):
        if i < 11:
            eval_stub[q.id] = [positive_completion("A", q.options["A"])]
        elif i < 14:
            eval_stub[q.id] = [positive_completion("B", q.options["B"])]
        elif i < 17:
            eval_stub[q.id] = [
                negative_completion("B", "B", q.options),
                positive_completion("A", q.options["A"]),
            ]
        else:
            eval_stub[q.id] = [
                negative_completion("B", "C", q.options),
                positive_completion("B", q.options["B"]),
            ]
    (root / "eval_stub.json").write_text(json.dumps(eval_stub, indent=2), encoding="utf-8")
    return {
        "questions": root / "questions.jsonl",
        "build_stub": root / "build_stub.json",
        "eval_stub": root / "eval_stub.json",
        "n_corpus": 19,
        "acc_round1": 55.0,
        "acc_round2": 70.0,
        "fixed_in_round2": 3,
    }


@pytest.fixture
def pipeline_fixture(tmp_path):
    return write_pipeline_fixture(tmp_path / "fixture")
