"""Operator entry point: build-data, mask, train-toy, eval, and report subcommands.

Every command validates its inputs up front (all problems reported at once,
exit status 2), writes its outputs into --out, and drops a run_config.json
beside them so any run can be reproduced against the stub.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from . import builder, masking, metrics, report, runner, toylm
from .gateway import GatewayError, HttpChatGateway, SamplingParams, StubGateway
from .grading import load_questions
from .jsonio import JsonLineError, dump_json
from .prompts import DEFAULT_POOLS, PoolFileError, load_pools

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_CONFIG = 2


@dataclass
class RunConfig:
    subcommand: str
    questions: str | None = None
    pools: str | None = None
    corpus: str | None = None
    masked: str | None = None
    results: tuple[str, ...] = ()
    out: str = ""
    stub: str | None = None
    seed: int = 0
    k: int = 5
    top_p: float = 0.95
    temperature: float = 0.8
    max_tokens: int = 512
    max_rounds: int = 1
    parallelism: int = 1
    steps: int = 500
    lr: float = 0.5
    per_answer: bool = False
    policy: str = "partial"
    separator: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["results"] = list(self.results)
        return d


class ConfigErrors(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _require_files(pairs: list[tuple[str, str | None]]) -> None:
    problems = []
    for name, path in pairs:
        if path is not None and not Path(path).exists():
            problems.append(f"--{name}: file not found: {path}")
    if problems:
        raise ConfigErrors(problems)


def _make_gateway(config: RunConfig):
    if config.stub:
        return StubGateway.from_file(config.stub)
    return HttpChatGateway()


def _ensure_out(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(config.to_dict(), out / "run_config.json")
    return out


def _sampling(config: RunConfig, n: int = 1) -> SamplingParams:
    return SamplingParams(
        temperature=config.temperature,
        top_p=config.top_p,
        n=n,
        max_tokens=config.max_tokens,
    )


def _load_pools(config: RunConfig):
    return load_pools(config.pools) if config.pools else DEFAULT_POOLS


def cmd_build_data(config: RunConfig) -> int:
    _require_files([("questions", config.questions), ("pools", config.pools), ("stub", config.stub)])
    questions = load_questions(config.questions)
    pools = _load_pools(config)
    gateway = _make_gateway(config)
    build_config = builder.BuildConfig(
        k=config.k,
        mode=builder.MODE_PER_ANSWER if config.per_answer else builder.MODE_PER_QUESTION,
        seed=config.seed,
        parallelism=config.parallelism,
    )
    corpus, stats = builder.build_corpus(questions, pools, _sampling(config), gateway, build_config)
    out = _ensure_out(config)
    builder.write_corpus(corpus, out / "corpus.jsonl")
    dump_json({"run_config": config.to_dict(), **stats.to_dict()}, out / "stats.json")
    print(f"wrote {len(corpus)} samples ({stats.good_count} good, {stats.bad_count} bad, "
          f"{len(stats.skipped)} skipped) to {out / 'corpus.jsonl'}")
    return EXIT_OK


def cmd_mask(config: RunConfig) -> int:
    _require_files([("corpus", config.corpus)])
    corpus = builder.read_corpus(config.corpus)
    texts = [seg.text for sample in corpus for seg in sample.segments]
    if config.separator:
        texts.append(config.separator)
    tokenizer = masking.CharTokenizer.from_texts(texts)
    flag_fn = masking.assign_loss_flags if config.policy == "partial" else masking.full_answer_flags
    masked = [
        masking.tokenize_and_mask(s, tokenizer, flags=flag_fn(s), separator=config.separator)
        for s in corpus
    ]
    out = _ensure_out(config)
    masking.write_masked_corpus(masked, out / "masked.jsonl")
    dump_json(
        {"run_config": config.to_dict(), "tokenizer": tokenizer.to_dict(), "policy": config.policy},
        out / "tokenizer.json",
    )
    print(f"wrote {len(masked)} masked samples to {out / 'masked.jsonl'}")
    return EXIT_OK


def cmd_train_toy(config: RunConfig) -> int:
    _require_files([("masked", config.masked)])
    masked = masking.read_masked_corpus(config.masked)
    if not masked:
        raise ConfigErrors([f"--masked: no samples in {config.masked}"])
    vocab = max(max(s.token_ids) for s in masked if s.token_ids) + 1
    model = toylm.init_model(toylm.ToyLMConfig(vocab_size=vocab, seed=config.seed))
    grad_error = toylm.grad_check(model, masked[0], epsilon=1e-4)
    train_report = toylm.train(model, masked, steps=config.steps, learning_rate=config.lr)
    out = _ensure_out(config)
    dump_json(
        {
            "run_config": config.to_dict(),
            "grad_check_max_rel_error": grad_error,
            "grad_check_tolerance": toylm.GRAD_CHECK_TOLERANCE,
            **train_report.to_dict(),
        },
        out / "train_report.json",
    )
    report.plot_loss_curve(train_report.loss_curve, out / "loss_curve.png")
    print(f"trained {config.steps} steps: final masked loss {train_report.final_masked_loss:.4f}, "
          f"grad check {grad_error:.2e}")
    if grad_error > toylm.GRAD_CHECK_TOLERANCE:
        print(
            f"error: gradient check {grad_error:.2e} exceeds tolerance {toylm.GRAD_CHECK_TOLERANCE:.0e}",
            file=sys.stderr,
        )
        return EXIT_FATAL
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    _require_files([("questions", config.questions), ("pools", config.pools), ("stub", config.stub)])
    questions = load_questions(config.questions)
    pools = _load_pools(config)
    gateway = _make_gateway(config)
    traces, failures = runner.run_dataset(
        gateway,
        questions,
        pools,
        seed=config.seed,
        max_rounds=config.max_rounds,
        params=_sampling(config),
        parallelism=config.parallelism,
    )
    out = _ensure_out(config)
    runner.write_traces(traces, out / "traces.jsonl")
    if not traces:
        raise ConfigErrors(["no traces produced; every item failed"])
    evaluated = [q for q in questions if q.id in {t.question_id for t in traces}]
    result = metrics.compute_metrics(traces, evaluated)
    rounds = metrics.accuracy_by_round(traces, evaluated, max_rounds=config.max_rounds)
    doc = {
        "run_config": config.to_dict(),
        "metrics": result.to_dict(),
        "accuracy_by_round": rounds,
        "consistency_violations": metrics.consistency_check(result),
        "failures": failures,
    }
    dump_json(doc, out / "eval_report.json")
    print(f"evaluated {result.n} items: acc_first {result.acc_first:.1f}, acc {result.acc:.1f}, "
          f"confidence {result.confidence:.1f}")
    for r, value in enumerate(rounds, start=1):
        print(f"  accuracy after round {r}: {value:.1f}")
    return EXIT_OK


def cmd_report(config: RunConfig) -> int:
    _require_files([(f"results[{i}]", p) for i, p in enumerate(config.results)])
    import json

    rows: list[tuple[str, metrics.EvalResult]] = []
    rounds_series: dict[str, list[float]] = {}
    for path in config.results:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        label = Path(path).stem
        if label == "eval_report":
            label = Path(path).parent.name or label
        rows.append((label, metrics.EvalResult.from_dict(doc["metrics"])))
        by_round = doc.get("accuracy_by_round") or []
        if len(by_round) > 1:
            rounds_series[label] = by_round
    out = _ensure_out(config)
    table = report.render_metrics_table(rows)
    (out / "report.txt").write_text(table, encoding="utf-8")
    report.write_metrics_csv(rows, out / "report.csv")
    report.plot_accuracy(rows, out / "accuracy.png")
    report.plot_transitions(rows, out / "transitions.png")
    if rounds_series:
        report.plot_accuracy_by_round(rounds_series, out / "accuracy_by_round.png")
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfcorrect")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser, *, gateway: bool = False) -> None:
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        if gateway:
            p.add_argument("--stub", help="scripted stub file (offline mode)")
            p.add_argument("--top-p", dest="top_p", type=float, default=0.95)
            p.add_argument("--temperature", type=float, default=0.8)
            p.add_argument("--max-tokens", dest="max_tokens", type=int, default=512)
            p.add_argument("--parallelism", type=int, default=1)

    p = sub.add_parser("build-data", help="construct a self-correction corpus from questions")
    p.add_argument("--questions", required=True)
    p.add_argument("--pools", help="prompt-pool file (built-in defaults when omitted)")
    p.add_argument("--k", type=int, default=5, help="answers sampled per question")
    p.add_argument("--per-answer", action="store_true", help="one sample per sampled answer")
    common(p, gateway=True)

    p = sub.add_parser("mask", help="tokenize a corpus and assign loss masks")
    p.add_argument("--corpus", required=True)
    p.add_argument("--policy", choices=("partial", "full"), default="partial")
    p.add_argument("--separator", default="")
    common(p)

    p = sub.add_parser("train-toy", help="train the toy model on a masked corpus")
    p.add_argument("--masked", required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    common(p)

    p = sub.add_parser("eval", help="run multi-round self-correction and compute metrics")
    p.add_argument("--questions", required=True)
    p.add_argument("--pools")
    p.add_argument("--max-rounds", dest="max_rounds", type=int, default=1)
    common(p, gateway=True)
    p.set_defaults(temperature=0.0, top_p=1.0)

    p = sub.add_parser("report", help="render tables, CSV, and figures from eval results")
    p.add_argument("--results", nargs="+", required=True, help="eval_report.json files")
    common(p)

    return parser


_COMMANDS = {
    "build-data": cmd_build_data,
    "mask": cmd_mask,
    "train-toy": cmd_train_toy,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    values = vars(args).copy()
    subcommand = values.pop("subcommand")
    if "results" in values and values["results"] is not None:
        values["results"] = tuple(values["results"])
    config = RunConfig(subcommand=subcommand, **{k: v for k, v in values.items() if v is not None})
    try:
        return _COMMANDS[subcommand](config)
    except ConfigErrors as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except PoolFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GatewayError, JsonLineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    raise SystemExit(main())
