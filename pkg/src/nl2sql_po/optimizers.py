"""The four prompt-optimization strategies and multi-objective scoring.

Strategies: random exemplar selection (res), its tuned-k variant driven by the
SMBO engine (ores), joint instruction/exemplar pair selection (joint), and the
iterative two-agent refinement loop (ipo). All of them are bit-reproducible
under a fixed seed with scripted or replay backends.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from . import prompts, smbo
from .dataset import Corpus, DatasetError, sample_exemplars, split
from .llmclient import DEFAULT_PROPOSER_TEMPERATURE, LLMClientError
from .prompts import Prompt, PromptParseError
from .seeding import derive_seed, substream
from .sqlharness import EvalReport, ScoreOptions, score_prompt

logger = logging.getLogger(__name__)

PROPOSER_MAX_OUTPUT_TOKENS = 4096


class OptimizerError(Exception):
    """Configuration or evaluation failure during an optimization run."""


@dataclass(frozen=True)
class ObjectiveSpec:
    mode: str = "accuracy_only"  # accuracy_only | accuracy_latency
    latency_weight: float = 0.2
    latency_normalizer: float = 10.0

    def __post_init__(self) -> None:
        if self.mode not in ("accuracy_only", "accuracy_latency"):
            raise OptimizerError(f"unknown objective mode {self.mode!r}")
        if self.latency_weight < 0:
            raise OptimizerError("latency_weight must be ≥ 0")
        if self.latency_normalizer <= 0:
            raise OptimizerError("latency_normalizer must be positive")


@dataclass
class OptimizationConfig:
    method: str = "ores"  # res | ores | joint | ipo
    num_trials: int = 20
    num_iterations: int = 5
    k_fixed: int = 10
    k_max: int | None = None  # None → min(100, |train|)
    res_restarts: int = 10
    valid_sample_size: int = 30
    min_proposed_exemplars: int = 5
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    seed: int = 0
    valid_fraction: float = 0.2
    n_pairs: int = 10
    timeout: float = 30.0
    latency_warmups: int = 1
    latency_repeats: int = 3
    max_workers: int = 1

    def score_options(self) -> ScoreOptions:
        return ScoreOptions(
            timeout=self.timeout,
            with_latency=self.objective.mode == "accuracy_latency",
            latency_warmups=self.latency_warmups,
            latency_repeats=self.latency_repeats,
            latency_cap=self.objective.latency_normalizer,
            max_workers=self.max_workers,
        )


def objective_score(report: EvalReport, spec: ObjectiveSpec) -> float:
    """Scalarize a report: accuracy, optionally penalized by mean latency."""
    if spec.mode == "accuracy_only":
        return report.accuracy
    if report.latency is None:
        raise OptimizerError("accuracy_latency objective requires latency stats")
    penalty = spec.latency_weight * min(report.latency.mean / spec.latency_normalizer,
                                        1.0)
    return report.accuracy - penalty


def pick_best(scored: list[tuple[float, Prompt, EvalReport]]):
    """First strict maximum wins; ties keep the earlier candidate."""
    if not scored:
        raise OptimizerError("nothing to pick from")
    best = scored[0]
    for entry in scored[1:]:
        if entry[0] > best[0]:
            best = entry
    return best


def _evaluate(llm, prompt: Prompt, eval_set: Corpus,
              cfg: OptimizationConfig) -> tuple[float, EvalReport]:
    report = score_prompt(llm, prompt, eval_set, cfg.score_options())
    return objective_score(report, cfg.objective), report


def run_res(train: Corpus, valid: Corpus, llm,
            cfg: OptimizationConfig) -> tuple[Prompt, EvalReport]:
    """Best of `res_restarts` independent uniform samples of size k_fixed."""
    if len(train) == 0 or len(valid) == 0:
        raise OptimizerError("train and valid must be non-empty")
    if cfg.k_fixed > len(train):
        raise OptimizerError(f"k_fixed={cfg.k_fixed} exceeds train size {len(train)}")
    scored: list[tuple[float, Prompt, EvalReport]] = []
    history = []
    for restart in range(cfg.res_restarts):
        exemplars = sample_exemplars(
            train, cfg.k_fixed, derive_seed(cfg.seed, "res", "sample", str(restart)))
        prompt = Prompt(prompts.NL2SQL_INSTRUCTION, exemplars,
                        {"method": "res", "restart": restart})
        score, report = _evaluate(llm, prompt, valid, cfg)
        history.append({"restart": restart, "score": score,
                        "accuracy": report.accuracy})
        scored.append((score, prompt, report))
        logger.info("res restart %d: score=%.4f", restart, score)
    best_score, best_prompt, best_report = pick_best(scored)
    best_prompt.metadata.update({"best_score": best_score, "score_history": history,
                                 "restarts": cfg.res_restarts})
    return best_prompt, best_report


def run_ores(corpus: Corpus, llm, cfg: OptimizationConfig,
             study: smbo.Study | None = None) -> tuple[Prompt, EvalReport]:
    """Tune the exemplar count k on [0, K] with SMBO; strict-improvement best."""
    parts = split(corpus, cfg.valid_fraction, derive_seed(cfg.seed, "ores", "split"))
    train, valid = parts.train, parts.valid
    k_max = cfg.k_max if cfg.k_max is not None else min(100, len(train))
    study = study if study is not None else smbo.Study()
    rng = substream(cfg.seed, "ores", "tpe")

    best_score = 0.0
    best_prompt = prompts.base_prompt("ores")
    best_report: EvalReport | None = None
    history = []
    for i in range(cfg.num_trials):
        k = smbo.suggest_int(study, "k", 0, k_max, rng)
        exemplars = sample_exemplars(
            train, k, derive_seed(cfg.seed, "ores", "sample", str(i)),
            mode="with_replacement")
        prompt = Prompt(prompts.NL2SQL_INSTRUCTION, exemplars,
                        {"method": "ores", "trial": i})
        try:
            score, report = _evaluate(llm, prompt, valid, cfg)
        except LLMClientError as exc:
            raise OptimizerError(f"trial {i} failed: {exc}") from exc
        smbo.record(study, smbo.Trial(i, {"k": k}, score, payload={
            "k": k, "exemplar_ids": [ex.question_id for ex in exemplars]}))
        history.append({"trial": i, "k": k, "score": score,
                        "accuracy": report.accuracy})
        if score > best_score:
            best_score, best_prompt, best_report = score, prompt, report
        logger.info("ores trial %d: k=%d score=%.4f best=%.4f", i, k, score, best_score)

    if best_report is None:
        # No trial beat the initial score: return the base prompt, evaluated
        # once on the validation set purely to fill the report.
        _, best_report = _evaluate(llm, best_prompt, valid, cfg)
    best_prompt.metadata.update({"best_score": best_score, "score_history": history,
                                 "trials": cfg.num_trials, "k_max": k_max})
    return best_prompt, best_report


def propose_instruction(llm, exemplar_set, cfg: OptimizationConfig) -> str:
    """Ask the LLM for an instruction seeded by one bootstrap exemplar set."""
    seeded = Prompt(prompts.NL2SQL_INSTRUCTION, list(exemplar_set),
                    {"method": "joint"})
    ctx = prompts.build_proposer_context(seeded, 0.0, seeded, 0.0)
    rendered = prompts.render_proposer(ctx, cfg.min_proposed_exemplars)
    result = llm.complete_text(rendered, temperature=DEFAULT_PROPOSER_TEMPERATURE,
                               max_output_tokens=PROPOSER_MAX_OUTPUT_TOKENS,
                               tag="instruction-proposal")
    return prompts.parse_proposal(result.text).instruction


def select_best_pair(pairs: list[Prompt], valid: Corpus, llm,
                     cfg: OptimizationConfig,
                     study: smbo.Study | None = None) -> tuple[Prompt, EvalReport]:
    """Stage 2 of the joint optimizer: SMBO over the pair index."""
    if not pairs:
        raise OptimizerError("no instruction-exemplar pairs to select from")
    if cfg.num_trials < 1:
        raise OptimizerError("joint selection needs num_trials ≥ 1")
    study = study if study is not None else smbo.Study()
    rng = substream(cfg.seed, "joint", "tpe")
    reports: dict[int, EvalReport] = {}
    for i in range(cfg.num_trials):
        idx = smbo.suggest_int(study, "pair", 0, len(pairs) - 1, rng)
        if idx in reports:
            score = objective_score(reports[idx], cfg.objective)
        else:
            score, report = _evaluate(llm, pairs[idx], valid, cfg)
            reports[idx] = report
        smbo.record(study, smbo.Trial(i, {"pair": idx}, score, payload={"pair": idx}))
        logger.info("joint trial %d: pair=%d score=%.4f", i, idx, score)
    best_trial = study.best
    winner = pairs[best_trial.params["pair"]]
    winner.metadata.update({"best_score": best_trial.score,
                            "trials": cfg.num_trials})
    return winner, reports[best_trial.params["pair"]]


def run_joint(corpus: Corpus, llm, cfg: OptimizationConfig,
              study: smbo.Study | None = None) -> tuple[Prompt, EvalReport]:
    """Bootstrap N instruction-exemplar pairs, then pick the best by SMBO."""
    parts = split(corpus, cfg.valid_fraction, derive_seed(cfg.seed, "joint", "split"))
    train, valid = parts.train, parts.valid
    set_size = min(cfg.k_fixed, len(train))
    pairs: list[Prompt] = []
    for j in range(cfg.n_pairs):
        exemplars = sample_exemplars(
            train, set_size, derive_seed(cfg.seed, "joint", "bootstrap", str(j)))
        try:
            instruction = propose_instruction(llm, exemplars, cfg)
        except (PromptParseError, LLMClientError) as exc:
            logger.warning("pair %d: instruction generation failed, skipping (%s)",
                           j, exc)
            continue
        pairs.append(Prompt(instruction, exemplars, {"method": "joint", "pair": j}))
    if not pairs:
        raise OptimizerError("all instruction-exemplar pairs failed to generate")
    return select_best_pair(pairs, valid, llm, cfg, study)


def run_ipo(corpus: Corpus, proposer_llm, generator_llm,
            cfg: OptimizationConfig) -> tuple[Prompt, EvalReport]:
    """Two-agent loop: the proposer refines the prompt the generator is scored on.

    Each iteration evaluates the proposal on a fresh sample from the training
    side; the returned best is re-evaluated once on a held-out set so prompts
    scored on different samples share a common yardstick.
    """
    if cfg.num_iterations < 1:
        raise OptimizerError("ipo needs num_iterations ≥ 1")
    parts = split(corpus, cfg.valid_fraction, derive_seed(cfg.seed, "ipo", "split"))
    train, heldout = parts.train, parts.valid

    base = prompts.base_prompt("ipo")
    best_prompt = current_prompt = base
    best_score = 0.0
    best_accuracy = current_accuracy = 0.0
    wrong: list = []
    correct: list = []
    history = []

    for iteration in range(1, cfg.num_iterations + 1):
        sample_size = min(cfg.valid_sample_size, len(train))
        eval_items = sample_exemplars(
            train, sample_size, derive_seed(cfg.seed, "ipo", "sample", str(iteration)))
        eval_set = train.subset(eval_items)

        ctx = prompts.build_proposer_context(
            best_prompt, best_accuracy, current_prompt, current_accuracy,
            wrong_examples=wrong, correct_examples=correct)
        rendered = prompts.render_proposer(ctx, cfg.min_proposed_exemplars)
        proposal = _propose_with_retry(proposer_llm, rendered, cfg, iteration)
        if proposal is None:
            history.append({"iteration": iteration, "score": None, "accuracy": None,
                            "status": "proposal-rejected"})
            continue
        proposal.metadata["created_by_iteration"] = iteration

        score, report = _evaluate(generator_llm, proposal, eval_set, cfg)
        history.append({"iteration": iteration, "score": score,
                        "accuracy": report.accuracy, "status": "evaluated"})
        current_prompt, current_accuracy = proposal, report.accuracy
        wrong, correct = report.wrong_examples, report.correct_examples
        if score > best_score:
            best_prompt, best_score, best_accuracy = proposal, score, report.accuracy
        logger.info("ipo iteration %d: score=%.4f best=%.4f", iteration, score,
                    best_score)

    _, final_report = _evaluate(generator_llm, best_prompt, heldout, cfg)
    best_prompt.metadata.update({
        "method": "ipo", "best_score": best_score, "score_history": history,
        "iterations": cfg.num_iterations,
    })
    return best_prompt, final_report


def _propose_with_retry(proposer_llm, rendered: str, cfg: OptimizationConfig,
                        iteration: int) -> Prompt | None:
    reminder = prompts.FORMAT_REMINDER.format(
        min_exemplars=cfg.min_proposed_exemplars)
    for attempt, prompt_text in enumerate((rendered, rendered + reminder)):
        result = proposer_llm.complete_text(
            prompt_text, temperature=DEFAULT_PROPOSER_TEMPERATURE,
            max_output_tokens=PROPOSER_MAX_OUTPUT_TOKENS, tag="proposer")
        try:
            proposal = prompts.parse_proposal(result.text)
        except PromptParseError as exc:
            logger.warning("iteration %d attempt %d: unparsable proposal (%s)",
                           iteration, attempt + 1, exc)
            continue
        if len(proposal.exemplars) < cfg.min_proposed_exemplars:
            logger.warning("iteration %d attempt %d: proposal has %d exemplars, "
                           "need ≥ %d", iteration, attempt + 1,
                           len(proposal.exemplars), cfg.min_proposed_exemplars)
            continue
        return proposal
    logger.warning("iteration %d aborted: proposer failed twice", iteration)
    return None
