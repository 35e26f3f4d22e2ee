"""Prompt optimization for NL2SQL systems.

Optimizes the static part of an NL2SQL prompt (instruction plus exemplar set)
by random search, SMBO/TPE over the exemplar count, joint instruction-exemplar
pair selection, or an iterative two-agent refinement loop, scoring candidates
by SQL execution accuracy and, optionally, execution latency. Also builds a
latency-annotated multi-variant benchmark from a BIRD-style corpus.
"""

__version__ = "0.1.0"

from .dataset import (Corpus, DatasetError, Exemplar, SchemaDescriptor, Split,
                      introspect_schema, load_corpus, render_schema,
                      sample_exemplars, split)
from .llmclient import (CompletionRequest, CompletionResult, GoldLookupPolicy,
                        HttpBackend, KDependentPolicy, LLMClient, LLMClientError,
                        ReplayBackend, ScriptedBackend, construct_tag,
                        estimate_tokens, fixed_response_policy, scripted_oracle)
from .optimizers import (ObjectiveSpec, OptimizationConfig, OptimizerError,
                         objective_score, run_ipo, run_joint, run_ores, run_res)
from .prompts import (Prompt, PromptParseError, ProposerContext, parse_proposal,
                      render_nl2sql, render_proposer, render_variant_request)
from .sqlharness import (EvalReport, ExecOutcome, HarnessError, LatencyStats,
                         ResultTable, ScoreOptions, execute, execution_match,
                         measure_latency, score_prompt)

__all__ = [
    "Corpus", "DatasetError", "Exemplar", "SchemaDescriptor", "Split",
    "introspect_schema", "load_corpus", "render_schema", "sample_exemplars",
    "split",
    "CompletionRequest", "CompletionResult", "GoldLookupPolicy", "HttpBackend",
    "KDependentPolicy", "LLMClient", "LLMClientError", "ReplayBackend",
    "ScriptedBackend", "construct_tag", "estimate_tokens",
    "fixed_response_policy", "scripted_oracle",
    "ObjectiveSpec", "OptimizationConfig", "OptimizerError", "objective_score",
    "run_ipo", "run_joint", "run_ores", "run_res",
    "Prompt", "PromptParseError", "ProposerContext", "parse_proposal",
    "render_nl2sql", "render_proposer", "render_variant_request",
    "EvalReport", "ExecOutcome", "HarnessError", "LatencyStats", "ResultTable",
    "ScoreOptions", "execute", "execution_match", "measure_latency",
    "score_prompt",
]
