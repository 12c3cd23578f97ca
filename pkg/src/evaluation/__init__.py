# Relevance judgments, run files, ranking metrics and normal retrieval
from src.evaluation.metrics import dcg, mrr_at_k, ndcg_at_k, recall_at_k
from src.evaluation.trec import (
    EvaluationReport,
    Qrels,
    Run,
    RunEntry,
    evaluate_run,
    evaluate_run_files,
    read_qrels,
    read_run,
    run_from_hits,
    write_qrels,
    write_report_csv,
    write_run,
)
from src.evaluation.retrieval import (
    INPUT_MODES,
    evaluate_conversations,
    query_session,
    retrieve_run,
    retrieve_sessions,
)

__all__ = [
    "INPUT_MODES",
    "EvaluationReport",
    "Qrels",
    "Run",
    "RunEntry",
    "dcg",
    "evaluate_conversations",
    "evaluate_run",
    "evaluate_run_files",
    "mrr_at_k",
    "ndcg_at_k",
    "query_session",
    "read_qrels",
    "read_run",
    "recall_at_k",
    "retrieve_run",
    "retrieve_sessions",
    "run_from_hits",
    "write_qrels",
    "write_report_csv",
    "write_run",
]
