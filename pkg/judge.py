"""
Answer judges: map a (prediction, reference) pair to a verdict with a 1-5 score.

Only local judges ship. An external-API judge would subclass Judge and register itself in JUDGES.
"""

import hashlib
import string
from abc import ABC, abstractmethod
from typing import NamedTuple

import pandas as pd

from tensor import ContractException

MIN_SCORE = 1
MAX_SCORE = 5


class JudgeVerdict(NamedTuple):
    correct: bool
    score: int


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace."""
    text = text.lower().translate(str.maketrans('', '', string.punctuation))
    return ' '.join(text.split())


class Judge(ABC):
    name = 'judge'

    @abstractmethod
    def judge(self, question: str, prediction: str, reference: str) -> JudgeVerdict:
        pass


class ExactJudge(Judge):
    """Correct iff the normalized strings are equal; score 5 if correct, else 1."""
    name = 'exact'

    def judge(self, question: str, prediction: str, reference: str) -> JudgeVerdict:
        correct = normalize_answer(prediction) == normalize_answer(reference)
        return JudgeVerdict(correct, MAX_SCORE if correct else MIN_SCORE)


class MockJudge(Judge):
    """Deterministic pseudo-verdicts seeded by a hash of the pair, for exercising the harness."""
    name = 'mock'

    def judge(self, question: str, prediction: str, reference: str) -> JudgeVerdict:
        digest = hashlib.sha256('\x00'.join([question, prediction, reference]).encode()).digest()
        score = MIN_SCORE + digest[0] % MAX_SCORE
        return JudgeVerdict(score >= 3, score)


JUDGES: dict[str, type[Judge]] = {
    'exact': ExactJudge,
    'mock': MockJudge,
}


def evaluate(judge: Judge, predictions: list[str], references: list[str],
             questions: list[str] | None = None) -> tuple[pd.DataFrame, dict]:
    """Per-item verdicts as a table, plus {"accuracy": ..., "score": ...}."""
    if len(predictions) != len(references):
        raise ContractException(f'{len(predictions)} predictions but {len(references)} references')
    if len(predictions) == 0:
        raise ContractException('nothing to evaluate')
    if questions is None:
        questions = [''] * len(predictions)

    rows = []
    for question, prediction, reference in zip(questions, predictions, references):
        verdict = judge.judge(question, prediction, reference)
        if not MIN_SCORE <= verdict.score <= MAX_SCORE:
            raise ContractException(f'{judge.name} judge returned score {verdict.score}')
        rows.append({'prediction': prediction, 'reference': reference, 'correct': verdict.correct,
                     'score': verdict.score})

    df = pd.DataFrame(rows, columns=['prediction', 'reference', 'correct', 'score'])
    summary = {
        'accuracy': float(df['correct'].mean()),
        'score': float(df['score'].mean()),
    }
    return df, summary
