"""
Data Alignment: choose which frames of a video to feed the model.

Training mixes ceil(T/2) uniformly spaced frames with the frames most similar (cosine) to the question embedding.
Testing reverts to plain uniform sampling.
"""

import math
from typing import NamedTuple

import numpy as np

from tensor import ContractException, ShapeException


# Similarities that agree to this many decimal places are ties
TIE_DECIMALS = 12


class DegenerateInputException(Exception):
    pass


class SamplingPlan(NamedTuple):
    uniform: list[int]
    similarity: list[int]
    all: list[int]

    def to_json(self) -> dict:
        return plan_to_json(self)


def plan_to_json(plan: SamplingPlan) -> dict:
    return {'all': list(plan.all), 'similarity': list(plan.similarity), 'uniform': list(plan.uniform)}


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeException(f'cosine_similarity dims differ: {a.shape} vs {b.shape}')
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise DegenerateInputException('cosine similarity of a zero-norm vector')
    return float(np.dot(a, b) / (norm_a * norm_b))


def similarity_rank(similarity: float) -> float:
    return round(similarity, TIE_DECIMALS)


def uniform_indices(length: int, k: int) -> list[int]:
    """floor(i * L / k) for i = 0 .. k-1"""
    if not 1 <= k <= length:
        raise ContractException(f'need 1 <= k <= L, got k={k}, L={length}')
    return [i * length // k for i in range(k)]


def check_frames(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ShapeException(f'frame embeddings must be L x d_s with L >= 1, got shape {frames.shape}')
    if not np.all(np.isfinite(frames)):
        raise ContractException('frame embeddings contain NaN or Inf')
    return frames


def select_frames_train(query: np.ndarray, frames: np.ndarray, T: int) -> SamplingPlan:
    frames = check_frames(frames)
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if T < 2:
        raise ContractException(f'training selection needs T >= 2, got {T}')
    if query.shape[0] != frames.shape[1]:
        raise ShapeException(f'query dim {query.shape[0]} does not match frame dim {frames.shape[1]}')
    if np.linalg.norm(query) == 0:
        raise DegenerateInputException('query embedding has zero norm')

    length = frames.shape[0]
    if length <= T:
        everything = list(range(length))
        return SamplingPlan(everything, [], everything)

    k_uniform = math.ceil(T / 2)
    uniform = uniform_indices(length, k_uniform)
    taken = set(uniform)
    remaining = [i for i in range(length) if i not in taken]

    scored = []
    for i in remaining:
        if np.linalg.norm(frames[i]) == 0:
            raise DegenerateInputException(f'frame {i} embedding has zero norm')
        scored.append((-similarity_rank(cosine_similarity(query, frames[i])), i))

    # Highest similarity first, lower index wins ties
    scored.sort()
    similarity = sorted(i for _, i in scored[:T - k_uniform])
    return SamplingPlan(uniform, similarity, sorted(uniform + similarity))


def select_frames_test(length: int, T: int) -> SamplingPlan:
    if T < 1:
        raise ContractException(f'T must be >= 1, got {T}')
    if length < 1:
        raise ContractException(f'video must have at least one frame, got {length}')
    uniform = uniform_indices(length, min(T, length))
    return SamplingPlan(uniform, [], list(uniform))
