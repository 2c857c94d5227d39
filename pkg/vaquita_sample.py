#!/usr/bin/env python3

"""
Choose which frames of a video to use, given precomputed sampler-space embeddings.

Train mode mixes ceil(T/2) uniformly spaced frames with the frames most similar to the query embedding. Test mode
uses uniform spacing only and ignores --query.

Frame embeddings are an L x d_s VQTA file, the query a d_s VQTA file. Writes the plan as JSON:
{"all": [...], "similarity": [...], "uniform": [...]}
"""

import argparse
import sys

import numpy as np

import util
from sampler import SamplingPlan, select_frames_test, select_frames_train
from tensor import ContractException, ShapeException
from vqta_file import read_tensor


def sample(frames_path: str, query_path: str | None, T: int, mode: str) -> SamplingPlan:
    frames = read_tensor(frames_path).astype(np.float64)
    if frames.ndim != 2:
        raise ShapeException(f'{frames_path}: frame embeddings must be L x d_s, got shape {frames.shape}')
    length = frames.shape[0]
    if T > length:
        util.warn(f'T={T} is more than the {length} frames available, using all of them')

    if mode == 'test':
        return select_frames_test(length, T)

    if query_path is None:
        raise ContractException('train mode needs --query')
    query = read_tensor(query_path).astype(np.float64).reshape(-1)
    if query.shape[0] != frames.shape[1]:
        raise ShapeException(f'query has d_s={query.shape[0]}, frames have d_s={frames.shape[1]}')
    return select_frames_train(query, frames, T)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(formatter_class=argparse.RawDescriptionHelpFormatter, description=__doc__)
    parser.add_argument('--frames', required=True, help='L x d_s frame embeddings (VQTA)')
    parser.add_argument('--query', default=None, help='d_s query embedding (VQTA), train mode only')
    parser.add_argument('--T', type=int, required=True, help='number of frames to choose')
    parser.add_argument('--mode', choices=['train', 'test'], default='test')
    parser.add_argument('--out', default=None, help='write the plan here instead of stdout')
    args = parser.parse_args(argv)

    try:
        plan = sample(args.frames, args.query, args.T, args.mode)
    except util.known_exceptions() as e:
        util.error(str(e))
        return util.exit_code_for(e)

    if args.out is None:
        print(util.dumps(plan.to_json()))
    else:
        util.write_json(args.out, plan.to_json())
        util.note(f'Wrote {len(plan.all)} frame indices to {args.out}')
    return util.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
