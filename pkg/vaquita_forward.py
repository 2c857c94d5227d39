#!/usr/bin/env python3

"""
Run the pipeline on one video and question, and print the answer logits as JSON.

The video is an L x raw_dim VQTA file of per-frame features. Parameters come from --checkpoint, or are seeded fresh
from --config (a JSON file or a preset name: desk, full, gradcheck, overfit).

--critical prepends "Please be critical" to the question; --prompt NAME|TEXT picks another prompt (critical, step,
breath, careful) or uses TEXT as given. Answers are read out greedily, one argmax token at a time.

Output keys: answer, answer_ids, frames, logits, question, question_tokens. Output is byte-identical between runs
with the same seed.
"""

import argparse
import sys

import numpy as np

import util
from config import load_config
from model import PROMPTS, Vaquita, greedy_answer, prepend_prompt
from trainer import load_checkpoint
from vqta_file import read_tensor


def choose_prompt(critical: bool, prompt: str | None) -> str | None:
    if prompt is not None:
        return PROMPTS.get(prompt, prompt)
    if critical:
        return PROMPTS['critical']
    return None


def forward(model: Vaquita, frames: np.ndarray, question: str, prompt: str | None, answer_len: int) -> dict:
    model.encoder.check_frames(frames)
    if prompt is not None:
        question = prepend_prompt(question, prompt)
    question_ids = model.question_ids(question)
    plan = model.sample_frames(frames, question_ids, 'test')
    logits, answer_ids = greedy_answer(model, frames, question, answer_len)

    return {
        'answer': ' '.join(model.tokenizer.word(i) for i in answer_ids),
        'answer_ids': answer_ids,
        'frames': plan.all,
        'logits': logits.tolist(),
        'question': question,
        'question_tokens': question_ids,
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(formatter_class=argparse.RawDescriptionHelpFormatter, description=__doc__)
    parser.add_argument('--config', default='desk', help='config file or preset name, default desk')
    parser.add_argument('--checkpoint', default=None, help='checkpoint directory written by vaquita_train.py')
    parser.add_argument('--video', required=True, help='L x raw_dim frame features (VQTA)')
    parser.add_argument('--question', required=True)
    parser.add_argument('--critical', action='store_true', help='prepend "Please be critical"')
    parser.add_argument('--prompt', default=None, help='prompt name or text, overrides --critical')
    parser.add_argument('--seed', type=int, default=None, help='seed for fresh parameters')
    parser.add_argument('--answer-len', type=int, default=None, help='answer tokens to read out')
    args = parser.parse_args(argv)

    try:
        if args.checkpoint is not None:
            model, step = load_checkpoint(args.checkpoint)
            util.note(f'Loaded {args.checkpoint} at step {step}')
        else:
            model = Vaquita(load_config(args.config, args.seed))

        frames = read_tensor(args.video).astype(np.float64)
        answer_len = model.config.max_answer_len if args.answer_len is None else args.answer_len
        doc = forward(model, frames, args.question, choose_prompt(args.critical, args.prompt), answer_len)
    except util.known_exceptions() as e:
        util.error(str(e))
        return util.exit_code_for(e)

    print(util.dumps(doc))
    return util.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
