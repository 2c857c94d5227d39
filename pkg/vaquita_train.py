#!/usr/bin/env python3

"""
Train the trainable components (tokenizer embeddings, perceiver, VQ-Former) with plain SGD on a dataset manifest.

The manifest is a JSON list of {"frames": VQTA path, "question": text, "answer": text}. If the config has no
vocabulary, one is built from the dataset.

Writes to --out:
    ckpt_NNNNNN/   checkpoint after NNNNNN steps (the initial state, every --save-every steps, and the last step)
    loss.csv       step,loss for every step

--resume continues from a checkpoint; the next step's loss is the same as in an uninterrupted run.
"""

import argparse
import os
import sys

import util
from config import load_config
from model import Vaquita
from trainer import LOSS_FILE, load_checkpoint, load_manifest, save_checkpoint, train_loop, with_dataset_vocab, \
    write_loss_history


def checkpoint_dir(out: str, step: int) -> str:
    return os.path.join(out, f'ckpt_{step:06d}')


def train(config_path: str, data: str, out: str, resume: str | None, steps: int | None, seed: int | None,
          save_every: int | None):
    samples = load_manifest(data)
    os.makedirs(out, exist_ok=True)

    if resume is not None:
        model, start = load_checkpoint(resume)
        print(f'Resuming from {resume} at step {start}')
    else:
        config = with_dataset_vocab(load_config(config_path, seed), samples)
        model = Vaquita(config)
        start = 0
        save_checkpoint(model, checkpoint_dir(out, start), start)

    def on_step(step: int, _loss: float):
        done = step + 1
        if save_every and done % save_every == 0:
            save_checkpoint(model, checkpoint_dir(out, done), done)

    state = train_loop(model, samples, start, steps, on_step=on_step)

    if not save_every or state.step % save_every != 0:
        save_checkpoint(model, checkpoint_dir(out, state.step), state.step)
    write_loss_history(os.path.join(out, LOSS_FILE), state.history, append=resume is not None)

    if state.history:
        print(f'Loss {state.history[0][1] :.6f} at step {state.history[0][0]}, '
              f'{state.history[-1][1] :.6f} at step {state.history[-1][0]}')


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(formatter_class=argparse.RawDescriptionHelpFormatter, description=__doc__)
    parser.add_argument('--config', default='desk', help='config file or preset name, default desk')
    parser.add_argument('--data', required=True, help='dataset manifest')
    parser.add_argument('--out', required=True, help='output directory')
    parser.add_argument('--resume', default=None, help='checkpoint directory to continue from')
    parser.add_argument('--steps', type=int, default=None, help='stop after this many steps')
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--save-every', type=int, default=None, help='also checkpoint every N steps')
    args = parser.parse_args(argv)

    try:
        train(args.config, args.data, args.out, args.resume, args.steps, args.seed, args.save_every)
    except util.known_exceptions() as e:
        util.error(str(e))
        return util.exit_code_for(e)
    return util.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
