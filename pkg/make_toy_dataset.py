#!/usr/bin/env python3

"""
Write a small synthetic dataset: 8 clips of random frame features, each asked "what is in clip NAME" with a
distinct one-word answer.

Writes to --out:
    clip_NAME.vqta   L x raw_dim frame features
    manifest.json    dataset manifest for vaquita_train.py
    config.json      the config (default: the overfit preset) with the dataset vocabulary filled in
"""

import argparse
import json
import os
import sys

import util
from config import load_config, write_config
from trainer import Sample, with_dataset_vocab
from vqta_file import write_tensor

CLIPS = ['alpha', 'bravo', 'charlie', 'delta', 'echo', 'foxtrot', 'golf', 'hotel']
ANSWERS = ['cat', 'dog', 'bird', 'bat', 'fish', 'frog', 'horse', 'mouse']


def make_toy_dataset(out: str, config_path: str = 'overfit', frames: int = 6, seed: int | None = None) -> str:
    """Returns the manifest path."""
    config = load_config(config_path, seed)
    rng = util.seeded_rng(config.seed, 'toy_dataset')
    os.makedirs(out, exist_ok=True)

    records = []
    samples = []
    for clip, answer in zip(CLIPS, ANSWERS):
        features = rng.normal(size=(frames, config.encoder.raw_dim))
        filename = f'clip_{clip}.vqta'
        write_tensor(os.path.join(out, filename), features)
        question = f'what is in clip {clip}'
        records.append({'answer': answer, 'frames': filename, 'question': question})
        samples.append(Sample(features, question, answer))

    manifest = os.path.join(out, 'manifest.json')
    with open(manifest, 'w') as f:
        json.dump(records, f, indent=2, sort_keys=True)
    write_config(with_dataset_vocab(config, samples), os.path.join(out, 'config.json'))
    print(f'Wrote {len(records)} samples to {out}')
    return manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(formatter_class=argparse.RawDescriptionHelpFormatter, description=__doc__)
    parser.add_argument('--out', required=True, help='output directory')
    parser.add_argument('--config', default='overfit', help='config file or preset name, default overfit')
    parser.add_argument('--frames', type=int, default=6, help='frames per clip, default 6')
    parser.add_argument('--seed', type=int, default=None)
    args = parser.parse_args(argv)

    try:
        make_toy_dataset(args.out, args.config, args.frames, args.seed)
    except util.known_exceptions() as e:
        util.error(str(e))
        return util.exit_code_for(e)
    return util.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
