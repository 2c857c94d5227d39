"""
Training: dataset manifests, plain SGD over the trainable parameters, checkpoints and loss history.
"""

import json
import math
import os
from typing import Callable, NamedTuple

import numpy as np
import pandas as pd

from config import DatasetException, PipelineConfig, config_from_json
from model import Vaquita, build_vocab
from tensor import NumericException, Tape, Tensor, add, backward, scale
from util import seeded_rng
from vqta_file import VQTAFormatException, read_tensor, write_tensor

MANIFEST = 'manifest.json'
LOSS_FILE = 'loss.csv'


class Sample(NamedTuple):
    frames: np.ndarray
    question: str
    answer: str


def load_manifest(path: str) -> list[Sample]:
    """
    A manifest is a JSON list of {"frames": path, "question": str, "answer": str}. Frame paths are relative to the
    manifest's directory.
    """
    try:
        with open(path, encoding='utf-8') as f:
            records = json.load(f)
    except FileNotFoundError:
        raise DatasetException(f'{path}: no such manifest')
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DatasetException(f'{path}: not valid JSON: {e}')

    if not isinstance(records, list) or len(records) == 0:
        raise DatasetException(f'{path}: manifest must be a non-empty list')

    base = os.path.dirname(path)
    samples = []
    for i, record in enumerate(records):
        if not isinstance(record, dict) or sorted(record) != ['answer', 'frames', 'question']:
            raise DatasetException(f'{path}: record {i} must have exactly frames, question and answer')
        for key in ['frames', 'question', 'answer']:
            if not isinstance(record[key], str):
                raise DatasetException(f'{path}: record {i} {key} must be a string, got {record[key]!r}')
        frames = read_tensor(os.path.join(base, record['frames'])).astype(np.float64)
        samples.append(Sample(frames, record['question'], record['answer']))

    print(f'Read {len(samples)} samples from {path}')
    return samples


def with_dataset_vocab(config: PipelineConfig, samples: list[Sample]) -> PipelineConfig:
    """Fill an empty vocabulary from the dataset's questions, answers and the prompt."""
    if config.vocab:
        return config
    texts = [s.question for s in samples] + [s.answer for s in samples] + [config.prompt]
    return config._replace(vocab=build_vocab(texts, config.vocab_size - 2))


def epoch_batches(count: int, batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """
    Shuffle once per epoch from a generator seeded by (seed, epoch), so any step can be reproduced without replaying
    the ones before it. Indices inside a batch are sorted to fix the accumulation order.
    """
    order = seeded_rng(seed, f'epoch{epoch}').permutation(count)
    return [sorted(int(i) for i in order[start:start + batch_size]) for start in range(0, count, batch_size)]


def batch_loss(model: Vaquita, samples: list[Sample], batch: list[int]) -> Tensor:
    total = None
    for i in batch:
        sample = samples[i]
        loss = model.loss(sample.frames, sample.question, model.answer_ids(sample.answer), 'train')
        total = loss if total is None else add(total, loss)
    return scale(total, 1.0 / len(batch))


def sgd_step(model: Vaquita, learning_rate: float):
    for name, param in model.trainable_parameters().items():
        if param.grad is None:
            continue
        model.set_parameter(name, Tensor(param.data - learning_rate * param.grad, requires_grad=True))


class TrainState(NamedTuple):
    step: int
    history: list[tuple[int, float]]


def train_loop(model: Vaquita, samples: list[Sample], start_step: int = 0, max_steps: int | None = None,
               on_step: Callable[[int, float], None] | None = None) -> TrainState:
    """
    SGD over trainable parameters only; frozen parameters never get a gradient. Returns the global step reached and
    the (step, loss) history of this call. A non-finite loss stops training with NumericException.
    """
    config = model.config
    steps_per_epoch = math.ceil(len(samples) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    end = total_steps if max_steps is None else min(total_steps, start_step + max_steps)

    history = []
    batches = None
    batches_epoch = -1
    for step in range(start_step, end):
        epoch, index = divmod(step, steps_per_epoch)
        if epoch != batches_epoch:
            batches = epoch_batches(len(samples), config.batch_size, config.seed, epoch)
            batches_epoch = epoch

        with Tape():
            loss = batch_loss(model, samples, batches[index])
        value = loss.item()
        if not math.isfinite(value):
            raise NumericException(f'loss is {value} at step {step}')

        backward(loss)
        sgd_step(model, config.learning_rate)
        history.append((step, value))

        if on_step is not None:
            on_step(step, value)
        if step % max(1, total_steps // 10) == 0:
            print(f'step {step} epoch {epoch} loss {value :.6f}')

    return TrainState(end if end > start_step else start_step, history)


def save_checkpoint(model: Vaquita, path: str, step: int):
    """One VQTA file per parameter plus a JSON manifest naming them."""
    os.makedirs(path, exist_ok=True)
    files = {}
    for name, tensor in model.parameters().items():
        filename = name + '.vqta'
        write_tensor(os.path.join(path, filename), tensor.data)
        files[name] = filename

    manifest = {'config': model.config.to_json(), 'parameters': files, 'step': step}
    with open(os.path.join(path, MANIFEST), 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f'Wrote checkpoint {path} at step {step}')


def check_checkpoint_manifest(path: str, manifest):
    if not isinstance(manifest, dict) or sorted(manifest) != ['config', 'parameters', 'step']:
        raise VQTAFormatException(f'{path}: checkpoint manifest must have exactly config, parameters and step')
    if not isinstance(manifest['step'], int) or isinstance(manifest['step'], bool) or manifest['step'] < 0:
        raise VQTAFormatException(f'{path}: step must be a non-negative integer, got {manifest["step"]!r}')
    files = manifest['parameters']
    if not isinstance(files, dict) or not all(isinstance(f, str) for f in files.values()):
        raise VQTAFormatException(f'{path}: parameters must map names to file names')


def load_checkpoint(path: str, config: PipelineConfig | None = None) -> tuple[Vaquita, int]:
    """Rebuild the model from a checkpoint. The checkpoint's own config is used unless one is given."""
    manifest_path = os.path.join(path, MANIFEST)
    try:
        with open(manifest_path, encoding='utf-8') as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise VQTAFormatException(f'{manifest_path}: no such checkpoint manifest')
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise VQTAFormatException(f'{manifest_path}: not valid JSON: {e}')
    check_checkpoint_manifest(manifest_path, manifest)

    if config is None:
        config = config_from_json(manifest['config'])
    model = Vaquita(config)
    expected = model.parameters()
    if sorted(expected) != sorted(manifest['parameters']):
        raise VQTAFormatException(f'{path}: parameters do not match the model')

    for name, filename in manifest['parameters'].items():
        data = read_tensor(os.path.join(path, filename))
        model.set_parameter(name, Tensor(data, expected[name].requires_grad))
    return model, int(manifest['step'])


def write_loss_history(path: str, history: list[tuple[int, float]], append: bool = False):
    df = pd.DataFrame(history, columns=['step', 'loss'])
    if append and os.path.isfile(path):
        earlier = read_loss_history(path)
        if len(df):
            earlier = earlier[earlier['step'] < df['step'].iloc[0]]
        df = pd.concat([earlier, df], ignore_index=True)
    print(f'Writing {len(df)} rows to {path}')
    df.to_csv(path, index=False, float_format='%.17g')


def read_loss_history(path: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise DatasetException(f'{path}: no such loss history')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetException(f'{path}: not a loss history csv: {e}')
    if list(df.columns) != ['step', 'loss']:
        raise DatasetException(f'{path}: expected columns step,loss, got {list(df.columns)}')
    return df
