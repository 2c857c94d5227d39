"""
End-to-end toy pipeline:

    frames -> sampler -> frozen encoder stub -> Video Perceiver -> VQ-Former -> [video tokens | text tokens]
           -> frozen decoder stub -> logits at the answer positions

The encoder and decoder stand in for the frozen CLIP and LLM. The tokenizer embeddings, perceiver and VQ-Former are
trainable.
"""

import copy
import math
import string
from collections import Counter

import numpy as np

from config import PipelineConfig
from perceiver import PerceiverState, video_perceiver_forward
from sampler import SamplingPlan, select_frames_test, select_frames_train
from tensor import (ContractException, ShapeException, Tensor, add, concat_rows, embed_lookup, layer_norm, linear,
                    log_softmax_rows, matmul, mean_axis, mul, reshape, scale, softmax_rows, causal_mask, sum_all,
                    take_rows, transpose)
from util import seeded_rng
from vqformer import VQFormerState, vqformer_forward

PAD_ID = 0
UNK_ID = 1
RESERVED = ['<pad>', '<unk>']

DEFAULT_PROMPT = 'Please be critical'

# Prompts compared in the prompt ablation
PROMPTS = {
    'critical': DEFAULT_PROMPT,
    'step': "Let's think step by step.",
    'breath': 'Take a deep breath and work on this problem step-by-step.',
    'careful': 'Look carefully before answering.',
}

MODES = ['train', 'test']


def prepend_prompt(question: str, prompt: str = DEFAULT_PROMPT) -> str:
    """
    "Please be critical" + "What is shown?" -> "Please be critical. What is shown?"

    Not idempotent: calling it twice prepends the prompt twice.
    """
    if not question.strip():
        raise ContractException('question is empty')
    if prompt == '':
        return question
    if prompt[-1] in '.!?':
        return prompt + ' ' + question
    return prompt + '. ' + question


def split_words(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation from both ends of each word."""
    words = []
    for raw in text.lower().split():
        word = raw.strip(string.punctuation)
        if word:
            words.append(word)
    return words


def build_vocab(texts: list[str], limit: int) -> list[str]:
    """Most frequent words first, ties alphabetical, at most limit words."""
    counts = Counter(word for text in texts for word in split_words(text))
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return [word for word, _ in ranked[:limit]]


class EncoderStub:
    """
    Frozen stand-in for the visual encoder. Raw per-frame feature vectors are mapped by fixed seeded projections to
    n x d patch embeddings (for the perceiver) and to sampler-space embeddings (for frame selection). A fixed table
    gives the sampler-space question embedding as the mean of its token rows.
    """

    def __init__(self, config: PipelineConfig):
        enc = config.encoder
        pc = config.perceiver
        self.n = pc.n
        self.d = pc.d
        rng = seeded_rng(config.seed, 'encoder')
        self.params = {
            'feature_proj': Tensor.randn(rng, (enc.raw_dim, pc.n * pc.d), 1.0 / math.sqrt(enc.raw_dim)),
            'sampler_proj': Tensor.randn(rng, (enc.raw_dim, enc.sampler_dim), 1.0 / math.sqrt(enc.raw_dim)),
            'text_table': Tensor.randn(rng, (config.vocab_size, enc.sampler_dim)),
        }

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def check_frames(self, frames: np.ndarray):
        raw_dim = self.params['feature_proj'].shape[0]
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] != raw_dim:
            raise ShapeException(f'video must be L x {raw_dim} raw frame features, got {frames.shape}')

    def encode(self, frames: np.ndarray) -> Tensor:
        """k x raw_dim -> k x n x d"""
        self.check_frames(frames)
        flat = matmul(Tensor(frames), self.params['feature_proj'])
        return reshape(flat, (frames.shape[0], self.n, self.d))

    def embed_frames(self, frames: np.ndarray) -> np.ndarray:
        self.check_frames(frames)
        return frames @ self.params['sampler_proj'].data

    def embed_query(self, ids: list[int]) -> np.ndarray:
        return self.params['text_table'].data[ids].mean(axis=0)


class TokenizerStub:
    def __init__(self, config: PipelineConfig, trainable: bool):
        self.words = RESERVED + list(config.vocab)
        self.index = {word: i for i, word in enumerate(self.words)}
        self.max_text_len = config.max_text_len
        rng = seeded_rng(config.seed, 'tokenizer')
        self.params = {
            'embedding': Tensor.randn(rng, (config.vocab_size, config.vqformer.d_text), config.embedding_init_std,
                                      trainable),
        }

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def tokenize(self, text: str, max_len: int | None = None) -> list[int]:
        """Word ids, <unk> for words outside the vocabulary, truncated to the first max_len tokens."""
        if max_len is None:
            max_len = self.max_text_len
        return [self.index.get(word, UNK_ID) for word in split_words(text)][:max_len]

    def word(self, token_id: int) -> str:
        return self.words[token_id] if token_id < len(self.words) else RESERVED[UNK_ID]

    def embed(self, ids: list[int]) -> Tensor:
        return embed_lookup(self.params['embedding'], ids)


class DecoderStub:
    """
    Frozen stand-in for the LLM: one causal single-head self-attention block with a residual, a final layer norm and
    an output projection to the vocabulary.
    """

    def __init__(self, config: PipelineConfig, trainable: bool):
        d_text = config.vqformer.d_text
        self.ln_eps = config.ln_eps
        rng = seeded_rng(config.seed, 'decoder')
        std = config.decoder_init_std
        self.params = {
            'norm.gamma': Tensor(np.ones(d_text), trainable),
            'norm.beta': Tensor.zeros((d_text,), trainable),
            'w_q': Tensor.randn(rng, (d_text, d_text), std / math.sqrt(d_text), trainable),
            'w_k': Tensor.randn(rng, (d_text, d_text), std / math.sqrt(d_text), trainable),
            'w_v': Tensor.randn(rng, (d_text, d_text), std / math.sqrt(d_text), trainable),
            'w_o': Tensor.randn(rng, (d_text, d_text), std / math.sqrt(d_text), trainable),
            'out_norm.gamma': Tensor(np.ones(d_text), trainable),
            'out_norm.beta': Tensor.zeros((d_text,), trainable),
            'w_out': Tensor.randn(rng, (d_text, config.vocab_size), std, trainable),
        }

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def forward(self, seq: Tensor) -> Tensor:
        p = self.params
        d_text = p['w_q'].shape[0]
        h = layer_norm(seq, p['norm.gamma'], p['norm.beta'], self.ln_eps)
        q = matmul(h, p['w_q'])
        k = matmul(h, p['w_k'])
        v = matmul(h, p['w_v'])
        logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_text))
        attended = matmul(matmul(softmax_rows(logits, causal_mask(seq.shape[0])), v), p['w_o'])
        x = add(seq, attended)
        return matmul(layer_norm(x, p['out_norm.gamma'], p['out_norm.beta'], self.ln_eps), p['w_out'])


class ProjectionBaseline:
    """
    Feature alignment switched off: spatio-temporal pooling followed by one linear layer, the single-projection
    approach the perceiver and VQ-Former replace.
    """

    def __init__(self, config: PipelineConfig, trainable: bool):
        d = config.perceiver.d
        d_text = config.vqformer.d_text
        rng = seeded_rng(config.seed, 'projection')
        self.params = {
            'w': Tensor.randn(rng, (d, d_text), config.init_std, trainable),
            'b': Tensor.zeros((d_text,), trainable),
        }

    def parameters(self) -> dict[str, Tensor]:
        return self.params


def pool_and_project(features: Tensor, baseline: ProjectionBaseline) -> Tensor:
    """k x n x d -> (k + n) x d_text: per-frame means, then per-patch means, then a linear projection."""
    temporal = mean_axis(features, 1)
    spatial = mean_axis(features, 0)
    return linear(concat_rows([temporal, spatial]), baseline.params['w'], baseline.params['b'])


def assemble_input(video: Tensor, text: Tensor) -> Tensor:
    """Video tokens first (rows 0 .. m-1), then text tokens."""
    if len(video.shape) != 2 or len(text.shape) != 2 or video.shape[1] != text.shape[1]:
        raise ShapeException(f'video tokens {video.shape} and text tokens {text.shape} must share d_text')
    if text.shape[0] < 1:
        raise ContractException('a question is always present, text must have at least one row')
    return concat_rows([video, text])


def smoothed_nll_loss(logits: Tensor, targets: list[int], epsilon: float) -> Tensor:
    """
    Mean over positions of (1 - eps) * -log p[y] + (eps / V) * sum_v -log p[v]. The smoothed mass includes the
    target class.
    """
    if len(logits.shape) != 2:
        raise ShapeException(f'logits must be s x V, got {logits.shape}')
    positions, vocab = logits.shape
    if len(targets) != positions:
        raise ShapeException(f'{len(targets)} targets for {positions} positions')
    if not 0.0 <= epsilon < 1.0:
        raise ContractException(f'label smoothing must be in [0, 1), got {epsilon}')
    for target in targets:
        if not 0 <= target < vocab:
            raise ContractException(f'target {target} out of range for vocabulary of {vocab}')

    weights = np.full((positions, vocab), epsilon / vocab)
    weights[np.arange(positions), targets] += 1.0 - epsilon
    return scale(sum_all(mul(Tensor(weights), log_softmax_rows(logits))), -1.0 / positions)


class Vaquita:
    def __init__(self, config: PipelineConfig):
        self.config = config
        trainable = config.trainable
        self.encoder = EncoderStub(config)
        self.tokenizer = TokenizerStub(config, trainable['tokenizer'])
        self.decoder = DecoderStub(config, trainable['decoder'])
        self.perceiver = None
        self.vqformer = None
        self.projection = None
        if config.feature_alignment:
            self.perceiver = PerceiverState(config.perceiver, config.seed, config.init_std, trainable['perceiver'],
                                            config.ln_eps)
            self.vqformer = VQFormerState(config.vqformer, config.seed, config.init_std, trainable['vqformer'],
                                          config.ln_eps)
        else:
            self.projection = ProjectionBaseline(config, trainable['perceiver'] or trainable['vqformer'])

    def components(self) -> dict:
        found = {
            'encoder': self.encoder,
            'tokenizer': self.tokenizer,
            'perceiver': self.perceiver,
            'vqformer': self.vqformer,
            'projection': self.projection,
            'decoder': self.decoder,
        }
        return {name: component for name, component in found.items() if component is not None}

    def parameters(self) -> dict[str, Tensor]:
        """Every parameter as 'component.name', frozen ones included."""
        return {f'{cname}.{pname}': tensor
                for cname, component in self.components().items()
                for pname, tensor in component.parameters().items()}

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {name: tensor for name, tensor in self.parameters().items() if tensor.requires_grad}

    def set_parameter(self, name: str, tensor: Tensor):
        cname, pname = name.split('.', 1)
        params = self.components()[cname].params
        if pname not in params:
            raise KeyError(name)
        if params[pname].shape != tensor.shape:
            raise ShapeException(f'{name}: shape {tensor.shape} does not match {params[pname].shape}')
        params[pname] = tensor

    def with_parameters(self, replacements: dict[str, Tensor]) -> 'Vaquita':
        """A shallow copy that shares all parameters except the replaced ones."""
        clone = copy.copy(self)
        for attr in ['encoder', 'tokenizer', 'decoder', 'perceiver', 'vqformer', 'projection']:
            component = getattr(self, attr)
            if component is not None:
                component = copy.copy(component)
                component.params = dict(component.params)
                setattr(clone, attr, component)
        for name, tensor in replacements.items():
            clone.set_parameter(name, tensor)
        return clone

    def question_ids(self, question: str) -> list[int]:
        ids = self.tokenizer.tokenize(question)
        if len(ids) == 0:
            raise ContractException(f'question {question!r} has no tokens')
        return ids

    def sample_frames(self, frames: np.ndarray, question_ids: list[int], mode: str) -> SamplingPlan:
        if mode not in MODES:
            raise ContractException(f'mode must be one of {MODES}, got {mode!r}')
        T = self.config.perceiver.T
        aligned = self.config.data_alignment if mode == 'train' else self.config.test_sampling == 'aligned'
        if aligned and T >= 2:
            return select_frames_train(self.encoder.embed_query(question_ids), self.encoder.embed_frames(frames), T)
        return select_frames_test(frames.shape[0], T)

    def video_tokens(self, frames: np.ndarray, question_ids: list[int], mode: str) -> tuple[Tensor, SamplingPlan]:
        """m x d_text question-aware video tokens, and the frames they were built from."""
        frames = np.asarray(frames, dtype=np.float64)
        self.encoder.check_frames(frames)
        plan = self.sample_frames(frames, question_ids, mode)
        features = self.encoder.encode(frames[plan.all])
        if self.projection is not None:
            return pool_and_project(features, self.projection), plan
        video = video_perceiver_forward(features, self.perceiver)
        return vqformer_forward(video, self.tokenizer.embed(question_ids), self.vqformer), plan

    def answer_logits(self, frames: np.ndarray, question: str, prefix_ids: list[int], mode: str = 'test',
                      prompt: str | None = None) -> Tensor:
        """
        Logits for len(prefix_ids) + 1 answer positions: the last question token predicts the first answer token,
        each prefix token predicts the next one. The prompt only applies in test mode.
        """
        if mode == 'test' and prompt is not None:
            question = prepend_prompt(question, prompt)
        question_ids = self.question_ids(question)
        video, _ = self.video_tokens(frames, question_ids, mode)
        text = self.tokenizer.embed(question_ids + list(prefix_ids))
        logits = self.decoder.forward(assemble_input(video, text))
        start = video.shape[0] + len(question_ids) - 1
        return take_rows(logits, range(start, start + len(prefix_ids) + 1))

    def forward(self, frames: np.ndarray, question: str, mode: str = 'test', answer_ids: list[int] | None = None,
                prompt: str | None = None) -> Tensor:
        """
        Logits over the answer positions. With answer_ids fed back as the prefix there is one row per answer token,
        otherwise a single row for the first answer token.
        """
        prefix = [] if not answer_ids else list(answer_ids[:-1])
        return self.answer_logits(frames, question, prefix, mode, prompt)

    def answer_ids(self, answer: str) -> list[int]:
        ids = self.tokenizer.tokenize(answer, self.config.max_answer_len)
        if len(ids) == 0:
            raise ContractException(f'answer {answer!r} has no tokens')
        return ids

    def loss(self, frames: np.ndarray, question: str, answer_ids: list[int], mode: str = 'train') -> Tensor:
        logits = self.forward(frames, question, mode, answer_ids)
        return smoothed_nll_loss(logits, answer_ids, self.config.label_smoothing)


def greedy_answer(model: Vaquita, frames: np.ndarray, question: str, max_len: int,
                  prompt: str | None = None) -> tuple[np.ndarray, list[int]]:
    """Extend the answer one argmax token at a time; stops early if <pad> wins."""
    ids: list[int] = []
    rows = []
    for _ in range(max_len):
        logits = model.answer_logits(frames, question, ids, 'test', prompt)
        last = logits.data[-1]
        rows.append(last)
        token = int(np.argmax(last))
        if token == PAD_ID:
            break
        ids.append(token)
    return np.array(rows), ids
