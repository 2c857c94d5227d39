# Run tests:
# python -m pytest

# Run tests and show captured stdout:
# python -m pytest -rP

# Run a particular test:
# python -m pytest -rP testing/test_tools.py::TestTools::test_sample_test_mode

import json
import os

import numpy as np
import pytest

import make_toy_dataset
import plot_loss
import util
import vaquita_eval
import vaquita_forward
import vaquita_gradcheck
import vaquita_sample
import vaquita_train
from config import (ConfigException, DatasetException, desk_config, load_config, full_config, write_config)
from judge import ExactJudge, MockJudge, evaluate, normalize_answer
from sampler import DegenerateInputException
from tensor import ContractException, NumericException, ShapeException
from model import Vaquita
from trainer import load_checkpoint, load_manifest, read_loss_history, save_checkpoint
from vqta_file import VQTAFormatException, decode, encode, read_tensor, write_tensor

CONFIGS = os.path.join(os.path.dirname(__file__), '..', 'configs')


def write_answers(path, answers: list[str]) -> str:
    with open(path, 'w') as f:
        f.write('\n'.join(answers) + '\n')
    return str(path)


def checkpoint_bytes(path) -> dict[str, bytes]:
    files = {}
    for name in sorted(os.listdir(path)):
        if name.endswith('.vqta'):
            with open(os.path.join(path, name), 'rb') as f:
                files[name] = f.read()
    return files


@pytest.fixture
def toy(tmp_path):
    manifest = make_toy_dataset.make_toy_dataset(str(tmp_path / 'toy'))
    return manifest, str(tmp_path / 'toy' / 'config.json')


class TestTools:

    def test_vqta_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        path = str(tmp_path / 'x.vqta')
        for i in range(200):
            shape = tuple(int(v) for v in rng.integers(1, 6, size=rng.integers(1, 5)))
            dtype = np.float32 if i % 2 else np.float64
            arr = rng.normal(size=shape).astype(dtype)
            write_tensor(path, arr)
            back = read_tensor(path)
            assert back.dtype == arr.dtype
            assert back.tobytes() == arr.tobytes()
            assert back.shape == arr.shape

    def test_vqta_header_layout(self):
        buf = encode(np.array([[1.0, 2.0]]))
        assert buf[:4] == b'VQTA'
        assert buf[4] == 1
        assert buf[5] == 1
        assert buf[6:8] == b'\x02\x00'
        assert buf[8:16] == (1).to_bytes(8, 'little')
        assert buf[16:24] == (2).to_bytes(8, 'little')
        assert len(buf) == 24 + 16

    def test_vqta_malformed(self):
        good = encode(np.zeros((2, 3), dtype=np.float32))
        for bad in [b'', b'VQT', b'XQTA' + good[4:], good[:4] + b'\x02' + good[5:], good[:5] + b'\x07' + good[6:],
                    good[:-1], good + b'\x00', good[:12]]:
            with pytest.raises(VQTAFormatException):
                decode(bad)
        with pytest.raises(VQTAFormatException):
            encode(np.zeros(3, dtype=np.int32))

    def test_exit_codes(self):
        assert util.exit_code_for(VQTAFormatException()) == 2
        assert util.exit_code_for(ConfigException()) == 2
        assert util.exit_code_for(DatasetException()) == 2
        assert util.exit_code_for(ContractException()) == 2
        assert util.exit_code_for(DegenerateInputException()) == 3
        assert util.exit_code_for(ShapeException()) == 4
        assert util.exit_code_for(NumericException()) == 5
        assert util.exit_code_for(KeyError()) is None

    def test_sample_test_mode(self, tmp_path, capsys):
        frames = str(tmp_path / 'frames.vqta')
        write_tensor(frames, np.random.default_rng(0).normal(size=(100, 16)))
        assert vaquita_sample.main(['--frames', frames, '--T', '4', '--mode', 'test']) == 0
        assert json.loads(capsys.readouterr().out) == {'all': [0, 25, 50, 75], 'similarity': [],
                                                       'uniform': [0, 25, 50, 75]}

    def test_sample_train_mode(self, tmp_path):
        frames = str(tmp_path / 'frames.vqta')
        query = str(tmp_path / 'query.vqta')
        out = str(tmp_path / 'plan.json')
        write_tensor(frames, np.array([[0, 1], [1, 0.1], [0.5, 0.5], [-1, 0], [1, 0], [0, -1]]))
        write_tensor(query, np.array([1.0, 0.0]))
        assert vaquita_sample.main(['--frames', frames, '--query', query, '--T', '4', '--mode', 'train',
                                    '--out', out]) == 0
        with open(out) as f:
            assert json.load(f)['all'] == [0, 1, 3, 4]

    def test_sample_errors(self, tmp_path, capsys):
        frames = str(tmp_path / 'frames.vqta')
        query = str(tmp_path / 'query.vqta')
        write_tensor(frames, np.random.default_rng(1).normal(size=(3, 4)))

        assert vaquita_sample.main(['--frames', frames, '--T', '8']) == 0
        captured = capsys.readouterr()
        assert json.loads(captured.out)['all'] == [0, 1, 2]
        assert 'WARNING' in captured.err

        write_tensor(frames, np.random.default_rng(1).normal(size=(10, 4)))
        write_tensor(query, np.zeros(4))
        assert vaquita_sample.main(['--frames', frames, '--query', query, '--T', '4', '--mode', 'train']) == 3

        write_tensor(query, np.ones(5))
        assert vaquita_sample.main(['--frames', frames, '--query', query, '--T', '4', '--mode', 'train']) == 4

        with open(frames, 'wb') as f:
            f.write(b'VQTA\x09\x01\x01\x00' + (3).to_bytes(8, 'little'))
        assert vaquita_sample.main(['--frames', frames, '--T', '4']) == 2
        assert vaquita_sample.main(['--frames', str(tmp_path / 'missing.vqta'), '--T', '4']) == 2

    def test_forward_is_deterministic(self, tmp_path, capsys):
        video = str(tmp_path / 'video.vqta')
        write_tensor(video, np.random.default_rng(2).normal(size=(10, desk_config().encoder.raw_dim)))
        args = ['--video', video, '--question', 'what is shown', '--seed', '3']

        assert vaquita_forward.main(args) == 0
        first = capsys.readouterr().out
        assert vaquita_forward.main(args) == 0
        second = capsys.readouterr().out
        assert first == second

        doc = json.loads(first)
        assert sorted(doc) == ['answer', 'answer_ids', 'frames', 'logits', 'question', 'question_tokens']
        assert len(doc['logits'][0]) == desk_config().vocab_size
        assert doc['frames'] == [0, 2, 5, 7]

        assert vaquita_forward.main(args + ['--critical']) == 0
        critical = json.loads(capsys.readouterr().out)
        assert critical['question'] == 'Please be critical. what is shown'
        assert len(critical['question_tokens']) == len(doc['question_tokens']) + 3

    def test_forward_errors(self, tmp_path, capsys):
        missing = str(tmp_path / 'missing.vqta')
        assert vaquita_forward.main(['--video', missing, '--question', 'what']) == 2
        assert missing in capsys.readouterr().err

        video = str(tmp_path / 'video.vqta')
        write_tensor(video, np.ones((10, 3)))
        assert vaquita_forward.main(['--video', video, '--question', 'what']) == 4

        bad_config = str(tmp_path / 'bad.json')
        with open(bad_config, 'w') as f:
            json.dump({'perceiver': {}}, f)
        assert vaquita_forward.main(['--config', bad_config, '--video', video, '--question', 'what']) == 2

    def test_forward_invalid_utf8_config(self, tmp_path, capsys):
        video = str(tmp_path / 'video.vqta')
        write_tensor(video, np.ones((10, desk_config().encoder.raw_dim)))
        bad_config = str(tmp_path / 'bad.json')
        with open(bad_config, 'wb') as f:
            f.write(b'\xff{}')
        assert vaquita_forward.main(['--config', bad_config, '--video', video, '--question', 'what']) == 2
        assert 'ERROR' in capsys.readouterr().err
        with pytest.raises(ConfigException):
            load_config(bad_config)

    def test_train_manifest_field_types(self, toy, tmp_path):
        manifest, config_path = toy
        with open(manifest) as f:
            records = json.load(f)
        bad = os.path.join(os.path.dirname(manifest), 'bad_manifest.json')

        for key, value in [('question', 42), ('answer', ['cat']), ('frames', 7)]:
            with open(bad, 'w') as f:
                json.dump([dict(records[0], **{key: value})] + records[1:], f)
            with pytest.raises(DatasetException):
                load_manifest(bad)
            assert vaquita_train.main(['--config', config_path, '--data', bad, '--out', str(tmp_path / 'run')]) == 2

        with open(bad, 'wb') as f:
            f.write(b'\xff\xfe[]')
        with pytest.raises(DatasetException):
            load_manifest(bad)
        assert vaquita_train.main(['--config', config_path, '--data', bad, '--out', str(tmp_path / 'run')]) == 2

    def test_checkpoint_manifest_errors(self, toy, tmp_path):
        manifest, config_path = toy
        config = load_config(config_path)
        ckpt = str(tmp_path / 'ckpt')
        save_checkpoint(Vaquita(config), ckpt, 0)
        ckpt_manifest = os.path.join(ckpt, 'manifest.json')
        with open(ckpt_manifest) as f:
            good = json.load(f)

        video = str(tmp_path / 'video.vqta')
        write_tensor(video, np.ones((10, config.encoder.raw_dim)))

        broken = []
        for key in ['config', 'parameters', 'step']:
            broken.append({k: v for k, v in good.items() if k != key})
        broken.append(dict(good, step='three'))
        broken.append(dict(good, parameters=['a.vqta']))
        broken.append([good])
        for doc in broken:
            with open(ckpt_manifest, 'w') as f:
                json.dump(doc, f)
            with pytest.raises(VQTAFormatException):
                load_checkpoint(ckpt)
            assert vaquita_forward.main(['--checkpoint', ckpt, '--video', video, '--question', 'what']) == 2
            assert vaquita_train.main(['--config', config_path, '--data', manifest, '--out', str(tmp_path / 'run'),
                                       '--resume', ckpt, '--steps', '1']) == 2

        with open(ckpt_manifest, 'wb') as f:
            f.write(b'\xff{}')
        with pytest.raises(VQTAFormatException):
            load_checkpoint(ckpt)

    def test_loss_history_errors(self, tmp_path):
        path = str(tmp_path / 'loss.csv')
        with pytest.raises(DatasetException):
            read_loss_history(path)
        with open(path, 'w') as f:
            f.write('')
        with pytest.raises(DatasetException):
            read_loss_history(path)

    def test_train_zero_learning_rate(self, toy, tmp_path):
        manifest, config_path = toy
        write_config(load_config(config_path)._replace(learning_rate=0.0), config_path)
        out = str(tmp_path / 'run')

        assert vaquita_train.main(['--config', config_path, '--data', manifest, '--out', out, '--steps', '3']) == 0
        first = checkpoint_bytes(os.path.join(out, 'ckpt_000000'))
        last = checkpoint_bytes(os.path.join(out, 'ckpt_000003'))
        assert len(first) > 0
        assert first == last

        df = read_loss_history(os.path.join(out, 'loss.csv'))
        assert df['step'].tolist() == [0, 1, 2]
        assert df['loss'].nunique() == 1

    def test_train_resume(self, toy, tmp_path):
        manifest, config_path = toy
        write_config(load_config(config_path)._replace(batch_size=3), config_path)
        straight = str(tmp_path / 'straight')
        split = str(tmp_path / 'split')

        assert vaquita_train.main(['--config', config_path, '--data', manifest, '--out', straight,
                                   '--steps', '5']) == 0
        assert vaquita_train.main(['--config', config_path, '--data', manifest, '--out', split,
                                   '--steps', '4', '--save-every', '2']) == 0
        assert os.path.isdir(os.path.join(split, 'ckpt_000002'))
        assert vaquita_train.main(['--config', config_path, '--data', manifest, '--out', split,
                                   '--resume', os.path.join(split, 'ckpt_000004'), '--steps', '1']) == 0

        expected = read_loss_history(os.path.join(straight, 'loss.csv'))
        resumed = read_loss_history(os.path.join(split, 'loss.csv'))
        assert resumed['step'].tolist() == [0, 1, 2, 3, 4]
        assert resumed['loss'].tolist() == expected['loss'].tolist()

    def test_train_nan_loss(self, toy, tmp_path):
        manifest, config_path = toy
        write_config(load_config(config_path)._replace(learning_rate=1e300), config_path)
        out = str(tmp_path / 'run')
        assert vaquita_train.main(['--config', config_path, '--data', manifest, '--out', out, '--steps', '3']) == 5

    def test_train_bad_manifest(self, tmp_path):
        manifest = str(tmp_path / 'manifest.json')
        with open(manifest, 'w') as f:
            json.dump([{'frames': 'x.vqta'}], f)
        assert vaquita_train.main(['--data', manifest, '--out', str(tmp_path / 'run')]) == 2

    def test_plot_loss(self, toy, tmp_path):
        manifest, config_path = toy
        out = str(tmp_path / 'run')
        assert vaquita_train.main(['--config', config_path, '--data', manifest, '--out', out, '--steps', '4']) == 0
        assert plot_loss.main(['-r', out]) == 0
        assert os.path.isfile(os.path.join(out, 'loss.pdf'))

    def test_gradcheck_tool(self, capsys):
        assert vaquita_gradcheck.main(['--module', 'all', '--seeds', '5']) == 0
        report = capsys.readouterr().out
        assert 'FAILED' not in report
        assert 'model.tokenizer.embedding' in report
        assert 'vqformer.g_attn' in report

    def test_gradcheck_tool_failures(self, capsys):
        assert vaquita_gradcheck.main(['--module', 'tensor', '--seeds', '1', '--corrupt', 'matmul']) == 1
        assert 'FAILED' in capsys.readouterr().out
        assert vaquita_gradcheck.main(['--module', 'tensor', '--seeds', '1', '--eps', '0']) == 2

    def test_eval_exact(self, tmp_path, capsys):
        refs = ['cat', 'dog', 'bird', 'bat', 'fish', 'frog', 'horse', 'mouse']
        refs_path = write_answers(tmp_path / 'refs.txt', refs)

        cases = [
            (refs, 1.0, 5.0),
            (['x'] * 8, 0.0, 1.0),
            (refs[:4] + ['x'] * 4, 0.5, 3.0),
        ]
        for preds, accuracy, score in cases:
            preds_path = str(tmp_path / 'preds.json')
            with open(preds_path, 'w') as f:
                json.dump(preds, f)
            assert vaquita_eval.main(['--pred', preds_path, '--refs', refs_path, '--judge', 'exact']) == 0
            assert json.loads(capsys.readouterr().out) == {'accuracy': accuracy, 'score': score}

    def test_eval_errors(self, tmp_path):
        refs = write_answers(tmp_path / 'refs.txt', ['a', 'b'])
        preds = write_answers(tmp_path / 'preds.txt', ['a'])
        assert vaquita_eval.main(['--pred', preds, '--refs', refs]) == 2
        assert vaquita_eval.main(['--pred', str(tmp_path / 'none.txt'), '--refs', refs]) == 2

    def test_eval_invalid_utf8(self, tmp_path, capsys):
        refs = write_answers(tmp_path / 'refs.txt', ['cat'])
        preds = str(tmp_path / 'preds.txt')
        with open(preds, 'wb') as f:
            f.write(b'\xff\xfe cat\n')
        assert vaquita_eval.main(['--pred', preds, '--refs', refs]) == 2
        assert 'UTF-8' in capsys.readouterr().err

    def test_eval_details(self, tmp_path):
        refs = write_answers(tmp_path / 'refs.txt', ['A cat.', 'dog'])
        preds = write_answers(tmp_path / 'preds.txt', ['a  CAT', 'cat'])
        details = str(tmp_path / 'details.csv')
        assert vaquita_eval.main(['--pred', preds, '--refs', refs, '--details', details]) == 0
        assert os.path.isfile(details)

    def test_judges(self):
        assert normalize_answer('  A  Cat! ') == 'a cat'
        _, summary = evaluate(ExactJudge(), ['A cat.', 'dog'], ['a cat', 'bird'])
        assert summary == {'accuracy': 0.5, 'score': 3.0}

        judge = MockJudge()
        first = [judge.judge('q', p, 'ref') for p in ['a', 'b', 'c', 'd']]
        assert first == [judge.judge('q', p, 'ref') for p in ['a', 'b', 'c', 'd']]
        for verdict in first:
            assert 1 <= verdict.score <= 5
            assert verdict.correct == (verdict.score >= 3)

    def test_config_files(self):
        assert load_config(os.path.join(CONFIGS, 'desk.json')) == desk_config()
        assert load_config(os.path.join(CONFIGS, 'full.json')) == full_config()
        assert load_config(os.path.join(CONFIGS, 'desk_pooling_baseline.json')).feature_alignment is False
        assert load_config(os.path.join(CONFIGS, 'desk_uniform_sampling.json')).data_alignment is False

    def test_config_errors(self, tmp_path):
        path = str(tmp_path / 'config.json')
        doc = desk_config().to_json()
        doc['learning_rat'] = 0.1
        with open(path, 'w') as f:
            json.dump(doc, f)
        with pytest.raises(ConfigException):
            load_config(path)

        doc = desk_config().to_json()
        doc['perceiver']['m'] = 'four'
        with open(path, 'w') as f:
            json.dump(doc, f)
        with pytest.raises(ConfigException):
            load_config(path)

        with pytest.raises(ConfigException):
            load_config(str(tmp_path / 'missing.json'))

    def test_seed_precedence(self, monkeypatch):
        monkeypatch.delenv('VAQUITA_SEED', raising=False)
        assert load_config('desk').seed == 0
        assert load_config('desk', seed=4).seed == 4
        monkeypatch.setenv('VAQUITA_SEED', '9')
        assert load_config('desk', seed=4).seed == 9
        monkeypatch.setenv('VAQUITA_SEED', 'nine')
        with pytest.raises(ConfigException):
            load_config('desk')

    def test_expand_path(self, tmp_path):
        (tmp_path / 'sub').mkdir()
        for name in ['a.csv', 'b.txt', 'sub/c.csv']:
            (tmp_path / name).write_text('step,loss\n')
        found = util.expand_path([str(tmp_path)], True, '.csv')
        assert [os.path.basename(f) for f in found] == ['a.csv', 'c.csv']
        assert util.get_outfile_name('/x/loss.csv', '', '.pdf') == '/x/loss.pdf'
