#!/usr/bin/env python3

"""
Score predicted answers against reference answers and print {"accuracy": ..., "score": ...} as JSON.

Each input file is either a JSON list of strings or plain text with one answer per line.

Judges:
    exact   correct iff the normalized answers are equal, score 5 if correct, else 1
    mock    deterministic hash-seeded verdicts, for exercising the harness
"""

import argparse
import json
import sys

import util
from config import DatasetException
from judge import JUDGES, evaluate


def read_answers(path: str) -> list[str]:
    try:
        with open(path, encoding='utf-8') as f:
            text = f.read()
    except FileNotFoundError:
        raise DatasetException(f'{path}: no such file')
    except UnicodeDecodeError as e:
        raise DatasetException(f'{path}: not UTF-8 text: {e}')

    if text.lstrip().startswith('['):
        try:
            answers = json.loads(text)
        except json.JSONDecodeError as e:
            raise DatasetException(f'{path}: not valid JSON: {e}')
        if not all(isinstance(a, str) for a in answers):
            raise DatasetException(f'{path}: expected a list of strings')
        return answers

    return text.splitlines()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(formatter_class=argparse.RawDescriptionHelpFormatter, description=__doc__)
    parser.add_argument('--pred', required=True, help='predicted answers')
    parser.add_argument('--refs', required=True, help='reference answers')
    parser.add_argument('--judge', choices=list(JUDGES), default='exact')
    parser.add_argument('--details', default=None, help='also write per-item verdicts to this csv file')
    args = parser.parse_args(argv)

    try:
        predictions = read_answers(args.pred)
        references = read_answers(args.refs)
        df, summary = evaluate(JUDGES[args.judge](), predictions, references)
    except util.known_exceptions() as e:
        util.error(str(e))
        return util.exit_code_for(e)

    if args.details is not None:
        util.note(f'Writing {len(df)} rows to {args.details}')
        df.to_csv(args.details, index=False)

    print(util.dumps(summary))
    return util.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
