#!/usr/bin/env python3

"""
Check reverse-mode gradients against central finite differences on tiny seeded configs.

Prints the largest relative error per parameter group. Exits 0 if every group is below 1e-4, 1 otherwise, listing
the offending parameters.
"""

import argparse
import contextlib
import sys

import util
from gradcheck import DEFAULT_H, MODULES, THRESHOLD, run_checks
from tensor import corrupted_adjoint


def gradcheck(modules: list[str], seeds: list[int], h: float) -> dict[str, float]:
    errors = {}
    for module in modules:
        util.note(f'Checking {module} over {len(seeds)} seed(s)')
        errors.update(run_checks(module, seeds, h))
    return errors


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(formatter_class=argparse.RawDescriptionHelpFormatter, description=__doc__)
    parser.add_argument('--module', choices=list(MODULES) + ['all'], default='all')
    parser.add_argument('--eps', type=float, default=DEFAULT_H, help=f'finite difference step, default {DEFAULT_H}')
    parser.add_argument('--seeds', type=int, default=5, help='number of seeds, default 5')
    parser.add_argument('--corrupt', default=None, help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    modules = list(MODULES) if args.module == 'all' else [args.module]
    corrupt = corrupted_adjoint(args.corrupt) if args.corrupt else contextlib.nullcontext()

    try:
        with corrupt:
            errors = gradcheck(modules, list(range(args.seeds)), args.eps)
    except util.known_exceptions() as e:
        util.error(str(e))
        return util.exit_code_for(e)

    failed = []
    for group, err in errors.items():
        status = 'ok' if err < THRESHOLD else 'FAILED'
        print(f'{group}: max relative error {err :.3e} {status}')
        if err >= THRESHOLD:
            failed.append(group)

    if failed:
        print(f'{len(failed)} of {len(errors)} parameter groups failed: {", ".join(failed)}')
        return util.EXIT_CHECK_FAILED

    print(f'All {len(errors)} parameter groups below {THRESHOLD}')
    return util.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
