#!/usr/bin/env python3

"""
Plot loss.csv files written by vaquita_train.py, and write PDF files next to them.

Use -r to search directories for loss csv files.
"""

import argparse
import sys

import matplotlib

import util
from trainer import read_loss_history

# Set backend before importing matplotlib.pyplot
matplotlib.use('pdf')
import matplotlib.pyplot as plt


def plot_loss(infile: str, outfile: str, log_scale: bool = False) -> bool:
    print(f'Reading {infile}')
    df = read_loss_history(infile)

    if len(df) == 0:
        print(f'No losses in {infile}')
        return False

    # Create a figure and 1 subplot
    figure, (plot) = plt.subplots(1)
    plot.plot(df['step'], df['loss'])
    plot.set_xlabel('step')
    plot.set_ylabel('loss')
    if log_scale:
        plot.set_yscale('log')

    # [Over]write PDF
    plt.savefig(outfile)
    print(f'{outfile} written with {len(df)} points')

    # Close the figure to reclaim the memory
    plt.close(figure)
    return True


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(formatter_class=argparse.RawDescriptionHelpFormatter, description=__doc__)
    parser.add_argument('-r', '--recurse', action='store_true', help='enter directories looking for csv files')
    parser.add_argument('--log', action='store_true', help='log scale for the loss axis')
    parser.add_argument('path', nargs='+')
    args = parser.parse_args(argv)

    files = util.expand_path(args.path, args.recurse, '.csv')
    print(f'Processing {len(files)} files')

    try:
        for infile in files:
            plot_loss(infile, util.get_outfile_name(infile, '', '.pdf'), args.log)
    except util.known_exceptions() as e:
        util.error(str(e))
        return util.exit_code_for(e)
    return util.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
