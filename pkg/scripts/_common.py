import argparse
import logging


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="applied to every run on top of its own settings")
    p.add_argument("--cache", default=None, help="trained-model cache (default $GACNN_CACHE or ~/.cache/gacnn)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def setup(args) -> None:
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
