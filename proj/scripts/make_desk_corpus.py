#!/usr/bin/env python3
"""Harvest short English sentences from Python stdlib docstrings.

Writes raw (unfiltered, mixed-case) sentence lines; run `inlineac filter-corpus`
on the output to produce the desk corpus.
"""
import argparse
import ast
import glob
import re
import sys


def harvest(root):
    seen = set()
    for path in sorted(glob.glob(root + "/*.py")):
        try:
            with open(path, encoding="utf-8") as fh:
                tree = ast.parse(fh.read())
        except (SyntaxError, UnicodeDecodeError):
            continue
        for node in ast.walk(tree):
            if not isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
                continue
            doc = ast.get_docstring(node)
            if not doc:
                continue
            text = " ".join(doc.split())
            for sent in re.split(r"(?<=[.?!])\s+", text):
                sent = sent.strip()
                words = sent.split()
                if not 3 <= len(words) <= 20 or sent[-1] not in ".?!":
                    continue
                if sent not in seen:
                    seen.add(sent)
                    yield sent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", default="/usr/lib/python3.10")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    n = 0
    with open(args.out, "w", encoding="utf-8") as out:
        for s in harvest(args.root):
            out.write(s + "\n")
            n += 1
    print(f"wrote {n} sentences", file=sys.stderr)


if __name__ == "__main__":
    main()
