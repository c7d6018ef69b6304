"""Test double for the external runner: `--code FILE --cwd DIR`.

Exit 0 on success, 1 when the script raises, 2 on protocol errors.
"""
import argparse
import os
import sys
import traceback


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"runner: {message}\n")
        sys.exit(2)


def main():
    p = _Parser()
    p.add_argument("--code", required=True)
    p.add_argument("--cwd", required=True)
    a = p.parse_args()
    try:
        os.chdir(a.cwd)
        with open(a.code, encoding="utf-8") as f:
            src = f.read()
    except OSError as e:
        sys.stderr.write(f"runner: {e}\n")
        sys.exit(2)
    try:
        exec(compile(src, a.code, "exec"), {"__name__": "__main__"})
    except SystemExit:
        raise
    except BaseException:
        traceback.print_exc()
        sys.exit(1)
    sys.stdout.flush()


if __name__ == "__main__":
    main()
