"""Stand-in for a Lean REPL: JSON commands separated by blank lines on stdin.

Rules per command, applied line by line:
  a line containing FAIL    -> error at that line
  a line containing sorry   -> warning "declaration uses 'sorry'"
  a line containing SLEEP   -> sleep 30 s before answering
  a line containing CRASH   -> exit immediately
Every answered command gets a fresh environment id.
"""
import json
import sys
import time


def main() -> None:
    env = 0
    buf = []
    for raw in sys.stdin:
        if raw.strip():
            buf.append(raw)
            continue
        if not buf:
            continue
        req = json.loads("".join(buf))
        buf = []
        messages = []
        for i, line in enumerate(req.get("cmd", "").splitlines(), start=1):
            if "CRASH" in line:
                sys.exit(3)
            if "SLEEP" in line:
                time.sleep(30)
            if "FAIL" in line:
                messages.append({"severity": "error", "pos": {"line": i, "column": 0}, "data": "unsolved goals"})
            elif "sorry" in line:
                messages.append(
                    {"severity": "warning", "pos": {"line": i, "column": 0}, "data": "declaration uses 'sorry'"}
                )
        sys.stdout.write(json.dumps({"env": env, "messages": messages}) + "\n\n")
        sys.stdout.flush()
        env += 1


if __name__ == "__main__":
    main()
