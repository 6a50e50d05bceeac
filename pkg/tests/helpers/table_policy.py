"""Answers from ``state=action`` pairs given as arguments."""
import json
import sys

table = dict(map(int, arg.split("=")) for arg in sys.argv[1:])
for line in sys.stdin:
    msg = json.loads(line)
    if "imt_protocol" in msg:
        print(json.dumps(msg), flush=True)
    else:
        print(json.dumps({"action": table[msg["state"]]}), flush=True)
