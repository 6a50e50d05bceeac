import json
import sys

sys.stdin.readline()
print(json.dumps({"imt_protocol": 99}), flush=True)
sys.stdin.read()
