import json
import sys
import time

sys.stdin.readline()
print(json.dumps({"imt_protocol": 1}), flush=True)
sys.stdin.readline()
time.sleep(30)
