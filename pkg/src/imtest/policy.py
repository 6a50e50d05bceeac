"""Policies under test: tabular maps and external processes, with query counting."""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from collections.abc import Mapping, Sequence
from pathlib import Path

from .mdp import Mdp

PROTOCOL_VERSION = 1


class PolicyError(RuntimeError):
    """Any failure while obtaining a decision from the policy under test."""


class UndefinedStateError(PolicyError):
    def __init__(self, state: int):
        super().__init__(f"policy is undefined at state {state}")
        self.state = state


class AdapterError(PolicyError):
    def __init__(self, message: str, state: int | None = None, exchange: Sequence[str] = ()):
        detail = f" (while querying state {state})" if state is not None else ""
        if exchange:
            detail += "; exchange: " + " | ".join(exchange)
        super().__init__(message + detail)
        self.state = state
        self.exchange = list(exchange)


class ProtocolVersionError(AdapterError):
    pass


class PolicyFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class PolicyHandle:
    """Caches one answer per state; ``query_count`` counts distinct states asked.

    ``calls`` counts every call to :meth:`query`, cached or not, which is what
    rollout-based testers charge against their budget.
    """

    def __init__(self):
        self._cache: dict[int, int] = {}
        self.calls = 0

    @property
    def query_count(self) -> int:
        return len(self._cache)

    def query(self, s: int) -> int:
        s = int(s)
        self.calls += 1
        if s not in self._cache:
            self._cache[s] = self._decide(s)
        return self._cache[s]

    def answered(self) -> dict[int, int]:
        return dict(self._cache)

    def _decide(self, s: int) -> int:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TabularPolicy(PolicyHandle):
    kind = "tabular"

    def __init__(self, table: Mapping[int, int]):
        super().__init__()
        self.table = {int(s): int(a) for s, a in table.items()}

    def _decide(self, s: int) -> int:
        try:
            return self.table[s]
        except KeyError:
            raise UndefinedStateError(s) from None


def parse_tabular(text: str, mdp: Mdp) -> TabularPolicy:
    """Parse ``state action`` lines; names or integer indices are accepted."""
    table: dict[int, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        if len(toks) != 2:
            raise PolicyFormatError(lineno, "expected '<state> <action>'")
        s = _resolve(toks[0], mdp.state_names, "state", lineno)
        a = _resolve(toks[1], mdp.actions, "action", lineno)
        if s in table:
            raise PolicyFormatError(lineno, f"duplicate entry for state {toks[0]!r}")
        if mdp.row_of(s, a) is None:
            raise PolicyFormatError(lineno, f"action {toks[1]!r} is not available at state {toks[0]!r}")
        table[s] = a
    return TabularPolicy(table)


def _resolve(tok: str, names: Sequence[str], what: str, lineno: int) -> int:
    try:
        return names.index(tok)
    except ValueError:
        pass
    if tok.isdigit() and int(tok) < len(names):
        return int(tok)
    raise PolicyFormatError(lineno, f"unknown {what} {tok!r}")


def load_tabular(path: str | Path, mdp: Mdp) -> TabularPolicy:
    return parse_tabular(Path(path).read_text(), mdp)


def format_tabular(table: Mapping[int, int], mdp: Mdp) -> str:
    return "".join(f"{mdp.state_names[s]} {mdp.actions[a]}\n" for s, a in sorted(table.items()))


class ExternalPolicy(PolicyHandle):
    """Child process answering JSON-lines requests on stdin/stdout.

    Handshake: we send ``{"imt_protocol": 1}`` and expect the same line back.
    Requests are ``{"run": id, "state": s, "features": [...]}``; responses
    ``{"action": index}``.  One request is in flight at a time.
    """

    kind = "external"

    def __init__(self, argv: Sequence[str], mdp: Mdp | None = None, timeout: float = 30.0, run_id: str = "0"):
        super().__init__()
        self.argv = list(argv)
        self.mdp = mdp
        self.timeout = timeout
        self.run_id = run_id
        self._log: list[str] = []
        try:
            self.proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         stderr=subprocess.DEVNULL, text=True, bufsize=1)
        except OSError as e:
            raise AdapterError(f"cannot spawn policy process {self.argv!r}: {e}") from e
        self._lines: queue.Queue[str | None] = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()
        self._handshake()

    def _pump(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _send(self, obj, state=None):
        line = json.dumps(obj, separators=(",", ":"))
        self._log.append("> " + line)
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as e:
            raise AdapterError(f"policy process pipe closed: {e}", state, self._log[-4:]) from e

    def _receive(self, state=None) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise AdapterError(f"policy process timed out after {self.timeout}s", state, self._log[-4:]) from None
        if line is None:
            raise AdapterError("policy process exited (broken pipe)", state, self._log[-4:])
        self._log.append("< " + line.rstrip("\n"))
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise AdapterError("malformed response line", state, self._log[-4:]) from None
        if not isinstance(obj, dict):
            raise AdapterError("response is not an object", state, self._log[-4:])
        return obj

    def _handshake(self):
        self._send({"imt_protocol": PROTOCOL_VERSION})
        reply = self._receive()
        if "imt_protocol" not in reply:
            self.close()
            raise AdapterError("missing handshake", exchange=self._log)
        if reply != {"imt_protocol": PROTOCOL_VERSION}:
            self.close()
            raise ProtocolVersionError(f"unsupported protocol version {reply.get('imt_protocol')!r}",
                                       exchange=self._log)

    def _decide(self, s: int) -> int:
        req = {"run": self.run_id, "state": s}
        if self.mdp is not None and self.mdp.features is not None:
            req["features"] = [float(x) for x in self.mdp.features[s]]
        self._send(req, s)
        reply = self._receive(s)
        a = reply.get("action")
        if not isinstance(a, int) or isinstance(a, bool) or a < 0 or (
                self.mdp is not None and a >= len(self.mdp.actions)):
            raise AdapterError(f"invalid action {a!r}", s, self._log[-4:])
        return a

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


def spawn_external(command: str, args: Sequence[str] = (), mdp: Mdp | None = None, **kw) -> ExternalPolicy:
    return ExternalPolicy([command, *args], mdp=mdp, **kw)
