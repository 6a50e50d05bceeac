"""Line-oriented text format for explicit MDPs.

Grammar (one directive per line, ``#`` starts a comment)::

    states N                  # required, first directive
    names n0 n1 ... n(N-1)    # optional symbolic state names
    actions a0 a1 ...         # required before any transition
    init <state> <p>          # initial distribution (default: uniform)
    label <state> <tag>       # atomic proposition, e.g. ``bad`` or ``goal``
    feature <state> x1 x2 ... # optional per-state feature vector
    <state> <action> <state'> <p>

States may be referenced by name or by integer index.  The action ``stay`` is
always available; it is appended to the action list when not declared.
"""

from __future__ import annotations

from pathlib import Path

from .mdp import STAY, Mdp

DIRECTIVES = {"states", "names", "actions", "init", "label", "feature"}


class ModelFormatError(ValueError):
    def __init__(self, lineno: int | None, message: str):
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.lineno = lineno


def parse_mdp(text: str) -> Mdp:
    num_states = None
    names: list[str] | None = None
    actions: list[str] | None = None
    init: dict[int, float] = {}
    labels: dict[int, set[str]] = {}
    features: dict[int, list[float]] = {}
    transitions: dict[tuple[int, int], list[tuple[int, float]]] = {}

    def state(tok: str, lineno: int) -> int:
        if names is not None and tok in lookup:
            return lookup[tok]
        try:
            s = int(tok)
        except ValueError:
            raise ModelFormatError(lineno, f"unknown state {tok!r}") from None
        if not 0 <= s < num_states:
            raise ModelFormatError(lineno, f"state index {s} out of range")
        return s

    def prob(tok: str, lineno: int) -> float:
        try:
            return float(tok)
        except ValueError:
            raise ModelFormatError(lineno, f"bad probability {tok!r}") from None

    lookup: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        head = toks[0]
        if num_states is None and head != "states":
            raise ModelFormatError(lineno, "file must start with 'states N'")
        if head == "states":
            if num_states is not None:
                raise ModelFormatError(lineno, "duplicate 'states' directive")
            if len(toks) != 2 or not toks[1].isdigit() or int(toks[1]) < 1:
                raise ModelFormatError(lineno, "expected 'states N' with N >= 1")
            num_states = int(toks[1])
        elif head == "names":
            if names is not None or actions is not None or transitions:
                raise ModelFormatError(lineno, "'names' must directly follow 'states'")
            if len(toks) - 1 != num_states or len(set(toks[1:])) != num_states:
                raise ModelFormatError(lineno, f"expected {num_states} distinct state names")
            names = toks[1:]
            lookup = {n: i for i, n in enumerate(names)}
        elif head == "actions":
            if actions is not None:
                raise ModelFormatError(lineno, "duplicate 'actions' directive")
            if len(toks) < 2 or len(set(toks[1:])) != len(toks) - 1:
                raise ModelFormatError(lineno, "expected distinct action names")
            actions = toks[1:]
            if STAY not in actions:
                actions.append(STAY)
        elif head == "init":
            if len(toks) != 3:
                raise ModelFormatError(lineno, "expected 'init <state> <p>'")
            init[state(toks[1], lineno)] = prob(toks[2], lineno)
        elif head == "label":
            if len(toks) != 3:
                raise ModelFormatError(lineno, "expected 'label <state> <tag>'")
            labels.setdefault(state(toks[1], lineno), set()).add(toks[2])
        elif head == "feature":
            if len(toks) < 3:
                raise ModelFormatError(lineno, "expected 'feature <state> x1 ...'")
            features[state(toks[1], lineno)] = [prob(t, lineno) for t in toks[2:]]
        elif len(toks) == 4:
            if actions is None:
                raise ModelFormatError(lineno, "transition before 'actions' directive")
            s, t = state(toks[0], lineno), state(toks[2], lineno)
            if toks[1] not in actions:
                raise ModelFormatError(lineno, f"unknown action {toks[1]!r}")
            transitions.setdefault((s, actions.index(toks[1])), []).append((t, prob(toks[3], lineno)))
        else:
            raise ModelFormatError(lineno, f"unknown directive {head!r}")

    if num_states is None:
        raise ModelFormatError(None, "empty model file")
    if actions is None:
        raise ModelFormatError(None, "missing 'actions' directive")
    feats = None
    if features:
        dims = {len(v) for v in features.values()}
        if len(features) != num_states or len(dims) != 1:
            raise ModelFormatError(None, "features must be given for every state with equal dimension")
        feats = [features[s] for s in range(num_states)]
    return Mdp.from_transitions(num_states, actions, transitions, labels=labels, initial=init or None,
                                state_names=names, features=feats)


def load_mdp(path: str | Path) -> Mdp:
    return parse_mdp(Path(path).read_text())


def format_mdp(mdp: Mdp) -> str:
    """Serialize ``mdp`` (enabled rows only) so that ``parse_mdp`` reads it back."""
    out = [f"states {mdp.num_states}", "names " + " ".join(mdp.state_names),
           "actions " + " ".join(mdp.actions)]
    for s in range(mdp.num_states):
        if mdp.initial[s]:
            out.append(f"init {mdp.state_names[s]} {float(mdp.initial[s])!r}")
    for s, tags in enumerate(mdp.labels):
        out.extend(f"label {mdp.state_names[s]} {t}" for t in sorted(tags))
    if mdp.features is not None:
        for s in range(mdp.num_states):
            out.append(f"feature {mdp.state_names[s]} " + " ".join(repr(float(x)) for x in mdp.features[s]))
    for r in range(mdp.num_rows):
        if not mdp.enabled_rows[r]:
            continue
        s, a = int(mdp.row_state[r]), int(mdp.row_action[r])
        lo, hi = mdp.matrix.indptr[r], mdp.matrix.indptr[r + 1]
        for t, p in zip(mdp.matrix.indices[lo:hi], mdp.matrix.data[lo:hi]):
            out.append(f"{mdp.state_names[s]} {mdp.actions[a]} {mdp.state_names[t]} {float(p)!r}")
    return "\n".join(out) + "\n"
