"""JSON pipeline documents: pipes + entries, loadable into an engine.

Schema (all keys stable)::

    {
      "pipes": [
        {"name": "root", "root": true, "monitor": true,
         "match": [{"field": "ip_src", "binding": "variable", "mask": 1}],
         "actions": [{"field": "eth_dst", "binding": "variable"},
                     {"five_tuple_hash": {"dst": "meta0", "modulo": 2}}],
         "miss": "slow_path" | "drop" | {"pipe": "<name>"} | {"port": <id|name>},
         "allowed_forwards": ["port", "pipe", "slow_path", "drop"]}
      ],
      "entries": [
        {"pipe": "root",
         "match": {"ip_src": 0},
         "actions": {"eth_dst": "02:aa:00:00:00:01"},
         "forward": {"port": "p1"} | {"pipe": "<name>"} | "slow_path" | "drop"}
      ]
    }

Field values accept ints, "0x.." hex strings, dotted IPv4 for ip_* and
colon-hex MACs for eth_*.  A pipe-level miss referencing another pipe must
name a pipe defined earlier in the document.
"""

import json

from . import packet as pkt
from .engine import (ActionField, Engine, Forward, HashAction, MatchField,
                     PipeEntry, PipeSpec, SLOW_PATH, DROP, ValidationError)

_MAC_FIELDS = ("eth_src", "eth_dst")
_IP_FIELDS = ("ip_src", "ip_dst")


def coerce_value(field_name: str, raw) -> int:
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str):
        text = raw.strip()
        if field_name in _MAC_FIELDS and ":" in text:
            return pkt.mac_to_int(text)
        if field_name in _IP_FIELDS and "." in text:
            return pkt.ip_to_int(text)
        return int(text, 0)
    raise ValidationError(f"cannot interpret {raw!r} as a {field_name} value")


def _forward(spec, names: dict, port_resolver) -> Forward:
    if spec == "slow_path":
        return SLOW_PATH
    if spec == "drop":
        return DROP
    if isinstance(spec, dict) and len(spec) == 1:
        (kind, arg), = spec.items()
        if kind == "pipe":
            if arg not in names:
                raise ValidationError(f"forward references unknown pipe {arg!r}")
            return Forward.pipe(names[arg])
        if kind == "port":
            return Forward.port(port_resolver(arg))
    raise ValidationError(f"bad forward spec {spec!r}")


def _default_port_resolver(arg):
    if isinstance(arg, int):
        return arg
    raise ValidationError(f"port {arg!r} needs a fabric to resolve its name")


def build_from_doc(doc: dict, *, engine: Engine | None = None,
                   port_resolver=None, limits=None, clock=None):
    """Instantiate the pipes and entries of a pipeline document.

    Returns (engine, {pipe_name: pipe_id}).
    """
    if port_resolver is None:
        port_resolver = _default_port_resolver
    if engine is None:
        engine = Engine(limits=limits, clock=clock)
    names: dict[str, int] = {}
    for pdoc in doc.get("pipes", []):
        name = pdoc["name"]
        if name in names:
            raise ValidationError(f"duplicate pipe name {name!r}")
        match = []
        for m in pdoc.get("match", []):
            fname = m["field"]
            match.append(MatchField(
                fname, binding=m.get("binding", "constant"),
                value=coerce_value(fname, m["value"]) if "value" in m else None,
                mask=coerce_value(fname, m["mask"]) if "mask" in m else None))
        actions = []
        for a in pdoc.get("actions", []):
            if "five_tuple_hash" in a:
                h = a["five_tuple_hash"]
                actions.append(HashAction(dst=h.get("dst", "meta0"),
                                          modulo=int(h.get("modulo", 1))))
                continue
            fname = a["field"]
            actions.append(ActionField(
                fname, binding=a.get("binding", "constant"),
                value=coerce_value(fname, a["value"]) if "value" in a else None))
        spec = PipeSpec(
            name=name, is_root=bool(pdoc.get("root", False)),
            match=match, actions=actions,
            allowed_forwards=tuple(pdoc.get(
                "allowed_forwards", ("port", "pipe", "slow_path", "drop"))),
            miss_forward=_forward(pdoc.get("miss", "slow_path"), names,
                                  port_resolver),
            monitor=bool(pdoc.get("monitor", False)))
        names[name] = engine.create_pipe(spec)
    for edoc in doc.get("entries", []):
        pname = edoc["pipe"]
        if pname not in names:
            raise ValidationError(f"entry references unknown pipe {pname!r}")
        entry = PipeEntry(
            match_values={f: coerce_value(f, v)
                          for f, v in edoc.get("match", {}).items()},
            action_values={f: coerce_value(f, v)
                           for f, v in edoc.get("actions", {}).items()},
            forward=_forward(edoc.get("forward", "drop"), names, port_resolver))
        engine.add_entry(names[pname], entry)
    return engine, names


def load_file(path, **kwargs):
    with open(path) as fh:
        return build_from_doc(json.load(fh), **kwargs)
