"""File formats: CSV datasets, network JSON, DOT export and JSONL traces."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import CPDKind, Dataset, FamilyParams, NetworkGraph, Node

DEFAULT_MISSING = ("", "NA")


class ParseError(ValueError):
    """Malformed input file; the message names the offending row and column."""


def load_csv(path, missing_token: str | tuple | None = None, *, standardize: bool = False
             ) -> Dataset:
    """Read a header + rows table. Cells equal to a missing token are masked.

    ``missing_token`` is one string or a tuple of strings (default: empty cell
    or ``NA``). Row numbers in error messages count the header as row 1.
    """
    if missing_token is None:
        tokens = set(DEFAULT_MISSING)
    elif isinstance(missing_token, str):
        tokens = {missing_token}
    else:
        tokens = set(missing_token)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        values, mask = [], []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            vals, obs = [], []
            for c, cell in enumerate(row):
                cell = cell.strip()
                if cell in tokens:
                    vals.append(0.0)
                    obs.append(False)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: row {r}, column {c + 1} ({header[c]!r}): "
                                     f"cannot parse {cell!r}") from None
                obs.append(True)
            values.append(vals)
            mask.append(obs)
    if not values:
        raise ParseError(f"{path}: no data rows")
    data = Dataset(np.array(values), np.array(mask), header)
    return data.standardized() if standardize else data


def save_csv(data: Dataset, path, missing_token: str = "NA") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(data.names)
        for vals, obs in zip(data.values, data.observed):
            w.writerow([repr(float(v)) if o else missing_token for v, o in zip(vals, obs)])


# -- networks ------------------------------------------------------------------

def network_to_dict(graph: NetworkGraph) -> dict:
    nodes, edges = [], []
    for i, node in enumerate(graph.nodes):
        p = graph.params[i]
        nodes.append({
            "name": node.name,
            "hidden": node.hidden,
            "cpd": node.kind.value,
            "theta": None if p is None else [float(t) for t in p.theta],
            "sigma2": None if p is None else float(p.sigma2),
        })
        for j, parent in enumerate(graph.parents[i]):
            edges.append({
                "parent": graph.nodes[parent].name,
                "child": node.name,
                "alpha": None if p is None else float(p.alpha[j]),
            })
    return {"nodes": nodes, "edges": edges, "max_in_degree": graph.max_in_degree,
            "two_layer": graph.two_layer}


def network_from_dict(doc: dict) -> NetworkGraph:
    g = NetworkGraph(max_in_degree=doc.get("max_in_degree"),
                     two_layer=bool(doc.get("two_layer", False)))
    for nd in doc["nodes"]:
        g.add_node(Node(nd["name"], bool(nd.get("hidden", False)),
                        CPDKind(nd.get("cpd", "linear"))))
    incoming: dict[int, list[tuple[int, float | None]]] = {i: [] for i in range(g.n_nodes)}
    for e in doc.get("edges", []):
        incoming[g.index(e["child"])].append((g.index(e["parent"]), e.get("alpha")))
    for i, nd in enumerate(doc["nodes"]):
        pairs = sorted(incoming[i])
        parents = [p for p, _ in pairs]
        if nd.get("theta") is None:
            g.set_family(i, parents, None)
            continue
        alpha = [0.0 if a is None else a for _, a in pairs]
        g.set_family(i, parents, FamilyParams(alpha, nd["theta"], nd["sigma2"]))
    if g.has_cycle():
        raise ParseError("network contains a directed cycle")
    return g


def save_network(graph: NetworkGraph, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(graph), indent=2) + "\n")


def load_network(path) -> NetworkGraph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    return network_from_dict(doc)


def to_dot(graph: NetworkGraph) -> str:
    """Graphviz source; hidden nodes are dashed, edges labelled with their scale."""
    lines = ["digraph network {"]
    for node in graph.nodes:
        style = ', style="dashed"' if node.hidden else ""
        lines.append(f'  "{node.name}" [label="{node.name}\\n{node.kind.value}"{style}];')
    for p, c in graph.edges():
        label = ""
        if graph.params[c] is not None:
            label = f' [label="{graph.alpha_of(p, c):.3g}"]'
        lines.append(f'  "{graph.nodes[p].name}" -> "{graph.nodes[c].name}"{label};')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, default=_jsonable) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")
