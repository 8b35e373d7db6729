"""Scene memory buffer, temporal-age embeddings, and the exploration graph.

The buffer admits an embedding only when its best comparator score against
everything already stored is strictly below the threshold; the graph records
transitions of the "closest stored entry" as the agent moves.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBuffer, InvalidIndex
from .reachability import EMBED_DIM, ReachabilityModel

EMPTY_SCORE = float("-inf")  # novelty of an empty buffer: always below tau

AGE_BUCKETS = 32


def age_bucket(age: int) -> int:
    """Geometric-width buckets: 0, 1, [2,3], [4,7], ... clipped to the last."""
    if age < 0:
        raise InvalidIndex(f"negative age {age}")
    return min(int(np.floor(np.log2(age + 1))), AGE_BUCKETS - 1)


@dataclass
class MemoryBuffer:
    tau: float
    embeddings: list[np.ndarray] = field(default_factory=list)
    insert_steps: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.embeddings)

    def matrix(self) -> np.ndarray:
        if not self.embeddings:
            return np.zeros((0, EMBED_DIM))
        return np.stack(self.embeddings)


def novelty_score(model: ReachabilityModel, e_t: np.ndarray, buf: MemoryBuffer) -> float:
    """Max comparator score of e_t over the buffer; empty buffer -> -inf."""
    if len(buf) == 0:
        return EMPTY_SCORE
    return float(np.max(model.compare_many(e_t, buf.matrix())))


def smb_update(buf: MemoryBuffer, e_t: np.ndarray, t: int, score: float) -> bool:
    """Insert e_t iff score < tau (strict). Returns whether it was inserted."""
    if score < buf.tau:
        buf.embeddings.append(np.array(e_t, dtype=np.float64))
        buf.insert_steps.append(t)
        return True
    return False


@dataclass
class ExplorationGraph:
    edges: set[tuple[int, int]] = field(default_factory=set)
    anchor: int | None = None

    def node_count(self, buf: MemoryBuffer) -> int:
        return len(buf)


def update_anchor(
    graph: ExplorationGraph,
    buf: MemoryBuffer,
    model: ReachabilityModel,
    e_t: np.ndarray,
    just_inserted: bool = False,
) -> int:
    """Track the highest-scoring buffer entry; on change, add a directed edge
    from the previous anchor. Ties break toward the lower index; a freshly
    inserted entry is its own anchor."""
    if len(buf) == 0:
        raise EmptyBuffer("anchor update on empty buffer")
    if just_inserted:
        anchor = len(buf) - 1
    else:
        scores = model.compare_many(e_t, buf.matrix())
        anchor = int(np.argmax(scores))
    prev = graph.anchor
    if prev is not None and prev != anchor:
        graph.edges.add((prev, anchor))
    graph.anchor = anchor
    return anchor


def shortest_path_len(graph: ExplorationGraph, buf_size: int, src: int, dst: int) -> int | None:
    """Directed BFS hop count; None when dst is unreachable from src."""
    if not (0 <= src < buf_size) or not (0 <= dst < buf_size):
        raise InvalidIndex(f"indices ({src}, {dst}) for buffer of size {buf_size}")
    if src == dst:
        return 0
    adjacency: dict[int, list[int]] = {}
    for a, b in graph.edges:
        adjacency.setdefault(a, []).append(b)
    dist = {src: 0}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        for nxt in adjacency.get(node, ()):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                if nxt == dst:
                    return dist[nxt]
                queue.append(nxt)
    return None


def aged_entries(buf: MemoryBuffer, table: np.ndarray, t: int) -> np.ndarray:
    """Entries with their age embedding added: (J, dim). table is the
    (AGE_BUCKETS, dim) vector table (zero table = identity)."""
    if len(buf) == 0:
        return np.zeros((0, EMBED_DIM))
    buckets = [age_bucket(t - s) for s in buf.insert_steps]
    return buf.matrix() + table[buckets]


def ages_of(buf: MemoryBuffer, t: int) -> np.ndarray:
    return np.array([t - s for s in buf.insert_steps], dtype=np.intp)


def dump_jsonl(buf: MemoryBuffer, graph: ExplorationGraph, fh, poses=None) -> None:
    """Entry records then edge records, for the visualization CLI. Optional
    oracle poses are display-only metadata."""
    for j, (step_, emb) in enumerate(zip(buf.insert_steps, buf.embeddings)):
        rec = {"type": "entry", "index": j, "insert_step": step_}
        if poses is not None:
            p = poses[j]
            rec["pose"] = {"x": p.x, "y": p.y, "heading": p.heading}
        rec["embedding_norm"] = float(np.linalg.norm(emb))
        fh.write(json.dumps(rec) + "\n")
    for a, b in sorted(graph.edges):
        fh.write(json.dumps({"type": "edge", "from": a, "to": b}) + "\n")


def load_jsonl(fh) -> tuple[list[dict], list[tuple[int, int]]]:
    entries, edges = [], []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        if rec["type"] == "entry":
            entries.append(rec)
        elif rec["type"] == "edge":
            edges.append((rec["from"], rec["to"]))
    return entries, edges
