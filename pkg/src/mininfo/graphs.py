"""Small graph routines used by the chain and end-component analyses.

All functions work on adjacency lists over integer vertices ``0..n-1`` and
are iterative (explicit stacks) so that very large models do not hit the
interpreter recursion limit.
"""

from __future__ import annotations


def strongly_connected_components(adj: list[list[int]]) -> list[list[int]]:
    """Tarjan's algorithm with an explicit stack.

    Returns the SCCs as lists of vertices, in reverse topological order of
    the condensation (components with no successors come first).  Vertices
    inside a component keep ascending order for determinism.
    """
    n = len(adj)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = 0

    for root in range(n):
        if index[root] != -1:
            continue
        # frames hold (vertex, iterator position into adj[vertex])
        frames = [(root, 0)]
        while frames:
            v, i = frames.pop()
            if i == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            while i < len(adj[v]):
                w = adj[v][i]
                i += 1
                if index[w] == -1:
                    frames.append((v, i))
                    frames.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comp.sort()
                sccs.append(comp)
            if frames:
                parent = frames[-1][0]
                low[parent] = min(low[parent], low[v])
    return sccs


def reachable_from(adj: list[list[int]], sources: list[int]) -> set[int]:
    """Forward reachability (including the sources themselves)."""
    seen = set(sources)
    todo = list(sources)
    while todo:
        v = todo.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return seen


def terminal_components(adj: list[list[int]]) -> list[list[int]]:
    """SCCs with no edge leaving the component (the recurrent classes of a
    chain when `adj` is its support graph)."""
    comps = strongly_connected_components(adj)
    comp_of = {}
    for k, comp in enumerate(comps):
        for v in comp:
            comp_of[v] = k
    terminal = []
    for k, comp in enumerate(comps):
        closed = True
        for v in comp:
            for w in adj[v]:
                if comp_of[w] != k:
                    closed = False
                    break
            if not closed:
                break
        if closed:
            # a singleton without a self-loop is transient, not recurrent
            if len(comp) == 1:
                v = comp[0]
                if v not in adj[v]:
                    continue
            terminal.append(comp)
    return terminal
