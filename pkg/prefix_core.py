"""Prefix-vector algebra: prefix relations, mcp/mce and the support trie."""
from __future__ import annotations

from typing import Iterable, Optional, Sequence

from errors import PreconditionViolation

Value = bytes
PrefixVector = tuple


class _Bot:
    """Placeholder value that is distinct from every byte string"""
    __slots__ = ()
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BOT"

    def __reduce__(self):
        return (_Bot, ())


BOT = _Bot()


def vector(*elems) -> PrefixVector:
    """Build a vector; str items are encoded as utf-8 so tests can write vector('a', 'b')"""
    return tuple(e.encode() if isinstance(e, str) else e for e in elems)


def within_capacity(x: Sequence, capacity: Optional[int]) -> bool:
    return capacity is None or len(x) <= capacity


def common_prefix_length(x: Sequence, y: Sequence) -> int:
    limit = min(len(x), len(y))
    i = 0
    while i < limit and x[i] == y[i]:
        i += 1
    return i


def is_prefix(y: Sequence, x: Sequence) -> bool:
    """True iff y is a prefix of x"""
    return len(y) <= len(x) and common_prefix_length(y, x) == len(y)


def consistent(x: Sequence, y: Sequence) -> bool:
    return common_prefix_length(x, y) == min(len(x), len(y))


def _as_list(s: Iterable[Sequence]) -> list:
    items = [tuple(v) for v in s]
    if not items:
        raise PreconditionViolation("vector set must be non-empty")
    return items


def mcp(s: Iterable[Sequence]) -> PrefixVector:
    """Maximum common prefix of a non-empty vector set"""
    items = _as_list(s)
    prefix = items[0]
    for v in items[1:]:
        prefix = prefix[:common_prefix_length(prefix, v)]
        if not prefix:
            break
    return prefix


def mce(s: Iterable[Sequence]) -> Optional[PrefixVector]:
    """Minimum common extension, or None when two members conflict"""
    items = _as_list(s)
    longest = max(items, key=len)
    for v in items:
        if not is_prefix(v, longest):
            return None
    return longest


def pairwise_consistent(s: Iterable[Sequence]) -> bool:
    return mce(s) is not None


def order_key(vec: Sequence) -> tuple:
    """Total order on vectors that mix bytes and BOT; BOT sorts after every bytes entry"""
    return tuple((1, b"") if e is BOT else (0, e) for e in vec)


class TrieNode:
    __slots__ = ("children", "count")

    def __init__(self):
        self.children: dict = {}
        self.count = 0


class PrefixTrie:
    """Trie over a multiset of vectors; every node counts the vectors passing through it."""

    def __init__(self, vectors: Iterable[Sequence] = ()):
        self.root = TrieNode()
        self.size = 0
        for v in vectors:
            self.insert(v)

    def insert(self, v: Sequence):
        node = self.root
        node.count += 1
        for elem in v:
            child = node.children.get(elem)
            if child is None:
                child = TrieNode()
                node.children[elem] = child
            child.count += 1
            node = child
        self.size += 1

    def support(self, prefix: Sequence) -> int:
        node = self.root
        for elem in prefix:
            node = node.children.get(elem)
            if node is None:
                return 0
        return node.count

    def deepest_supported(self, k: int) -> PrefixVector:
        """Deepest prefix carried by at least k inserted vectors.

        Two distinct candidates of equal depth can only exist when 2k <= size;
        the smallest one under `order_key` is returned in that case.
        """
        best: tuple = ()
        best_key: tuple = ()
        path: list = []
        stack = [(self.root, 0, None)]
        while stack:
            node, depth, elem = stack.pop()
            del path[max(depth - 1, 0):]
            if depth:
                path.append(elem)
            if depth > len(best) or (depth == len(best) and order_key(path) < best_key):
                best = tuple(path)
                best_key = order_key(best)
            for child_elem, child in node.children.items():
                if child.count >= k:
                    stack.append((child, depth + 1, child_elem))
        return best


def longest_supported_prefix(s: Iterable[Sequence], k: int) -> PrefixVector:
    """Longest prefix extended by at least k members of s (max over size-k subsets of mcp)"""
    items = _as_list(s)
    if k < 1 or k > len(items):
        raise PreconditionViolation(f"support {k} outside [1, {len(items)}]")
    trie = PrefixTrie(items)
    result = trie.deepest_supported(k)
    if __debug__ and 2 * k > len(items):
        for elem_path in _same_depth_candidates(trie, k, len(result)):
            assert elem_path == result, "supported prefix is not unique"
    return result


def _same_depth_candidates(trie: PrefixTrie, k: int, depth: int):
    level = [(trie.root, ())]
    for _ in range(depth):
        level = [(child, path + (elem,))
                 for node, path in level
                 for elem, child in node.children.items() if child.count >= k]
    return [path for _, path in level]
