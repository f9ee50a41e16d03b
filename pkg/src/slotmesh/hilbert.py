"""Hilbert space-filling curve enumeration used for region placement."""
from __future__ import annotations

from .core import MeshTopology, NodeId


def hilbert_d2xy(order_side: int, d: int) -> tuple[int, int]:
    """Coordinates of curve index `d` on an order_side x order_side grid.

    `order_side` must be a power of two.
    """
    x = y = 0
    t = d
    s = 1
    while s < order_side:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def hilbert_order(mesh: MeshTopology) -> list[NodeId]:
    """All mesh nodes in Hilbert-curve order.

    The curve is drawn on the smallest power-of-two square covering the
    mesh; cells that fall outside the actual array are skipped.
    """
    side = 1
    while side < max(mesh.width, mesh.height):
        side *= 2
    out = []
    for d in range(side * side):
        x, y = hilbert_d2xy(side, d)
        node = NodeId(x, y)
        if mesh.contains(node):
            out.append(node)
    return out
