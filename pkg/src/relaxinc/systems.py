"""Built-in systems.

``binary_switch``
    ``x' in {-1, 1}`` in one dimension.  The hull is ``[-1, 1]``; chattering
    about ``z = 0`` with period ``P`` gives a triangle wave of height ``P/2``.
``linear_decay``
    ``x' = -x``.  Exact flow ``x0 * exp(-t)``; ``|x|`` leaves ``B(0, eps)``
    for good at ``ln(|x0| / eps)``.
``example41``
    ``x1' = x2^2, x2' = x3^2, x3' = u`` with ``u in {-1, 1}``.  The relaxed
    system has the equilibrium 0, while every genuine trajectory from 0 has
    ``x2(1) = sigma > 0`` and ``x1(t) >= sigma^2 (t - 1)``.
"""

from .inclusion import parse_system

BUILTINS = {
    "binary_switch": "x1' = u\nU = {-1, 1}",
    "linear_decay": "x1' = -x1\nU = {0}",
    "example41": "x1' = x2^2\nx2' = x3^2\nx3' = u\nU = {-1, 1}",
}


def builtin(name):
    try:
        text = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown builtin system {name!r}; choose from {sorted(BUILTINS)}") from None
    return parse_system(text, description=name)


def load_system(source):
    """A builtin name or system text."""
    return builtin(source) if source in BUILTINS else parse_system(source)
