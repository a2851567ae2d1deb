"""Checkpoint files: ``key=value`` header followed by both embedding tables.

::

    # transcf checkpoint
    dim=8
    variant=transcf
    n_users=3
    ...
    [users]
    u1<TAB>0.1<TAB>...
    [items]
    i1<TAB>...
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Sequence

from .embed import HyperParams, ModelState, Variant, parse_table_lines, table_lines

MAGIC = "# transcf checkpoint"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: ModelState, user_tokens: Sequence[str], item_tokens: Sequence[str],
                    extra: dict | None = None) -> None:
    h = model.hyper
    head = {
        "dim": model.dim,
        "variant": model.variant.value,
        "n_users": model.alpha.shape[0],
        "n_items": model.beta.shape[0],
    }
    for f in fields(HyperParams):
        if f.name != "dim":
            head[f.name] = getattr(h, f.name)
    head.update(extra or {})
    lines = [MAGIC + "\n"]
    lines += [f"{k}={_fmt(v)}\n" for k, v in head.items()]
    lines.append("[users]\n")
    lines += table_lines(user_tokens, model.alpha)
    lines.append("[items]\n")
    lines += table_lines(item_tokens, model.beta)
    Path(path).write_text("".join(lines), encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_checkpoint(path) -> tuple[ModelState, list[str], list[str], dict[str, str]]:
    """Returns the model, user tokens, item tokens and the raw header."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        ku, ki = lines.index("[users]"), lines.index("[items]")
    except ValueError:
        raise CheckpointError(f"{path}: missing table section") from None
    header = dict(line.split("=", 1) for line in lines[1:ku] if "=" in line)
    utoks, users = parse_table_lines(lines[ku + 1:ki])
    itoks, items = parse_table_lines(lines[ki + 1:])
    kwargs = {}
    for f in fields(HyperParams):
        if f.name in header:
            kwargs[f.name] = int(header[f.name]) if f.type in ("int", int) else float(header[f.name])
    hyper = HyperParams(**kwargs)
    if users.dim != hyper.dim or items.dim != hyper.dim:
        raise CheckpointError(f"{path}: table width does not match dim={hyper.dim}")
    model = ModelState(users, items, Variant.parse(header["variant"]), hyper)
    return model, utoks, itoks, header
