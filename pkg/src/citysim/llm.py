"""Uniform prompt-in/text-out view over the ways an LLM can be reached."""
from __future__ import annotations

from typing import Callable, Iterable

Completer = Callable[..., str]


def completer(llm) -> Completer:
    """Return ``fn(prompt, agent_ids=(0,)) -> str`` for ``llm``.

    Accepts an :class:`~citysim.gateway.core.LlmClient` (anything with
    ``complete``), a backend with a synchronous ``respond_text`` (the mock),
    or a plain callable taking the prompt.
    """
    if hasattr(llm, "complete"):
        return lambda prompt, agent_ids=(0,): llm.complete(prompt, tuple(agent_ids))
    if hasattr(llm, "respond_text"):
        return lambda prompt, agent_ids=(0,): llm.respond_text(prompt)
    if callable(llm):
        return lambda prompt, agent_ids=(0,): llm(prompt)
    raise TypeError(f"cannot use {type(llm).__name__} as an LLM")


def complete_many(llm, items: Iterable[tuple[str, tuple]]) -> list:
    """Issue several prompts at once when the handle supports it.

    Returns text or the raised exception per item, in order.
    """
    items = list(items)
    if hasattr(llm, "complete_many"):
        return [r if isinstance(r, Exception) else r.text for r in llm.complete_many(items)]
    fn = completer(llm)
    out = []
    for prompt, ids in items:
        try:
            out.append(fn(prompt, ids))
        except Exception as exc:  # mirrors the gateway's per-request error capture
            out.append(exc)
    return out
