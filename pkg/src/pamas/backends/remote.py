"""Client for a chat-completion endpoint ("messages in, choices out")."""

from __future__ import annotations

import logging
import os
from typing import Any

import httpx
import numpy as np

from ..model import Judgment
from . import prompts
from .base import Backend, BackendError, ParseError, Reflection, UsageMeter
from .embedding import HashingEmbedder

logger = logging.getLogger(__name__)


class RemoteBackend(Backend):
    name = "remote"

    def __init__(
        self,
        meter: UsageMeter | None = None,
        *,
        base_url: str,
        model: str,
        api_key: str = "",
        timeout: float = 60.0,
        embedding_dim: int = 64,
        embed_model: str | None = None,
        transport: httpx.BaseTransport | None = None,
        temperature: float = 0.0,
    ):
        super().__init__(meter, embedding_dim)
        self.model = model
        self.embed_model = embed_model
        self.temperature = temperature
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport)
        self.local_embedder = HashingEmbedder(embedding_dim)

    @classmethod
    def from_env(cls, meter: UsageMeter | None = None, **kwargs) -> "RemoteBackend":
        base = os.environ.get("PAMAS_API_BASE")
        model = os.environ.get("PAMAS_MODEL")
        if not base or not model:
            raise BackendError("PAMAS_API_BASE and PAMAS_MODEL must be set for the remote backend")
        kwargs.setdefault("api_key", os.environ.get("PAMAS_API_KEY", ""))
        return cls(meter, base_url=base, model=model, **kwargs)

    def close(self) -> None:
        self.client.close()

    def _post(self, path: str, payload: dict, **meta: Any) -> dict:
        try:
            resp = self.client.post(path, json=payload)
        except httpx.HTTPError as exc:
            raise BackendError(f"transport error: {exc}", path=path, **meta) from exc
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}", raw=resp.text, path=path, status=resp.status_code, **meta)
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendError("response is not JSON", raw=resp.text, path=path, **meta) from exc

    def _chat(self, system: str, prompt: str, **meta: Any) -> tuple[str, int, int]:
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": prompt}],
        }
        data = self._post("/chat/completions", payload, **meta)
        try:
            content = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("malformed completion payload", raw=str(data), **meta) from exc
        usage = data.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        completion_tokens = usage.get("completion_tokens")
        if prompt_tokens is None or completion_tokens is None:
            prompt_tokens = len((system + " " + prompt).split())
            completion_tokens = len(content.split())
        return content, int(prompt_tokens), int(completion_tokens)

    def _chat_parsed(self, kind, agent_id, instance_id, system, prompt, parse):
        """One retry on a parse failure; transport errors are not retried here."""
        spent_prompt = spent_completion = 0
        last: ParseError | None = None
        for _ in range(2):
            content, p, c = self._chat(system, prompt, agent_id=agent_id, instance_id=instance_id, kind=kind)
            spent_prompt += p
            spent_completion += c
            try:
                parsed = parse(content)
            except ParseError as exc:
                last = exc
                logger.warning("unparseable %s reply from %s, retrying", kind, agent_id)
                continue
            usage = self._usage(kind, agent_id, spent_prompt, spent_completion, instance_id)
            return parsed, content, usage
        self._usage(kind, agent_id, spent_prompt, spent_completion, instance_id)
        raise BackendError(
            f"unparseable {kind} reply after retry", raw=last.raw if last else None,
            agent_id=agent_id, instance_id=instance_id, kind=kind,
        )

    def judge(self, agent_id, instance_id, view, profile, experience, history):
        if not view:
            raise BackendError("empty feature view", agent_id=agent_id, instance_id=instance_id)
        system = f"{prompts.AUDITOR_SYSTEM} Persona: {profile.persona}"
        prompt = prompts.auditor_prompt(instance_id, view, experience, history)
        (d, reason), _, usage = self._chat_parsed("judge", agent_id, instance_id, system, prompt, prompts.parse_judgment)
        return Judgment(d, reason), usage

    def synthesize(self, agent_id, instance_id, view, summaries, experience, confidence):
        prompt = prompts.decision_maker_prompt(instance_id, view, summaries, experience)
        (d, reason), _, usage = self._chat_parsed(
            "synthesize", agent_id, instance_id, prompts.DM_SYSTEM, prompt, prompts.parse_judgment
        )
        return Judgment(d, reason), usage

    def reflect(self, agent_id, context):
        prompt = prompts.reflection_prompt(context)
        text, raw, usage = self._chat_parsed(
            "reflect", agent_id, context.instance_id, prompts.DM_SYSTEM, prompt, prompts.parse_experience
        )
        adjustments = None
        if context.children:
            adjustments = prompts.parse_weights(raw, [c.sub_id for c in context.children]) or None
        return Reflection(text, adjustments), usage

    def embed(self, agent_id, text):
        if not text or not text.strip():
            raise BackendError("cannot embed empty text", agent_id=agent_id)
        if self.embed_model is None:
            return self.local_embedder(text), self._usage("embed", agent_id, 0)
        data = self._post("/embeddings", {"model": self.embed_model, "input": text}, agent_id=agent_id)
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("malformed embedding payload", raw=str(data), agent_id=agent_id) from exc
        norm = np.linalg.norm(vec)
        if norm == 0 or len(vec) != self.embedding_dim:
            raise BackendError("embedding has wrong dimension or zero norm", agent_id=agent_id)
        tokens = int((data.get("usage") or {}).get("prompt_tokens", len(text.split())))
        return vec / norm, self._usage("embed", agent_id, tokens)
