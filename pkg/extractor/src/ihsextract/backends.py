"""Model backends: text encoders, the emotion classifier, and the context
generator. A deterministic dummy family exists for every backend so the
extraction pipeline is testable without model downloads; real models load
lazily through transformers."""

from __future__ import annotations

import hashlib
import re

import numpy as np

EMOTION_CLASSES = ("fear", "disgust", "surprise", "anger", "sadness", "joy", "other")

# Common alternative label spellings emitted by published emotion models.
_EMOTION_ALIASES = {"others": "other", "neutral": "other"}


class BackendError(Exception):
    pass


def _text_seed(text: str, salt: str) -> np.random.Generator:
    digest = hashlib.sha256((salt + "\x00" + text).encode("utf-8")).digest()
    return np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))


class DummyEncoder:
    """Deterministic per-text token matrices; model id "dummy:<dim>"."""

    max_length = 128  # characters, to exercise truncation accounting

    def __init__(self, model_id: str):
        match = re.fullmatch(r"dummy:(\d+)", model_id)
        if not match:
            raise BackendError(f"bad dummy encoder id {model_id!r}")
        self.model_id = model_id
        self.dim = int(match.group(1))

    def encode_tokens(self, texts: list[str]) -> tuple[list[np.ndarray], int]:
        """Per-text (k, dim) float32 matrices plus a truncation count."""
        out = []
        truncated = 0
        for text in texts:
            if len(text) > self.max_length:
                truncated += 1
                text = text[: self.max_length]
            rng = _text_seed(text, self.model_id)
            k = 1 + int(rng.integers(0, 4))
            out.append(rng.normal(size=(k, self.dim)).astype(np.float32))
        return out, truncated


class TransformersEncoder:
    """Hidden-state encoder over a HuggingFace checkpoint (lazy import)."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise BackendError(
                f"transformers/torch are required to load {model_id!r}; "
                "install the 'models' extra"
            ) from exc
        self._torch = torch
        self.model_id = model_id
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModel.from_pretrained(model_id, trust_remote_code=True)
        self.model.eval().to(device)
        self.device = device
        self.dim = int(self.model.config.hidden_size)
        self.max_length = int(
            min(getattr(self.tokenizer, "model_max_length", 512) or 512, 4096)
        )

    def encode_tokens(self, texts: list[str]) -> tuple[list[np.ndarray], int]:
        torch = self._torch
        lengths = [len(self.tokenizer(t)["input_ids"]) for t in texts]
        truncated = sum(1 for n in lengths if n > self.max_length)
        batch = self.tokenizer(
            texts, padding=True, truncation=True, max_length=self.max_length,
            return_tensors="pt",
        ).to(self.device)
        with torch.no_grad():
            hidden = self.model(**batch).last_hidden_state  # (B, k, dim)
        mask = batch["attention_mask"].bool()
        out = []
        for i in range(len(texts)):
            rows = hidden[i][mask[i]].cpu().numpy().astype(np.float32)
            out.append(rows)
        return out, truncated


def load_encoder(model_id: str, device: str = "cpu"):
    if model_id.startswith("dummy:"):
        return DummyEncoder(model_id)
    return TransformersEncoder(model_id, device=device)


def default_pooling(model_id: str) -> str:
    """Instruction-tuned encoders pool by normalized sum; NV-Embed's final
    layer already mean-pools, so its output passes through."""
    if "nv-embed" in model_id.lower():
        return "mean_passthrough"
    return "normalized_sum"


class DummyEmotionClassifier:
    """Deterministic 7-class distributions; model id "dummy-emotion"."""

    model_id = "dummy-emotion"
    classes = EMOTION_CLASSES

    def predict_proba(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            rng = _text_seed(text, self.model_id)
            raw = rng.random(len(EMOTION_CLASSES)) + 0.05
            rows.append(raw / raw.sum())
        return np.asarray(rows, dtype=np.float32)


class TransformersEmotionClassifier:
    """transformers text-classification pipeline mapped onto the fixed
    7-class order; any other label set is a configuration error."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise BackendError(
                f"transformers is required to load {model_id!r}; install the 'models' extra"
            ) from exc
        self.model_id = model_id
        self.pipe = pipeline(
            "text-classification", model=model_id, top_k=None,
            device=-1 if device == "cpu" else device,
        )
        probe = self.pipe(["probe text"])[0]
        labels = {entry["label"].lower() for entry in probe}
        mapped = {_EMOTION_ALIASES.get(lab, lab) for lab in labels}
        if mapped != set(EMOTION_CLASSES):
            raise BackendError(
                f"emotion model {model_id!r} emits classes {sorted(labels)}, "
                f"expected {sorted(EMOTION_CLASSES)}"
            )

    def predict_proba(self, texts: list[str]) -> np.ndarray:
        results = self.pipe(list(texts))
        rows = np.zeros((len(texts), len(EMOTION_CLASSES)), dtype=np.float32)
        index = {c: i for i, c in enumerate(EMOTION_CLASSES)}
        for i, entries in enumerate(results):
            for entry in entries:
                label = _EMOTION_ALIASES.get(entry["label"].lower(), entry["label"].lower())
                rows[i, index[label]] = entry["score"]
            rows[i] /= rows[i].sum()
        return rows


def load_emotion_classifier(model_id: str, device: str = "cpu"):
    if model_id == "dummy-emotion":
        return DummyEmotionClassifier()
    return TransformersEmotionClassifier(model_id, device=device)


class DummyGenerator:
    """Deterministic short contexts; texts containing "[nogen]" produce an
    empty generation so skip handling is exercisable."""

    model_id = "dummy-generator"

    def generate(self, prompt: str) -> str:
        if "[nogen]" in prompt:
            return ""
        rng = _text_seed(prompt, self.model_id)
        words = rng.integers(8, 20)
        return "Context: " + " ".join(f"w{int(rng.integers(0, 999)):03d}" for _ in range(words))


class TransformersGenerator:
    def __init__(self, model_id: str, device: str = "cpu",
                 max_new_tokens: int = 220, temperature: float = 0.7):
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise BackendError(
                f"transformers is required to load {model_id!r}; install the 'models' extra"
            ) from exc
        self.model_id = model_id
        self.max_new_tokens = max_new_tokens
        self.temperature = temperature
        self.pipe = pipeline(
            "text-generation", model=model_id,
            device=-1 if device == "cpu" else device,
        )

    def generate(self, prompt: str) -> str:
        out = self.pipe(
            prompt, max_new_tokens=self.max_new_tokens,
            do_sample=self.temperature > 0, temperature=self.temperature or None,
            return_full_text=False,
        )
        return out[0]["generated_text"].strip()


def load_generator(model_id: str, device: str = "cpu", **kwargs):
    if model_id == "dummy-generator":
        return DummyGenerator()
    return TransformersGenerator(model_id, device=device, **kwargs)
