"""Model configuration, parameter container, and checkpoint files.

Checkpoints are a custom little-endian binary format rather than pickles
or zip archives so that saving the same parameters twice yields the same
bytes: a magic string, a canonical-JSON header (config, architecture
fingerprint, block table), the raw float64 payload, and a sha256 of
everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import DIST_BUCKET_COUNT, WIDTH_BUCKET_COUNT, EncoderConfig
from .errors import CheckpointError, ConfigError
from .nn import FeedForwardNet, uniform_init

__all__ = [
    "ModelConfig",
    "ModelParams",
    "init_params",
    "save_checkpoint",
    "load_checkpoint",
    "LOWER_GROUP",
]

_MAGIC = b"CFXCKPT1\n"

# Parameter blocks updated with the lower learning rate; everything else
# uses the upper rate.
LOWER_GROUP = frozenset({"embed"})


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    width_dim: int = 8
    dist_dim: int = 8
    hidden_sizes: tuple[int, ...] = (64,)
    span_limit: int = 30

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.width_dim < 1 or self.dist_dim < 1:
            raise ConfigError("feature embedding dims must be at least 1")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden_sizes must be a non-empty tuple of positive ints")
        if self.span_limit < 1:
            raise ConfigError("span_limit must be at least 1")

    @property
    def span_dim(self) -> int:
        return 3 * self.encoder.embed_dim + self.width_dim

    @property
    def pair_dim(self) -> int:
        return 3 * self.span_dim + self.dist_dim

    def block_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Parameter blocks in their canonical (draw and serialize) order."""
        enc = self.encoder
        shapes: list[tuple[str, tuple[int, ...]]] = [
            ("embed", (enc.vocab_hash_buckets, enc.embed_dim)),
            ("attn_w", (enc.embed_dim,)),
            ("width_emb", (WIDTH_BUCKET_COUNT, self.width_dim)),
            ("dist_emb", (DIST_BUCKET_COUNT, self.dist_dim)),
        ]
        for net, in_dim in (("ffnn_m", self.span_dim), ("ffnn_s", self.pair_dim)):
            dims = [in_dim, *self.hidden_sizes, 1]
            for i in range(len(dims) - 1):
                shapes.append((f"{net}.w{i}", (dims[i], dims[i + 1])))
                shapes.append((f"{net}.b{i}", (dims[i + 1],)))
        return shapes

    def to_dict(self) -> dict:
        enc = self.encoder
        return {
            "encoder": {
                "embed_dim": enc.embed_dim,
                "context_window": enc.context_window,
                "vocab_hash_buckets": enc.vocab_hash_buckets,
                "vectors_file": enc.vectors_file,
            },
            "width_dim": self.width_dim,
            "dist_dim": self.dist_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "span_limit": self.span_limit,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        try:
            enc = EncoderConfig(**data["encoder"])
            return cls(
                encoder=enc,
                width_dim=data["width_dim"],
                dist_dim=data["dist_dim"],
                hidden_sizes=tuple(data["hidden_sizes"]),
                span_limit=data["span_limit"],
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad model config: {exc}") from exc

    def fingerprint(self) -> str:
        """Digest of everything that pins score reproducibility.

        Covers the architecture shapes, context window, hashing width, the
        width/distance bucket tables, and the span ordering rule.  The
        vectors_file path is excluded: it names a data source, not the
        architecture.
        """
        payload = self.to_dict()
        payload["encoder"] = dict(payload["encoder"])
        payload["encoder"].pop("vectors_file")
        payload["span_order"] = "start,end lexicographic; epsilon first in antecedent rows"
        payload["width_buckets"] = WIDTH_BUCKET_COUNT
        payload["dist_buckets"] = DIST_BUCKET_COUNT
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ModelParams:
    """All trainable arrays plus the config that fixes their shapes."""

    config: ModelConfig
    embed: np.ndarray
    attn_w: np.ndarray
    width_emb: np.ndarray
    dist_emb: np.ndarray
    ffnn_m: FeedForwardNet
    ffnn_s: FeedForwardNet
    version: int = 0

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        out = [
            ("embed", self.embed),
            ("attn_w", self.attn_w),
            ("width_emb", self.width_emb),
            ("dist_emb", self.dist_emb),
        ]
        for prefix, net in (("ffnn_m", self.ffnn_m), ("ffnn_s", self.ffnn_s)):
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                out.append((f"{prefix}.w{i}", w))
                out.append((f"{prefix}.b{i}", b))
        return out

    def block(self, name: str) -> np.ndarray:
        for bname, arr in self.blocks():
            if bname == name:
                return arr
        raise KeyError(name)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.blocks()}

    def clone(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            embed=self.embed.copy(),
            attn_w=self.attn_w.copy(),
            width_emb=self.width_emb.copy(),
            dist_emb=self.dist_emb.copy(),
            ffnn_m=self.ffnn_m.copy(),
            ffnn_s=self.ffnn_s.copy(),
            version=self.version,
        )


def _params_from_blocks(
    config: ModelConfig, arrays: dict[str, np.ndarray], version: int
) -> ModelParams:
    n_layers = len(config.hidden_sizes) + 1
    nets = {}
    for prefix in ("ffnn_m", "ffnn_s"):
        ws = [arrays[f"{prefix}.w{i}"] for i in range(n_layers)]
        bs = [arrays[f"{prefix}.b{i}"] for i in range(n_layers)]
        nets[prefix] = FeedForwardNet(ws, bs)
    return ModelParams(
        config=config,
        embed=arrays["embed"],
        attn_w=arrays["attn_w"],
        width_emb=arrays["width_emb"],
        dist_emb=arrays["dist_emb"],
        ffnn_m=nets["ffnn_m"],
        ffnn_s=nets["ffnn_s"],
        version=version,
    )


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Fresh parameters, uniform in [-0.1, 0.1], drawn in block order."""
    rng = np.random.default_rng(seed)
    arrays = {name: uniform_init(rng, *shape) for name, shape in config.block_shapes()}
    return _params_from_blocks(config, arrays, version=0)


def save_checkpoint(params: ModelParams, path: str) -> None:
    """Write a checkpoint; identical params always produce identical bytes."""
    blocks = params.blocks()
    header = {
        "blocks": [{"name": n, "shape": list(a.shape)} for n, a in blocks],
        "config": params.config.to_dict(),
        "fingerprint": params.config.fingerprint(),
        "format": 1,
        "version": params.version,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in blocks
    )
    body = _MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + payload
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_MAGIC) + 8 + 32 or not raw.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    off = len(_MAGIC)
    (header_len,) = struct.unpack_from("<Q", body, off)
    off += 8
    try:
        header = json.loads(body[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    off += header_len
    config = ModelConfig.from_dict(header["config"])
    if header.get("fingerprint") != config.fingerprint():
        raise CheckpointError(
            f"{path}: architecture fingerprint does not match the stored config"
        )
    expected = dict(config.block_shapes())
    arrays: dict[str, np.ndarray] = {}
    for entry in header["blocks"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected parameter block {name!r}")
        if shape != expected[name]:
            raise CheckpointError(
                f"{path}: block {name!r} has shape {shape}, config implies {expected[name]}"
            )
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated payload at block {name!r}")
        arrays[name] = (
            np.frombuffer(body, dtype="<f8", count=count, offset=off)
            .reshape(shape)
            .astype(np.float64)
        )
        off += nbytes
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after parameter payload")
    missing = set(expected) - set(arrays)
    if missing:
        raise CheckpointError(f"{path}: missing parameter blocks {sorted(missing)}")
    return _params_from_blocks(config, arrays, version=int(header.get("version", 0)))


def with_vectors_file(config: ModelConfig, path: str | None) -> ModelConfig:
    """Same architecture, different token-vector source."""
    return replace(config, encoder=replace(config.encoder, vectors_file=path))
