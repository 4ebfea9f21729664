"""Encoder backbone, the paired small generator, and initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from sptk import numcore as nc
from sptk.errors import ConfigError, RangeError
from sptk.numcore import Tensor


@dataclass
class EncoderConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    ffn_dim: int = 256
    vocab_size: int = 2000
    max_positions: int = 128
    dropout: float = 0.1
    generator_hidden_fraction: float = 0.25

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ConfigError("layers, hidden, and heads must be positive")
        if self.hidden % self.heads != 0:
            raise ConfigError(
                f"hidden {self.hidden} not divisible by heads {self.heads}"
            )
        if not 0 < self.generator_hidden_fraction <= 1:
            raise ConfigError("generator_hidden_fraction must lie in (0, 1]")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.vocab_size < 6 or self.max_positions < 2:
            raise ConfigError("vocab_size/max_positions too small")

    @property
    def generator_hidden(self) -> int:
        g = int(round(self.hidden * self.generator_hidden_fraction))
        return max(self.heads, g)

    @property
    def generator_ffn(self) -> int:
        return max(1, int(round(self.ffn_dim * self.generator_hidden_fraction)))

    def validate_paired(self) -> None:
        if self.generator_hidden % self.heads != 0:
            raise ConfigError(
                f"generator hidden {self.generator_hidden} not divisible by "
                f"heads {self.heads}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _layer_param_shapes(hidden: int, ffn: int, prefix: str) -> dict[str, tuple]:
    return {
        f"{prefix}.attn.wq": (hidden, hidden),
        f"{prefix}.attn.bq": (hidden,),
        f"{prefix}.attn.wk": (hidden, hidden),
        f"{prefix}.attn.bk": (hidden,),
        f"{prefix}.attn.wv": (hidden, hidden),
        f"{prefix}.attn.bv": (hidden,),
        f"{prefix}.attn.wo": (hidden, hidden),
        f"{prefix}.attn.bo": (hidden,),
        f"{prefix}.ln1_gain": (hidden,),
        f"{prefix}.ln1_bias": (hidden,),
        f"{prefix}.ffn.w1": (hidden, ffn),
        f"{prefix}.ffn.b1": (ffn,),
        f"{prefix}.ffn.w2": (ffn, hidden),
        f"{prefix}.ffn.b2": (hidden,),
        f"{prefix}.ln2_gain": (hidden,),
        f"{prefix}.ln2_bias": (hidden,),
    }


def backbone_param_shapes(config: EncoderConfig) -> dict[str, tuple]:
    shapes = {
        "tok_emb": (config.vocab_size, config.hidden),
        "pos_emb": (config.max_positions, config.hidden),
        "emb_ln_gain": (config.hidden,),
        "emb_ln_bias": (config.hidden,),
    }
    for i in range(config.layers):
        shapes.update(_layer_param_shapes(config.hidden, config.ffn_dim, f"layer{i}"))
    return shapes


def backbone_param_names(config: EncoderConfig) -> list[str]:
    return list(backbone_param_shapes(config))


def count_params(params: dict[str, Tensor]) -> int:
    return sum(int(np.prod(t.data.shape)) for t in params.values())


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, trunc: float = 2.0):
    """Normal(0, std) resampled until every draw lies within trunc sigmas."""
    out = rng.normal(0.0, 1.0, size=shape)
    bad = np.abs(out) > trunc
    while bad.any():
        out[bad] = rng.normal(0.0, 1.0, size=int(bad.sum()))
        bad = np.abs(out) > trunc
    return (out * std).astype(nc.get_default_dtype())


def _init_params(shapes: dict[str, tuple], rng: np.random.Generator) -> dict[str, Tensor]:
    dtype = nc.get_default_dtype()
    params = {}
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("b") or leaf.endswith("_bias") or leaf == "out_bias":
            data = np.zeros(shape, dtype=dtype)
        elif leaf.endswith("_gain"):
            data = np.ones(shape, dtype=dtype)
        else:
            data = trunc_normal(rng, shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


class Encoder:
    """Transformer encoder over token ids; learned absolute positions, post-LN."""

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor],
                 hidden: int | None = None, ffn: int | None = None, prefix: str = ""):
        self.config = config
        self.params = params
        self.hidden = hidden if hidden is not None else config.hidden
        self.ffn = ffn if ffn is not None else config.ffn_dim
        self.prefix = prefix
        self.head_dim = self.hidden // config.heads

    def _p(self, name: str) -> Tensor:
        return self.params[self.prefix + name]

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def embed(self, ids: np.ndarray, dropout_rng=None) -> Tensor:
        b, t = ids.shape
        if t > self.config.max_positions:
            raise RangeError(
                f"sequence length {t} exceeds max_positions {self.config.max_positions}"
            )
        x = nc.embedding_lookup(self._p("tok_emb"), ids)
        pos = nc.embedding_lookup(self._p("pos_emb"), np.arange(t))
        x = nc.add(x, nc.reshape(pos, (1, t, pos.data.shape[-1])))
        return x

    def encode_embedded(self, x: Tensor, mask: np.ndarray, dropout_rng=None) -> Tensor:
        """Run the layer stack on a normalized, embedded (B, T, H) tensor."""
        cfg = self.config
        b, t, h = x.data.shape
        rate = cfg.dropout if dropout_rng is not None else 0.0
        bias = np.where(mask[:, None, None, :].astype(bool), 0.0, -1e9).astype(
            x.data.dtype
        )
        mask_bias = Tensor(bias)
        inv_sqrt = 1.0 / math.sqrt(self.head_dim)
        for i in range(cfg.layers):
            pre = f"layer{i}."
            x2 = nc.reshape(x, (b * t, h))
            q = nc.add(nc.matmul(x2, self._p(pre + "attn.wq")), self._p(pre + "attn.bq"))
            k = nc.add(nc.matmul(x2, self._p(pre + "attn.wk")), self._p(pre + "attn.bk"))
            v = nc.add(nc.matmul(x2, self._p(pre + "attn.wv")), self._p(pre + "attn.bv"))
            def split_heads(m):
                return nc.transpose(nc.reshape(m, (b, t, cfg.heads, self.head_dim)),
                                    (0, 2, 1, 3))
            qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
            scores = nc.scale(nc.matmul(qh, nc.transpose(kh, (0, 1, 3, 2))), inv_sqrt)
            scores = nc.add(scores, mask_bias)
            attn = nc.softmax(scores, axis=-1)
            if rate:
                attn = nc.dropout(attn, rate, dropout_rng)
            ctx = nc.matmul(attn, vh)
            ctx = nc.reshape(nc.transpose(ctx, (0, 2, 1, 3)), (b * t, h))
            out = nc.add(nc.matmul(ctx, self._p(pre + "attn.wo")), self._p(pre + "attn.bo"))
            if rate:
                out = nc.dropout(out, rate, dropout_rng)
            x = nc.layer_norm(
                nc.add(x, nc.reshape(out, (b, t, h))),
                self._p(pre + "ln1_gain"), self._p(pre + "ln1_bias"),
            )
            x2 = nc.reshape(x, (b * t, h))
            hmid = nc.gelu(nc.add(nc.matmul(x2, self._p(pre + "ffn.w1")),
                                  self._p(pre + "ffn.b1")))
            hout = nc.add(nc.matmul(hmid, self._p(pre + "ffn.w2")), self._p(pre + "ffn.b2"))
            if rate:
                hout = nc.dropout(hout, rate, dropout_rng)
            x = nc.layer_norm(
                nc.add(x, nc.reshape(hout, (b, t, h))),
                self._p(pre + "ln2_gain"), self._p(pre + "ln2_bias"),
            )
        return x

    def forward(self, ids: np.ndarray, mask: np.ndarray, dropout_rng=None) -> Tensor:
        """Token ids + attention mask -> hidden states (B, T, H)."""
        ids = np.asarray(ids)
        mask = np.asarray(mask)
        x = self.embed(ids, dropout_rng=dropout_rng)
        x = nc.layer_norm(x, self._p("emb_ln_gain"), self._p("emb_ln_bias"))
        if self.config.dropout and dropout_rng is not None:
            x = nc.dropout(x, self.config.dropout, dropout_rng)
        return self.encode_embedded(x, mask, dropout_rng=dropout_rng)


def init_encoder(config: EncoderConfig, seed: int) -> Encoder:
    rng = np.random.default_rng(seed)
    params = _init_params(backbone_param_shapes(config), rng)
    return Encoder(config, params)


def init_model(config: EncoderConfig, seed: int) -> Encoder:
    """Truncated-normal initialized backbone encoder (alias of init_encoder)."""
    return init_encoder(config, seed)


# ---------------------------------------------------------------------------
# MLM head / generator / paired ELECTRA model
# ---------------------------------------------------------------------------


def mlm_head_shapes(hidden_in: int, hidden_emb: int, vocab: int) -> dict[str, tuple]:
    return {
        "mlm.dense_w": (hidden_in, hidden_emb),
        "mlm.dense_b": (hidden_emb,),
        "mlm.ln_gain": (hidden_emb,),
        "mlm.ln_bias": (hidden_emb,),
        "mlm.out_bias": (vocab,),
    }


def rtd_head_shapes(hidden: int) -> dict[str, tuple]:
    return {
        "rtd.dense_w": (hidden, hidden),
        "rtd.dense_b": (hidden,),
        "rtd.out_w": (hidden, 1),
        "rtd.out_b": (1,),
    }


class MlmModel:
    """Encoder plus an MLM head whose output projection ties to tok_emb."""

    def __init__(self, encoder: Encoder, head_params: dict[str, Tensor]):
        self.encoder = encoder
        self.head_params = head_params
        self.config = encoder.config

    def parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.params, **self.head_params}

    def mlm_logits(self, hidden_rows: Tensor, tok_emb: Tensor) -> Tensor:
        """(K, H_in) selected hidden rows -> (K, V) vocabulary logits."""
        h = nc.gelu(nc.add(nc.matmul(hidden_rows, self.head_params["mlm.dense_w"]),
                           self.head_params["mlm.dense_b"]))
        h = nc.layer_norm(h, self.head_params["mlm.ln_gain"],
                          self.head_params["mlm.ln_bias"])
        return nc.add(nc.matmul(h, nc.transpose(tok_emb, (1, 0))),
                      self.head_params["mlm.out_bias"])

    def forward_mlm(self, ids, mask, positions, dropout_rng=None) -> Tensor:
        """positions: flat (row*T + col) indices of selected tokens."""
        hidden = self.encoder.forward(ids, mask, dropout_rng=dropout_rng)
        b, t, h = hidden.data.shape
        rows = nc.gather_rows(nc.reshape(hidden, (b * t, h)), positions)
        return self.mlm_logits(rows, self.encoder.params["tok_emb"])


def init_mlm_model(config: EncoderConfig, seed: int) -> MlmModel:
    rng = np.random.default_rng(seed)
    params = _init_params(backbone_param_shapes(config), rng)
    head = _init_params(mlm_head_shapes(config.hidden, config.hidden,
                                        config.vocab_size), rng)
    return MlmModel(Encoder(config, params), head)


class Generator:
    """Small MLM generator; shares the discriminator's token-embedding table.

    Embeddings stay at the discriminator width and are linearly projected down
    to the generator hidden size before its layer stack.
    """

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor],
                 shared_tok_emb: Tensor):
        self.config = config
        self.params = params
        self.shared_tok_emb = shared_tok_emb
        self.inner = Encoder(config, params, hidden=config.generator_hidden,
                             ffn=config.generator_ffn, prefix="generator.")

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def forward_mlm(self, ids, mask, positions, dropout_rng=None) -> Tensor:
        ids = np.asarray(ids)
        b, t = ids.shape
        if t > self.config.max_positions:
            raise RangeError("sequence too long for generator positions")
        x = nc.embedding_lookup(self.shared_tok_emb, ids)
        pos = nc.embedding_lookup(self.params["generator.pos_emb"], np.arange(t))
        x = nc.add(x, nc.reshape(pos, (1, t, pos.data.shape[-1])))
        x = nc.layer_norm(x, self.params["generator.emb_ln_gain"],
                          self.params["generator.emb_ln_bias"])
        if self.config.dropout and dropout_rng is not None:
            x = nc.dropout(x, self.config.dropout, dropout_rng)
        h = self.config.hidden
        hg = self.config.generator_hidden
        x = nc.reshape(
            nc.add(nc.matmul(nc.reshape(x, (b * t, h)),
                             self.params["generator.proj_w"]),
                   self.params["generator.proj_b"]),
            (b, t, hg),
        )
        hidden = self.inner.encode_embedded(x, np.asarray(mask), dropout_rng=dropout_rng)
        rows = nc.gather_rows(nc.reshape(hidden, (b * t, hg)), positions)
        head = nc.gelu(nc.add(nc.matmul(rows, self.params["generator.mlm.dense_w"]),
                              self.params["generator.mlm.dense_b"]))
        head = nc.layer_norm(head, self.params["generator.mlm.ln_gain"],
                             self.params["generator.mlm.ln_bias"])
        return nc.add(nc.matmul(head, nc.transpose(self.shared_tok_emb, (1, 0))),
                      self.params["generator.mlm.out_bias"])


def generator_param_shapes(config: EncoderConfig) -> dict[str, tuple]:
    h, hg = config.hidden, config.generator_hidden
    shapes = {
        "generator.pos_emb": (config.max_positions, h),
        "generator.emb_ln_gain": (h,),
        "generator.emb_ln_bias": (h,),
        "generator.proj_w": (h, hg),
        "generator.proj_b": (hg,),
    }
    for i in range(config.layers):
        shapes.update(_layer_param_shapes(hg, config.generator_ffn,
                                          f"generator.layer{i}"))
    shapes.update({
        "generator.mlm.dense_w": (hg, h),
        "generator.mlm.dense_b": (h,),
        "generator.mlm.ln_gain": (h,),
        "generator.mlm.ln_bias": (h,),
        "generator.mlm.out_bias": (config.vocab_size,),
    })
    return shapes


class ElectraModel:
    """Discriminator encoder + RTD head + small generator with shared tok_emb."""

    def __init__(self, discriminator: Encoder, rtd_params: dict[str, Tensor],
                 generator: Generator):
        self.discriminator = discriminator
        self.rtd_params = rtd_params
        self.generator = generator
        self.config = discriminator.config

    def parameters(self) -> dict[str, Tensor]:
        return {**self.discriminator.params, **self.rtd_params,
                **self.generator.params}

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return {**self.discriminator.params, **self.rtd_params}

    def rtd_logits(self, ids, mask, dropout_rng=None) -> Tensor:
        """Per-position replaced-token logits (B, T)."""
        hidden = self.discriminator.forward(ids, mask, dropout_rng=dropout_rng)
        b, t, h = hidden.data.shape
        flat = nc.reshape(hidden, (b * t, h))
        mid = nc.gelu(nc.add(nc.matmul(flat, self.rtd_params["rtd.dense_w"]),
                             self.rtd_params["rtd.dense_b"]))
        out = nc.add(nc.matmul(mid, self.rtd_params["rtd.out_w"]),
                     self.rtd_params["rtd.out_b"])
        return nc.reshape(out, (b, t))


def init_electra_model(config: EncoderConfig, seed: int) -> ElectraModel:
    config.validate_paired()
    rng = np.random.default_rng(seed)
    disc_params = _init_params(backbone_param_shapes(config), rng)
    rtd_params = _init_params(rtd_head_shapes(config.hidden), rng)
    gen_params = _init_params(generator_param_shapes(config), rng)
    disc = Encoder(config, disc_params)
    gen = Generator(config, gen_params, shared_tok_emb=disc_params["tok_emb"])
    return ElectraModel(disc, rtd_params, gen)
