"""Network parameters and the forward pass.

The forward computation embeds the previous L items as an L x d matrix,
runs horizontal (windowed, max-pooled) and vertical (per-item weighting)
convolutions over it, projects the concatenated conv outputs to a d-dim
sequence embedding through one fully-connected layer, and scores every item
from the concatenation of that embedding with the user embedding.

All arithmetic is float64. Item row 0 and output row 0 are pinned to zero
(padding) and the padding score is forced to -inf so it can never be ranked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import HyperParams
from .data import PADDING_INDEX


# --------------------------------------------------------------------------
# activations

def activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return np.asarray(x, dtype=float)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(pre: np.ndarray, kind: str) -> np.ndarray:
    """Derivative w.r.t. the pre-activation. relu'(0) is defined as 0."""
    if kind == "identity":
        return np.ones_like(pre)
    if kind == "relu":
        return (pre > 0).astype(float)
    if kind == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    if kind == "sigmoid":
        s = sigmoid(pre)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class ComponentMask:
    """Which of the three feature paths are active.

    p: personalization (user embedding), h: horizontal conv, v: vertical conv.
    With h and v both off the convolutional sequence embedding is removed
    entirely (z = 0), which reduces scoring to the plain latent-factor form.
    """

    p: bool = True
    h: bool = True
    v: bool = True

    def __post_init__(self):
        if not (self.p or self.h or self.v):
            raise ValueError("at least one component must stay enabled")

    @classmethod
    def from_code(cls, code: str) -> "ComponentMask":
        letters = set(code.strip().lower())
        if not letters or letters - {"p", "v", "h"}:
            raise ValueError(f"mask code must use letters p, v, h; got {code!r}")
        return cls(p="p" in letters, h="h" in letters, v="v" in letters)

    @property
    def code(self) -> str:
        return "".join(c for c, on in (("p", self.p), ("v", self.v), ("h", self.h)) if on)


FULL_MASK = ComponentMask()


@dataclass
class ModelParams:
    """All learnable tensors.

    h_filters is a list over ascending heights; entry j has shape
    (num_h_filters, heights[j], d). v_filters is (num_v_filters, L).
    """

    user_emb: np.ndarray  # (user_count+1, d); row 0 unused, kept zero
    item_emb: np.ndarray  # (item_count+1, d); row 0 pinned zero
    h_filters: list[np.ndarray]
    v_filters: np.ndarray
    fc_w: np.ndarray  # (d, n + d*num_v)
    fc_b: np.ndarray  # (d,)
    out_w: np.ndarray  # (item_count+1, 2d); row 0 pinned zero
    out_b: np.ndarray  # (item_count+1,); entry 0 pinned zero

    @property
    def latent_dim(self) -> int:
        return self.item_emb.shape[1]

    @property
    def user_count(self) -> int:
        return self.user_emb.shape[0] - 1

    @property
    def item_count(self) -> int:
        return self.item_emb.shape[0] - 1

    @property
    def heights(self) -> tuple[int, ...]:
        return tuple(f.shape[1] for f in self.h_filters)

    def tensors(self):
        """Stable (name, array) iteration used by Adam, checkpoints, and L2."""
        yield "user_emb", self.user_emb
        yield "item_emb", self.item_emb
        for j, f in enumerate(self.h_filters):
            yield f"h_filters.{j}", f
        yield "v_filters", self.v_filters
        yield "fc_w", self.fc_w
        yield "fc_b", self.fc_b
        yield "out_w", self.out_w
        yield "out_b", self.out_b

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.user_emb.copy(),
            self.item_emb.copy(),
            [f.copy() for f in self.h_filters],
            self.v_filters.copy(),
            self.fc_w.copy(),
            self.fc_b.copy(),
            self.out_w.copy(),
            self.out_b.copy(),
        )

    def pin_rows(self) -> None:
        """Re-zero the padding rows; call after every update."""
        self.user_emb[0] = 0.0
        self.item_emb[0] = 0.0
        self.out_w[0] = 0.0
        self.out_b[0] = 0.0


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(hp: HyperParams, user_count: int, item_count: int, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases, pinned padding rows."""
    if user_count < 1 or item_count < 1:
        raise ValueError("user_count and item_count must be >= 1")
    d = hp.latent_dim
    user_emb = _glorot(rng, (user_count + 1, d), user_count + 1, d)
    item_emb = _glorot(rng, (item_count + 1, d), item_count + 1, d)
    h_filters = [
        _glorot(rng, (hp.num_h_filters, h, d), h * d, 1) for h in hp.heights
    ]
    v_filters = _glorot(rng, (hp.num_v_filters, hp.order), hp.order, 1)
    fc_w = _glorot(rng, (d, hp.fc_input_dim), hp.fc_input_dim, d)
    fc_b = np.zeros(d)
    out_w = _glorot(rng, (item_count + 1, 2 * d), 2 * d, item_count + 1)
    out_b = np.zeros(item_count + 1)
    params = ModelParams(user_emb, item_emb, h_filters, v_filters, fc_w, fc_b, out_w, out_b)
    params.pin_rows()
    return params


# --------------------------------------------------------------------------
# forward pieces

@dataclass
class HConvOut:
    pooled: np.ndarray  # (n,) max-pooled activated values, heights ascending
    argmax: np.ndarray  # (n,) window index of each filter's max
    pre: list[np.ndarray]  # per height: (num_h_filters, L-h+1) pre-activations


def embed_lookup(params: ModelParams, prev_items, user_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack the previous items' embeddings (oldest first) and fetch the user's."""
    prev = np.asarray(prev_items, dtype=np.int64)
    if prev.min() < 0 or prev.max() > params.item_count:
        raise IndexError(f"item index out of range 0..{params.item_count}")
    if not 1 <= user_index <= params.user_count:
        raise IndexError(f"user index {user_index} out of range 1..{params.user_count}")
    return params.item_emb[prev], params.user_emb[user_index]


def horizontal_conv(E: np.ndarray, h_filters: list[np.ndarray], conv_act: str) -> HConvOut:
    """Slide each h x d filter over the rows of E, activate, max-pool.

    Ties in the max go to the smallest window index (np.argmax semantics),
    which fixes the backprop routing deterministically.
    """
    L = E.shape[0]
    pooled_parts, argmax_parts, pre_list = [], [], []
    for filt in h_filters:
        h = filt.shape[1]
        n_windows = L - h + 1
        if n_windows < 1:
            raise ValueError(f"filter height {h} exceeds sequence length {L}")
        windows = np.stack([E[i : i + h] for i in range(n_windows)])  # (W, h, d)
        pre = np.tensordot(filt, windows, axes=([1, 2], [1, 2]))  # (n_h, W)
        vals = activate(pre, conv_act)
        amax = np.argmax(vals, axis=1)
        pooled_parts.append(vals[np.arange(len(filt)), amax])
        argmax_parts.append(amax)
        pre_list.append(pre)
    return HConvOut(np.concatenate(pooled_parts), np.concatenate(argmax_parts), pre_list)


def vertical_conv(E: np.ndarray, v_filters: np.ndarray) -> np.ndarray:
    """Weighted sums over the rows of E, one d-vector per filter, concatenated.

    No activation and no pooling: each filter is a learned aggregator of the
    L previous items' embeddings.
    """
    return (v_filters @ E).ravel()


def fc_embed(
    o: np.ndarray,
    o_tilde: np.ndarray,
    fc_w: np.ndarray,
    fc_b: np.ndarray,
    fc_act: str,
    dropout_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Project the concatenated conv outputs to the d-dim sequence embedding."""
    z, _, _ = _fc_embed_full(o, o_tilde, fc_w, fc_b, fc_act, dropout_mask)
    return z


def _fc_embed_full(o, o_tilde, fc_w, fc_b, fc_act, dropout_mask):
    x = np.concatenate([o, o_tilde])
    if dropout_mask is not None:
        x = x * dropout_mask
    pre = fc_w @ x + fc_b
    return activate(pre, fc_act), pre, x


def output_scores(
    z: np.ndarray,
    p_u: np.ndarray,
    out_w: np.ndarray,
    out_b: np.ndarray,
    items: np.ndarray | None = None,
) -> np.ndarray:
    """Score items from [z; p_u]. Full scoring pins the padding score at -inf."""
    x = np.concatenate([z, p_u])
    if items is not None:
        return out_w[items] @ x + out_b[items]
    y = out_w @ x + out_b
    y[PADDING_INDEX] = -np.inf
    return y


def dropout_mask_for(hp: HyperParams, rng: np.random.Generator) -> np.ndarray | None:
    """Inverted-dropout mask over the conv concatenation, or None at rate 0."""
    if hp.dropout <= 0.0:
        return None
    keep = rng.random(hp.fc_input_dim) >= hp.dropout
    return keep.astype(float) / (1.0 - hp.dropout)


@dataclass
class ForwardTrace:
    """Every intermediate needed to backpropagate one instance."""

    prev_items: tuple[int, ...]
    user_index: int
    mode: str
    comp_mask: ComponentMask
    E: np.ndarray
    p_u: np.ndarray  # zeros when personalization is masked
    hconv: HConvOut | None
    o_tilde: np.ndarray | None  # activated vertical output entering the FC layer
    o_tilde_pre: np.ndarray | None  # raw weighted sums (differs only when vertical_act is set)
    dropout_mask: np.ndarray | None
    x: np.ndarray | None  # FC input after dropout
    fc_pre: np.ndarray | None
    z: np.ndarray
    scores: np.ndarray  # (item_count+1,), scores[0] = -inf
    zeroed_rows: tuple[int, ...] = ()


def forward(
    params: ModelParams,
    hp: HyperParams,
    prev_items,
    user_index: int,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
    dropout_mask: np.ndarray | None = None,
    comp_mask: ComponentMask = FULL_MASK,
    zero_rows: tuple[int, ...] = (),
) -> ForwardTrace:
    """Run the full network on one (user, previous-L-items) pair.

    In train mode dropout is applied to the FC input; pass ``rng`` to draw a
    mask or ``dropout_mask`` to fix one. ``zero_rows`` zeroes selected rows of
    the embedding matrix (0-based window positions), used by the history
    masking analysis.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be train or infer, got {mode!r}")
    E, p_u = embed_lookup(params, prev_items, user_index)
    if zero_rows:
        E = E.copy()
        E[list(zero_rows)] = 0.0
    if not comp_mask.p:
        p_u = np.zeros_like(p_u)

    n = sum(len(f) for f in params.h_filters)
    hconv = horizontal_conv(E, params.h_filters, hp.conv_act) if comp_mask.h else None
    o = hconv.pooled if hconv is not None else np.zeros(n)
    o_tilde_pre = o_tilde = None
    if comp_mask.v:
        o_tilde_pre = vertical_conv(E, params.v_filters)
        o_tilde = activate(o_tilde_pre, hp.vertical_act)
    ot = o_tilde if o_tilde is not None else np.zeros(params.v_filters.shape[0] * params.latent_dim)

    if comp_mask.h or comp_mask.v:
        mask = None
        if mode == "train" and hp.dropout > 0.0:
            if dropout_mask is not None:
                mask = dropout_mask
            elif rng is not None:
                mask = dropout_mask_for(hp, rng)
            else:
                raise ValueError("train mode with dropout needs rng or dropout_mask")
        z, fc_pre, x = _fc_embed_full(o, ot, params.fc_w, params.fc_b, hp.fc_act, mask)
    else:
        # both conv paths disabled: the sequence embedding is absent, which
        # reduces scoring to out_w[:, d:] @ p_u + out_b exactly
        z = np.zeros(params.latent_dim)
        mask = x = fc_pre = None

    scores = output_scores(z, p_u, params.out_w, params.out_b)
    return ForwardTrace(
        prev_items=tuple(int(i) for i in np.asarray(prev_items, dtype=np.int64)),
        user_index=user_index,
        mode=mode,
        comp_mask=comp_mask,
        E=E,
        p_u=p_u,
        hconv=hconv,
        o_tilde=o_tilde,
        o_tilde_pre=o_tilde_pre,
        dropout_mask=mask,
        x=x,
        fc_pre=fc_pre,
        z=z,
        scores=scores,
        zeroed_rows=tuple(zero_rows),
    )
