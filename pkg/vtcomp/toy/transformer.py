"""Desk-scale decoder-only transformer with layer-wise video-token drops.

The model consumes already embedded tokens: a ``frames × N1 × width`` video
block followed by ``N_q`` question tokens. After every layer the video part of
the sequence is compacted according to a :class:`~vtcomp.plan.DropPlan`;
question tokens are never dropped. Sinusoidal positions are added once at the
input, so survivors keep the positional identity they started with.

Layer::

    h  = h + Wo · MHA(RMSNorm(h))          (causal)
    h  = h + W2 · GELU(W1 · RMSNorm(h))

The regression head reads the last question token after a final RMSNorm.
Everything is plain numpy; :func:`loss_and_backward` is the exact analytic
gradient of the mean squared error.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from ..errors import ContractError, NumericError
from ..layout import FrameGrid, sequence_positions
from ..plan import DropPlan, kept_positions

Parameters = Dict[str, np.ndarray]
LayerHook = Callable[[int, np.ndarray], Optional[np.ndarray]]

_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ToyConfig:
    """Toy model dimensions.

    Attributes:
        num_layers: Transformer layers ``L``.
        num_heads: Attention heads ``H``.
        model_width: Residual width ``d``; must be divisible by ``num_heads``.
        mlp_width: Hidden width of the MLP.
        max_sequence: Longest supported uncompressed sequence.
        input_width: Width of the incoming tokens. When set, a learned
            ``input_width × d`` embedding projection is applied; when None the
            tokens are taken as already living in the model width.
        output_width: Width of the regression head.
        norm_eps: RMSNorm epsilon.
        dtype: ``"float32"`` for forward runs, ``"float64"`` for gradient checks.
    """

    num_layers: int = 4
    num_heads: int = 2
    model_width: int = 32
    mlp_width: int = 64
    max_sequence: int = 4096
    input_width: Optional[int] = None
    output_width: int = 1
    norm_eps: float = 1e-6
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "model_width", "mlp_width", "max_sequence", "output_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.model_width % self.num_heads:
            raise ValueError(
                f"model_width {self.model_width} is not divisible by num_heads {self.num_heads}"
            )
        if self.input_width is not None and self.input_width < 1:
            raise ValueError(f"input_width must be >= 1, got {self.input_width}")
        if np.dtype(self.dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def head_width(self) -> int:
        return self.model_width // self.num_heads

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)


def parameter_shapes(config: ToyConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape of every trainable array, in a fixed order."""
    d, f = config.model_width, config.mlp_width
    shapes: Dict[str, Tuple[int, ...]] = {}
    if config.input_width is not None:
        shapes["embed"] = (config.input_width, d)
    for i in range(config.num_layers):
        shapes[f"layers.{i}.norm1"] = (d,)
        shapes[f"layers.{i}.wq"] = (d, d)
        shapes[f"layers.{i}.wk"] = (d, d)
        shapes[f"layers.{i}.wv"] = (d, d)
        shapes[f"layers.{i}.wo"] = (d, d)
        shapes[f"layers.{i}.norm2"] = (d,)
        shapes[f"layers.{i}.w1"] = (d, f)
        shapes[f"layers.{i}.w2"] = (f, d)
    shapes["final_norm"] = (d,)
    shapes["head.w"] = (d, config.output_width)
    shapes["head.b"] = (config.output_width,)
    return shapes


def init_params(config: ToyConfig, seed: int, *, zero_head: bool = False) -> Parameters:
    """Draw parameters deterministically from ``seed``.

    Matrices are ``uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))``; normalization
    gains start at 1 and the head bias at 0.

    Args:
        config: Model dimensions.
        seed: Seed for ``numpy.random.default_rng``.
        zero_head: Start the regression head at zero.

    Returns:
        Mapping of parameter name to array.
    """
    rng = np.random.default_rng(seed)
    params: Parameters = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(("norm1", "norm2")) or name == "final_norm":
            value = np.ones(shape)
        elif name == "head.b" or (zero_head and name == "head.w"):
            value = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = value.astype(config.np_dtype)
    return params


def check_params(params: Parameters, config: ToyConfig) -> None:
    """Raise if ``params`` does not match ``config`` or holds non-finite values."""
    shapes = parameter_shapes(config)
    missing = sorted(set(shapes) - set(params))
    extra = sorted(set(params) - set(shapes))
    if missing or extra:
        raise ContractError(f"parameter names differ from config: missing={missing}, extra={extra}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ContractError(f"{name} has shape {params[name].shape}, config expects {shape}")
        if not np.all(np.isfinite(params[name])):
            raise NumericError(f"{name} holds non-finite values")


def sinusoidal_positions(positions: np.ndarray, width: int) -> np.ndarray:
    """Absolute sinusoidal encoding rows for integer ``positions``."""
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    dims = np.arange(width)
    rates = 1.0 / np.power(10000.0, (2 * (dims // 2)) / width)
    angles = pos * rates[None, :]
    return np.where(dims % 2 == 0, np.sin(angles), np.cos(angles))


def _rms_norm(x: np.ndarray, gain: np.ndarray, eps: float):
    rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    normed = x / rms
    return normed * gain, (normed, rms)


def _rms_norm_backward(dy: np.ndarray, gain: np.ndarray, cache):
    normed, rms = cache
    dgain = np.sum(dy * normed, axis=0)
    dn = dy * gain
    dx = (dn - normed * np.mean(dn * normed, axis=-1, keepdims=True)) / rms
    return dx, dgain


def _gelu(u: np.ndarray):
    t = np.tanh(_GELU_C * (u + 0.044715 * u ** 3))
    return 0.5 * u * (1.0 + t), t


def _gelu_backward(du_out: np.ndarray, u: np.ndarray, t: np.ndarray) -> np.ndarray:
    local = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return du_out * local


def _causal_softmax(scores: np.ndarray) -> np.ndarray:
    size = scores.shape[-1]
    mask = np.triu(np.ones((size, size), dtype=bool), k=1)
    scores = np.where(mask, -np.inf, scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    return weights / weights.sum(axis=-1, keepdims=True)


@dataclass
class ForwardTrace:
    """Everything recorded by one forward pass.

    Attributes:
        video_inputs: ``V`` entering each layer, ``frames × n × d``.
        question_inputs: ``Q`` entering each layer, ``N_q × d``.
        attention: Per-layer ``heads × S × S`` maps, empty unless recorded.
        output: Regression head output.
        sequence_lengths: Sequence length entering each layer.
        video_tokens_per_frame: Per-frame video count entering each layer,
            followed by the count left after the last layer.
        positions: Original sequence positions entering each layer.
    """

    video_inputs: List[np.ndarray]
    question_inputs: List[np.ndarray]
    attention: List[np.ndarray]
    output: np.ndarray
    sequence_lengths: List[int]
    video_tokens_per_frame: List[int]
    positions: List[np.ndarray]
    num_frames: int
    question_tokens: int
    _caches: list = field(default_factory=list, repr=False)
    _head_input: Optional[np.ndarray] = field(default=None, repr=False)
    _final_cache: Optional[tuple] = field(default=None, repr=False)
    _input_cache: Optional[tuple] = field(default=None, repr=False)

    @property
    def video_totals(self) -> List[int]:
        """Total video tokens entering each layer, then after the last one."""
        return [self.grid(layer).video_length for layer in range(len(self.video_tokens_per_frame))]

    def grid(self, layer: int) -> FrameGrid:
        """Token layout entering ``layer``; ``layer == num_layers`` is the final layout."""
        return FrameGrid(self.num_frames, self.video_tokens_per_frame[layer], self.question_tokens)

    def question_attention(self) -> List[np.ndarray]:
        """Question-row × video-column block of every recorded map.

        Returns:
            One ``heads × N_q × (T·n_layer)`` array per layer.
        """
        if not self.attention:
            raise ContractError("forward was run without record_attention")
        blocks = []
        for layer, weights in enumerate(self.attention):
            video, question = sequence_positions(self.grid(layer))
            blocks.append(weights[:, question.start:question.stop, video.start:video.stop])
        return blocks


def _check_plan(plan: Optional[DropPlan], config: ToyConfig, initial_tokens: int) -> None:
    if plan is None:
        return
    if plan.num_layers != config.num_layers:
        raise ContractError(f"plan covers {plan.num_layers} layers, model has {config.num_layers}")
    if plan.initial_tokens != initial_tokens:
        raise ContractError(
            f"plan expects initial_tokens={plan.initial_tokens}, video has {initial_tokens} tokens per frame"
        )


def _embed(params: Parameters, config: ToyConfig, video: np.ndarray, question: np.ndarray):
    dtype = config.np_dtype
    video = np.asarray(video, dtype=dtype)
    question = np.asarray(question, dtype=dtype)
    if video.ndim != 3:
        raise ContractError(f"video tokens must be frames × tokens × width, got shape {video.shape}")
    if question.ndim != 2:
        raise ContractError(f"question tokens must be N_q × width, got shape {question.shape}")
    width = config.input_width or config.model_width
    if video.shape[2] != width or question.shape[1] != width:
        raise ContractError(
            f"token width {video.shape[2]}/{question.shape[1]} does not match model input width {width}"
        )
    if video.shape[0] < 1 or video.shape[1] < 1:
        raise ContractError(f"video tokens need at least one frame and one token, got shape {video.shape}")
    if question.shape[0] < 1:
        raise ContractError("at least one question token is required")
    raw = np.concatenate([video.reshape(-1, width), question], axis=0)
    if raw.shape[0] > config.max_sequence:
        raise ContractError(f"sequence length {raw.shape[0]} exceeds max_sequence {config.max_sequence}")
    hidden = raw @ params["embed"] if config.input_width is not None else raw.copy()
    positions = np.arange(raw.shape[0])
    hidden = hidden + sinusoidal_positions(positions, config.model_width).astype(dtype)
    return hidden, positions, raw


def forward(
    params: Parameters,
    config: ToyConfig,
    video_tokens: np.ndarray,
    question_tokens: np.ndarray,
    plan: Optional[DropPlan] = None,
    *,
    record_attention: bool = False,
    on_layer_output: Optional[LayerHook] = None,
    keep_cache: bool = False,
) -> ForwardTrace:
    """Prefill forward pass with optional layer-wise video-token drops.

    Args:
        params: Model parameters.
        config: Model dimensions.
        video_tokens: ``frames × N1 × width`` tokens.
        question_tokens: ``N_q × width`` tokens, appended after the video.
        plan: Drop plan built for ``N1`` and ``config.num_layers``, or None.
        record_attention: Keep every layer's attention maps.
        on_layer_output: Called as ``hook(layer, hidden)`` on each layer output
            before compression; a returned array replaces ``hidden``.
        keep_cache: Keep intermediates for :func:`backward`.

    Returns:
        The forward trace.

    Raises:
        ContractError: On shape or plan mismatch.
        NumericError: If an activation turns non-finite.
    """
    num_frames, initial_tokens = np.shape(video_tokens)[:2]
    _check_plan(plan, config, initial_tokens)
    hidden, positions, raw = _embed(params, config, video_tokens, question_tokens)
    num_question = np.shape(question_tokens)[0]
    heads, head_width = config.num_heads, config.head_width
    scale = 1.0 / math.sqrt(head_width)

    trace = ForwardTrace(
        video_inputs=[],
        question_inputs=[],
        attention=[],
        output=np.empty(0),
        sequence_lengths=[],
        video_tokens_per_frame=[],
        positions=[],
        num_frames=num_frames,
        question_tokens=num_question,
    )
    if keep_cache:
        trace._input_cache = (raw,)
    per_frame = initial_tokens

    for layer in range(config.num_layers):
        p = f"layers.{layer}."
        seq = hidden.shape[0]
        trace.sequence_lengths.append(seq)
        trace.video_tokens_per_frame.append(per_frame)
        video, question = sequence_positions(trace.grid(layer))
        trace.positions.append(positions)
        trace.video_inputs.append(hidden[video.start:video.stop].reshape(num_frames, per_frame, -1))
        trace.question_inputs.append(hidden[question.start:question.stop])
        logger.debug(f"Layer {layer}: sequence length {seq} ({per_frame} tokens/frame)")

        n1, norm1_cache = _rms_norm(hidden, params[p + "norm1"], config.norm_eps)
        q = (n1 @ params[p + "wq"]).reshape(seq, heads, head_width).transpose(1, 0, 2)
        k = (n1 @ params[p + "wk"]).reshape(seq, heads, head_width).transpose(1, 0, 2)
        v = (n1 @ params[p + "wv"]).reshape(seq, heads, head_width).transpose(1, 0, 2)
        weights = _causal_softmax(q @ k.transpose(0, 2, 1) * scale)
        context = (weights @ v).transpose(1, 0, 2).reshape(seq, -1)
        after_attention = hidden + context @ params[p + "wo"]

        n2, norm2_cache = _rms_norm(after_attention, params[p + "norm2"], config.norm_eps)
        pre_activation = n2 @ params[p + "w1"]
        activated, tanh_cache = _gelu(pre_activation)
        out = after_attention + activated @ params[p + "w2"]

        if on_layer_output is not None:
            replaced = on_layer_output(layer, out)
            if replaced is not None:
                out = np.asarray(replaced, dtype=out.dtype)
        if not np.all(np.isfinite(out)):
            logger.error(f"Non-finite activations at layer {layer}")
            raise NumericError(f"non-finite activations at layer {layer}", layer=layer)
        if record_attention:
            trace.attention.append(weights)

        keep = None
        if plan is not None and not plan.transitions[layer].is_identity:
            transition = plan.transitions[layer]
            keep = np.concatenate([kept_positions(transition, num_frames), np.arange(question.start, question.stop)])
            per_frame = transition.n_next

        if keep_cache:
            trace._caches.append(
                (hidden, norm1_cache, n1, q, k, v, weights, context, after_attention,
                 norm2_cache, n2, pre_activation, activated, tanh_cache, keep, seq)
            )
        if keep is not None:
            out = out[keep]
            positions = positions[keep]
        hidden = out

    trace.video_tokens_per_frame.append(per_frame)
    final, final_cache = _rms_norm(hidden, params["final_norm"], config.norm_eps)
    trace.output = final[-1] @ params["head.w"] + params["head.b"]
    if keep_cache:
        trace._final_cache = final_cache
        trace._head_input = final
    return trace


def mse_loss(output: np.ndarray, target: np.ndarray) -> float:
    diff = np.asarray(output, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff * diff))


def backward(params: Parameters, config: ToyConfig, trace: ForwardTrace, target: np.ndarray) -> Parameters:
    """Gradients of the mean squared error for a trace run with ``keep_cache``.

    Compression is a fixed index selection: dropped tokens receive zero
    gradient from every layer after their drop.
    """
    if trace._head_input is None:
        raise ContractError("trace was recorded without keep_cache=True")
    grads: Parameters = {name: np.zeros_like(value) for name, value in params.items()}
    heads, head_width = config.num_heads, config.head_width
    scale = 1.0 / math.sqrt(head_width)

    target = np.asarray(target, dtype=trace.output.dtype).reshape(trace.output.shape)
    d_output = 2.0 * (trace.output - target) / trace.output.size
    final = trace._head_input
    grads["head.w"] = np.outer(final[-1], d_output)
    grads["head.b"] = d_output.copy()
    d_final = np.zeros_like(final)
    d_final[-1] = params["head.w"] @ d_output
    d_hidden, grads["final_norm"] = _rms_norm_backward(d_final, params["final_norm"], trace._final_cache)

    for layer in reversed(range(config.num_layers)):
        p = f"layers.{layer}."
        (hidden, norm1_cache, n1, q, k, v, weights, context, after_attention,
         norm2_cache, n2, pre_activation, activated, tanh_cache, keep, seq) = trace._caches[layer]

        if keep is not None:
            d_out = np.zeros((seq, d_hidden.shape[1]), dtype=d_hidden.dtype)
            d_out[keep] = d_hidden
        else:
            d_out = d_hidden

        grads[p + "w2"] = activated.T @ d_out
        d_pre = _gelu_backward(d_out @ params[p + "w2"].T, pre_activation, tanh_cache)
        grads[p + "w1"] = n2.T @ d_pre
        d_n2 = d_pre @ params[p + "w1"].T
        d_mid, grads[p + "norm2"] = _rms_norm_backward(d_n2, params[p + "norm2"], norm2_cache)
        d_after = d_out + d_mid

        grads[p + "wo"] = context.T @ d_after
        d_context = (d_after @ params[p + "wo"].T).reshape(seq, heads, head_width).transpose(1, 0, 2)
        d_weights = d_context @ v.transpose(0, 2, 1)
        d_v = weights.transpose(0, 2, 1) @ d_context
        d_scores = weights * (d_weights - np.sum(d_weights * weights, axis=-1, keepdims=True))
        d_q = d_scores @ k * scale
        d_k = d_scores.transpose(0, 2, 1) @ q * scale

        def merge(x):
            return x.transpose(1, 0, 2).reshape(seq, -1)

        d_q, d_k, d_v = merge(d_q), merge(d_k), merge(d_v)
        grads[p + "wq"] = n1.T @ d_q
        grads[p + "wk"] = n1.T @ d_k
        grads[p + "wv"] = n1.T @ d_v
        d_n1 = d_q @ params[p + "wq"].T + d_k @ params[p + "wk"].T + d_v @ params[p + "wv"].T
        d_in, grads[p + "norm1"] = _rms_norm_backward(d_n1, params[p + "norm1"], norm1_cache)
        d_hidden = d_after + d_in

    if config.input_width is not None:
        (raw,) = trace._input_cache
        grads["embed"] = raw.T @ d_hidden
    return grads


def loss_and_backward(
    params: Parameters,
    config: ToyConfig,
    video_tokens: np.ndarray,
    question_tokens: np.ndarray,
    target: np.ndarray,
    plan: Optional[DropPlan] = None,
    *,
    on_layer_output: Optional[LayerHook] = None,
) -> Tuple[float, Parameters]:
    """Mean squared error of the regression head and its exact gradients.

    Returns:
        ``(loss, grads)`` with ``grads`` keyed like ``params``.

    Raises:
        NumericError: If the loss is not finite.
    """
    trace = forward(
        params, config, video_tokens, question_tokens, plan,
        on_layer_output=on_layer_output, keep_cache=True,
    )
    loss = mse_loss(trace.output, target)
    if not math.isfinite(loss):
        logger.error(f"Non-finite loss {loss}")
        raise NumericError(f"non-finite loss {loss}", layer=config.num_layers - 1)
    return loss, backward(params, config, trace, target)


def evaluate_loss(
    params: Parameters,
    config: ToyConfig,
    video_tokens: np.ndarray,
    question_tokens: np.ndarray,
    target: np.ndarray,
    plan: Optional[DropPlan] = None,
    *,
    on_layer_output: Optional[LayerHook] = None,
) -> float:
    trace = forward(params, config, video_tokens, question_tokens, plan, on_layer_output=on_layer_output)
    return mse_loss(trace.output, target)
