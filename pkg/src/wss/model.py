"""Segmentation network: dense logits at output stride 8, optional global
multi-label branch.

The reference backbone ("toy") is a small fully convolutional net implemented
directly on numpy arrays, with explicit backward passes so training needs no
autograd framework. Layout per conv layer: weights (Cout, Cin, kh, kw) acting
on activations (N, C, H, W). Spatial downsampling comes from a stride-2 stem
plus two stride-2 blocks (net stride 8); the last two blocks use dilation 2
instead of further downsampling. All convs are 3x3 except the 1x1 classifier.

The "dilated-resnet-contract" kind does not ship weights; it declares the
architecture id so externally trained full-scale backbones can be plugged in
through register_forward().
"""

from dataclasses import dataclass

import numpy as np

from .core import ImageRecord

TOY = "toy"
RESNET_CONTRACT = "dilated-resnet-contract"

MIN_INPUT_DIM = 8
OUTPUT_STRIDE = 8

# (name, cin, cout, stride, dilation); stem + 6 blocks, then a 1x1 head
_TOY_CONVS = (
    ("stem", 3, 16, 2, 1),
    ("b1", 16, 24, 1, 1),
    ("b2", 24, 32, 2, 1),
    ("b3", 32, 48, 1, 1),
    ("b4", 48, 64, 2, 1),
    ("b5", 64, 64, 1, 2),
    ("b6", 64, 64, 1, 2),
)
_BRANCH_FORK_AFTER = "b2"  # the second downsampling layer
_GN_GROUPS = 8


@dataclass(frozen=True)
class NetworkParams:
    """Named parameter tensors plus the architecture id that fixes their shapes."""

    parameters: dict
    architecture_id: str

    def __post_init__(self):
        for name, arr in self.parameters.items():
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in parameter {name!r}")

    @property
    def num_classes(self):
        return _parse_arch(self.architecture_id)["C"]

    @property
    def dual_branch(self):
        return _parse_arch(self.architecture_id)["dual"]


@dataclass(frozen=True)
class MultiLabelScores:
    """Length-C logit vector from the global multi-label branch."""

    p: np.ndarray

    def __post_init__(self):
        if self.p.ndim != 1:
            raise ValueError("multi-label scores must be a 1-D vector")
        if not np.isfinite(self.p).all():
            raise ValueError("multi-label scores must be finite")


def _arch_id(kind, C, dual_branch, branch_hidden):
    tag = f"dual{branch_hidden}" if dual_branch else "single"
    return f"{kind}-c{C}-{tag}"


def _parse_arch(arch_id: str):
    parts = arch_id.rsplit("-", 2)
    if len(parts) != 3 or not parts[1].startswith("c"):
        raise ValueError(f"unrecognized architecture id {arch_id!r}")
    kind, c_part, tag = parts
    C = int(c_part[1:])
    if tag == "single":
        return {"kind": kind, "C": C, "dual": False, "branch_hidden": 0}
    if tag.startswith("dual"):
        return {"kind": kind, "C": C, "dual": True, "branch_hidden": int(tag[4:])}
    raise ValueError(f"unrecognized architecture id {arch_id!r}")


def build_backbone(kind: str, C: int, dual_branch: bool, rng_seed: int,
                   branch_hidden: int = 64) -> NetworkParams:
    """Initialize a backbone. He fan-in init, deterministic given rng_seed.

    branch_hidden sets the width of the branch's hidden dense layer; 0 means a
    pooling-only head (global average pool straight into a linear classifier).
    """
    if C < 2:
        raise ValueError("C must be >= 2")
    arch = _arch_id(kind, C, dual_branch, branch_hidden if dual_branch else 0)
    if kind == RESNET_CONTRACT:
        # weight-less declaration; parameters come from a user checkpoint
        return NetworkParams({}, arch)
    if kind != TOY:
        raise ValueError(f"unknown backbone kind {kind!r}")
    seq = np.random.SeedSequence(rng_seed)
    shared_seq, branch_seq = seq.spawn(2)
    rng = np.random.default_rng(shared_seq)
    params = {}
    for name, cin, cout, _, _ in _TOY_CONVS:
        fan_in = cin * 9
        params[f"{name}.w"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, 3, 3)
        ).astype(np.float32)
        params[f"{name}.b"] = np.zeros(cout, dtype=np.float32)
        params[f"{name}.g"] = np.ones(cout, dtype=np.float32)
        params[f"{name}.beta"] = np.zeros(cout, dtype=np.float32)
    head_in = _TOY_CONVS[-1][2]
    params["head.w"] = rng.normal(
        0.0, np.sqrt(2.0 / head_in), size=(C, head_in, 1, 1)
    ).astype(np.float32)
    params["head.b"] = np.zeros(C, dtype=np.float32)
    if dual_branch:
        brng = np.random.default_rng(branch_seq)
        fork_out = dict((n, co) for n, _, co, _, _ in _TOY_CONVS)[_BRANCH_FORK_AFTER]
        if branch_hidden > 0:
            params["branch.fc1.w"] = brng.normal(
                0.0, np.sqrt(2.0 / fork_out), size=(branch_hidden, fork_out)
            ).astype(np.float32)
            params["branch.fc1.b"] = np.zeros(branch_hidden, dtype=np.float32)
            params["branch.fc2.w"] = brng.normal(
                0.0, np.sqrt(2.0 / branch_hidden), size=(C, branch_hidden)
            ).astype(np.float32)
            params["branch.fc2.b"] = np.zeros(C, dtype=np.float32)
        else:
            params["branch.fc2.w"] = brng.normal(
                0.0, np.sqrt(2.0 / fork_out), size=(C, fork_out)
            ).astype(np.float32)
            params["branch.fc2.b"] = np.zeros(C, dtype=np.float32)
    params["input_mean"] = np.zeros(3, dtype=np.float32)
    return NetworkParams(params, arch)


def parameter_count(params: NetworkParams) -> int:
    return int(sum(v.size for v in params.parameters.values()))


# ---------------------------------------------------------------------------
# numpy conv primitives (NCHW)

def _conv_out_size(size, stride, dilation):
    # 3x3 conv with pad = dilation keeps size at stride 1, ceil-halves at stride 2
    pad = dilation
    return (size + 2 * pad - dilation * 2 - 1) // stride + 1


def _im2col(x, stride, dilation, pad_mode):
    n, c, h, w = x.shape
    pad = dilation
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=pad_mode)
    ho = _conv_out_size(h, stride, dilation)
    wo = _conv_out_size(w, stride, dilation)
    cols = np.empty((n, c, 3, 3, ho, wo), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            ys = ky * dilation
            xs = kx * dilation
            cols[:, :, ky, kx] = xp[:, :, ys:ys + stride * ho:stride,
                                    xs:xs + stride * wo:stride]
    return cols, (h, w)


def _col2im(dcols, in_shape, stride, dilation, pad_mode):
    n, c = dcols.shape[:2]
    ho, wo = dcols.shape[4:]
    h, w = in_shape
    pad = dilation
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for ky in range(3):
        for kx in range(3):
            ys = ky * dilation
            xs = kx * dilation
            dxp[:, :, ys:ys + stride * ho:stride,
                xs:xs + stride * wo:stride] += dcols[:, :, ky, kx]
    if pad == 0:
        return dxp
    if pad_mode == "wrap":
        # fold periodic padding back onto the opposite edges
        dxp[:, :, pad:2 * pad] += dxp[:, :, h + pad:]
        dxp[:, :, h:h + pad] += dxp[:, :, :pad]
        dxp[:, :, :, pad:2 * pad] += dxp[:, :, :, w + pad:]
        dxp[:, :, :, w:w + pad] += dxp[:, :, :, :pad]
    return dxp[:, :, pad:pad + h, pad:pad + w]


def conv3x3_forward(x, weight, bias, stride=1, dilation=1, pad_mode="constant"):
    cols, in_shape = _im2col(x, stride, dilation, pad_mode)
    n, c = cols.shape[:2]
    ho, wo = cols.shape[4:]
    flat = cols.reshape(n, c * 9, ho * wo)
    wmat = weight.reshape(weight.shape[0], c * 9)
    out = np.einsum("oc,ncl->nol", wmat, flat, optimize=True)
    out = out.reshape(n, weight.shape[0], ho, wo) + bias[None, :, None, None]
    cache = (flat, in_shape, (n, c, ho, wo), stride, dilation, pad_mode)
    return out, cache


def conv3x3_backward(dout, weight, cache):
    flat, in_shape, (n, c, ho, wo), stride, dilation, pad_mode = cache
    dflat_out = dout.reshape(n, dout.shape[1], ho * wo)
    dw = np.einsum("nol,ncl->oc", dflat_out, flat, optimize=True)
    dw = dw.reshape(weight.shape)
    db = dout.sum(axis=(0, 2, 3))
    wmat = weight.reshape(weight.shape[0], c * 9)
    dcols = np.einsum("oc,nol->ncl", wmat, dflat_out, optimize=True)
    dcols = dcols.reshape(n, c, 3, 3, ho, wo)
    dx = _col2im(dcols, in_shape, stride, dilation, pad_mode)
    return dx, dw, db


def conv1x1_forward(x, weight, bias):
    out = np.einsum("oc,nchw->nohw", weight[:, :, 0, 0], x, optimize=True)
    return out + bias[None, :, None, None], x


def conv1x1_backward(dout, weight, x):
    dw = np.einsum("nohw,nchw->oc", dout, x, optimize=True)[:, :, None, None]
    db = dout.sum(axis=(0, 2, 3))
    dx = np.einsum("oc,nohw->nchw", weight[:, :, 0, 0], dout, optimize=True)
    return dx, dw, db


_GN_EPS = 1e-5


def groupnorm_forward(x, gamma, beta, groups=_GN_GROUPS):
    n, c, h, w = x.shape
    g = min(groups, c)
    xg = x.reshape(n, g, c // g * h * w)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + _GN_EPS)
    xhat = ((xg - mu) * inv).reshape(n, c, h, w)
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return out, (xhat, inv, g)


def groupnorm_backward(dout, gamma, cache):
    xhat, inv, g = cache
    n, c, h, w = dout.shape
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = (dout * gamma[None, :, None, None]).reshape(n, g, -1)
    xhat_g = xhat.reshape(n, g, -1)
    m1 = dxhat.mean(axis=2, keepdims=True)
    m2 = (dxhat * xhat_g).mean(axis=2, keepdims=True)
    dx = (dxhat - m1 - xhat_g * m2) * inv
    return dx.reshape(n, c, h, w), dgamma, dbeta


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, x > 0


def relu_backward(dout, mask):
    return dout * mask


# ---------------------------------------------------------------------------
# toy backbone forward/backward

def _toy_forward(params, x, want_branch, train=False, pad_mode="constant"):
    """Run the shared trunk (and branch if asked). Returns logits, branch
    logits (or None) and, in train mode, the cache needed for backward."""
    p = params.parameters
    arch = _parse_arch(params.architecture_id)
    caches = []
    branch_in = None
    h = x
    for name, _, _, stride, dilation in _TOY_CONVS:
        h, ccache = conv3x3_forward(h, p[f"{name}.w"], p[f"{name}.b"],
                                    stride=stride, dilation=dilation,
                                    pad_mode=pad_mode)
        h, gcache = groupnorm_forward(h, p[f"{name}.g"], p[f"{name}.beta"])
        h, rmask = relu_forward(h)
        caches.append((name, ccache, gcache, rmask))
        if name == _BRANCH_FORK_AFTER:
            branch_in = h
    logits, hcache = conv1x1_forward(h, p["head.w"], p["head.b"])
    branch_logits = None
    bcache = None
    if want_branch:
        pooled = branch_in.mean(axis=(2, 3))
        if arch["branch_hidden"] > 0:
            z1 = pooled @ p["branch.fc1.w"].T + p["branch.fc1.b"]
            a1, bmask = relu_forward(z1)
            branch_logits = a1 @ p["branch.fc2.w"].T + p["branch.fc2.b"]
            bcache = (pooled, a1, bmask, branch_in.shape)
        else:
            branch_logits = pooled @ p["branch.fc2.w"].T + p["branch.fc2.b"]
            bcache = (pooled, None, None, branch_in.shape)
    if not train:
        return logits, branch_logits, None
    return logits, branch_logits, (caches, hcache, bcache)


def _toy_backward(params, cache, dlogits, dbranch=None):
    """Gradients of all parameters given upstream grads on the two outputs."""
    p = params.parameters
    arch = _parse_arch(params.architecture_id)
    caches, hcache, bcache = cache
    grads = {}
    dh, grads["head.w"], grads["head.b"] = conv1x1_backward(dlogits, p["head.w"], hcache)
    dbranch_in = None
    if dbranch is not None:
        pooled, a1, bmask, fork_shape = bcache
        if arch["branch_hidden"] > 0:
            grads["branch.fc2.w"] = dbranch.T @ a1
            grads["branch.fc2.b"] = dbranch.sum(axis=0)
            da1 = dbranch @ p["branch.fc2.w"]
            dz1 = relu_backward(da1, bmask)
            grads["branch.fc1.w"] = dz1.T @ pooled
            grads["branch.fc1.b"] = dz1.sum(axis=0)
            dpooled = dz1 @ p["branch.fc1.w"]
        else:
            grads["branch.fc2.w"] = dbranch.T @ pooled
            grads["branch.fc2.b"] = dbranch.sum(axis=0)
            dpooled = dbranch @ p["branch.fc2.w"]
        n, c, fh, fw = fork_shape
        dbranch_in = np.broadcast_to(
            dpooled[:, :, None, None] / (fh * fw), fork_shape
        ).astype(dpooled.dtype)
    for name, ccache, gcache, rmask in reversed(caches):
        if dbranch_in is not None and name == _BRANCH_FORK_AFTER:
            dh = dh + dbranch_in
        dh = relu_backward(dh, rmask)
        dh, grads[f"{name}.g"], grads[f"{name}.beta"] = groupnorm_backward(
            dh, p[f"{name}.g"], gcache)
        dh, grads[f"{name}.w"], grads[f"{name}.b"] = conv3x3_backward(
            dh, p[f"{name}.w"], ccache)
    return grads


# forward adapters for externally supplied architectures, keyed by kind
_FORWARD_REGISTRY = {}


def register_forward(kind: str, fn):
    """Register a forward callable (params, batch_nchw) -> logits for a kind."""
    _FORWARD_REGISTRY[kind] = fn


def _prepare_input(image: ImageRecord, params: NetworkParams):
    if image.height < MIN_INPUT_DIM or image.width < MIN_INPUT_DIM:
        raise ValueError(
            f"input {image.height}x{image.width} below network minimum {MIN_INPUT_DIM}"
        )
    mean = params.parameters.get("input_mean")
    x = image.pixels.astype(np.float32)
    if mean is not None:
        x = x - mean.astype(np.float32)
    return x.transpose(2, 0, 1)[None]


def batch_forward(params: NetworkParams, batch, train=False, pad_mode="constant"):
    """Forward an (N,3,H,W) float batch; used by the training loop."""
    arch = _parse_arch(params.architecture_id)
    if arch["kind"] != TOY:
        raise ValueError(
            f"no trainable forward for architecture kind {arch['kind']!r}"
        )
    return _toy_forward(params, batch, want_branch=arch["dual"], train=train,
                        pad_mode=pad_mode)


def batch_backward(params: NetworkParams, cache, dlogits, dbranch=None):
    return _toy_backward(params, cache, dlogits, dbranch)


def forward_segmentation(image: ImageRecord, params: NetworkParams,
                         pad_mode="constant"):
    """Dense class logits at ceil(H/8) x ceil(W/8) x C, deterministic."""
    from .core import ScoreMap

    arch = _parse_arch(params.architecture_id)
    if arch["kind"] == TOY:
        x = _prepare_input(image, params)
        logits, _, _ = _toy_forward(params, x, want_branch=False,
                                    pad_mode=pad_mode)
    elif arch["kind"] in _FORWARD_REGISTRY:
        x = _prepare_input(image, params)
        logits = _FORWARD_REGISTRY[arch["kind"]](params, x)
    else:
        raise ValueError(
            f"architecture kind {arch['kind']!r} has no forward implementation; "
            "supply weights and register one with register_forward()"
        )
    return ScoreMap(logits[0].transpose(1, 2, 0).astype(np.float64), space="logits")


def forward_multilabel(image: ImageRecord, params: NetworkParams) -> MultiLabelScores:
    """Global multi-label logits from the branch head (dual architectures only)."""
    if not params.dual_branch:
        raise ValueError("multi-label branch requested on a single-branch architecture")
    arch = _parse_arch(params.architecture_id)
    if arch["kind"] != TOY:
        raise ValueError(f"multi-label forward is only implemented for "
                         f"{TOY!r} (got {arch['kind']!r})")
    x = _prepare_input(image, params)
    _, branch_logits, _ = _toy_forward(params, x, want_branch=True)
    return MultiLabelScores(branch_logits[0].astype(np.float64))


# ---------------------------------------------------------------------------
# checkpoints: a self-describing .npz of named tensors plus the architecture id

def save_checkpoint(params: NetworkParams, path):
    arrays = dict(params.parameters)
    arrays["__architecture_id__"] = np.asarray(params.architecture_id)
    np.savez(path, **arrays)


def load_checkpoint(path) -> NetworkParams:
    with np.load(path, allow_pickle=False) as data:
        if "__architecture_id__" not in data:
            raise ValueError(f"{path}: not a checkpoint (missing architecture id)")
        arch = str(data["__architecture_id__"])
        parameters = {k: data[k] for k in data.files if k != "__architecture_id__"}
    _parse_arch(arch)  # validate
    return NetworkParams(parameters, arch)
