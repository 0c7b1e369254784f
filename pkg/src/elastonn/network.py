"""Fully connected networks: construction, initialization, taped forward passes.

Parameters are plain float64 numpy arrays; a forward pass lifts them onto a
:class:`~elastonn.autodiff.Tape` so gradients w.r.t. both inputs and
parameters are available. Seeding uses numpy's ``default_rng`` (PCG64), so a
given (scheme, seed, architecture) always reproduces the same parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf

from . import autodiff as ad

ACTIVATIONS = ("tanh", "relu", "elu", "gelu", "identity")

CHECKPOINT_VERSION = 1


@dataclass
class InitScheme:
    """Parameter sampling scheme: ``default-uniform`` or ``glorot-normal``."""

    tag: str = "default-uniform"
    seed: int = 0


@dataclass
class Mlp:
    widths: list
    activations: list  # one tag per non-input layer, output usually "identity"
    weights: list = field(default_factory=list)  # weights[i]: (n_{i+1}, n_i)
    biases: list = field(default_factory=list)

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_flat(self, flat):
        off = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = flat[off : off + w.size].reshape(w.shape)
            off += w.size
            b[...] = flat[off : off + b.size]
            off += b.size
        if off != flat.size:
            raise ValueError(f"flat parameter vector has {flat.size} entries, expected {off}")


def build_mlp(widths, activations, init: InitScheme | None = None) -> Mlp:
    """Create an MLP.

    ``activations`` may be a single tag (applied to all hidden layers, with an
    identity output layer) or a full per-layer list of length len(widths)-1.

    default-uniform draws every weight and bias from U[-sqrt(k), sqrt(k)] with
    k = 1/fan_in; glorot-normal zeroes biases and draws weights from
    N(0, 2/(fan_in+fan_out)).
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    if any(w < 1 for w in widths):
        raise ValueError(f"layer widths must be >= 1, got {widths}")
    if isinstance(activations, str):
        activations = [activations] * (len(widths) - 2) + ["identity"]
    activations = list(activations)
    if len(activations) != len(widths) - 1:
        raise ValueError("need one activation per non-input layer")
    for a in activations:
        if a not in ACTIVATIONS:
            raise ValueError(f"unknown activation {a!r}")

    init = init or InitScheme()
    rng = np.random.default_rng(init.seed)
    mlp = Mlp(widths, activations)
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        if init.tag == "default-uniform":
            bound = np.sqrt(1.0 / n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            b = rng.uniform(-bound, bound, size=n_out)
        elif init.tag == "glorot-normal":
            sigma = np.sqrt(2.0 / (n_in + n_out))
            w = rng.normal(0.0, sigma, size=(n_out, n_in))
            b = np.zeros(n_out)
        else:
            raise ValueError(f"unknown init scheme {init.tag!r}")
        mlp.weights.append(w)
        mlp.biases.append(b)
    return mlp


def gelu_np(x):
    """x * Phi(x) with Phi the standard normal CDF (via erf, ~1e-16 accurate)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + _erf(x / np.sqrt(2.0)))


def gelu(x):
    """GELU for a Var (recorded) or a numpy array."""
    if isinstance(x, ad.Var):
        return ad.gelu(x)
    return gelu_np(x)


def _activate(z, tag):
    if tag == "tanh":
        return ad.tanh(z)
    if tag == "relu":
        return ad.relu(z)
    if tag == "elu":
        return ad.elu(z, alpha=1.0)
    if tag == "gelu":
        return gelu(z)
    return z  # identity


def params_to_vars(tape, mlp: Mlp):
    """Lift parameters onto the tape as leaves: [(W_var, b_var), ...]."""
    return [(tape.var(w), tape.var(b)) for w, b in zip(mlp.weights, mlp.biases)]


def forward_vars(x, param_vars, activations):
    """Forward through lifted parameters; x is (B, n0) or (n0,)."""
    vec = x.value.ndim == 1
    h = ad.reshape(x, (1, x.value.shape[0])) if vec else x
    for (w, b), act in zip(param_vars, activations):
        h = _activate(ad.matmul(h, ad.transpose(w)) + b, act)
    return ad.reshape(h, (h.value.shape[1],)) if vec else h


def forward(mlp: Mlp, x, tape=None):
    """Evaluate the network; records on ``x``'s tape (or a fresh one).

    ``x`` may be a Var or a numpy array (batched rows or a single input
    vector); returns a Var.
    """
    if not isinstance(x, ad.Var):
        tape = tape or ad.Tape()
        x = tape.const(np.asarray(x, dtype=np.float64))
    n0 = mlp.widths[0]
    cols = x.value.shape[-1] if x.value.ndim else None
    if (x.value.ndim == 1 and x.value.shape[0] != n0) or (x.value.ndim == 2 and cols != n0):
        raise ValueError(f"input width {x.value.shape} incompatible with n0={n0}")
    pv = params_to_vars(x.tape, mlp)
    return forward_vars(x, pv, mlp.activations)


_D1 = {
    # first/second derivative of the activation, written in recorded ops;
    # a = activation output, z = pre-activation input
    "tanh": lambda a, z: 1.0 - a * a,
    "relu": lambda a, z: z.tape.const((z.value > 0.0).astype(np.float64)),
    "elu": lambda a, z: _elu_d1(a, z),
    "gelu": lambda a, z: _gelu_d1(z),
    "identity": lambda a, z: z.tape.const(np.ones_like(z.value)),
}

_D2 = {
    "tanh": lambda a, z: -2.0 * a * (1.0 - a * a),
    "relu": lambda a, z: z.tape.const(np.zeros_like(z.value)),
    "elu": lambda a, z: _elu_d2(a, z),
    "gelu": lambda a, z: _gelu_d2(z),
    "identity": lambda a, z: z.tape.const(np.zeros_like(z.value)),
}


def _elu_d1(a, z):
    mask = z.tape.const((z.value > 0.0).astype(np.float64))
    return mask + (1.0 - mask) * (a + 1.0)


def _elu_d2(a, z):
    mask = z.tape.const((z.value > 0.0).astype(np.float64))
    return (1.0 - mask) * (a + 1.0)


def _phi(z):
    return (1.0 / np.sqrt(2.0 * np.pi)) * ad.exp(-0.5 * z * z)


def _gelu_d1(z):
    cdf = 0.5 * (1.0 + ad.erf(z * (1.0 / np.sqrt(2.0))))
    return cdf + z * _phi(z)


def _gelu_d2(z):
    return _phi(z) * (2.0 - z * z)


def forward_with_tangents(x, param_vars, activations, order=2):
    """Forward pass of a width-1-input network plus derivatives w.r.t. its input.

    Propagates first (and optionally second) order input tangents through the
    layers in recorded ops, so the returned derivative fields remain
    differentiable w.r.t. the network parameters. Returns (u, du) or
    (u, du, d2u), each of shape (B, n_out).
    """
    if x.value.ndim != 2 or x.value.shape[1] != 1:
        raise ValueError("tangent forward requires a (B, 1) input")
    a = x
    t = x.tape.const(np.ones_like(x.value))
    s = x.tape.const(np.zeros_like(x.value)) if order == 2 else None
    for (w, b), act in zip(param_vars, activations):
        wt = ad.transpose(w)
        z = ad.matmul(a, wt) + b
        tz = ad.matmul(t, wt)
        a_new = _activate(z, act)
        d1 = _D1[act](a_new, z)
        if order == 2:
            sz = ad.matmul(s, wt)
            s = _D2[act](a_new, z) * tz * tz + d1 * sz
        t = d1 * tz
        a = a_new
    return (a, t) if order != 2 else (a, t, s)


# ---------------------------------------------------------------------------
# checkpoint format: JSON header line + raw little-endian float64 blob,
# per layer row-major W then b
# ---------------------------------------------------------------------------


def save_checkpoint(mlp: Mlp, path, init: InitScheme | None = None):
    header = {
        "version": CHECKPOINT_VERSION,
        "widths": mlp.widths,
        "activations": mlp.activations,
        "init": None if init is None else {"tag": init.tag, "seed": init.seed},
    }
    blob = mlp.get_flat().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        head = json.dumps(header).encode()
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(blob)


def load_checkpoint(path) -> Mlp:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        blob = fh.read()
    mlp = build_mlp(header["widths"], header["activations"], InitScheme(seed=0))
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    mlp.set_flat(flat)
    return mlp
