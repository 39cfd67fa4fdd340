"""Versioned model documents: policy + certificate + parameters in one file.

Plain JSON with repr-round-tripped floats, so a load reproduces the exact
training-time weights bit for bit. The conventional extension is .clbf.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .certificate import ClbfParams, FilteredCertificate
from .envs import make_env
from .nets import Mlp

FORMAT_TAG = "clbf-model/1"


def _net_doc(net: Mlp) -> dict:
    acts = ["relu"] * (len(net.weights) - 1) + ["affine"]
    return {
        "dims": net.dims,
        "activations": acts,
        "weights": [W.reshape(-1).tolist() for W in net.weights],  # row-major
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_doc(doc: dict) -> Mlp:
    dims = doc["dims"]
    weights, biases = [], []
    for k, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = np.array(doc["weights"][k], dtype=float).reshape(n_out, n_in)
        weights.append(W)
        biases.append(np.array(doc["biases"][k], dtype=float))
    return Mlp(weights, biases)


def _params_doc(p: ClbfParams) -> dict:
    d = {k: getattr(p, k) for k in
         ("alpha", "beta", "epsilon", "c", "delta", "goal_mask", "unsafe_mask")}
    d["p"] = "inf" if p.p == np.inf else p.p
    return d


def _params_from_doc(d: dict) -> ClbfParams:
    p = dict(d)
    p["p"] = np.inf if p.get("p") == "inf" else float(p.get("p", np.inf))
    return ClbfParams(**p)


def save_model(path: str | Path, policy: Mlp, cert: FilteredCertificate) -> Path:
    doc = {
        "format": FORMAT_TAG,
        "env": cert.env.name,
        "env_constants": cert.env.constants,
        "clbf_params": _params_doc(cert.params),
        "policy": _net_doc(policy),
        "certificate": _net_doc(cert.net),
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_model(path: str | Path) -> tuple[Mlp, FilteredCertificate]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported model format: {doc.get('format')!r}")
    env = make_env(doc["env"], doc.get("env_constants"))
    policy = _net_from_doc(doc["policy"])
    cert_net = _net_from_doc(doc["certificate"])
    params = _params_from_doc(doc["clbf_params"])
    if policy.n_in != env.state_dim or policy.n_out != env.control_dim:
        raise ValueError("policy dimensions do not match the environment")
    if cert_net.n_in != env.state_dim or cert_net.n_out != 1:
        raise ValueError("certificate dimensions do not match the environment")
    return policy, FilteredCertificate(cert_net, params, env)


def model_bytes(policy: Mlp, cert: FilteredCertificate) -> bytes:
    """Canonical serialized form, for reproducibility comparisons."""
    doc = {
        "format": FORMAT_TAG,
        "env": cert.env.name,
        "env_constants": cert.env.constants,
        "clbf_params": _params_doc(cert.params),
        "policy": _net_doc(policy),
        "certificate": _net_doc(cert.net),
    }
    return json.dumps(doc, sort_keys=True).encode()
