"""JSON persistence of functional quantizers.

The file stores the process, the Nystrom resolutions, eigenvalues with
eigenfunction samples on a grid, the structure and the codeword
probabilities. Loading rebuilds the K-L system from the process
description (so downstream results are bit-identical) and checks it
against the stored eigen-data.
"""

import json
import math

import numpy as np

from .fbm import kl_for_kernel
from .kernels import kernel_from_dict
from .quantizer import (
    FunctionalQuantizer,
    OptimalStructure,
    ProductStructure,
    build_functional_quantizer,
)

FORMAT_VERSION = 1
CHECK_RTOL = 1e-12


class QuantizerFileError(ValueError):
    pass


def quantizer_to_dict(fq, grid_points=101):
    kl = fq.kl
    t = np.linspace(0.0, kl.T, grid_points)
    e = kl.eigenfunctions(t, fq.d)
    modes = [
        {"k": k + 1, "lambda": float(kl.eigenvalues[k]), "grid_t": t.tolist(), "e_k": e[k].tolist()}
        for k in range(fq.d)
    ]
    if isinstance(fq.structure, ProductStructure):
        structure = {"type": "product", "sizes": list(fq.structure.sizes)}
    else:
        structure = {
            "type": "optimal",
            "codebook": np.asarray(fq.structure.codebook).tolist(),
            "weights": np.asarray(fq.structure.weights).tolist(),
        }
    kd = kl.kernel.to_dict()
    return {
        "format": FORMAT_VERSION,
        "process": kd.pop("family"),
        "params": {**kd, "resolutions": list(kl.resolutions)},
        "modes": modes,
        "structure": structure,
        "probabilities": np.asarray(fq.probabilities).tolist(),
        "meta": fq.meta,
    }


def save_quantizer(fq, path, grid_points=101):
    with open(path, "w") as fh:
        json.dump(quantizer_to_dict(fq, grid_points), fh, indent=1)
        fh.write("\n")


def quantizer_from_dict(d, use_numba=None):
    try:
        params = dict(d["params"])
        res = tuple(params.pop("resolutions"))
        kernel = kernel_from_dict({"family": d["process"], **params})
        modes = d["modes"]
        st = d["structure"]
    except KeyError as exc:
        raise QuantizerFileError(f"missing field {exc}") from None
    m = len(modes)
    kl = kl_for_kernel(kernel, m, res, use_numba=use_numba)
    for mode in modes:
        k = mode["k"] - 1
        if not math.isclose(kl.eigenvalues[k], mode["lambda"], rel_tol=CHECK_RTOL):
            raise QuantizerFileError(f"eigenvalue {k + 1} does not match the rebuilt K-L system")
    if modes:
        t = np.asarray(modes[0]["grid_t"])
        stored = np.array([mode["e_k"] for mode in modes])
        if not np.allclose(kl.eigenfunctions(t, m), stored, rtol=0, atol=1e-10):
            raise QuantizerFileError("eigenfunction samples do not match the rebuilt K-L system")
    if st["type"] == "product":
        structure = ProductStructure(tuple(int(s) for s in st["sizes"]))
    elif st["type"] == "optimal":
        structure = OptimalStructure(np.asarray(st["codebook"], float), np.asarray(st["weights"], float))
    else:
        raise QuantizerFileError(f"unknown structure type {st['type']!r}")
    fq = build_functional_quantizer(kl, structure, d.get("meta"))
    if not np.allclose(fq.probabilities, d["probabilities"], rtol=0, atol=1e-12):
        raise QuantizerFileError("stored probabilities disagree with the structure")
    return fq


def load_quantizer(path, use_numba=None):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise QuantizerFileError(f"{path}: not valid JSON ({exc})") from None
    return quantizer_from_dict(d, use_numba)


__all__ = ["save_quantizer", "load_quantizer", "quantizer_to_dict", "quantizer_from_dict", "FunctionalQuantizer"]
