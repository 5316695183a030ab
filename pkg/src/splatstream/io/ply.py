"""Binary PLY persistence for field snapshots.

Follows the property naming convention common to splatting tools
(x/y/z, f_dc_*, f_rest_*, opacity, scale_*, rot_*) but stores doubles
instead of floats so a write/read cycle reproduces every parameter
bit-exactly.  Rest coefficients are laid out channel-major.
"""

from pathlib import Path

import numpy as np

from ..errors import InvalidParameter
from ..field import GaussianField

_DEGREE_BY_COEFFS = {1: 0, 4: 1, 9: 2, 16: 3}


def _property_names(n_coeffs: int):
    names = ["x", "y", "z", "nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (n_coeffs - 1))]
    names += ["opacity"]
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def write_ply(fld: GaussianField, path) -> None:
    """Serialize every Gaussian parameter, one vertex per Gaussian."""
    names = _property_names(fld.n_sh_coeffs)
    n = len(fld)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property double {name}" for name in names]
    header.append("end_header")

    dtype = np.dtype([(name, "<f8") for name in names])
    rows = np.zeros(n, dtype=dtype)
    if n:
        rows["x"], rows["y"], rows["z"] = fld.positions.T
        for c in range(3):
            rows[f"f_dc_{c}"] = fld.sh[:, c, 0]
        rest = fld.sh[:, :, 1:].reshape(n, -1)
        for i in range(rest.shape[1]):
            rows[f"f_rest_{i}"] = rest[:, i]
        rows["opacity"] = fld.opacity_logits
        for i in range(3):
            rows[f"scale_{i}"] = fld.log_scales[:, i]
        for i in range(4):
            rows[f"rot_{i}"] = fld.rotations[:, i]

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rows.tobytes())


def read_ply(path) -> GaussianField:
    """Load a snapshot written by write_ply back into a field."""
    path = Path(path)
    if not path.is_file():
        raise InvalidParameter(f"missing PLY file: {path}")
    data = path.read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise InvalidParameter(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n") :]

    n = None
    names = []
    for line in header[1:]:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[0] == "element":
            raise InvalidParameter(f"{path}: unsupported element {parts[1]!r}")
        elif parts[0] == "property":
            if parts[1] != "double":
                raise InvalidParameter(
                    f"{path}: expected double properties, found {parts[1]!r}"
                )
            names.append(parts[2])
        elif parts[0] == "format" and parts[1] != "binary_little_endian":
            raise InvalidParameter(f"{path}: unsupported format {parts[1]!r}")
    if n is None:
        raise InvalidParameter(f"{path}: header has no vertex element")

    n_rest = sum(1 for name in names if name.startswith("f_rest_"))
    if n_rest % 3 != 0:
        raise InvalidParameter(f"{path}: f_rest property count {n_rest} not divisible by 3")
    n_coeffs = n_rest // 3 + 1
    if n_coeffs not in _DEGREE_BY_COEFFS:
        raise InvalidParameter(f"{path}: {n_coeffs} SH coefficients match no degree")
    expected = set(_property_names(n_coeffs))
    if set(names) != expected:
        raise InvalidParameter(f"{path}: unexpected property set")

    dtype = np.dtype([(name, "<f8") for name in names])
    if len(body) != n * dtype.itemsize:
        raise InvalidParameter(
            f"{path}: body holds {len(body)} bytes, expected {n * dtype.itemsize}"
        )
    rows = np.frombuffer(body, dtype=dtype)

    fld = GaussianField(sh_degree=_DEGREE_BY_COEFFS[n_coeffs])
    if n == 0:
        return fld
    positions = np.stack([rows["x"], rows["y"], rows["z"]], axis=1)
    sh = np.zeros((n, 3, n_coeffs))
    for c in range(3):
        sh[:, c, 0] = rows[f"f_dc_{c}"]
    if n_rest:
        rest = np.stack([rows[f"f_rest_{i}"] for i in range(n_rest)], axis=1)
        sh[:, :, 1:] = rest.reshape(n, 3, n_coeffs - 1)
    log_scales = np.stack([rows[f"scale_{i}"] for i in range(3)], axis=1)
    rotations = np.stack([rows[f"rot_{i}"] for i in range(4)], axis=1)
    fld._append(
        positions=positions,
        rotations=rotations,
        log_scales=log_scales,
        opacity_logits=rows["opacity"].copy(),
        sh=sh,
    )
    return fld
