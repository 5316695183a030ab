"""Adaptive-moment optimizer over the field's parameter arrays.

Every parameter class trains at a fixed rate except positions, whose rate
arrives per step from the scheduler (blended by image neighborhood) and is
scaled by the scene extent.  Spherical-harmonic rest coefficients train at
1/20 of the DC rate, matching common splatting practice.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import InvalidParameter, StaleFieldError
from .field import GaussianField
from .rasterize import FieldGrads

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-15

ROTATION_LR = 1e-3
SCALE_LR = 5e-3
OPACITY_LR = 0.05
SH_DC_LR = 2.5e-3
SH_REST_LR = SH_DC_LR / 20.0


@dataclass
class AdamBuffer:
    """First/second moment pair with its own step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param):
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))

    def apply(self, param, grad, lr):
        """One bias-corrected update of ``param`` in place."""
        self.step += 1
        self.m = BETA1 * self.m + (1.0 - BETA1) * grad
        self.v = BETA2 * self.v + (1.0 - BETA2) * grad * grad
        m_hat = self.m / (1.0 - BETA1**self.step)
        v_hat = self.v / (1.0 - BETA2**self.step)
        param -= lr * m_hat / (np.sqrt(v_hat) + EPS)

    def remap(self, keep_mask, n_added):
        """Reorder moments to (kept rows, then zeros for fresh rows)."""
        tail = (self.m.shape[1:]) if self.m.ndim > 1 else ()
        zeros = np.zeros((n_added, *tail))
        self.m = np.concatenate([self.m[keep_mask], zeros], axis=0)
        self.v = np.concatenate([self.v[keep_mask], zeros], axis=0)


@dataclass
class OptimizerState:
    """Moment buffers for every parameter class of one field."""

    positions: AdamBuffer
    rotations: AdamBuffer
    log_scales: AdamBuffer
    opacity_logits: AdamBuffer
    sh: AdamBuffer
    n_rows: int = 0

    def buffers(self):
        return (
            self.positions,
            self.rotations,
            self.log_scales,
            self.opacity_logits,
            self.sh,
        )


class FieldOptimizer:
    """Steps a GaussianField from FieldGrads with per-class rates."""

    def __init__(self, fld: GaussianField, scene_extent=1.0):
        if scene_extent <= 0 or not np.isfinite(scene_extent):
            raise InvalidParameter(
                f"scene_extent must be finite and > 0, got {scene_extent}"
            )
        self.scene_extent = float(scene_extent)
        self.state = OptimizerState(
            positions=AdamBuffer.zeros_like(fld.positions),
            rotations=AdamBuffer.zeros_like(fld.rotations),
            log_scales=AdamBuffer.zeros_like(fld.log_scales),
            opacity_logits=AdamBuffer.zeros_like(fld.opacity_logits),
            sh=AdamBuffer.zeros_like(fld.sh),
            n_rows=len(fld),
        )
        # rest coefficients learn 20x slower than the DC band
        k = fld.sh.shape[2]
        self._sh_lr = np.full((1, 1, k), SH_REST_LR)
        self._sh_lr[0, 0, 0] = SH_DC_LR
        self._generation = fld.generation

    def sync(self, fld: GaussianField, keep_mask, n_added):
        """Track a densify/prune: kept rows keep their moments, new rows
        start cold."""
        for buf in self.state.buffers():
            buf.remap(keep_mask, n_added)
        self.state.n_rows = int(np.count_nonzero(keep_mask)) + int(n_added)
        self._generation = fld.generation
        if self.state.n_rows != len(fld):
            raise InvalidParameter(
                f"remap produced {self.state.n_rows} rows, field has {len(fld)}"
            )

    def step(self, fld: GaussianField, grads: FieldGrads, position_rate):
        """Apply one update; position_rate comes from the lr scheduler."""
        if fld.generation != self._generation:
            raise StaleFieldError(
                "field changed shape since the optimizer last synced"
            )
        if grads.positions.shape != fld.positions.shape:
            raise InvalidParameter("gradient dimensions do not match field")
        st = self.state
        st.positions.apply(
            fld.positions, grads.positions, position_rate * self.scene_extent
        )
        st.rotations.apply(fld.rotations, grads.rotations, ROTATION_LR)
        st.log_scales.apply(fld.log_scales, grads.log_scales, SCALE_LR)
        st.opacity_logits.apply(
            fld.opacity_logits, grads.opacity_logits, OPACITY_LR
        )
        st.sh.apply(fld.sh, grads.sh, self._sh_lr)
