"""Joint refinement of camera poses, 3-D points, and planes.

The cost couples pinhole reprojection errors with point-plane distances for
associated points.  Cameras move in the 6-D tangent space of rigid motions
(rotation increments retracted through the exponential map), planes in their
minimal azimuth/elevation/offset form.  Each squared term sits under a Huber
robustifier whose scale is the corresponding inlier gate, which also whitens
the two residual families into comparable units.  Steps are accepted only
when the robust cost decreases, so the reported cost sequence never rises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np
from scipy.spatial.transform import Rotation

from .core import DataFormatError, FitConfig, Plane, plane_to_spherical

_MIN_DEPTH = 1e-9


@dataclass
class Bundle:
    """Cameras, landmarks, planes, observations, and point-plane links.

    Rotations/translations map world coordinates into each camera frame;
    intrinsics are (fx, fy, cx, cy) of a pinhole camera.
    """

    rotations: np.ndarray       # (n_cams, 3, 3)
    translations: np.ndarray    # (n_cams, 3)
    intrinsics: np.ndarray      # (4,) fx fy cx cy
    points: np.ndarray          # (n_points, 3)
    planes: np.ndarray          # (n_planes, 4) unit normal + offset
    obs_cam: np.ndarray         # (n_obs,) camera index per observation
    obs_point: np.ndarray       # (n_obs,) point index per observation
    obs_uv: np.ndarray          # (n_obs, 2) pixel measurements
    assoc_point: np.ndarray     # (n_assoc,) point index
    assoc_plane: np.ndarray     # (n_assoc,) plane index

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        self.translations = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        self.intrinsics = np.asarray(self.intrinsics, dtype=float).reshape(4)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.planes = np.asarray(self.planes, dtype=float).reshape(-1, 4)
        self.obs_cam = np.asarray(self.obs_cam, dtype=np.int64).reshape(-1)
        self.obs_point = np.asarray(self.obs_point, dtype=np.int64).reshape(-1)
        self.obs_uv = np.asarray(self.obs_uv, dtype=float).reshape(-1, 2)
        self.assoc_point = np.asarray(self.assoc_point, dtype=np.int64).reshape(-1)
        self.assoc_plane = np.asarray(self.assoc_plane, dtype=np.int64).reshape(-1)
        self.validate()

    def validate(self):
        n_cams, n_points, n_planes = len(self.rotations), len(self.points), len(self.planes)
        if self.translations.shape[0] != n_cams:
            raise ValueError("camera rotation/translation counts differ")
        if self.obs_cam.shape != self.obs_point.shape or self.obs_uv.shape[0] != self.obs_cam.shape[0]:
            raise ValueError("observation arrays are inconsistent")
        if self.obs_cam.size and (self.obs_cam.min() < 0 or self.obs_cam.max() >= n_cams):
            raise ValueError("observation references an unknown camera")
        if self.obs_point.size and (self.obs_point.min() < 0 or self.obs_point.max() >= n_points):
            raise ValueError("observation references an unknown point")
        if self.assoc_point.shape != self.assoc_plane.shape:
            raise ValueError("association arrays are inconsistent")
        if self.assoc_point.size and (self.assoc_point.min() < 0 or self.assoc_point.max() >= n_points):
            raise ValueError("association references an unknown point")
        if self.assoc_plane.size and (self.assoc_plane.min() < 0 or self.assoc_plane.max() >= n_planes):
            raise ValueError("association references an unknown plane")

    def copy(self) -> "Bundle":
        return Bundle(
            self.rotations.copy(), self.translations.copy(), self.intrinsics.copy(),
            self.points.copy(), self.planes.copy(), self.obs_cam.copy(),
            self.obs_point.copy(), self.obs_uv.copy(), self.assoc_point.copy(),
            self.assoc_plane.copy(),
        )


@dataclass
class RefineResult:
    bundle: Bundle
    costs: tuple            # robust cost after each accepted step (index 0 = initial)
    converged: bool
    warning: bool           # True when max_iters ran out before convergence
    iterations: int
    rms_reprojection: float     # px, per residual component
    rms_point_plane: float      # map units


# ---------------------------------------------------------------------------
# Residuals and analytic Jacobians
# ---------------------------------------------------------------------------

def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def project_pinhole(rotation, translation, point, intrinsics) -> np.ndarray:
    """Project a world point into pixel coordinates."""
    fx, fy, cx, cy = intrinsics
    x_cam = rotation @ point + translation
    z = max(float(x_cam[2]), _MIN_DEPTH)
    return np.array([fx * x_cam[0] / z + cx, fy * x_cam[1] / z + cy])


def reprojection_residual(rotation, translation, point, intrinsics, measured_uv):
    """Residual (2,) and Jacobians w.r.t. the camera's local 6-vector
    (rotation increment, translation increment) and the point.

    The rotation increment acts on the left: R <- exp(delta) R.
    """
    fx, fy, cx, cy = intrinsics
    rotated = rotation @ point
    x_cam = rotated + translation
    x, y = float(x_cam[0]), float(x_cam[1])
    z = max(float(x_cam[2]), _MIN_DEPTH)
    residual = np.asarray(measured_uv, dtype=float) - np.array([fx * x / z + cx, fy * y / z + cy])
    proj_jac = np.array([
        [fx / z, 0.0, -fx * x / (z * z)],
        [0.0, fy / z, -fy * y / (z * z)],
    ])
    jac_cam = np.hstack([proj_jac @ _skew(rotated), -proj_jac])
    jac_point = -proj_jac @ rotation
    return residual, jac_cam, jac_point


def plane_point_residual(plane_params, point):
    """Signed plane distance and Jacobians w.r.t. (azimuth, elevation,
    offset) and the point."""
    phi, psi, d = (float(v) for v in plane_params)
    cos_psi, sin_psi = math.cos(psi), math.sin(psi)
    cos_phi, sin_phi = math.cos(phi), math.sin(phi)
    normal = np.array([cos_psi * cos_phi, cos_psi * sin_phi, sin_psi])
    residual = float(normal @ point + d)
    d_phi = np.array([-cos_psi * sin_phi, cos_psi * cos_phi, 0.0])
    d_psi = np.array([-sin_psi * cos_phi, -sin_psi * sin_phi, cos_psi])
    jac_plane = np.array([float(d_phi @ point), float(d_psi @ point), 1.0])
    return residual, jac_plane, normal.copy()


def _plane_params(planes: np.ndarray) -> np.ndarray:
    params = np.empty((planes.shape[0], 3))
    for k, row in enumerate(planes):
        sph = plane_to_spherical(Plane(row[:3], row[3]))
        params[k] = (sph.azimuth, sph.elevation, sph.offset)
    return params


def _planes_from_params(params: np.ndarray) -> np.ndarray:
    phi, psi, d = params[:, 0], params[:, 1], params[:, 2]
    planes = np.column_stack([
        np.cos(psi) * np.cos(phi), np.cos(psi) * np.sin(phi), np.sin(psi), d,
    ])
    return planes


def _huber_cost(z: np.ndarray) -> float:
    z = np.abs(z)
    quad = z <= 1.0
    return float(np.sum(z[quad] ** 2) + np.sum(2.0 * z[~quad] - 1.0))


def _huber_weights(z: np.ndarray) -> np.ndarray:
    z = np.abs(z)
    return np.where(z <= 1.0, 1.0, 1.0 / np.maximum(z, 1e-300))


# ---------------------------------------------------------------------------
# Robust Levenberg-Marquardt
# ---------------------------------------------------------------------------

class _State:
    def __init__(self, bundle: Bundle, fix_cameras: bool):
        self.rotations = bundle.rotations.copy()
        self.translations = bundle.translations.copy()
        self.points = bundle.points.copy()
        self.plane_params = _plane_params(bundle.planes)
        n_cams = len(self.rotations)
        self.free_cams = [] if fix_cameras else list(range(1, n_cams))
        self.cam_col = {c: 6 * i for i, c in enumerate(self.free_cams)}
        self.point_col0 = 6 * len(self.free_cams)
        self.plane_col0 = self.point_col0 + 3 * len(self.points)
        self.n_params = self.plane_col0 + 3 * len(self.plane_params)

    def retract(self, step: np.ndarray) -> "_State":
        out = _State.__new__(_State)
        out.rotations = self.rotations.copy()
        out.translations = self.translations.copy()
        out.points = self.points.copy()
        out.plane_params = self.plane_params.copy()
        out.free_cams = self.free_cams
        out.cam_col = self.cam_col
        out.point_col0 = self.point_col0
        out.plane_col0 = self.plane_col0
        out.n_params = self.n_params
        for cam, col in self.cam_col.items():
            delta_rot = step[col:col + 3]
            delta_t = step[col + 3:col + 6]
            out.rotations[cam] = Rotation.from_rotvec(delta_rot).as_matrix() @ self.rotations[cam]
            out.translations[cam] = self.translations[cam] + delta_t
        out.points = self.points + step[self.point_col0:self.plane_col0].reshape(-1, 3)
        out.plane_params = self.plane_params + step[self.plane_col0:].reshape(-1, 3)
        return out


def _evaluate(state: _State, bundle: Bundle, repro_scale: float, plane_scale: float,
              with_jacobian: bool):
    """Whitened residual vector, robust block magnitudes, and (optionally)
    the weighted Jacobian/gradient pieces."""
    n_obs = bundle.obs_cam.size
    n_assoc = bundle.assoc_point.size
    n_rows = 2 * n_obs + n_assoc
    residuals = np.empty(n_rows)
    block_z = np.empty(n_obs + n_assoc)
    jac = np.zeros((n_rows, state.n_params)) if with_jacobian else None

    for i in range(n_obs):
        cam = int(bundle.obs_cam[i])
        pt = int(bundle.obs_point[i])
        r, jac_cam, jac_point = reprojection_residual(
            state.rotations[cam], state.translations[cam], state.points[pt],
            bundle.intrinsics, bundle.obs_uv[i])
        r = r / repro_scale
        rows = slice(2 * i, 2 * i + 2)
        residuals[rows] = r
        block_z[i] = np.linalg.norm(r)
        if with_jacobian:
            if cam in state.cam_col:
                col = state.cam_col[cam]
                jac[rows, col:col + 6] = jac_cam / repro_scale
            pcol = state.point_col0 + 3 * pt
            jac[rows, pcol:pcol + 3] = jac_point / repro_scale

    for a in range(n_assoc):
        pt = int(bundle.assoc_point[a])
        pl = int(bundle.assoc_plane[a])
        s, jac_plane, normal = plane_point_residual(state.plane_params[pl], state.points[pt])
        row = 2 * n_obs + a
        residuals[row] = s / plane_scale
        block_z[n_obs + a] = abs(s) / plane_scale
        if with_jacobian:
            pcol = state.point_col0 + 3 * pt
            jac[row, pcol:pcol + 3] = normal / plane_scale
            kcol = state.plane_col0 + 3 * pl
            jac[row, kcol:kcol + 3] = jac_plane / plane_scale

    cost = _huber_cost(block_z)
    if not with_jacobian:
        return cost, residuals, block_z, None
    weights = _huber_weights(block_z)
    row_w = np.empty(n_rows)
    row_w[:2 * n_obs] = np.repeat(weights[:n_obs], 2)
    row_w[2 * n_obs:] = weights[n_obs:]
    sqrt_w = np.sqrt(row_w)
    return cost, residuals, block_z, (jac * sqrt_w[:, None], residuals * sqrt_w)


def joint_refine(bundle: Bundle, cfg: FitConfig, max_iters: int = 50,
                 fix_cameras: bool = False) -> RefineResult:
    """Minimize the robust reprojection + point-plane cost.

    The first camera is always held fixed for gauge (all cameras when
    `fix_cameras`).  Rank-deficient normal equations are handled by raising
    the damping, never by failing; if `max_iters` runs out before the cost
    settles, the best iterate comes back with the warning flag set.
    """
    repro_scale = cfg.ste_threshold
    plane_scale = cfg.distance_threshold
    state = _State(bundle, fix_cameras)
    cost = _evaluate(state, bundle, repro_scale, plane_scale, False)[0]
    costs = [cost]
    damping = 1e-6
    converged = state.n_params == 0
    iterations = 0

    while iterations < max_iters and not converged:
        iterations += 1
        _, _, _, weighted = _evaluate(state, bundle, repro_scale, plane_scale, True)
        jac_w, res_w = weighted
        gradient = jac_w.T @ res_w
        if np.max(np.abs(gradient)) < 1e-10:
            converged = True
            break
        hessian = jac_w.T @ jac_w
        diag = np.diag(hessian).copy()
        diag[diag < 1e-12] = 1e-12
        accepted = False
        while damping <= 1e14:
            try:
                step = np.linalg.solve(hessian + damping * np.diag(diag), -gradient)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            candidate = state.retract(step)
            new_cost = _evaluate(candidate, bundle, repro_scale, plane_scale, False)[0]
            if new_cost < cost:
                relative_drop = (cost - new_cost) / max(cost, 1e-300)
                state = candidate
                cost = new_cost
                costs.append(cost)
                damping = max(damping / 3.0, 1e-12)
                accepted = True
                if relative_drop < 1e-10:
                    converged = True
                break
            damping *= 10.0
        if not accepted:
            converged = True  # no descent direction left at any damping
            break

    refined = bundle.copy()
    refined.rotations = state.rotations
    refined.translations = state.translations
    refined.points = state.points
    refined.planes = _planes_from_params(state.plane_params)

    _, residuals, _, _ = _evaluate(state, bundle, 1.0, 1.0, False)
    n_obs = bundle.obs_cam.size
    repro = residuals[:2 * n_obs]
    plane = residuals[2 * n_obs:]
    rms_repro = float(np.sqrt(np.mean(repro ** 2))) if repro.size else 0.0
    rms_plane = float(np.sqrt(np.mean(plane ** 2))) if plane.size else 0.0
    return RefineResult(
        bundle=refined, costs=tuple(costs), converged=converged,
        warning=not converged, iterations=iterations,
        rms_reprojection=rms_repro, rms_point_plane=rms_plane,
    )


# ---------------------------------------------------------------------------
# Plain-text serialization
# ---------------------------------------------------------------------------

def save_bundle(bundle: Bundle, stream: TextIO) -> None:
    """Write the bundle in the whitespace-separated section format."""
    stream.write(f"cameras {len(bundle.rotations)}\n")
    for rot, t in zip(bundle.rotations, bundle.translations):
        q = Rotation.from_matrix(rot).as_quat(canonical=True)  # x y z w
        stream.write(f"{q[3]:.17g} {q[0]:.17g} {q[1]:.17g} {q[2]:.17g} "
                     f"{t[0]:.17g} {t[1]:.17g} {t[2]:.17g}\n")
    stream.write("intrinsics 1\n")
    stream.write(" ".join(f"{v:.17g}" for v in bundle.intrinsics) + "\n")
    stream.write(f"points {len(bundle.points)}\n")
    for p in bundle.points:
        stream.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    stream.write(f"planes {len(bundle.planes)}\n")
    for row in bundle.planes:
        stream.write(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g} {row[3]:.17g}\n")
    stream.write(f"observations {len(bundle.obs_cam)}\n")
    for cam, pt, uv in zip(bundle.obs_cam, bundle.obs_point, bundle.obs_uv):
        stream.write(f"{cam} {pt} {uv[0]:.17g} {uv[1]:.17g}\n")
    stream.write(f"associations {len(bundle.assoc_point)}\n")
    for pt, pl in zip(bundle.assoc_point, bundle.assoc_plane):
        stream.write(f"{pt} {pl}\n")


def _read_section(lines, lineno, name, n_fields, count=None):
    if lineno >= len(lines):
        raise DataFormatError(f"line {lineno + 1}: expected '{name} <count>' header, found end of file")
    header = lines[lineno].split()
    if len(header) != 2 or header[0] != name:
        raise DataFormatError(f"line {lineno + 1}: expected '{name} <count>' header, got {lines[lineno]!r}")
    try:
        n = int(header[1])
    except ValueError as exc:
        raise DataFormatError(f"line {lineno + 1}: bad count in {name} header") from exc
    rows = []
    for i in range(n):
        idx = lineno + 1 + i
        if idx >= len(lines):
            raise DataFormatError(f"line {idx + 1}: {name} section ends early")
        parts = lines[idx].split()
        if len(parts) != n_fields:
            raise DataFormatError(f"line {idx + 1}: expected {n_fields} fields, got {len(parts)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise DataFormatError(f"line {idx + 1}: non-numeric field") from exc
    return np.array(rows, dtype=float).reshape(n, n_fields), lineno + 1 + n


def load_bundle(stream: TextIO) -> Bundle:
    """Read a bundle written by :func:`save_bundle`."""
    lines = [ln.strip() for ln in stream.read().splitlines() if ln.strip()]
    cams, pos = _read_section(lines, 0, "cameras", 7)
    intr, pos = _read_section(lines, pos, "intrinsics", 4)
    points, pos = _read_section(lines, pos, "points", 3)
    planes, pos = _read_section(lines, pos, "planes", 4)
    obs, pos = _read_section(lines, pos, "observations", 4)
    assoc, pos = _read_section(lines, pos, "associations", 2)
    if pos != len(lines):
        raise DataFormatError(f"line {pos + 1}: trailing content after associations section")
    rotations = np.stack([
        Rotation.from_quat([row[1], row[2], row[3], row[0]]).as_matrix() for row in cams
    ]) if len(cams) else np.empty((0, 3, 3))
    translations = cams[:, 4:7] if len(cams) else np.empty((0, 3))
    return Bundle(
        rotations=rotations, translations=translations, intrinsics=intr[0],
        points=points, planes=planes,
        obs_cam=obs[:, 0].astype(np.int64), obs_point=obs[:, 1].astype(np.int64),
        obs_uv=obs[:, 2:4],
        assoc_point=assoc[:, 0].astype(np.int64), assoc_plane=assoc[:, 1].astype(np.int64),
    )
