"""JSON files for models, measurement sets, states and fit reports.

Floats are written with Python's shortest round-trip repr, so every value
reads back bit-identical.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..geometry import Pose
from ..model import KeypointAttachment, KinematicTree, ModelState, validate_tree
from ..residuals import CameraIntrinsics, JointPrior, Measurement, ObjectiveConfig

WEIGHT_KEYS = ("w_3d", "w_pof", "w_pose", "w_joint", "w_shape")


class FormatError(ValueError):
    """A JSON document does not follow the expected schema."""


def _write(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _read(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    return doc


def _field(doc, key, where):
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise FormatError(f"{where}: missing {key!r}") from None


def _array(value, shape, where) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise FormatError(f"{where}: not numeric") from None
    if arr.size == 0 and 0 in shape:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise FormatError(f"{where}: expected shape {shape}, got {arr.shape}")
    return arr


# ---------------------------------------------------------------- model


def model_to_dict(tree: KinematicTree) -> dict:
    """Joint rows only: the root has no offset, so ``shape_basis`` is K x 3 x P."""
    return {
        "num_joints": tree.K,
        "num_shape_params": tree.P,
        "parents": [int(p) for p in tree.parents],
        "shape_basis": tree.S[1:].tolist(),
        "offsets": tree.l[1:].tolist(),
        "keypoints": [
            {"id": int(a.id), "body_part": int(a.body_part), "V": np.asarray(a.V).tolist(), "v0": np.asarray(a.v0).tolist()}
            for a in tree.attachments
        ],
    }


def model_from_dict(doc: dict) -> KinematicTree:
    K = int(_field(doc, "num_joints", "model"))
    P = int(_field(doc, "num_shape_params", "model"))
    parents = np.array(_field(doc, "parents", "model"), dtype=np.int64)
    if parents.shape != (K + 1,):
        raise FormatError(f"model: parents must list {K + 1} entries")
    S = np.zeros((K + 1, 3, P))
    l = np.zeros((K + 1, 3))
    S[1:] = _array(_field(doc, "shape_basis", "model"), (K, 3, P), "model.shape_basis")
    l[1:] = _array(_field(doc, "offsets", "model"), (K, 3), "model.offsets")
    attachments = []
    for n, kp in enumerate(_field(doc, "keypoints", "model")):
        where = f"model.keypoints[{n}]"
        attachments.append(
            KeypointAttachment(
                int(_field(kp, "id", where)),
                int(_field(kp, "body_part", where)),
                _array(_field(kp, "V", where), (3, P), where + ".V"),
                _array(_field(kp, "v0", where), (3,), where + ".v0"),
            )
        )
    tree = KinematicTree(parents, S, l, attachments)
    validate_tree(tree)
    return tree


def save_model(path, tree: KinematicTree) -> None:
    _write(path, model_to_dict(tree))


def load_model(path) -> KinematicTree:
    return model_from_dict(_read(path))


# ---------------------------------------------------------------- measurements


def _pose_dict(T: Pose) -> dict:
    return {"R": np.asarray(T.R).tolist(), "t": np.asarray(T.t).tolist()}


def _pose_from(doc, where) -> Pose:
    return Pose(_array(_field(doc, "R", where), (3, 3), where + ".R"), _array(_field(doc, "t", where), (3,), where + ".t"))


def measurements_to_dict(measurements, camera: CameraIntrinsics, config: ObjectiveConfig) -> dict:
    return {
        "camera": {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy},
        "measurements": [
            {"kind": m.kind, "keypoint": int(m.keypoint), "value": m.value.tolist(), "weight": float(m.weight)}
            for m in measurements
        ],
        "priors": {
            "weights": {k: float(getattr(config, k)) for k in WEIGHT_KEYS},
            "pose": [{"part": int(i), **_pose_dict(T)} for i, T in sorted(config.pose_priors.items())],
            "joint": [
                {"joint": int(i), "mean": np.asarray(jp.mean).tolist(), "weight": np.asarray(jp.weight).tolist()}
                for i, jp in sorted(config.joint_priors.items())
            ],
        },
    }


def measurements_from_dict(doc: dict):
    """Returns ``(measurements, camera, objective config)``."""
    cam = _field(doc, "camera", "measurements")
    try:
        camera = CameraIntrinsics(*(float(_field(cam, k, "camera")) for k in ("fx", "fy", "cx", "cy")))
    except ValueError as exc:
        raise FormatError(f"camera: {exc}") from None
    measurements = []
    for n, m in enumerate(_field(doc, "measurements", "measurements")):
        where = f"measurements[{n}]"
        try:
            measurements.append(
                Measurement(
                    str(_field(m, "kind", where)),
                    int(_field(m, "keypoint", where)),
                    np.array(_field(m, "value", where), dtype=float),
                    float(m.get("weight", 1.0)),
                )
            )
        except (ValueError, TypeError) as exc:
            raise FormatError(f"{where}: {exc}") from None
    priors = doc.get("priors") or {}
    weights = priors.get("weights", {})
    unknown = set(weights) - set(WEIGHT_KEYS)
    if unknown:
        raise FormatError(f"priors.weights: unknown keys {sorted(unknown)}")
    config = ObjectiveConfig(**{k: float(v) for k, v in weights.items()})
    for n, p in enumerate(priors.get("pose", [])):
        where = f"priors.pose[{n}]"
        config.pose_priors[int(_field(p, "part", where))] = _pose_from(p, where)
    for n, p in enumerate(priors.get("joint", [])):
        where = f"priors.joint[{n}]"
        config.joint_priors[int(_field(p, "joint", where))] = JointPrior(
            _array(_field(p, "mean", where), (3, 3), where + ".mean"),
            _array(p.get("weight", np.eye(3).tolist()), (3, 3), where + ".weight"),
        )
    return measurements, camera, config


def save_measurements(path, measurements, camera, config) -> None:
    _write(path, measurements_to_dict(measurements, camera, config))


def load_measurements(path):
    return measurements_from_dict(_read(path))


# ---------------------------------------------------------------- states and results


def state_to_dict(state: ModelState) -> dict:
    return {"root": _pose_dict(state.root), "joints": state.joints.tolist(), "shape": state.shape.tolist()}


def state_from_dict(doc: dict, K: int | None = None, P: int | None = None) -> ModelState:
    root = _pose_from(_field(doc, "root", "state"), "state.root")
    joints = np.array(_field(doc, "joints", "state"), dtype=float)
    shape = np.array(_field(doc, "shape", "state"), dtype=float)
    if joints.size == 0:
        joints = joints.reshape(0, 3, 3)
    if joints.ndim != 3 or joints.shape[1:] != (3, 3) or shape.ndim != 1:
        raise FormatError("state: joints must be K x 3 x 3 and shape a vector")
    if (K is not None and joints.shape[0] != K) or (P is not None and shape.shape[0] != P):
        raise FormatError(f"state does not match a model with {K} joints and {P} shape parameters")
    return ModelState(root, joints, shape)


def save_state(path, state: ModelState, **extra) -> None:
    _write(path, {**state_to_dict(state), **extra})


def load_state(path, K=None, P=None) -> ModelState:
    return state_from_dict(_read(path), K, P)


def save_report(path, report: dict) -> None:
    _write(path, report)
