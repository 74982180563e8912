"""
Semantic Inpainting Lab - Scene Generator
手続き的に図形シーンを描き、厳密な属性ベクトルとセグメンテーションマップを付ける
"""
from dataclasses import dataclass
from typing import List

import numpy as np
import torch

from ..errors import RejectedInputError

# 描画時の1シーンあたりの物体数
MIN_OBJECTS = 1
MAX_OBJECTS = 3

# 物体の大きさ（直径・一辺）はキャンバス高さに対する比率で一様に引く
OBJECT_SIZE_RANGE = (0.10, 0.45)
LARGE_OBJECT_FRACTION = 0.3
SMALL_OBJECT_FRACTION = 0.15

# 後から置いた物体が先の物体を隠しすぎないよう、各物体の可視率の下限
MIN_VISIBLE_FRACTION = 0.25
PLACEMENT_TRIES = 30

# 形状の種類。セグメンテーションのラベルは 0=背景, 1=円, 2=正方形, 3=三角形
SHAPE_KINDS = ("circle", "square", "triangle")
SHAPE_LABELS = {kind: index + 1 for index, kind in enumerate(SHAPE_KINDS)}
CLASS_NAMES = ("background",) + SHAPE_KINDS

# PNG往復で値が変わらないよう、色は8bit値で持つ
BACKGROUND_COLORS = (
    ("dark", (26, 26, 31)),
    ("mid", (115, 115, 122)),
    ("light", (219, 219, 209)),
)
OBJECT_COLORS = (
    ("red", (217, 38, 38)),
    ("green", (38, 191, 51)),
    ("blue", (38, 77, 217)),
    ("yellow", (230, 217, 38)),
)

ATTRIBUTE_NAMES = (
    "contains-circle",
    "contains-square",
    "contains-triangle",
    "two-or-more-objects",
    "three-objects",
    "background-dark",
    "background-light",
    "background-mid",
    "any-red-object",
    "any-green-object",
    "any-blue-object",
    "any-yellow-object",
    "large-object-present",
    "small-object-present",
    "object-in-top-half",
    "object-in-bottom-half",
    "object-in-left-half",
    "object-in-right-half",
)
ATTRIBUTE_INDEX = {name: index for index, name in enumerate(ATTRIBUTE_NAMES)}


@dataclass(frozen=True)
class ObjectSpec:
    """1物体分の記述（中心は画素座標、size は直径または一辺）"""

    kind: str
    color: int
    center_y: float
    center_x: float
    size: float


@dataclass(frozen=True)
class SceneSpec:
    background: int
    objects: tuple
    canvas: tuple
    seed: int = 0


@dataclass
class LabeledSample:
    """画像と厳密な属性・セグメンテーションの組

    Attributes:
        image: (3, H, W) float32, [0,1]
        attributes: (N1,) float32, 0/1
        segmentation: (H, W) int64, [0, C)
        spec: 元になった SceneSpec
    """

    image: torch.Tensor
    attributes: torch.Tensor
    segmentation: torch.Tensor
    spec: SceneSpec


def shape_membership(obj: ObjectSpec, height: int, width: int) -> np.ndarray:
    """物体の解析的な領域に画素中心が入るかを H×W の bool で返す"""
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5
    dy = ys - obj.center_y
    dx = xs - obj.center_x
    half = obj.size / 2.0
    if obj.kind == "circle":
        return dy * dy + dx * dx <= half * half
    if obj.kind == "square":
        return (np.abs(dy) <= half) & (np.abs(dx) <= half)
    if obj.kind == "triangle":
        # 上向きの二等辺三角形。頂点 (cy - s/2, cx)、底辺 y = cy + s/2
        depth = dy + half
        return (dy <= half) & (np.abs(dx) <= depth / 2.0)
    raise RejectedInputError(f"UNKNOWN_SHAPE: {obj.kind!r}")


def instance_map(objects, height: int, width: int) -> np.ndarray:
    """各画素の最前面の物体番号（背景は -1）。後の物体ほど手前"""
    instances = np.full((height, width), -1, dtype=np.int64)
    for index, obj in enumerate(objects):
        instances[shape_membership(obj, height, width)] = index
    return instances


def render_scene(spec: SceneSpec):
    """SceneSpec を描画する（ノイズなし・決定的）

    Returns:
        (image_uint8 H×W×3, segmentation H×W int64)
    """
    height, width = spec.canvas
    instances = instance_map(spec.objects, height, width)
    image = np.empty((height, width, 3), dtype=np.uint8)
    image[:, :] = BACKGROUND_COLORS[spec.background][1]
    segmentation = np.zeros((height, width), dtype=np.int64)
    for index, obj in enumerate(spec.objects):
        covered = instances == index
        image[covered] = OBJECT_COLORS[obj.color][1]
        segmentation[covered] = SHAPE_LABELS[obj.kind]
    return image, segmentation


def attributes_from_scene(spec: SceneSpec) -> np.ndarray:
    """属性カタログの述語をシーンから評価し、0/1 ベクトルを返す"""
    height, width = spec.canvas
    objects = spec.objects
    kinds = {obj.kind for obj in objects}
    colors = {OBJECT_COLORS[obj.color][0] for obj in objects}
    background = BACKGROUND_COLORS[spec.background][0]
    values = {
        "contains-circle": "circle" in kinds,
        "contains-square": "square" in kinds,
        "contains-triangle": "triangle" in kinds,
        "two-or-more-objects": len(objects) >= 2,
        "three-objects": len(objects) == 3,
        "background-dark": background == "dark",
        "background-light": background == "light",
        "background-mid": background == "mid",
        "any-red-object": "red" in colors,
        "any-green-object": "green" in colors,
        "any-blue-object": "blue" in colors,
        "any-yellow-object": "yellow" in colors,
        "large-object-present": any(obj.size > LARGE_OBJECT_FRACTION * height for obj in objects),
        "small-object-present": any(obj.size < SMALL_OBJECT_FRACTION * height for obj in objects),
        "object-in-top-half": any(obj.center_y < height / 2 for obj in objects),
        "object-in-bottom-half": any(obj.center_y >= height / 2 for obj in objects),
        "object-in-left-half": any(obj.center_x < width / 2 for obj in objects),
        "object-in-right-half": any(obj.center_x >= width / 2 for obj in objects),
    }
    return np.array([1.0 if values[name] else 0.0 for name in ATTRIBUTE_NAMES], dtype=np.float32)


def _placement_ok(candidate: ObjectSpec, placed: List[ObjectSpec], height: int, width: int) -> bool:
    for other in placed:
        distance = np.hypot(candidate.center_y - other.center_y, candidate.center_x - other.center_x)
        if distance < max(candidate.size, other.size) / 2.0:
            return False
    # 追加後も全物体が一定以上見えていること
    objects = placed + [candidate]
    instances = instance_map(objects, height, width)
    for index, obj in enumerate(objects):
        area = int(shape_membership(obj, height, width).sum())
        visible = int((instances == index).sum())
        if area == 0 or visible < max(1, MIN_VISIBLE_FRACTION * area):
            return False
    return True


def sample_scene_spec(seed: int, canvas: tuple) -> SceneSpec:
    """シードから SceneSpec を引く（決定的）"""
    height, width = canvas
    rng = np.random.default_rng(seed)
    background = int(rng.integers(len(BACKGROUND_COLORS)))
    target = int(rng.integers(MIN_OBJECTS, MAX_OBJECTS + 1))
    placed = []
    for _ in range(target):
        for _attempt in range(PLACEMENT_TRIES):
            size = float(rng.uniform(*OBJECT_SIZE_RANGE)) * min(height, width)
            candidate = ObjectSpec(
                kind=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
                color=int(rng.integers(len(OBJECT_COLORS))),
                center_y=float(rng.uniform(size / 2.0, height - size / 2.0)),
                center_x=float(rng.uniform(size / 2.0, width - size / 2.0)),
                size=size,
            )
            if _placement_ok(candidate, placed, height, width):
                placed.append(candidate)
                break
    return SceneSpec(background=background, objects=tuple(placed), canvas=(height, width), seed=seed)


def check_canvas(canvas: tuple) -> tuple:
    height, width = (int(canvas[0]), int(canvas[1]))
    if height < 32 or width < 32 or height % 4 or width % 4:
        raise RejectedInputError(f"INVALID_CANVAS: {height}x{width}（32以上かつ4の倍数）")
    return height, width


def sample_from_spec(spec: SceneSpec) -> LabeledSample:
    image_u8, segmentation = render_scene(spec)
    return LabeledSample(
        image=torch.from_numpy(image_u8.astype(np.float32) / 255.0).permute(2, 0, 1).contiguous(),
        attributes=torch.from_numpy(attributes_from_scene(spec)),
        segmentation=torch.from_numpy(segmentation),
        spec=spec,
    )


def generate_scene(seed: int, canvas: tuple = (64, 64)) -> LabeledSample:
    """シード1つから LabeledSample を生成する

    Args:
        seed: サンプルのシード（同じシードなら常に同一の結果）
        canvas: (H, W)。32以上かつ4の倍数

    Returns:
        LabeledSample（属性・セグメンテーションは描画結果と厳密に一致）
    """
    spec = sample_scene_spec(seed, check_canvas(canvas))
    return sample_from_spec(spec)
