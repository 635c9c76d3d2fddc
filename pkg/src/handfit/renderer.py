"""Differentiable mesh rendering: shading, z-buffer rasterization, images.

Hard coverage: a pass without gradients finds, per pixel center, the
nearest covering triangle (depth ties broken by the lower face index).
A second, differentiable pass recomputes barycentric weights and
interpolates shaded vertex colors and depth for the covered pixels, so
gradients are exact for colors/lighting and flow to vertex positions
through the interior barycentric weights; coverage changes carry no
gradient. Background is black, depth is +inf off the silhouette.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .camera import MIN_DEPTH, Intrinsics, project
from .exceptions import DegenerateDepthError, DegenerateGeometryError, DegenerateLightError
from .hand_model import HandGeometry

# lighting vector layout
L_AMBIENT = 0
L_AMBIENT_COLOR = slice(1, 4)
L_DIRECT = 4
L_DIRECT_COLOR = slice(5, 8)
L_DIRECTION = slice(8, 11)

_PAIR_BUDGET = 2_000_000  # max candidate (pixel, face) pairs per chunk


@dataclass
class Appearance:
    """Per-vertex RGB plus the 11 lighting scalars.

    Lighting layout: [ambient, ambient_rgb x3, directional, directional_rgb x3,
    direction x3].
    """

    colors: torch.Tensor    # (778, 3)
    lighting: torch.Tensor  # (11,)

    def __post_init__(self):
        if self.colors.ndim != 2 or self.colors.shape[1] != 3:
            raise ValueError(f"colors must be (N, 3), got {tuple(self.colors.shape)}")
        if tuple(self.lighting.shape) != (11,):
            raise ValueError("lighting must hold exactly 11 scalars")
        if not bool(torch.isfinite(self.colors).all()):
            raise ValueError("colors must be finite")

    @staticmethod
    def build(colors, ambient=0.8, ambient_color=(1.0, 1.0, 1.0),
              directional=0.8, directional_color=(1.0, 1.0, 1.0),
              direction=(0.0, 0.0, -1.0)) -> "Appearance":
        lighting = torch.tensor([ambient, *ambient_color, directional,
                                 *directional_color, *direction], dtype=torch.float64)
        return Appearance(colors=colors, lighting=lighting)


@dataclass
class RenderOutput:
    color: torch.Tensor       # (H, W, 3) in [0, 1]
    silhouette: torch.Tensor  # (H, W) {0, 1}
    depth: torch.Tensor       # (H, W) meters, +inf off-silhouette
    face_index: torch.Tensor | None = None  # (H, W) int64, -1 where empty


def vertex_normals(vertices: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    """Area-weighted vertex normals; orientation follows the face winding.

    Face contributions accumulate in a canonical order so the result is
    bitwise invariant to face ordering.
    """
    n = vertices.shape[0]
    order = torch.argsort(faces[:, 0] * n * n + faces[:, 1] * n + faces[:, 2])
    faces = faces[order]
    tri = vertices[faces]
    fn = torch.linalg.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    acc = torch.zeros_like(vertices)
    for c in range(3):
        acc = acc.index_add(0, faces[:, c], fn)
    norms = torch.linalg.norm(acc, dim=1)
    if bool((norms < 1e-14).any()):
        bad = int(torch.argmin(norms))
        raise DegenerateGeometryError(f"vertex {bad} has a zero-area face star")
    return acc / norms.unsqueeze(1)


def shade_vertices(colors: torch.Tensor, normals: torch.Tensor,
                   lighting: torch.Tensor) -> torch.Tensor:
    """Ambient plus Lambertian directional shading, clamped to [0, 1]."""
    dir_norm = torch.linalg.norm(lighting[L_DIRECTION])
    if float(dir_norm.detach()) < 1e-9:
        raise DegenerateLightError("directional light direction has near-zero norm")
    n_dir = lighting[L_DIRECTION] / dir_norm
    lambert = torch.clamp(normals @ n_dir, min=0.0)
    light = (lighting[L_AMBIENT] * lighting[L_AMBIENT_COLOR]
             + lighting[L_DIRECT] * lighting[L_DIRECT_COLOR] * lambert.unsqueeze(1))
    return torch.clamp(colors * light, 0.0, 1.0)


def _chunk_faces(counts: torch.Tensor) -> list[torch.Tensor]:
    """Split face indices into chunks of bounded candidate-pair count."""
    order = torch.arange(counts.shape[0])
    chunks, start, budget = [], 0, 0
    for i in range(counts.shape[0]):
        budget += int(counts[i])
        if budget > _PAIR_BUDGET and i > start:
            chunks.append(order[start:i])
            start, budget = i, int(counts[i])
    chunks.append(order[start:])
    return chunks


def _candidate_pairs(face_ids, x0, y0, w, h):
    counts = (w * h)[face_ids]
    total = int(counts.sum())
    pair_face = torch.repeat_interleave(face_ids, counts)
    offsets = torch.cat([torch.zeros(1, dtype=torch.int64), counts.cumsum(0)[:-1]])
    k = torch.arange(total) - torch.repeat_interleave(offsets, counts)
    px = x0[pair_face] + k % w[pair_face]
    py = y0[pair_face] + k // w[pair_face]
    return pair_face, px, py


def _edge_weights(uv, faces_idx, qx, qy):
    a, b, c = uv[faces_idx[:, 0]], uv[faces_idx[:, 1]], uv[faces_idx[:, 2]]
    w0 = (b[:, 0] - qx) * (c[:, 1] - qy) - (b[:, 1] - qy) * (c[:, 0] - qx)
    w1 = (c[:, 0] - qx) * (a[:, 1] - qy) - (c[:, 1] - qy) * (a[:, 0] - qx)
    w2 = (a[:, 0] - qx) * (b[:, 1] - qy) - (a[:, 1] - qy) * (b[:, 0] - qx)
    return w0, w1, w2


def rasterize(vertices: torch.Tensor, faces: torch.Tensor, shaded_colors: torch.Tensor,
              K: Intrinsics, size: tuple[int, int] | None = None) -> RenderOutput:
    """Z-buffered triangle fill at pixel centers.

    Colors interpolate with screen-space barycentric weights; depth
    interpolates 1/z (exact for a perspective camera). A mesh that
    projects fully off-screen yields an empty silhouette, not an error.
    """
    H, W = size if size is not None else (K.height, K.width)
    dtype = vertices.dtype
    z = vertices[:, 2]
    if bool((z.detach() <= MIN_DEPTH).any()):
        bad = int(torch.argmin(z.detach()))
        raise DegenerateDepthError(f"vertex {bad} at depth {float(z[bad].detach()):.3g} m")
    uv = project(vertices, K)
    inv_z = 1.0 / z

    with torch.no_grad():
        tri_u, tri_v = uv[:, 0][faces], uv[:, 1][faces]
        x0 = torch.ceil(tri_u.min(dim=1).values).clamp(0, W - 1).to(torch.int64)
        x1 = torch.floor(tri_u.max(dim=1).values).clamp(0, W - 1).to(torch.int64)
        y0 = torch.ceil(tri_v.min(dim=1).values).clamp(0, H - 1).to(torch.int64)
        y1 = torch.floor(tri_v.max(dim=1).values).clamp(0, H - 1).to(torch.int64)
        on_screen = ((tri_u.max(dim=1).values >= 0) & (tri_u.min(dim=1).values <= W - 1)
                     & (tri_v.max(dim=1).values >= 0) & (tri_v.min(dim=1).values <= H - 1))
        w = torch.clamp(x1 - x0 + 1, min=0) * on_screen
        h = torch.clamp(y1 - y0 + 1, min=0) * on_screen
        counts = w * h
        live = torch.nonzero(counts > 0).squeeze(1)

        zbuf = torch.full((H * W,), float("inf"), dtype=dtype)

        def pair_depths(chunk):
            pair_face, px, py = _candidate_pairs(chunk, x0, y0, w, h)
            fi = faces[pair_face]
            qx, qy = px.to(dtype), py.to(dtype)
            w0, w1, w2 = _edge_weights(uv, fi, qx, qy)
            area = w0 + w1 + w2
            inside = (((w0 >= 0) & (w1 >= 0) & (w2 >= 0))
                      | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))) & (area.abs() > 1e-12)
            depth = area / (w0 * inv_z[fi[:, 0]] + w1 * inv_z[fi[:, 1]] + w2 * inv_z[fi[:, 2]])
            return pair_face, px, py, depth, inside

        chunks = _chunk_faces(counts[live]) if live.numel() else []
        chunks = [live[c] for c in chunks]
        for chunk in chunks:
            pair_face, px, py, depth, inside = pair_depths(chunk)
            pix = (py * W + px)[inside]
            zbuf.scatter_reduce_(0, pix, depth[inside], reduce="amin")

        fbuf = torch.full((H * W,), faces.shape[0], dtype=torch.int64)
        for chunk in chunks:
            pair_face, px, py, depth, inside = pair_depths(chunk)
            pix = py * W + px
            winner = inside & (depth == zbuf[pix])
            fbuf.scatter_reduce_(0, pix[winner], pair_face[winner], reduce="amin")

        covered = torch.nonzero(fbuf < faces.shape[0]).squeeze(1)

    color = torch.zeros(H, W, 3, dtype=dtype)
    sil = torch.zeros(H, W, dtype=dtype)
    depth_img = torch.full((H, W), float("inf"), dtype=dtype)
    face_img = torch.where(fbuf < faces.shape[0], fbuf, torch.tensor(-1)).reshape(H, W)
    if covered.numel() == 0:
        return RenderOutput(color=color, silhouette=sil, depth=depth_img, face_index=face_img)

    face_px = fbuf[covered]
    fi = faces[face_px]
    py, px = covered // W, covered % W
    qx, qy = px.to(dtype), py.to(dtype)
    w0, w1, w2 = _edge_weights(uv, fi, qx, qy)
    area = w0 + w1 + w2
    lam = torch.stack([w0, w1, w2], dim=1) / area.unsqueeze(1)
    pix_color = (lam.unsqueeze(2) * shaded_colors[fi]).sum(dim=1)
    pix_depth = 1.0 / (lam * inv_z[fi]).sum(dim=1)

    color = color.index_put((py, px), pix_color)
    depth_img = depth_img.index_put((py, px), pix_depth)
    sil[py, px] = 1.0
    return RenderOutput(color=color, silhouette=sil, depth=depth_img, face_index=face_img)


def render(geometry: HandGeometry, appearance: Appearance, faces: torch.Tensor,
           K: Intrinsics, size: tuple[int, int] | None = None) -> RenderOutput:
    """Shade the posed mesh and rasterize it: the full image-formation path."""
    normals = vertex_normals(geometry.vertices, faces)
    shaded = shade_vertices(appearance.colors, normals, appearance.lighting)
    return rasterize(geometry.vertices, faces, shaded, K, size)
