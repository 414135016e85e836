"""Synthetic shapes and motion data for desk-scale experiments and tests.

The template is a lumpy torus; "poses" are nonlinear bends and twists of it
and "identities" are smooth anisotropic reshapes. Running this module writes
a complete dataset directory::

    python -m besa.synthetic OUTDIR
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .mesh import TriMesh, save_mesh


def torus(n_major=20, n_minor=20, major=1.0, minor=0.35, lumps=True, scale=1.0):
    """Closed torus grid with ``n_major * n_minor`` vertices.

    With ``lumps`` the tube radius varies around the ring so that the shape
    has no continuous symmetry.
    """
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    U, Vv = np.meshgrid(u, v, indexing="ij")
    r = np.full_like(U, minor)
    R = np.full_like(U, major)
    if lumps:
        r = minor * (1 + 0.25 * np.cos(U) + 0.12 * np.sin(2 * U + 0.4))
        R = major * (1 + 0.15 * np.sin(U + 0.3))
    x = (R + r * np.cos(Vv)) * np.cos(U)
    y = (R + r * np.cos(Vv)) * np.sin(U) * (0.8 if lumps else 1.0)
    z = r * np.sin(Vv)
    verts = scale * np.stack([x, y, z], -1).reshape(-1, 3)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    i0 = idx
    i1 = np.roll(idx, -1, axis=0)
    i2 = np.roll(idx, -1, axis=1)
    i3 = np.roll(np.roll(idx, -1, axis=0), -1, axis=1)
    faces = np.concatenate([
        np.stack([i0, i1, i3], -1).reshape(-1, 3),
        np.stack([i0, i3, i2], -1).reshape(-1, 3),
    ])
    return TriMesh(verts, faces)


def icosphere(subdivisions=1, radius=1.0):
    from .mesh import subdivide

    t = (1 + 5 ** 0.5) / 2
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    mesh = TriMesh(v / np.linalg.norm(v, axis=1, keepdims=True), f)
    for _ in range(subdivisions):
        mesh = subdivide(mesh)
        mesh = TriMesh(mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True),
                       mesh.faces)
    return TriMesh(radius * mesh.vertices, mesh.faces)


def grid(nx=6, ny=5, size=1.0):
    """Flat triangulated rectangle in the z = 0 plane."""
    xs, ys = np.meshgrid(np.linspace(0, size, nx), np.linspace(0, size * 0.8, ny), indexing="ij")
    verts = np.stack([xs, ys, np.zeros_like(xs)], -1).reshape(-1, 3)
    idx = np.arange(nx * ny).reshape(nx, ny)
    a, b, c, d = idx[:-1, :-1], idx[1:, :-1], idx[:-1, 1:], idx[1:, 1:]
    faces = np.concatenate([
        np.stack([a, b, d], -1).reshape(-1, 3),
        np.stack([a, d, c], -1).reshape(-1, 3),
    ])
    return TriMesh(verts, faces)


def jitter(mesh: TriMesh, amount, rng):
    """Random vertex noise scaled by the mean edge length."""
    e = mesh.vertices[mesh.faces[:, 1]] - mesh.vertices[mesh.faces[:, 0]]
    h = np.linalg.norm(e, axis=1).mean()
    return mesh.with_vertices(mesh.vertices + amount * h * rng.standard_normal(mesh.vertices.shape))


def random_mesh(rng, n_vertices_range=(50, 500)):
    """A random non-degenerate closed mesh with a vertex count in the range."""
    lo, hi = n_vertices_range
    kind = rng.integers(2)
    if kind == 0:
        nm = int(rng.integers(max(5, int(np.sqrt(lo)) + 1), int(np.sqrt(hi)) + 1))
        nn = int(np.clip(rng.integers(5, 25), 5, hi // nm))
        nn = max(nn, -(-lo // nm))
        mesh = torus(nm, nn, minor=0.35, lumps=True)
    else:
        mesh = icosphere(2 if hi >= 162 else 1)
        mesh = mesh.with_vertices(mesh.vertices * rng.uniform(0.6, 1.4, size=3))
    mesh = jitter(mesh, 0.08, rng)
    return mesh.with_vertices(mesh.vertices + rng.normal(size=3))


def smooth_field(mesh: TriMesh, rng, n_modes=4, amplitude=0.1):
    """A smooth random vertex field: low-frequency trig functions of position."""
    x = mesh.vertices
    c = x.mean(0)
    span = np.ptp(x, axis=0).max()
    y = (x - c) / span
    out = np.zeros_like(x)
    for _ in range(n_modes):
        w = rng.normal(size=3) * 2.5
        ph = rng.uniform(0, 2 * np.pi)
        out += np.outer(np.sin(y @ w + ph), rng.normal(size=3))
    return amplitude * span * out / n_modes


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# -- desk-scale training data ------------------------------------------------

TEMPLATE_SCALE = 0.1


def _rot(axis, angle):
    """Rotation matrices about a coordinate axis for an array of angles."""
    c, s = np.cos(angle), np.sin(angle)
    R = np.zeros(np.shape(angle) + (3, 3))
    i, j = [k for k in range(3) if k != axis]
    R[..., axis, axis] = 1.0
    R[..., i, i] = c
    R[..., j, j] = c
    R[..., i, j] = -s
    R[..., j, i] = s
    return R


def pose_deform(vertices, theta, extent):
    """Bend and twist a shape by the pose parameters ``theta`` (4 angles).

    Each vertex is rotated about the shape's center by angles that vary
    smoothly with its position, so the map is nonlinear in ``theta``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    c = vertices.mean(axis=0)
    p = vertices - c
    u = p / extent
    R = (_rot(1, theta[0] * np.tanh(2 * u[:, 0]))
         @ _rot(0, theta[1] * np.tanh(2 * u[:, 1]))
         @ _rot(2, theta[2] * u[:, 0])
         @ _rot(1, theta[3] * np.clip(u[:, 1], 0, None) ** 2))
    return c + np.einsum("vij,vj->vi", R, p)


def identity_deform(vertices, s, lump):
    """Anisotropic reshape: per-axis scaling plus a fixed smooth bulge field."""
    s = np.asarray(s, dtype=np.float64)
    c = vertices.mean(axis=0)
    return c + (vertices - c) * (1.0 + s[:3]) + s[3] * lump


def _smooth_noise(template, rng, amplitude):
    return smooth_field(template, rng, n_modes=6, amplitude=amplitude)


def synthetic_training_data(seed=0, n_sequences=20, n_frames=12, n_shape_paths=15,
                            shape_frames=6, noise=2e-3):
    """In-memory synthetic training set.

    Returns
    -------
    dict with keys ``template`` (TriMesh), ``motions`` (list of (K, V, 3)
    arrays), ``shapes`` (list of (K, V, 3) arrays), ``poses`` and
    ``identities`` (the generating parameters per sequence).
    """
    rng = np.random.default_rng(seed)
    template = torus(scale=TEMPLATE_SCALE)
    V = template.vertices
    extent = np.ptp(V, axis=0).max() / 2
    lump = smooth_field(template, np.random.default_rng(12345), n_modes=3, amplitude=0.15)
    motions, poses, idents = [], [], []
    t = np.linspace(0.0, 1.0, n_frames)[:, None]
    for _ in range(n_sequences):
        ident = rng.uniform(-0.15, 0.15, size=4)
        body = identity_deform(V, ident, lump)
        a, b = rng.uniform(-0.6, 0.6, size=(2, 4))
        wiggle = rng.uniform(-0.15, 0.15, size=4)
        thetas = a + (b - a) * (1 - np.cos(np.pi * t)) / 2 + wiggle * np.sin(2 * np.pi * t)
        frames = np.array([pose_deform(body, th, extent) for th in thetas])
        # registration noise, independent per frame
        frames += np.array([_smooth_noise(template, rng, noise) for _ in range(n_frames)])
        motions.append(frames)
        poses.append(thetas)
        idents.append(ident)
    shapes = []
    s = np.linspace(0.0, 1.0, shape_frames)[:, None]
    for _ in range(n_shape_paths):
        theta = rng.uniform(-0.3, 0.3, size=4)
        ia, ib = rng.uniform(-0.2, 0.2, size=(2, 4))
        frames = np.array([pose_deform(identity_deform(V, i, lump), theta, extent)
                           for i in ia + s * (ib - ia)])
        frames += np.array([_smooth_noise(template, rng, noise) for _ in range(shape_frames)])
        shapes.append(frames)
    return {"template": template, "motions": motions, "shapes": shapes,
            "poses": poses, "identities": idents}


def write_dataset(outdir, seed=0, **kwargs):
    """Write the synthetic training set as OBJ sequences under ``outdir``.

    Layout: ``template.obj``, ``motions/seq_XXX/frame_XXXX.obj`` and
    ``shapes/path_XXX/frame_XXXX.obj``, plus ``targets/`` holding a few
    held-out poses for retrieval and ``dataset.json`` describing the run.
    """
    out = Path(outdir)
    data = synthetic_training_data(seed=seed, **kwargs)
    template = data["template"]
    save_mesh(template, out / "template.obj")
    for kind, key, prefix in (("motions", "motions", "seq"), ("shapes", "shapes", "path")):
        for i, frames in enumerate(data[key]):
            for t, verts in enumerate(frames):
                save_mesh(template.with_vertices(verts),
                          out / kind / f"{prefix}_{i:03d}" / f"frame_{t:04d}.obj")
    held = synthetic_training_data(seed=seed + 1, n_sequences=3, n_frames=2, n_shape_paths=0,
                                   noise=0.0)
    for i, frames in enumerate(held["motions"]):
        save_mesh(template.with_vertices(frames[-1]), out / "targets" / f"target_{i:02d}.obj")
    meta = {
        "seed": seed,
        "template_vertices": template.n_vertices,
        "template_faces": template.n_faces,
        "motion_sequences": len(data["motions"]),
        "shape_paths": len(data["shapes"]),
        "targets": len(held["motions"]),
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=2))
    return meta


def main(argv=None):
    parser = argparse.ArgumentParser(prog="python -m besa.synthetic",
                                     description="Write a desk-scale synthetic dataset.")
    parser.add_argument("outdir")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sequences", type=int, default=20)
    parser.add_argument("--frames", type=int, default=12)
    parser.add_argument("--shape-paths", type=int, default=15)
    args = parser.parse_args(argv)
    meta = write_dataset(args.outdir, seed=args.seed, n_sequences=args.sequences,
                         n_frames=args.frames, n_shape_paths=args.shape_paths)
    print(json.dumps(meta))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
