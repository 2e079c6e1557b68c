"""OBJ and PLY reading and writing for triangle meshes.

OBJ: ASCII ``v``/``f`` records with 1-based indices (polygons are fan
triangulated, ``v/vt/vn`` references and negative indices accepted).
PLY: ASCII or binary little-endian, ``vertex`` with float32 x/y/z and
``face`` with a uchar count + int32 index list.
"""

import logging
import os
from typing import List, Optional, Tuple

import numpy as np

from .errors import MeshIOError, ParseError
from .geometry import TriangleMesh

logger = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def detect_format(path: str, fmt: Optional[str] = None) -> str:
    """Resolve ``"obj"`` or ``"ply"`` from an explicit format or the file suffix."""
    name = (fmt or os.path.splitext(str(path))[1].lstrip(".")).lower()
    if name not in ("obj", "ply"):
        raise MeshIOError(f"Unsupported mesh format {name!r} for {path}; expected OBJ or PLY")
    return name


def mesh_read(path: str, fmt: Optional[str] = None) -> TriangleMesh:
    """Read a triangle mesh from an OBJ or PLY file.

    Raises:
        ParseError: Malformed content, with the offending line or byte offset.
        MeshIOError: The file cannot be opened or the format is unsupported.
    """
    kind = detect_format(path, fmt)
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as e:
        raise MeshIOError(f"Cannot read mesh {path}: {e}") from e
    if kind == "obj":
        return _parse_obj(data, str(path))
    return _parse_ply(data, str(path))


def mesh_write(path: str, mesh: TriangleMesh, fmt: Optional[str] = None,
               binary: bool = True) -> None:
    """Write a triangle mesh as OBJ or PLY (binary little-endian unless ``binary=False``)."""
    kind = detect_format(path, fmt)
    if kind == "obj":
        payload = _format_obj(mesh)
    elif binary:
        payload = _format_ply_binary(mesh)
    else:
        payload = _format_ply_ascii(mesh)
    try:
        directory = os.path.dirname(str(path))
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as handle:
            handle.write(payload)
    except OSError as e:
        raise MeshIOError(f"Cannot write mesh {path}: {e}") from e


def _parse_obj(data: bytes, path: str) -> TriangleMesh:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"OBJ is not UTF-8 text ({e})", path=path, offset=e.start) from e

    vertices: List[Tuple[float, float, float]] = []
    faces: List[Tuple[int, int, int]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError(f"vertex record needs 3 coordinates: {raw.strip()!r}",
                                 path=path, line=line_no)
            try:
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError as e:
                raise ParseError(f"bad vertex coordinate in {raw.strip()!r}",
                                 path=path, line=line_no) from e
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError(f"face record needs at least 3 indices: {raw.strip()!r}",
                                 path=path, line=line_no)
            indices = []
            for token in parts[1:]:
                try:
                    idx = int(token.split("/")[0])
                except ValueError as e:
                    raise ParseError(f"bad face index {token!r}", path=path, line=line_no) from e
                # Negative indices are relative to the vertices read so far.
                idx = idx - 1 if idx > 0 else len(vertices) + idx
                if idx < 0 or idx >= len(vertices):
                    raise ParseError(f"face index {token!r} out of range "
                                     f"({len(vertices)} vertices defined)", path=path, line=line_no)
                indices.append(idx)
            for k in range(1, len(indices) - 1):
                faces.append((indices[0], indices[k], indices[k + 1]))
    return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))


def _format_obj(mesh: TriangleMesh) -> bytes:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _ply_header(mesh: TriangleMesh, fmt: str) -> bytes:
    header = [
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    return ("\n".join(header) + "\n").encode("ascii")


def _format_ply_ascii(mesh: TriangleMesh) -> bytes:
    verts = mesh.vertices.astype(np.float32)
    body = [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in verts]
    body += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    return _ply_header(mesh, "ascii") + ("\n".join(body) + "\n").encode("ascii")


def _format_ply_binary(mesh: TriangleMesh) -> bytes:
    faces = np.empty(len(mesh.triangles), dtype=[("n", "<u1"), ("idx", "<i4", (3,))])
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    return (
        _ply_header(mesh, "binary_little_endian")
        + mesh.vertices.astype("<f4").tobytes()
        + faces.tobytes()
    )


def _parse_ply_header(data: bytes, path: str):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("missing 'ply' magic or 'end_header'", path=path, line=1)
    body_start = data.index(b"\n", end) + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # [name, count, [(prop_name, dtype) | (prop_name, count_dtype, item_dtype)]]
    for line_no, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format {raw.strip()!r}", path=path, line=line_no)
            fmt = parts[1]
        elif parts[0] == "element":
            try:
                elements.append([parts[1], int(parts[2]), []])
            except (IndexError, ValueError) as e:
                raise ParseError(f"bad element record {raw.strip()!r}", path=path, line=line_no) from e
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", path=path, line=line_no)
            try:
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            except (IndexError, KeyError) as e:
                raise ParseError(f"bad property record {raw.strip()!r}", path=path, line=line_no) from e
        else:
            raise ParseError(f"unexpected header record {raw.strip()!r}", path=path, line=line_no)
    if fmt is None:
        raise ParseError("PLY header has no format record", path=path, line=1)
    return fmt, elements, body_start, len(lines) + 1


def _parse_ply(data: bytes, path: str) -> TriangleMesh:
    fmt, elements, offset, header_lines = _parse_ply_header(data, path)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise ParseError("PLY has no vertex element", path=path)
    if fmt == "ascii":
        tables = _read_ply_ascii(data[offset:], elements, path, header_lines)
    else:
        tables = _read_ply_binary(data, offset, elements, path)

    vertex_props = tables.get("vertex", {})
    for axis in ("x", "y", "z"):
        if axis not in vertex_props:
            raise ParseError(f"vertex element lacks property {axis!r}", path=path)
    vertices = np.stack([vertex_props[a] for a in ("x", "y", "z")], axis=1).astype(np.float64)
    polygons = tables.get("face", {}).get("__list__", [])
    faces = []
    for poly in polygons:
        for k in range(1, len(poly) - 1):
            faces.append((poly[0], poly[k], poly[k + 1]))
    faces_arr = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if faces_arr.size and (faces_arr.min() < 0 or faces_arr.max() >= len(vertices)):
        raise ParseError(f"face index out of range ({len(vertices)} vertices)", path=path)
    return TriangleMesh(vertices, faces_arr)


def _read_ply_ascii(body: bytes, elements, path: str, first_line: int):
    lines = body.decode("ascii", errors="replace").splitlines()
    cursor = 0
    tables = {}
    for name, count, props in elements:
        scalars = {p[0]: np.empty(count) for p in props if len(p) == 2}
        lists = []
        for row in range(count):
            line_no = first_line + cursor + 1
            if cursor >= len(lines):
                raise ParseError(f"unexpected end of file in element {name!r}", path=path, line=line_no)
            tokens = lines[cursor].split()
            cursor += 1
            pos = 0
            try:
                for prop in props:
                    if len(prop) == 2:
                        scalars[prop[0]][row] = float(tokens[pos])
                        pos += 1
                    else:
                        n = int(tokens[pos])
                        lists.append([int(t) for t in tokens[pos + 1:pos + 1 + n]])
                        if len(lists[-1]) != n:
                            raise IndexError(n)
                        pos += 1 + n
            except (IndexError, ValueError) as e:
                raise ParseError(f"malformed {name} record {lines[cursor - 1].strip()!r}",
                                 path=path, line=line_no) from e
        tables[name] = dict(scalars, __list__=lists)
    return tables


def _read_ply_binary(data: bytes, offset: int, elements, path: str):
    tables = {}
    for name, count, props in elements:
        if all(len(p) == 2 for p in props):
            dtype = np.dtype([(p[0], "<" + p[1]) for p in props])
            size = dtype.itemsize * count
            if offset + size > len(data):
                raise ParseError(f"truncated {name} element", path=path, offset=offset)
            records = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            offset += size
            tables[name] = {p[0]: records[p[0]].astype(np.float64) for p in props}
            tables[name]["__list__"] = []
            continue
        if len(props) == 1:
            tri_dtype = np.dtype([("n", "<" + props[0][1]), ("idx", "<" + props[0][2], (3,))])
            size = tri_dtype.itemsize * count
            if offset + size <= len(data):
                records = np.frombuffer(data, dtype=tri_dtype, count=count, offset=offset)
                if np.all(records["n"] == 3):
                    tables[name] = {"__list__": records["idx"].astype(np.int64).tolist()}
                    offset += size
                    continue
        lists = []
        for _ in range(count):
            for prop in props:
                if len(prop) == 2:
                    offset += np.dtype(prop[1]).itemsize
                    continue
                count_dtype = np.dtype("<" + prop[1])
                item_dtype = np.dtype("<" + prop[2])
                if offset + count_dtype.itemsize > len(data):
                    raise ParseError(f"truncated {name} element", path=path, offset=offset)
                n = int(np.frombuffer(data, dtype=count_dtype, count=1, offset=offset)[0])
                offset += count_dtype.itemsize
                if offset + n * item_dtype.itemsize > len(data):
                    raise ParseError(f"truncated {name} list", path=path, offset=offset)
                items = np.frombuffer(data, dtype=item_dtype, count=n, offset=offset)
                offset += n * item_dtype.itemsize
                lists.append(items.astype(np.int64).tolist())
        tables[name] = {"__list__": lists}
    return tables
