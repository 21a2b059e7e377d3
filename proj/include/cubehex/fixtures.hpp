#pragma once

#include "cubehex/mesh.hpp"

#include <functional>

namespace cubehex::fixtures
{

/// Tet mesh of the lattice cells selected by `keep`, each cell split into 6 tets around its
/// main diagonal (Kuhn split, conforming across cells). Cells are `spacing` wide and start at
/// `origin`. Unused lattice vertices are dropped.
TetMesh lattice_tet_mesh(const std::array<int, 3>& dims, double spacing, const Vec3& origin,
                         const std::function<bool(int, int, int)>& keep);

/// [0,1]^3 split into n^3 cells.
TetMesh cube(int n);

/// Three unit blocks forming an L in the xy-plane (2x2x1 minus the +x+y block), n cells per
/// block edge.
TetMesh l_shape(int n);

/// [0,1]^3 cube pushed toward the inscribed ball; `roundness` in [0,1] blends cube -> ball.
TetMesh rounded_cube(int n, double roundness);

TetMesh rotated(TetMesh mesh, const Mat3& rotation);

} // namespace cubehex::fixtures
