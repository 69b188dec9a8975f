"""
polydg Package
==============

Discretisation layer: polygonal meshes, quadrature, orthonormal polynomial bases and the SIPDG
bilinear form.

Modules
-------

- **mesh**:
  `PolytopicMesh`, faces, sub-tessellations, partitions, agglomeration and nesting maps between a
  fine and a coarse mesh.

- **quadrature**:
  Collapsed Gauss rules on triangles, composite rules on cells and Gauss-Legendre rules on faces.

- **basis**:
  `DGSpace`, the bounding box scaled Legendre basis orthonormalised per cell.

- **assembly**:
  SIPDG operator, load vector, mass matrices, penalty, lifting operators and energy norms.

- **helpers**:
  Polygon geometry, seed derivation and table printing.

- **errors**:
  The exception hierarchy.

"""
