#pragma once

#include <cstdint>
#include <vector>

#include "dmd/flow_field.hpp"
#include "dmd/mesh.hpp"

namespace dmd {

/// Binary occupancy on the voxel centres of a grid geometry (voxel (i,j,k) is
/// centred on node (i,j,k)).
struct OccupancyGrid {
    GridGeometry geometry;
    std::vector<std::uint8_t> cells;

    std::size_t occupied() const;
    double voxel_volume() const { return geometry.spacing.prod(); }
    double volume() const { return static_cast<double>(occupied()) * voxel_volume(); }
};

class NotWatertightError : public PreconditionError {
public:
    NotWatertightError() : PreconditionError("mesh is not watertight (closed and edge-manifold required)") {}
};

/// Geometry whose voxels split every voxel of coarse into factor^3 sub-voxels.
GridGeometry supersampled(const GridGeometry& coarse, int factor);

/// Inside/outside by +x ray parity from each voxel centre. Rows whose ray grazes
/// a vertex or edge are retried with a small deterministic jitter (up to 8 times).
/// The result lives on supersampled(geometry, supersample).
OccupancyGrid voxelize(const TriangleMesh& mesh, const GridGeometry& geometry, int supersample = 1);

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const OccupancyGrid& a, const OccupancyGrid& b);

/// 1 - ||A| - |B|| / (|A| + |B|); 1 when both are empty.
double volume_similarity(const OccupancyGrid& a, const OccupancyGrid& b);

} // namespace dmd
