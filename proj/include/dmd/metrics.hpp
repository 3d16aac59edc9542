#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmd/mesh.hpp"
#include "dmd/types.hpp"

namespace dmd {

inline constexpr int kDefaultSampleCount = 200000;

/// Points drawn area-uniformly from a mesh, each with the unit normal of its
/// source face. face/barycentric record the draw so it can be replayed on
/// another embedding of the same connectivity.
struct SampledCloud {
    Points points;
    Points normals;
    std::vector<int> faces;
    std::vector<Vec3> barycentric;
    std::uint64_t seed = 0;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Faces are chosen with probability proportional to area, positions inside a
/// face with the square-root barycentric rule. Deterministic in seed.
SampledCloud sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);

/// Evaluates a recorded draw on the current vertex positions of mesh.
SampledCloud replay_samples(const TriangleMesh& mesh, const SampledCloud& draw);

/// Wraps bare points as a cloud (normals left empty).
SampledCloud make_cloud(Points points);

/// Nearest-neighbour correspondences in both directions between two clouds.
struct Correspondence {
    std::vector<int> a_to_b;        // for every point of a, its nearest point in b
    std::vector<double> a_to_b_sq;  // squared distances
    std::vector<int> b_to_a;
    std::vector<double> b_to_a_sq;
};

Correspondence correspond(const Points& a, const Points& b);

enum class ChamferMode { Distance, SquaredDistance };

/// 0.5 * (mean_a min_b d + mean_b min_a d), d Euclidean or squared.
double chamfer(const SampledCloud& a, const SampledCloud& b, ChamferMode mode = ChamferMode::Distance);
double chamfer(const Correspondence& c, ChamferMode mode = ChamferMode::Distance);

/// Largest nearest-neighbour distance over both directions.
double hausdorff(const SampledCloud& a, const SampledCloud& b);
double hausdorff(const Correspondence& c);

/// 0.5 * (mean_a |n_a . n_nn(a)| + mean_b |n_b . n_nn(b)|). Needs normals on both clouds.
double chamfer_normals(const SampledCloud& a, const SampledCloud& b);
double chamfer_normals(const SampledCloud& a, const SampledCloud& b, const Correspondence& c);

/// Mean squared length of the undirected edges (target length zero).
double edge_loss(const TriangleMesh& mesh);

} // namespace dmd
