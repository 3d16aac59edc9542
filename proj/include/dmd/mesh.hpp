#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dmd/types.hpp"

namespace dmd {

using Face = std::array<int, 3>;

/// Vertex positions plus fixed triangle connectivity.
struct TriangleMesh {
    Points vertices;
    std::vector<Face> faces;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }

    /// Throws PreconditionError on out-of-range or repeated indices within a face.
    void validate() const;
};

struct TopologyReport {
    long vertex_count = 0;
    long edge_count = 0;
    long face_count = 0;
    long euler_characteristic = 0;
    std::optional<long> genus; // set only for closed, edge-manifold, connected meshes
    bool closed = false;
    bool edge_manifold = false;
    long connected_components = 0;
};

/// Undirected edges as (lo, hi) vertex pairs, sorted.
std::vector<std::array<int, 2>> unique_edges(const TriangleMesh& mesh);

TopologyReport topology_report(const TriangleMesh& mesh);

/// Closed and edge-manifold.
bool is_watertight(const TriangleMesh& mesh);

inline constexpr int kMaxIcosphereLevel = 8;

/// Icosahedron refined level times by midpoint subdivision with projection back
/// onto the sphere. V = 10 * 4^level + 2.
TriangleMesh icosphere(int level, double radius = 1.0, const Vec3& center = Vec3::Zero());

/// Split every face into four through its edge midpoints. Midpoints are shared
/// between the two faces of an edge. Throws PreconditionError if an edge has more
/// than two incident faces.
TriangleMesh midpoint_subdivide(const TriangleMesh& mesh);

TriangleMesh midpoint_subdivide(const TriangleMesh& mesh, int levels);

/// Unit outward normal of a face (zero vector for degenerate faces).
Vec3 face_normal(const TriangleMesh& mesh, std::size_t face);
double face_area(const TriangleMesh& mesh, std::size_t face);

// OBJ subset: v and f records, 1-based indices, polygons fan-triangulated.

class ObjParseError : public FormatError {
public:
    ObjParseError(long line, const std::string& what)
        : FormatError("line " + std::to_string(line) + ": " + what), line_(line)
    {
    }
    long line() const noexcept { return line_; }

private:
    long line_;
};

TriangleMesh load_obj(const std::string& path);
TriangleMesh parse_obj(const std::string& text);
void store_obj(const TriangleMesh& mesh, const std::string& path);
std::string format_obj(const TriangleMesh& mesh);

} // namespace dmd
