#include "dmd/voxelize.hpp"

#include <algorithm>
#include <cmath>

namespace dmd {

std::size_t OccupancyGrid::occupied() const
{
    std::size_t n = 0;
    for (auto c : cells)
        n += c ? 1 : 0;
    return n;
}

GridGeometry supersampled(const GridGeometry& coarse, int factor)
{
    if (factor < 1)
        throw PreconditionError("supersample factor must be >= 1");
    GridGeometry fine;
    fine.dims = coarse.dims * factor;
    fine.spacing = coarse.spacing / factor;
    fine.origin = coarse.origin + (0.5 / factor - 0.5) * coarse.spacing;
    return fine;
}

namespace {

constexpr int kMaxJitterRetries = 8;
constexpr double kBarycentricTolerance = 1e-10;

enum class RayHit { Miss, Hit, Degenerate };

struct ProjectedTriangle {
    Eigen::Vector2d a, b, c; // (y, z)
    Vec3 x;                  // x coordinate of a, b, c
    double twice_area = 0;
};

double cross2(const Eigen::Vector2d& u, const Eigen::Vector2d& v) { return u[0] * v[1] - u[1] * v[0]; }

RayHit cast(const ProjectedTriangle& t, const Eigen::Vector2d& p, double& hit_x)
{
    if (t.twice_area == 0)
        return RayHit::Miss; // parallel to the ray; neighbours report the grazing
    const double wc = cross2(t.b - t.a, p - t.a) / t.twice_area;
    const double wa = cross2(t.c - t.b, p - t.b) / t.twice_area;
    const double wb = cross2(t.a - t.c, p - t.c) / t.twice_area;
    if (wa < -kBarycentricTolerance || wb < -kBarycentricTolerance || wc < -kBarycentricTolerance)
        return RayHit::Miss;
    if (wa <= kBarycentricTolerance || wb <= kBarycentricTolerance || wc <= kBarycentricTolerance)
        return RayHit::Degenerate;
    hit_x = wa * t.x[0] + wb * t.x[1] + wc * t.x[2];
    return RayHit::Hit;
}

} // namespace

OccupancyGrid voxelize(const TriangleMesh& mesh, const GridGeometry& geometry, int supersample)
{
    geometry.validate();
    mesh.validate();
    if (!is_watertight(mesh))
        throw NotWatertightError();

    OccupancyGrid grid;
    grid.geometry = supersampled(geometry, supersample);
    const GridGeometry& g = grid.geometry;
    grid.cells.assign(g.node_count(), 0);

    std::vector<ProjectedTriangle> tris(mesh.faces.size());
    const int ny = g.dims[1], nz = g.dims[2];
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(ny) * nz);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const Face& face = mesh.faces[f];
        ProjectedTriangle& t = tris[f];
        const Vec3& a = mesh.vertices[face[0]];
        const Vec3& b = mesh.vertices[face[1]];
        const Vec3& c = mesh.vertices[face[2]];
        t.a = {a[1], a[2]};
        t.b = {b[1], b[2]};
        t.c = {c[1], c[2]};
        t.x = Vec3(a[0], b[0], c[0]);
        t.twice_area = cross2(t.b - t.a, t.c - t.a);
        // rows whose (jittered) ray can reach the projected bounding box
        const double ylo = std::min({a[1], b[1], c[1]}), yhi = std::max({a[1], b[1], c[1]});
        const double zlo = std::min({a[2], b[2], c[2]}), zhi = std::max({a[2], b[2], c[2]});
        const int j0 = std::max(0, static_cast<int>(std::floor((ylo - g.origin[1]) / g.spacing[1])) - 1);
        const int j1 = std::min(ny - 1, static_cast<int>(std::ceil((yhi - g.origin[1]) / g.spacing[1])) + 1);
        const int k0 = std::max(0, static_cast<int>(std::floor((zlo - g.origin[2]) / g.spacing[2])) - 1);
        const int k1 = std::min(nz - 1, static_cast<int>(std::ceil((zhi - g.origin[2]) / g.spacing[2])) + 1);
        for (int j = j0; j <= j1; ++j)
            for (int k = k0; k <= k1; ++k)
                rows[static_cast<std::size_t>(j) * nz + k].push_back(static_cast<int>(f));
    }

    const long row_count = static_cast<long>(rows.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (long r = 0; r < row_count; ++r) {
        const auto& candidates = rows[r];
        if (candidates.empty())
            continue;
        const int j = static_cast<int>(r / nz), k = static_cast<int>(r % nz);
        const Eigen::Vector2d center(g.origin[1] + j * g.spacing[1], g.origin[2] + k * g.spacing[2]);

        std::vector<double> hits;
        for (int attempt = 0; attempt <= kMaxJitterRetries; ++attempt) {
            const Eigen::Vector2d jitter = attempt == 0 ? Eigen::Vector2d::Zero()
                                                        : Eigen::Vector2d(1e-6 * attempt * 0.7548776662 * g.spacing[1],
                                                                          1e-6 * attempt * 0.5698402910 * g.spacing[2]);
            const Eigen::Vector2d p = center + jitter;
            hits.clear();
            bool degenerate = false;
            for (int f : candidates) {
                double x = 0;
                const RayHit h = cast(tris[f], p, x);
                if (h == RayHit::Hit)
                    hits.push_back(x);
                else if (h == RayHit::Degenerate)
                    degenerate = true;
            }
            if (!degenerate)
                break;
        }
        if (hits.empty())
            continue;
        std::sort(hits.begin(), hits.end());
        for (int i = 0; i < g.dims[0]; ++i) {
            const double x = g.origin[0] + i * g.spacing[0];
            const auto beyond = hits.end() - std::upper_bound(hits.begin(), hits.end(), x);
            if (beyond % 2 == 1)
                grid.cells[g.node_index(i, j, k)] = 1;
        }
    }
    return grid;
}

namespace {

void require_same_geometry(const OccupancyGrid& a, const OccupancyGrid& b)
{
    if (!(a.geometry == b.geometry) || a.cells.size() != b.cells.size())
        throw PreconditionError("occupancy grids have different geometry");
}

} // namespace

double dice(const OccupancyGrid& a, const OccupancyGrid& b)
{
    require_same_geometry(a, b);
    std::size_t both = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        na += a.cells[i] ? 1 : 0;
        nb += b.cells[i] ? 1 : 0;
        both += (a.cells[i] && b.cells[i]) ? 1 : 0;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double volume_similarity(const OccupancyGrid& a, const OccupancyGrid& b)
{
    require_same_geometry(a, b);
    const double na = static_cast<double>(a.occupied()), nb = static_cast<double>(b.occupied());
    if (na + nb == 0)
        return 1.0;
    return 1.0 - std::abs(na - nb) / (na + nb);
}

} // namespace dmd
