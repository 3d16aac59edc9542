#include "dmd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "dmd/kdtree.hpp"

namespace dmd {

SampledCloud sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed)
{
    mesh.validate();
    std::vector<double> cumulative(mesh.faces.size());
    double total = 0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        total += face_area(mesh, f);
        cumulative[f] = total;
    }
    if (!(total > 0))
        throw PreconditionError("cannot sample a mesh whose faces are all degenerate");

    SampledCloud draw;
    draw.seed = seed;
    draw.faces.resize(count);
    draw.barycentric.resize(count);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = uniform(rng) * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end())
            --it;
        const double r1 = uniform(rng), r2 = uniform(rng);
        const double s = std::sqrt(r1);
        draw.faces[i] = static_cast<int>(it - cumulative.begin());
        draw.barycentric[i] = Vec3(1.0 - s, s * (1.0 - r2), s * r2);
    }
    return replay_samples(mesh, draw);
}

SampledCloud replay_samples(const TriangleMesh& mesh, const SampledCloud& draw)
{
    SampledCloud out;
    out.seed = draw.seed;
    out.faces = draw.faces;
    out.barycentric = draw.barycentric;
    out.points.resize(draw.faces.size());
    out.normals.resize(draw.faces.size());
    for (std::size_t i = 0; i < draw.faces.size(); ++i) {
        const Face& f = mesh.faces[draw.faces[i]];
        const Vec3& w = draw.barycentric[i];
        out.points[i] = w[0] * mesh.vertices[f[0]] + w[1] * mesh.vertices[f[1]] + w[2] * mesh.vertices[f[2]];
        out.normals[i] = face_normal(mesh, draw.faces[i]);
    }
    return out;
}

SampledCloud make_cloud(Points points)
{
    SampledCloud cloud;
    cloud.points = std::move(points);
    return cloud;
}

namespace {

void nearest_all(const Points& queries, const KdTree& tree, std::vector<int>& index, std::vector<double>& sq)
{
    index.resize(queries.size());
    sq.resize(queries.size());
    const long count = static_cast<long>(queries.size());
#pragma omp parallel for schedule(static) if (count > 4096)
    for (long i = 0; i < count; ++i) {
        const KdTree::Neighbor nn = tree.nearest(queries[i]);
        index[i] = nn.index;
        sq[i] = nn.squared_distance;
    }
}

void require_nonempty(const SampledCloud& a, const SampledCloud& b)
{
    if (a.empty() || b.empty())
        throw PreconditionError("distance metrics need two nonempty clouds");
}

double mean(const std::vector<double>& values)
{
    double sum = 0;
    for (double v : values)
        sum += v;
    return sum / static_cast<double>(values.size());
}

} // namespace

Correspondence correspond(const Points& a, const Points& b)
{
    if (a.empty() || b.empty())
        throw PreconditionError("correspondences need two nonempty point sets");
    Correspondence c;
    nearest_all(a, KdTree(b), c.a_to_b, c.a_to_b_sq);
    nearest_all(b, KdTree(a), c.b_to_a, c.b_to_a_sq);
    return c;
}

double chamfer(const Correspondence& c, ChamferMode mode)
{
    auto term = [mode](const std::vector<double>& sq) {
        if (mode == ChamferMode::SquaredDistance)
            return mean(sq);
        double sum = 0;
        for (double d : sq)
            sum += std::sqrt(d);
        return sum / static_cast<double>(sq.size());
    };
    return 0.5 * (term(c.a_to_b_sq) + term(c.b_to_a_sq));
}

double chamfer(const SampledCloud& a, const SampledCloud& b, ChamferMode mode)
{
    require_nonempty(a, b);
    return chamfer(correspond(a.points, b.points), mode);
}

double hausdorff(const Correspondence& c)
{
    double worst = 0;
    for (double d : c.a_to_b_sq)
        worst = std::max(worst, d);
    for (double d : c.b_to_a_sq)
        worst = std::max(worst, d);
    return std::sqrt(worst);
}

double hausdorff(const SampledCloud& a, const SampledCloud& b)
{
    require_nonempty(a, b);
    return hausdorff(correspond(a.points, b.points));
}

double chamfer_normals(const SampledCloud& a, const SampledCloud& b, const Correspondence& c)
{
    if (a.normals.size() != a.size() || b.normals.size() != b.size())
        throw PreconditionError("chamfer normals needs a normal for every point");
    double sum_a = 0, sum_b = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        sum_a += std::abs(a.normals[i].dot(b.normals[c.a_to_b[i]]));
    for (std::size_t j = 0; j < b.size(); ++j)
        sum_b += std::abs(b.normals[j].dot(a.normals[c.b_to_a[j]]));
    return 0.5 * (sum_a / static_cast<double>(a.size()) + sum_b / static_cast<double>(b.size()));
}

double chamfer_normals(const SampledCloud& a, const SampledCloud& b)
{
    require_nonempty(a, b);
    return chamfer_normals(a, b, correspond(a.points, b.points));
}

double edge_loss(const TriangleMesh& mesh)
{
    const auto edges = unique_edges(mesh);
    if (edges.empty())
        throw PreconditionError("edge loss needs a mesh with at least one edge");
    double sum = 0;
    for (const auto& e : edges)
        sum += (mesh.vertices[e[0]] - mesh.vertices[e[1]]).squaredNorm();
    return sum / static_cast<double>(edges.size());
}

} // namespace dmd
