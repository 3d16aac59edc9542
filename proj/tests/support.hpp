#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "dmd/deformation.hpp"
#include "dmd/flow_field.hpp"
#include "dmd/mesh.hpp"

namespace fixture {

using dmd::Vec3;

/// Cubic grid of n nodes per axis spanning [lo, hi]^3.
inline dmd::GridGeometry cube_grid(int n, double lo, double hi)
{
    dmd::GridGeometry g;
    g.dims = dmd::Vec3i::Constant(n);
    g.origin = Vec3::Constant(lo);
    g.spacing = Vec3::Constant((hi - lo) / (n - 1));
    return g;
}

/// Random interior node values with a zero boundary.
template <typename Scalar = float>
dmd::BasicFlowField<Scalar> random_field(const dmd::GridGeometry& g, std::mt19937_64& rng, double scale = 1.0)
{
    dmd::BasicFlowField<Scalar> field(g);
    std::normal_distribution<double> normal(0.0, scale);
    for (int i = 1; i + 1 < g.dims[0]; ++i)
        for (int j = 1; j + 1 < g.dims[1]; ++j)
            for (int k = 1; k + 1 < g.dims[2]; ++k)
                for (int c = 0; c < 3; ++c)
                    field.node(i, j, k)[c] = static_cast<Scalar>(normal(rng));
    return field;
}

/// Random field rescaled so that (1/steps) * L_safe is close to gate_product.
template <typename Scalar = float>
dmd::BasicDeformationStage<Scalar> random_gated_stage(const dmd::GridGeometry& g, int steps, double gate_product,
                                                     std::mt19937_64& rng)
{
    auto field = random_field<Scalar>(g, rng);
    const double safe = dmd::stability_estimate(field).lipschitz_safe;
    const double factor = safe > 0 ? gate_product * steps / safe : 0.0;
    for (auto& x : field.data())
        x = static_cast<Scalar>(x * factor);
    return dmd::BasicDeformationStage<Scalar>(std::move(field), steps);
}

/// Points drawn uniformly from the box [lo, hi]^3.
inline dmd::Points random_points(std::size_t n, double lo, double hi, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(lo, hi);
    dmd::Points pts(n);
    for (auto& p : pts)
        p = Vec3(u(rng), u(rng), u(rng));
    return pts;
}

inline dmd::TriangleMesh scaled(dmd::TriangleMesh mesh, const Vec3& axes)
{
    for (auto& v : mesh.vertices)
        v = v.cwiseProduct(axes);
    return mesh;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("dmd_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace fixture
