#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "dmd/flow_field.hpp"
#include "dmd/mesh.hpp"
#include "dmd/metrics.hpp"

namespace dmd {

struct MetricReport {
    double chamfer = 0;
    double hausdorff = 0;
    double chamfer_normals = 0;
    double sif_percent = 0;
    long sif_count = 0;
    std::optional<double> dice;
    std::optional<double> volume_similarity;
    long sample_count = 0;
    std::uint64_t seed = 0;
    std::string pred_path;
    std::string gt_path;
};

struct EvaluationOptions {
    std::size_t samples = kDefaultSampleCount;
    std::uint64_t seed = 0;
    /// Voxel metrics are computed only when a grid is given.
    std::optional<GridGeometry> voxel_grid;
    int supersample = 4;
};

/// Independent, reproducible seeds for the sampling streams of one evaluation.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Surface distances, %SIF of pred and (optionally) voxel overlap of pred against gt.
MetricReport evaluate(const TriangleMesh& pred, const TriangleMesh& gt, const EvaluationOptions& options = {});

nlohmann::json to_json(const MetricReport& report);

} // namespace dmd
