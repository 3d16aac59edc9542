#include "dmd/evaluation.hpp"

#include "dmd/intersection.hpp"
#include "dmd/voxelize.hpp"

namespace dmd {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream)
{
    // splitmix64 finaliser over the combined key
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

MetricReport evaluate(const TriangleMesh& pred, const TriangleMesh& gt, const EvaluationOptions& options)
{
    if (options.samples == 0)
        throw PreconditionError("sample count must be positive");
    MetricReport report;
    report.sample_count = static_cast<long>(options.samples);
    report.seed = options.seed;

    // voxel checks first so a non-watertight input fails before the expensive part
    if (options.voxel_grid) {
        const OccupancyGrid a = voxelize(pred, *options.voxel_grid, options.supersample);
        const OccupancyGrid b = voxelize(gt, *options.voxel_grid, options.supersample);
        report.dice = dice(a, b);
        report.volume_similarity = volume_similarity(a, b);
    }

    const SampledCloud a = sample_surface(pred, options.samples, derive_seed(options.seed, 0));
    const SampledCloud b = sample_surface(gt, options.samples, derive_seed(options.seed, 1));
    const Correspondence c = correspond(a.points, b.points);
    report.chamfer = chamfer(c);
    report.hausdorff = hausdorff(c);
    report.chamfer_normals = chamfer_normals(a, b, c);

    const SelfIntersectionReport sif = self_intersecting_faces(pred);
    report.sif_count = sif.count;
    report.sif_percent = sif.percent;
    return report;
}

nlohmann::json to_json(const MetricReport& report)
{
    nlohmann::json j;
    j["chamfer"] = report.chamfer;
    j["hausdorff"] = report.hausdorff;
    j["chamfer_normals"] = report.chamfer_normals;
    j["sif_percent"] = report.sif_percent;
    j["sif_count"] = report.sif_count;
    j["dice"] = report.dice ? nlohmann::json(*report.dice) : nlohmann::json(nullptr);
    j["volume_similarity"] =
        report.volume_similarity ? nlohmann::json(*report.volume_similarity) : nlohmann::json(nullptr);
    j["sample_count"] = report.sample_count;
    j["seed"] = report.seed;
    j["pred_path"] = report.pred_path;
    j["gt_path"] = report.gt_path;
    return j;
}

} // namespace dmd
