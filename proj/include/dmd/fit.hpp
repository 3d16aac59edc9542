#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmd/deformation.hpp"
#include "dmd/metrics.hpp"

namespace dmd {

/// Per-stage optimizer settings.
struct StageConfig {
    Vec3i grid_dims = Vec3i::Constant(8);
    int steps = 8;
    int iterations = 300;
    double step_size = 1.0;
    /// Midpoint subdivisions applied to the input template for this stage.
    int template_subdivision_level = 0;
};

struct LossWeights {
    double chamfer = 1.0;
    double edge = 1.0;
};

struct FitConfig {
    std::vector<StageConfig> stages;
    LossWeights weights;
    std::size_t sample_count = 4000;
    std::uint64_t seed = 0;
    GatePolicy gate = GatePolicy::Strict;
    double momentum = 0.9;
    /// A step is rejected (and the step size halved) when the loss grows by more
    /// than this fraction over the previous evaluation.
    double increase_tolerance = 0.25;
    /// Stage grids span [-domain_half_width, domain_half_width]^3 in unit-ball coordinates.
    double domain_half_width = 1.25;
    /// Samples per surface for the chamfer values reported after each stage.
    std::size_t evaluation_samples = 100000;

    /// Throws FormatError naming the offending field.
    void validate() const;
};

FitConfig fit_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FitConfig& config);

struct LossReport {
    int stage = 0;
    int iteration = 0;
    double chamfer_term = 0; // squared chamfer
    double edge_term = 0;
    double total = 0;
    double grad_norm = 0;
    double gate_margin = 1; // 1 - h * L_safe of the evaluated field
    double step_size = 0;
    bool accepted = true; // false when this evaluation triggered a rollback
};

nlohmann::json to_json(const LossReport& report);

/// Joint similarity that maps both meshes into the unit ball.
struct Normalization {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;

    Vec3 to_unit(const Vec3& x) const { return (x - center) / scale; }
    Vec3 to_world(const Vec3& u) const { return center + scale * u; }
};

Normalization joint_normalization(const TriangleMesh& a, const TriangleMesh& b);
TriangleMesh to_unit(const TriangleMesh& mesh, const Normalization& n);
TriangleMesh to_world(const TriangleMesh& mesh, const Normalization& n);

/// The same map expressed in world coordinates: v_w(x) = s * v_u((x - c) / s).
FlowField to_world(const FlowFieldd& unit_field, const Normalization& n);

using FitStage = BasicDeformationStage<double>;
using FitChain = BasicDeformationChain<double>;

/// Everything fixed while one stage is optimized: its grid, step count, the
/// template already pushed through the frozen earlier stages, and loss weights.
struct StageContext {
    StageContext(GridGeometry grid, int steps, const TriangleMesh& template_mesh, const FitChain& frozen,
                 LossWeights weights, std::size_t sample_count);

    GridGeometry grid;
    int steps;
    TriangleMesh start_mesh;
    LossWeights weights;
    std::size_t sample_count;
};

/// Forward pass state kept for the backward pass.
struct ForwardState {
    FlowFieldd field;
    std::vector<Points> trajectory; // vertex positions before each step and after the last
    TriangleMesh predicted;
    SampledCloud predicted_cloud; // with its draw (faces, barycentric)
    Correspondence correspondence;
    double chamfer_term = 0;
    double edge_term = 0;
    double total = 0;
};

/// Evaluates w_c * squared chamfer + w_e * edge loss for node values params
/// (boundary entries are ignored). The predicted surface is sampled with seed,
/// or draw is replayed when given.
ForwardState forward_loss(const FlowFieldd& params, const StageContext& context, const SampledCloud& target,
                          std::uint64_t seed, const SampledCloud* draw = nullptr);

/// Reverse-mode gradient of forward_loss with respect to the node values.
/// Correspondences and sample draws are held fixed. Boundary entries are zero.
FlowFieldd backward(const ForwardState& state, const StageContext& context, const SampledCloud& target);

/// Gradient of 0.5 * sum |x_n - q|^2 style losses: propagates per-vertex
/// gradients at the final positions back onto the node values.
FlowFieldd backpropagate_trajectory(const FlowFieldd& field, const std::vector<Points>& trajectory,
                                    const Points& final_gradient);

/// Positions of every point after each of n Euler steps (index 0 is the input).
std::vector<Points> integrate_trajectory(const FlowFieldd& field, int steps, const Points& points);

struct StageFitResult {
    FitStage stage;
    std::vector<LossReport> trace;
    int best_iteration = 0;
    double best_total = 0;
};

class FitDivergedError : public NumericalError {
public:
    FitDivergedError(const std::string& what, std::vector<LossReport> trace)
        : NumericalError(what), trace_(std::move(trace))
    {
    }
    const std::vector<LossReport>& trace() const { return trace_; }

private:
    std::vector<LossReport> trace_;
};

/// Cubic grid of the given dims spanning the fitting domain.
GridGeometry stage_grid(const FitConfig& config, const Vec3i& dims);

/// Heavy-ball gradient descent on one stage from zero velocity; returns the
/// best evaluated iterate. template_mesh and target are in unit-ball coordinates.
StageFitResult fit_stage(const FitConfig& config, int stage_index, const FitChain& frozen,
                         const TriangleMesh& template_mesh, const TriangleMesh& target);

struct PipelineResult {
    Normalization normalization;
    FitChain unit_chain;     // stages in unit-ball coordinates, double storage
    DeformationChain chain;  // same stages in world coordinates, float storage
    std::vector<std::vector<LossReport>> traces;
    std::vector<int> subdivision_levels;
    /// Plain chamfer against the target: before stage 1, then after each stage.
    std::vector<double> chamfer_history;
    TriangleMesh final_mesh; // finest template pushed through the world chain
};

/// Fits the stages one after another, each on the template subdivided to its
/// level and pushed through all earlier (frozen) stages. A FitDivergedError
/// carries the traces of every stage run so far.
PipelineResult fit_pipeline(const FitConfig& config, const TriangleMesh& template_mesh, const TriangleMesh& target);

} // namespace dmd
