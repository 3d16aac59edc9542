#include "dmd/fit.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "dmd/evaluation.hpp"

namespace dmd {

// Config --------------------------------------------------------------------

namespace {

[[noreturn]] void config_error(const std::string& field, const std::string& message)
{
    throw FormatError("fit config: '" + field + "' " + message);
}

void reject_unknown_keys(const nlohmann::json& j, const std::string& where, const std::set<std::string>& known)
{
    for (const auto& item : j.items())
        if (!known.count(item.key()))
            config_error(where + item.key(), "is not a recognised field");
}

template <typename T>
T get_field(const nlohmann::json& j, const std::string& key, const std::string& path, T fallback, bool required)
{
    if (!j.contains(key)) {
        if (required)
            config_error(path + key, "is required");
        return fallback;
    }
    const nlohmann::json& v = j.at(key);
    if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string())
            config_error(path + key, "must be a string");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer())
            config_error(path + key, "must be an integer");
        if constexpr (std::is_unsigned_v<T>)
            if (v.get<long long>() < 0)
                config_error(path + key, "must be non-negative");
    } else {
        if (!v.is_number())
            config_error(path + key, "must be a number");
    }
    return v.get<T>();
}

} // namespace

void FitConfig::validate() const
{
    if (stages.empty())
        config_error("stages", "must list at least one stage");
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const StageConfig& st = stages[s];
        const std::string p = "stages[" + std::to_string(s) + "].";
        if ((st.grid_dims.array() < 3).any())
            config_error(p + "grid_dims", "must be >= 3 on every axis (interior nodes are the parameters)");
        if (s > 0 && (st.grid_dims.array() < stages[s - 1].grid_dims.array()).any())
            config_error(p + "grid_dims", "must not be coarser than the previous stage");
        if (st.steps < 1)
            config_error(p + "steps", "must be >= 1");
        if (st.iterations < 0)
            config_error(p + "iterations", "must be >= 0");
        if (!(st.step_size > 0) || !std::isfinite(st.step_size))
            config_error(p + "step_size", "must be positive");
        if (st.template_subdivision_level < 0 || st.template_subdivision_level > 4)
            config_error(p + "template_subdivision_level", "must be in [0, 4]");
        if (s > 0 && st.template_subdivision_level < stages[s - 1].template_subdivision_level)
            config_error(p + "template_subdivision_level", "must not decrease across stages");
    }
    if (!(weights.chamfer > 0))
        config_error("loss_weights.chamfer", "must be positive");
    if (!(weights.edge >= 0))
        config_error("loss_weights.edge", "must be non-negative");
    if (sample_count < 1)
        config_error("sample_count", "must be >= 1");
    if (!(momentum >= 0 && momentum < 1))
        config_error("momentum", "must be in [0, 1)");
    if (!(increase_tolerance >= 0))
        config_error("increase_tolerance", "must be non-negative");
    if (!(domain_half_width > 1))
        config_error("domain_half_width", "must exceed 1 (the unit ball must lie inside the grid)");
    if (evaluation_samples < 1)
        config_error("evaluation_samples", "must be >= 1");
}

FitConfig fit_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw FormatError("fit config: top level must be a JSON object");
    reject_unknown_keys(j, "",
                        {"stages", "loss_weights", "sample_count", "seed", "gate", "momentum", "increase_tolerance",
                         "domain_half_width", "evaluation_samples"});
    FitConfig config;
    if (!j.contains("stages") || !j.at("stages").is_array())
        config_error("stages", "is required and must be an array");
    const auto& stages = j.at("stages");
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const std::string p = "stages[" + std::to_string(s) + "].";
        const auto& js = stages[s];
        if (!js.is_object())
            config_error("stages[" + std::to_string(s) + "]", "must be an object");
        reject_unknown_keys(js, p, {"grid_dims", "steps", "iterations", "step_size", "template_subdivision_level"});
        StageConfig st;
        if (!js.contains("grid_dims"))
            config_error(p + "grid_dims", "is required");
        const auto& dims = js.at("grid_dims");
        if (dims.is_number_integer()) {
            st.grid_dims = Vec3i::Constant(dims.get<int>());
        } else if (dims.is_array() && dims.size() == 3 && dims[0].is_number_integer() &&
                   dims[1].is_number_integer() && dims[2].is_number_integer()) {
            st.grid_dims = Vec3i(dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>());
        } else {
            config_error(p + "grid_dims", "must be an integer or an array of three integers");
        }
        st.steps = get_field<int>(js, "steps", p, 0, true);
        st.iterations = get_field<int>(js, "iterations", p, 0, true);
        st.step_size = get_field<double>(js, "step_size", p, 0.0, true);
        st.template_subdivision_level = get_field<int>(js, "template_subdivision_level", p, 0, false);
        config.stages.push_back(st);
    }
    if (j.contains("loss_weights")) {
        const auto& w = j.at("loss_weights");
        if (!w.is_object())
            config_error("loss_weights", "must be an object");
        reject_unknown_keys(w, "loss_weights.", {"chamfer", "edge"});
        config.weights.chamfer = get_field<double>(w, "chamfer", "loss_weights.", config.weights.chamfer, false);
        config.weights.edge = get_field<double>(w, "edge", "loss_weights.", config.weights.edge, false);
    }
    config.sample_count = get_field<std::size_t>(j, "sample_count", "", config.sample_count, false);
    config.seed = get_field<std::uint64_t>(j, "seed", "", config.seed, false);
    if (j.contains("gate")) {
        try {
            config.gate = parse_gate_policy(get_field<std::string>(j, "gate", "", "strict", true));
        } catch (const FormatError& e) {
            config_error("gate", "must be one of strict, warn, off");
        }
    }
    config.momentum = get_field<double>(j, "momentum", "", config.momentum, false);
    config.increase_tolerance = get_field<double>(j, "increase_tolerance", "", config.increase_tolerance, false);
    config.domain_half_width = get_field<double>(j, "domain_half_width", "", config.domain_half_width, false);
    config.evaluation_samples = get_field<std::size_t>(j, "evaluation_samples", "", config.evaluation_samples, false);
    config.validate();
    return config;
}

nlohmann::json to_json(const FitConfig& config)
{
    nlohmann::json j;
    j["stages"] = nlohmann::json::array();
    for (const StageConfig& st : config.stages)
        j["stages"].push_back({{"grid_dims", {st.grid_dims[0], st.grid_dims[1], st.grid_dims[2]}},
                               {"steps", st.steps},
                               {"iterations", st.iterations},
                               {"step_size", st.step_size},
                               {"template_subdivision_level", st.template_subdivision_level}});
    j["loss_weights"] = {{"chamfer", config.weights.chamfer}, {"edge", config.weights.edge}};
    j["sample_count"] = config.sample_count;
    j["seed"] = config.seed;
    j["gate"] = to_string(config.gate);
    j["momentum"] = config.momentum;
    j["increase_tolerance"] = config.increase_tolerance;
    j["domain_half_width"] = config.domain_half_width;
    j["evaluation_samples"] = config.evaluation_samples;
    return j;
}

nlohmann::json to_json(const LossReport& r)
{
    return {{"stage", r.stage},
            {"iteration", r.iteration},
            {"chamfer_term", r.chamfer_term},
            {"edge_term", r.edge_term},
            {"total", r.total},
            {"grad_norm", r.grad_norm},
            {"gate_margin", r.gate_margin},
            {"step_size", r.step_size},
            {"accepted", r.accepted}};
}

// Normalization -------------------------------------------------------------

Normalization joint_normalization(const TriangleMesh& a, const TriangleMesh& b)
{
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto* mesh : {&a, &b})
        for (const Vec3& v : mesh->vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
    Normalization n;
    if (!lo.allFinite() || !hi.allFinite())
        throw PreconditionError("cannot normalize empty meshes");
    n.center = 0.5 * (lo + hi);
    double radius = 0;
    for (const auto* mesh : {&a, &b})
        for (const Vec3& v : mesh->vertices)
            radius = std::max(radius, (v - n.center).norm());
    n.scale = radius > 0 ? radius : 1.0;
    return n;
}

TriangleMesh to_unit(const TriangleMesh& mesh, const Normalization& n)
{
    TriangleMesh out = mesh;
    for (Vec3& v : out.vertices)
        v = n.to_unit(v);
    return out;
}

TriangleMesh to_world(const TriangleMesh& mesh, const Normalization& n)
{
    TriangleMesh out = mesh;
    for (Vec3& v : out.vertices)
        v = n.to_world(v);
    return out;
}

FlowField to_world(const FlowFieldd& unit_field, const Normalization& n)
{
    GridGeometry g = unit_field.geometry();
    g.origin = n.to_world(g.origin);
    g.spacing *= n.scale;
    std::vector<float> data(unit_field.data().size());
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<float>(n.scale * unit_field.data()[i]);
    return FlowField(g, std::move(data));
}

// Forward / backward --------------------------------------------------------

StageContext::StageContext(GridGeometry grid_, int steps_, const TriangleMesh& template_mesh, const FitChain& frozen,
                           LossWeights weights_, std::size_t sample_count_)
    : grid(std::move(grid_)),
      steps(steps_),
      start_mesh(apply_chain(frozen, template_mesh, GatePolicy::Off)),
      weights(weights_),
      sample_count(sample_count_)
{
    grid.validate();
    if (steps < 1)
        throw PreconditionError("integration steps must be >= 1");
}

std::vector<Points> integrate_trajectory(const FlowFieldd& field, int steps, const Points& points)
{
    std::vector<Points> trajectory(static_cast<std::size_t>(steps) + 1);
    trajectory[0] = points;
    const double h = 1.0 / steps;
    const long count = static_cast<long>(points.size());
    for (int s = 0; s < steps; ++s) {
        Points& next = trajectory[s + 1];
        const Points& cur = trajectory[s];
        next.resize(points.size());
#pragma omp parallel for schedule(static) if (count > 1024)
        for (long i = 0; i < count; ++i)
            next[i] = euler_step(field, cur[i], h);
    }
    return trajectory;
}

ForwardState forward_loss(const FlowFieldd& params, const StageContext& context, const SampledCloud& target,
                          std::uint64_t seed, const SampledCloud* draw)
{
    if (!(params.geometry() == context.grid))
        throw PreconditionError("parameter grid does not match the stage grid");
    if (target.empty())
        throw PreconditionError("target cloud is empty");
    ForwardState state;
    state.field = enforce_zero_boundary(params);
    state.trajectory = integrate_trajectory(state.field, context.steps, context.start_mesh.vertices);
    state.predicted.vertices = state.trajectory.back();
    state.predicted.faces = context.start_mesh.faces;
    state.predicted_cloud = draw ? replay_samples(state.predicted, *draw)
                                 : sample_surface(state.predicted, context.sample_count, seed);
    state.correspondence = correspond(state.predicted_cloud.points, target.points);
    state.chamfer_term = chamfer(state.correspondence, ChamferMode::SquaredDistance);
    state.edge_term = edge_loss(state.predicted);
    state.total = context.weights.chamfer * state.chamfer_term + context.weights.edge * state.edge_term;
    return state;
}

FlowFieldd backpropagate_trajectory(const FlowFieldd& field, const std::vector<Points>& trajectory,
                                    const Points& final_gradient)
{
    FlowFieldd grad(field.geometry());
    const int steps = static_cast<int>(trajectory.size()) - 1;
    const double h = 1.0 / steps;
    // sequential scatter keeps the accumulation order fixed
    for (std::size_t p = 0; p < final_gradient.size(); ++p) {
        Vec3 g = final_gradient[p];
        for (int s = steps - 1; s >= 0; --s) {
            const Stencil st = locate(field.geometry(), trajectory[s][p], true);
            if (!st.inside)
                continue;
            Eigen::Matrix3d jac = Eigen::Matrix3d::Zero();
            for (int c = 0; c < 8; ++c) {
                grad.node(st.node[c]) += (h * st.weight[c]) * g;
                jac += field.node_value(st.node[c]) * st.weight_gradient[c].transpose();
            }
            g += h * (jac.transpose() * g);
        }
    }
    return enforce_zero_boundary(std::move(grad));
}

FlowFieldd backward(const ForwardState& state, const StageContext& context, const SampledCloud& target)
{
    const SampledCloud& cloud = state.predicted_cloud;
    const Correspondence& corr = state.correspondence;
    const double wc = context.weights.chamfer, we = context.weights.edge;
    const double na = static_cast<double>(cloud.size()), nb = static_cast<double>(target.size());

    Points point_grad(cloud.size(), Vec3::Zero());
    for (std::size_t i = 0; i < cloud.size(); ++i)
        point_grad[i] += (wc / na) * (cloud.points[i] - target.points[corr.a_to_b[i]]);
    for (std::size_t j = 0; j < target.size(); ++j) {
        const int i = corr.b_to_a[j];
        point_grad[i] += (wc / nb) * (cloud.points[i] - target.points[j]);
    }

    const TriangleMesh& mesh = state.predicted;
    Points vertex_grad(mesh.vertices.size(), Vec3::Zero());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Face& f = mesh.faces[cloud.faces[i]];
        for (int k = 0; k < 3; ++k)
            vertex_grad[f[k]] += cloud.barycentric[i][k] * point_grad[i];
    }
    if (we > 0) {
        const auto edges = unique_edges(mesh);
        const double scale = 2.0 * we / static_cast<double>(edges.size());
        for (const auto& e : edges) {
            const Vec3 d = scale * (mesh.vertices[e[0]] - mesh.vertices[e[1]]);
            vertex_grad[e[0]] += d;
            vertex_grad[e[1]] -= d;
        }
    }
    return backpropagate_trajectory(state.field, state.trajectory, vertex_grad);
}

// Optimizer -----------------------------------------------------------------

GridGeometry stage_grid(const FitConfig& config, const Vec3i& dims)
{
    GridGeometry g;
    g.dims = dims;
    g.origin = Vec3::Constant(-config.domain_half_width);
    for (int axis = 0; axis < 3; ++axis)
        g.spacing[axis] = 2.0 * config.domain_half_width / (dims[axis] - 1);
    return g;
}

namespace {

Eigen::Map<Eigen::VectorXd> as_vector(FlowFieldd& f)
{
    return Eigen::Map<Eigen::VectorXd>(f.data().data(), static_cast<Eigen::Index>(f.data().size()));
}

Eigen::Map<const Eigen::VectorXd> as_vector(const FlowFieldd& f)
{
    return Eigen::Map<const Eigen::VectorXd>(f.data().data(), static_cast<Eigen::Index>(f.data().size()));
}

std::uint64_t iteration_stream(int stage, int iteration, int which)
{
    return (static_cast<std::uint64_t>(stage) * 1000003ULL + static_cast<std::uint64_t>(iteration)) * 4ULL +
           static_cast<std::uint64_t>(which);
}

constexpr int kMaxGateHalvings = 60;

} // namespace

StageFitResult fit_stage(const FitConfig& config, int stage_index, const FitChain& frozen,
                         const TriangleMesh& template_mesh, const TriangleMesh& target)
{
    config.validate();
    if (stage_index < 0 || stage_index >= static_cast<int>(config.stages.size()))
        throw PreconditionError("stage index out of range");
    const StageConfig& sc = config.stages[stage_index];
    const GridGeometry grid = stage_grid(config, sc.grid_dims);
    const StageContext context(grid, sc.steps, template_mesh, frozen, config.weights, config.sample_count);
    const double h = 1.0 / sc.steps;

    FlowFieldd params(grid), velocity(grid);
    FlowFieldd previous = params, best = params;
    double previous_total = std::numeric_limits<double>::infinity();
    double step = sc.step_size;

    StageFitResult result{FitStage(params, sc.steps), {}, 0, std::numeric_limits<double>::infinity()};

    for (int it = 0; it < sc.iterations; ++it) {
        const SampledCloud target_cloud = sample_surface(
            target, config.sample_count, derive_seed(config.seed, iteration_stream(stage_index, it, 1)));
        const ForwardState state = forward_loss(params, context, target_cloud,
                                                derive_seed(config.seed, iteration_stream(stage_index, it, 0)));

        LossReport report;
        report.stage = stage_index;
        report.iteration = it;
        report.chamfer_term = state.chamfer_term;
        report.edge_term = state.edge_term;
        report.total = state.total;
        report.gate_margin = 1.0 - h * stability_estimate(state.field).lipschitz_safe;
        report.step_size = step;

        if (!std::isfinite(state.total)) {
            result.trace.push_back(report);
            throw FitDivergedError("stage " + std::to_string(stage_index) + " diverged at iteration " +
                                       std::to_string(it) + " (non-finite loss)",
                                   result.trace);
        }

        if (it > 0 && state.total > previous_total * (1.0 + config.increase_tolerance)) {
            // roll back to the last accepted iterate
            report.accepted = false;
            result.trace.push_back(report);
            params = previous;
            as_vector(velocity).setZero();
            step *= 0.5;
            continue;
        }

        const FlowFieldd grad = backward(state, context, target_cloud);
        report.grad_norm = as_vector(grad).norm();
        result.trace.push_back(report);
        if (!std::isfinite(report.grad_norm))
            throw FitDivergedError("stage " + std::to_string(stage_index) + " produced a non-finite gradient at "
                                       "iteration " + std::to_string(it),
                                   result.trace);

        if (state.total < result.best_total) {
            result.best_total = state.total;
            result.best_iteration = it;
            best = state.field;
        }
        previous_total = state.total;
        previous = state.field;

        for (int attempt = 0;; ++attempt) {
            FlowFieldd next_velocity(grid);
            as_vector(next_velocity) = config.momentum * as_vector(velocity) - step * as_vector(grad);
            FlowFieldd candidate(grid);
            as_vector(candidate) = as_vector(state.field) + as_vector(next_velocity);
            candidate = enforce_zero_boundary(std::move(candidate));
            const double product = h * stability_estimate(candidate).lipschitz_safe;
            if (config.gate == GatePolicy::Strict && !(product < 1.0)) {
                if (attempt >= kMaxGateHalvings)
                    throw FitDivergedError("stage " + std::to_string(stage_index) +
                                               ": no gate-compliant step found",
                                           result.trace);
                step *= 0.5;
                as_vector(velocity).setZero();
                continue;
            }
            params = std::move(candidate);
            velocity = std::move(next_velocity);
            break;
        }
    }

    if (sc.iterations == 0)
        result.best_total = 0;
    result.stage = FitStage(best, sc.steps);
    if (config.gate != GatePolicy::Off)
        check_gate(result.stage, config.gate, stage_index);
    return result;
}

PipelineResult fit_pipeline(const FitConfig& config, const TriangleMesh& template_mesh, const TriangleMesh& target)
{
    config.validate();
    PipelineResult result;
    result.normalization = joint_normalization(template_mesh, target);
    const TriangleMesh unit_template = to_unit(template_mesh, result.normalization);
    const TriangleMesh unit_target = to_unit(target, result.normalization);

    // fixed streams so the history entries are directly comparable
    const SampledCloud target_cloud =
        sample_surface(target, config.evaluation_samples, derive_seed(config.seed, 0xE0A1ULL));
    auto world_chamfer = [&](const TriangleMesh& mesh) {
        const SampledCloud cloud = sample_surface(mesh, config.evaluation_samples, derive_seed(config.seed, 0xE0A0ULL));
        return chamfer(cloud, target_cloud);
    };

    result.chamfer_history.push_back(
        world_chamfer(midpoint_subdivide(template_mesh, config.stages.front().template_subdivision_level)));

    for (int s = 0; s < static_cast<int>(config.stages.size()); ++s) {
        const int level = config.stages[s].template_subdivision_level;
        const TriangleMesh stage_template = midpoint_subdivide(unit_template, level);
        StageFitResult stage = [&] {
            try {
                return fit_stage(config, s, result.unit_chain, stage_template, unit_target);
            } catch (const FitDivergedError& e) {
                // keep the traces of the stages that finished
                std::vector<LossReport> all;
                for (const auto& t : result.traces)
                    all.insert(all.end(), t.begin(), t.end());
                all.insert(all.end(), e.trace().begin(), e.trace().end());
                throw FitDivergedError(e.what(), std::move(all));
            }
        }();

        result.unit_chain.stages.push_back(stage.stage);
        result.chain.stages.emplace_back(to_world(stage.stage.field(), result.normalization), stage.stage.steps());
        result.traces.push_back(std::move(stage.trace));
        result.subdivision_levels.push_back(level);

        result.final_mesh = apply_chain(result.chain, midpoint_subdivide(template_mesh, level), config.gate);
        result.chamfer_history.push_back(world_chamfer(result.final_mesh));
    }
    return result;
}

} // namespace dmd
