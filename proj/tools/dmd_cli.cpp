// dmd: deform, fit and evaluate template meshes with gated stationary velocity fields.
//
// Exit codes: 0 success, 1 input/parse error, 2 precondition or gate violation,
// 3 numerical failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dmd/deformation.hpp"
#include "dmd/evaluation.hpp"
#include "dmd/fit.hpp"
#include "dmd/flow_field.hpp"
#include "dmd/mesh.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kInput = 1, kPrecondition = 2, kNumerical = 3 };

int exit_code(dmd::ErrorKind kind)
{
    switch (kind) {
    case dmd::ErrorKind::Input:
        return kInput;
    case dmd::ErrorKind::Precondition:
        return kPrecondition;
    case dmd::ErrorKind::Numerical:
        return kNumerical;
    }
    return kNumerical;
}

void diag(const std::string& level, const std::string& message)
{
    std::cerr << "dmd: " << level << ": " << message << '\n';
}

void write_json(const json& j, const std::string& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw dmd::FormatError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw dmd::FormatError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw dmd::FormatError("'" + path + "' is not valid JSON: " + e.what());
    }
}

json vec_json(const dmd::Vec3& v) { return json::array({v[0], v[1], v[2]}); }

std::string fmt(double x)
{
    std::ostringstream s;
    s << std::setprecision(6) << x;
    return s.str();
}

void report_stage(int index, const dmd::DeformationStage& stage)
{
    const auto& st = stage.stability();
    std::cerr << "stage " << index << ": L = " << fmt(st.lipschitz) << ", L_safe = " << fmt(st.lipschitz_safe)
              << ", M = " << fmt(st.max_speed) << ", h = " << fmt(stage.step_size())
              << ", gate margin = " << fmt(stage.gate_margin()) << '\n';
}

// deform -------------------------------------------------------------------

struct DeformArgs {
    std::string mesh, out, chain, gate = "strict";
    std::vector<std::string> flows;
    std::vector<int> steps;
    bool inverse = false;
    bool repair = false;
};

dmd::DeformationChain load_chain_manifest(const std::string& path, bool repair)
{
    const json manifest = read_json(path);
    if (!manifest.contains("stages") || !manifest.at("stages").is_array())
        throw dmd::FormatError("chain manifest '" + path + "' has no 'stages' array");
    const fs::path base = fs::path(path).parent_path();
    dmd::DeformationChain chain;
    for (const json& s : manifest.at("stages")) {
        if (!s.contains("file") || !s.at("file").is_string() || !s.contains("steps") ||
            !s.at("steps").is_number_integer())
            throw dmd::FormatError("chain manifest '" + path + "': every stage needs 'file' and integer 'steps'");
        const std::string file = (base / s.at("file").get<std::string>()).string();
        chain.stages.emplace_back(dmd::load_flow(file, {repair}), s.at("steps").get<int>());
    }
    return chain;
}

int run_deform(const DeformArgs& a)
{
    const dmd::GatePolicy gate = dmd::parse_gate_policy(a.gate);
    dmd::DeformationChain chain;
    if (!a.chain.empty()) {
        if (!a.flows.empty())
            throw dmd::FormatError("--chain and --flow are mutually exclusive");
        chain = load_chain_manifest(a.chain, a.repair);
    } else {
        if (a.flows.empty())
            throw dmd::FormatError("give --chain or at least one --flow");
        if (a.steps.size() != a.flows.size())
            throw dmd::FormatError("every --flow needs a matching --steps (" + std::to_string(a.flows.size()) +
                                   " flows, " + std::to_string(a.steps.size()) + " step counts)");
        for (std::size_t i = 0; i < a.flows.size(); ++i)
            chain.stages.emplace_back(dmd::load_flow(a.flows[i], {a.repair}), a.steps[i]);
    }
    for (std::size_t i = 0; i < chain.stages.size(); ++i)
        report_stage(static_cast<int>(i), chain.stages[i]);

    const dmd::TriangleMesh mesh = dmd::load_obj(a.mesh);
    const auto direction = a.inverse ? dmd::Direction::Inverse : dmd::Direction::Forward;
    const dmd::TriangleMesh out = dmd::apply_chain(chain, mesh, gate, direction);
    dmd::store_obj(out, a.out);
    return kOk;
}

// metrics ------------------------------------------------------------------

struct MetricsArgs {
    std::string pred, gt, out;
    std::size_t samples = dmd::kDefaultSampleCount;
    std::uint64_t seed = 0;
    std::vector<int> voxel_dims;
    std::vector<double> voxel_spacing, voxel_origin;
    int supersample = 4;
};

template <typename T, typename V>
V broadcast(const std::vector<T>& values, const std::string& flag)
{
    V out;
    if (values.size() == 1)
        out.setConstant(values[0]);
    else if (values.size() == 3)
        out = V(values[0], values[1], values[2]);
    else
        throw dmd::FormatError(flag + " takes one or three values");
    return out;
}

/// Grid for the voxel metrics; unset spacing/origin cover the joint bounding box.
dmd::GridGeometry voxel_grid(const MetricsArgs& a, const dmd::TriangleMesh& pred, const dmd::TriangleMesh& gt)
{
    dmd::Vec3 lo = dmd::Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto* m : {&pred, &gt})
        for (const dmd::Vec3& v : m->vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
    dmd::GridGeometry g;
    g.dims = broadcast<int, dmd::Vec3i>(a.voxel_dims, "--voxel-dims");
    if ((g.dims.array() < 2).any())
        throw dmd::FormatError("--voxel-dims must be >= 2");
    const dmd::Vec3 cells = (g.dims.array() - 1).cast<double>();
    if (!a.voxel_spacing.empty()) {
        g.spacing = broadcast<double, dmd::Vec3>(a.voxel_spacing, "--voxel-spacing");
    } else {
        const double pad = 0.05 * (hi - lo).maxCoeff();
        g.spacing = (hi - lo + dmd::Vec3::Constant(2 * pad)).cwiseQuotient(cells);
    }
    if (!a.voxel_origin.empty())
        g.origin = broadcast<double, dmd::Vec3>(a.voxel_origin, "--voxel-origin");
    else
        g.origin = 0.5 * (lo + hi) - 0.5 * g.spacing.cwiseProduct(cells);
    g.validate();
    return g;
}

int run_metrics(const MetricsArgs& a)
{
    if (a.voxel_dims.empty() && (!a.voxel_spacing.empty() || !a.voxel_origin.empty()))
        throw dmd::FormatError("--voxel-spacing and --voxel-origin need --voxel-dims");
    const dmd::TriangleMesh pred = dmd::load_obj(a.pred);
    const dmd::TriangleMesh gt = dmd::load_obj(a.gt);
    dmd::EvaluationOptions opt;
    opt.samples = a.samples;
    opt.seed = a.seed;
    opt.supersample = a.supersample;
    if (!a.voxel_dims.empty())
        opt.voxel_grid = voxel_grid(a, pred, gt);
    dmd::MetricReport report = dmd::evaluate(pred, gt, opt);
    report.pred_path = a.pred;
    report.gt_path = a.gt;
    write_json(dmd::to_json(report), a.out);
    std::cerr << "chamfer = " << fmt(report.chamfer) << ", hausdorff = " << fmt(report.hausdorff)
              << ", chamfer_normals = " << fmt(report.chamfer_normals) << ", %SIF = " << fmt(report.sif_percent);
    if (report.dice)
        std::cerr << ", dice = " << fmt(*report.dice) << ", VS = " << fmt(*report.volume_similarity);
    std::cerr << '\n';
    return kOk;
}

// fit ----------------------------------------------------------------------

struct FitArgs {
    std::string template_mesh, target, config, out_dir;
};

void write_trace(const std::vector<dmd::LossReport>& trace, const fs::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw dmd::FormatError("cannot write '" + path.string() + "'");
    for (const auto& r : trace)
        out << dmd::to_json(r).dump() << '\n';
}

int run_fit(const FitArgs& a)
{
    const dmd::FitConfig config = dmd::fit_config_from_json(read_json(a.config));
    const dmd::TriangleMesh tmpl = dmd::load_obj(a.template_mesh);
    const dmd::TriangleMesh target = dmd::load_obj(a.target);
    fs::create_directories(a.out_dir);
    const fs::path dir(a.out_dir);

    dmd::PipelineResult result;
    try {
        result = dmd::fit_pipeline(config, tmpl, target);
    } catch (const dmd::FitDivergedError& e) {
        write_trace(e.trace(), dir / "trace.jsonl");
        diag("error", std::string(e.what()) + " (trace kept in " + (dir / "trace.jsonl").string() + ")");
        return kNumerical;
    }

    std::vector<dmd::LossReport> trace;
    for (const auto& t : result.traces)
        trace.insert(trace.end(), t.begin(), t.end());
    write_trace(trace, dir / "trace.jsonl");

    json stages = json::array();
    for (std::size_t s = 0; s < result.chain.stages.size(); ++s) {
        const auto& stage = result.chain.stages[s];
        const std::string file = "stage_" + std::to_string(s) + ".dff";
        dmd::store_flow(stage.field(), (dir / file).string());
        const auto& g = stage.field().geometry();
        stages.push_back({{"index", s},
                          {"file", file},
                          {"steps", stage.steps()},
                          {"subdivision_level", result.subdivision_levels[s]},
                          {"grid_dims", {g.dims[0], g.dims[1], g.dims[2]}},
                          {"lipschitz", stage.stability().lipschitz},
                          {"lipschitz_safe", stage.stability().lipschitz_safe},
                          {"gate_margin", stage.gate_margin()}});
        report_stage(static_cast<int>(s), stage);
    }
    dmd::store_obj(result.final_mesh, (dir / "deformed.obj").string());

    json manifest = {{"stages", stages},
                     {"normalization", {{"center", vec_json(result.normalization.center)},
                                        {"scale", result.normalization.scale}}},
                     {"chamfer_history", result.chamfer_history},
                     {"template", a.template_mesh},
                     {"target", a.target},
                     {"deformed_mesh", "deformed.obj"},
                     {"trace", "trace.jsonl"},
                     {"config", dmd::to_json(config)}};
    write_json(manifest, (dir / "manifest.json").string());

    std::cerr << "chamfer:";
    for (double c : result.chamfer_history)
        std::cerr << ' ' << fmt(c);
    std::cerr << '\n';
    return kOk;
}

// subdivide / check / icosphere ------------------------------------------------

int run_subdivide(const std::string& mesh, int levels, const std::string& out)
{
    const dmd::TriangleMesh refined = dmd::midpoint_subdivide(dmd::load_obj(mesh), levels);
    dmd::store_obj(refined, out);
    std::cerr << "V = " << refined.vertex_count() << ", F = " << refined.face_count() << '\n';
    return kOk;
}

int run_check(const std::string& flow, int steps, bool repair)
{
    const dmd::DeformationStage stage(dmd::load_flow(flow, {repair}), steps);
    const auto& st = stage.stability();
    const double h = stage.step_size();
    const bool nominal = stage.satisfies_nominal_gate(), safe = stage.satisfies_gate();
    std::cout << "L " << fmt(st.lipschitz) << '\n'
              << "L_safe " << fmt(st.lipschitz_safe) << '\n'
              << "M " << fmt(st.max_speed) << '\n'
              << "h " << fmt(h) << '\n'
              << "h*L " << fmt(h * st.lipschitz) << '\n'
              << "h*L_safe " << fmt(h * st.lipschitz_safe) << '\n'
              << "margin " << fmt(stage.gate_margin()) << '\n'
              << "gate h*L<=1 " << (nominal ? "pass" : "fail") << '\n'
              << "gate h*L_safe<1 " << (safe ? "pass" : "fail") << '\n'
              << "min_steps " << stage.minimal_compliant_steps() << '\n';
    if (!safe) {
        diag("error", "h*L_safe >= 1; use at least " + std::to_string(stage.minimal_compliant_steps()) + " steps");
        return kPrecondition;
    }
    return kOk;
}

int run_icosphere(int level, double radius, const std::vector<double>& axes, const std::vector<double>& center,
                  const std::string& out)
{
    const dmd::Vec3 c = center.empty() ? dmd::Vec3::Zero() : broadcast<double, dmd::Vec3>(center, "--center");
    dmd::TriangleMesh mesh = dmd::icosphere(level, radius);
    if (!axes.empty()) {
        const dmd::Vec3 s = broadcast<double, dmd::Vec3>(axes, "--axes");
        for (auto& v : mesh.vertices)
            v = v.cwiseProduct(s);
    }
    for (auto& v : mesh.vertices)
        v += c;
    dmd::store_obj(mesh, out);
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Diffeomorphic mesh deformation through gated stationary velocity fields"};
    app.require_subcommand(1);
    int result = kOk;

    DeformArgs deform;
    auto* d = app.add_subcommand("deform", "Push a mesh through a chain of flow fields");
    d->add_option("--mesh", deform.mesh, "Input OBJ")->required();
    d->add_option("--flow", deform.flows, "DFF1 flow field (repeatable, in stage order)");
    d->add_option("--steps", deform.steps, "Euler steps per --flow (repeatable)");
    d->add_option("--chain", deform.chain, "Chain manifest written by fit");
    d->add_option("--gate", deform.gate, "Gate policy: strict, warn or off")->default_val("strict");
    d->add_flag("--inverse", deform.inverse, "Apply the inverted chain in reverse order");
    d->add_flag("--repair-boundary", deform.repair, "Zero nonzero boundary nodes instead of failing");
    d->add_option("--out", deform.out, "Output OBJ")->required();
    d->callback([&] { result = run_deform(deform); });

    MetricsArgs metrics;
    auto* m = app.add_subcommand("metrics", "Compare a predicted mesh with a ground-truth mesh");
    m->add_option("--pred", metrics.pred, "Predicted OBJ")->required();
    m->add_option("--gt", metrics.gt, "Ground-truth OBJ")->required();
    m->add_option("--samples", metrics.samples, "Surface samples per mesh")->default_val(dmd::kDefaultSampleCount);
    m->add_option("--seed", metrics.seed, "Sampling seed")->default_val(0);
    m->add_option("--voxel-dims", metrics.voxel_dims, "Voxel grid dims (1 or 3 values)")->expected(1, 3);
    m->add_option("--voxel-spacing", metrics.voxel_spacing, "Voxel spacing (1 or 3 values)")->expected(1, 3);
    m->add_option("--voxel-origin", metrics.voxel_origin, "Centre of voxel (0,0,0)")->expected(3);
    m->add_option("--supersample", metrics.supersample, "Sub-voxels per axis")->default_val(4);
    m->add_option("--out", metrics.out, "Report JSON")->required();
    m->callback([&] { result = run_metrics(metrics); });

    FitArgs fit;
    auto* f = app.add_subcommand("fit", "Fit a staged deformation from a template to a target");
    f->add_option("--template", fit.template_mesh, "Template OBJ")->required();
    f->add_option("--target", fit.target, "Target OBJ")->required();
    f->add_option("--config", fit.config, "Fit config JSON")->required();
    f->add_option("--out-dir", fit.out_dir, "Output directory")->required();
    f->callback([&] { result = run_fit(fit); });

    std::string sub_mesh, sub_out;
    int sub_levels = 1;
    auto* s = app.add_subcommand("subdivide", "Midpoint-subdivide a mesh");
    s->add_option("--mesh", sub_mesh, "Input OBJ")->required();
    s->add_option("--levels", sub_levels, "Subdivision levels")->default_val(1);
    s->add_option("--out", sub_out, "Output OBJ")->required();
    s->callback([&] { result = run_subdivide(sub_mesh, sub_levels, sub_out); });

    std::string check_flow;
    int check_steps = 1;
    bool check_repair = false;
    auto* c = app.add_subcommand("check", "Report stability constants and gates of a flow field");
    c->add_option("--flow", check_flow, "DFF1 flow field")->required();
    c->add_option("--steps", check_steps, "Euler steps")->required();
    c->add_flag("--repair-boundary", check_repair, "Zero nonzero boundary nodes instead of failing");
    c->callback([&] { result = run_check(check_flow, check_steps, check_repair); });

    int ico_level = 3;
    double ico_radius = 1.0;
    std::vector<double> ico_axes, ico_center;
    std::string ico_out;
    auto* i = app.add_subcommand("icosphere", "Write an icosphere (optionally scaled per axis)");
    i->add_option("--level", ico_level, "Refinement level")->default_val(3);
    i->add_option("--radius", ico_radius, "Radius")->default_val(1.0);
    i->add_option("--axes", ico_axes, "Per-axis scale (1 or 3 values)")->expected(1, 3);
    i->add_option("--center", ico_center, "Centre")->expected(3);
    i->add_option("--out", ico_out, "Output OBJ")->required();
    i->callback([&] { result = run_icosphere(ico_level, ico_radius, ico_axes, ico_center, ico_out); });

    dmd::set_warning_handler([](const std::string& msg) { diag("warning", msg); });
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInput;
    } catch (const dmd::Error& e) {
        diag("error", e.what());
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        diag("error", e.what());
        return kInput;
    } catch (const std::exception& e) {
        diag("error", e.what());
        return kNumerical;
    }
    return result;
}
