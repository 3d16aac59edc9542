#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "dmd/fit.hpp"
#include "dmd/intersection.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dmd;

namespace {

/// Smallest relative-error denominator is a fraction of the largest gradient entry.
double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric)
{
    double scale = 0;
    for (double f : numeric)
        scale = std::max(scale, std::abs(f));
    double worst = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-3 * scale, 1e-300});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

TriangleMesh cube_mesh(double half)
{
    TriangleMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back(Vec3(i & 1 ? half : -half, i & 2 ? half : -half, i & 4 ? half : -half));
    m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
               {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    return m;
}

FitConfig small_config(int iterations)
{
    FitConfig c;
    StageConfig s;
    s.grid_dims = Vec3i::Constant(6);
    s.steps = 4;
    s.iterations = iterations;
    s.step_size = 2.0;
    c.stages = {s};
    c.sample_count = 500;
    c.seed = 11;
    c.evaluation_samples = 5000;
    return c;
}

} // namespace

TEST_SUITE("fit_config")
{
    TEST_CASE("parse, defaults and round trip")
    {
        const auto j = nlohmann::json::parse(R"({
            "stages": [
                {"grid_dims": 8, "steps": 8, "iterations": 300, "step_size": 4.0},
                {"grid_dims": [12, 12, 14], "steps": 8, "iterations": 100, "step_size": 2.0,
                 "template_subdivision_level": 1}
            ],
            "loss_weights": {"edge": 0.5},
            "seed": 3,
            "gate": "warn"
        })");
        const FitConfig c = fit_config_from_json(j);
        REQUIRE(c.stages.size() == 2);
        CHECK(c.stages[0].grid_dims == Vec3i::Constant(8));
        CHECK(c.stages[1].grid_dims == Vec3i(12, 12, 14));
        CHECK(c.stages[1].template_subdivision_level == 1);
        CHECK(c.weights.chamfer == 1.0);
        CHECK(c.weights.edge == 0.5);
        CHECK(c.gate == GatePolicy::Warn);
        CHECK(c.momentum == 0.9);
        CHECK(c.seed == 3);

        const FitConfig back = fit_config_from_json(to_json(c));
        CHECK(to_json(back) == to_json(c));
    }

    TEST_CASE("field-level errors")
    {
        auto message = [](const char* text) {
            try {
                fit_config_from_json(nlohmann::json::parse(text));
            } catch (const FormatError& e) {
                return std::string(e.what());
            }
            return std::string("no error");
        };
        auto mentions = [&](const char* text, const char* field) {
            return message(text).find(field) != std::string::npos;
        };
        CHECK(mentions(R"({"stages": []})", "'stages'"));
        CHECK(mentions(R"({})", "'stages'"));
        CHECK(mentions(R"({"stages": [{"grid_dims": 8, "iterations": 1, "step_size": 1}]})", "'stages[0].steps'"));
        CHECK(mentions(R"({"stages": [{"grid_dims": 8, "steps": "8", "iterations": 1, "step_size": 1}]})",
                       "'stages[0].steps'"));
        CHECK(mentions(R"({"stages": [{"grid_dims": 2, "steps": 8, "iterations": 1, "step_size": 1}]})",
                       "'stages[0].grid_dims'"));
        CHECK(mentions(R"({"stages": [{"grid_dims": 8, "steps": 8, "iterations": 1, "step_size": -1}]})",
                       "'stages[0].step_size'"));
        CHECK(mentions(R"({"stages": [{"grid_dims": 8, "steps": 8, "iterations": 1, "step_size": 1, "lr": 2}]})",
                       "'stages[0].lr'"));
        CHECK(mentions(R"({"stages": [{"grid_dims": 8, "steps": 8, "iterations": 1, "step_size": 1}], "gate": "x"})",
                       "'gate'"));
        CHECK(mentions(R"({"stages": [{"grid_dims": 8, "steps": 8, "iterations": 1, "step_size": 1}],
                          "momentum": 1.5})",
                       "'momentum'"));
        CHECK(mentions(R"({"stages": [{"grid_dims": 8, "steps": 8, "iterations": 1, "step_size": 1}], "extra": 1})",
                       "'extra'"));
        CHECK(mentions(R"([1, 2])", "top level"));
    }
}

TEST_SUITE("normalization")
{
    TEST_CASE("joint normalization puts both meshes in the unit ball")
    {
        const auto a = icosphere(2, 3.0, Vec3(10, 0, 0));
        const auto b = fixture::scaled(icosphere(2, 1.0), Vec3(5, 1, 1));
        const auto n = joint_normalization(a, b);
        double radius = 0;
        for (const auto* m : {&a, &b})
            for (const Vec3& v : to_unit(*m, n).vertices)
                radius = std::max(radius, v.norm());
        CHECK(radius == doctest::Approx(1.0));
        const auto back = to_world(to_unit(a, n), n);
        for (std::size_t i = 0; i < a.vertex_count(); ++i)
            CHECK((back.vertices[i] - a.vertices[i]).norm() < 1e-12);
    }

    TEST_CASE("world field expresses the unit field in world coordinates")
    {
        std::mt19937_64 rng(2);
        Normalization n;
        n.center = Vec3(1, -2, 3);
        n.scale = 2.5;
        const auto unit = fixture::random_field<double>(fixture::cube_grid(6, -1.25, 1.25), rng, 0.1);
        const FlowField world = to_world(unit, n);
        for (const Vec3& u : fixture::random_points(500, -1.3, 1.3, rng)) {
            const Vec3 expected = n.scale * sample(unit, u);
            CHECK((sample(world, n.to_world(u)) - expected).norm() < 1e-6);
        }
        const auto su = stability_estimate(unit), sw = stability_estimate(world);
        CHECK(sw.lipschitz == doctest::Approx(su.lipschitz).epsilon(1e-6));
        CHECK(sw.max_speed == doctest::Approx(n.scale * su.max_speed).epsilon(1e-6));
    }
}

TEST_SUITE("fit_gradient")
{
    TEST_CASE("zero parameters without edge weight give the plain squared chamfer")
    {
        const auto tmpl = icosphere(2, 0.7);
        const auto target = fixture::scaled(icosphere(2, 0.7), Vec3(1, 0.8, 0.6));
        const auto target_cloud = sample_surface(target, 800, 1);
        const auto grid = fixture::cube_grid(6, -1.25, 1.25);
        const StageContext ctx(grid, 4, tmpl, FitChain{}, LossWeights{1.0, 0.0}, 800);
        const auto state = forward_loss(FlowFieldd(grid), ctx, target_cloud, 99);
        const auto cloud = sample_surface(tmpl, 800, 99);
        CHECK(state.predicted.vertices == tmpl.vertices);
        CHECK(state.total == oracle::brute_chamfer(cloud.points, target_cloud.points, true));
        CHECK(state.edge_term == edge_loss(tmpl));
    }

    TEST_CASE("target equal to template leaves only sampling noise and the edge term")
    {
        const auto tmpl = icosphere(3, 0.8);
        const auto grid = fixture::cube_grid(6, -1.25, 1.25);
        const StageContext ctx(grid, 4, tmpl, FitChain{}, LossWeights{}, 4000);
        const auto state = forward_loss(FlowFieldd(grid), ctx, sample_surface(tmpl, 4000, 2), 3);
        CHECK(state.chamfer_term < 1e-3);
        CHECK(state.edge_term == edge_loss(tmpl));
        CHECK(state.total == doctest::Approx(state.chamfer_term + state.edge_term));
    }

    TEST_CASE("loss agrees with the chain and metrics modules")
    {
        std::mt19937_64 rng(3);
        const auto tmpl = icosphere(2, 0.8);
        const auto target_cloud = sample_surface(fixture::scaled(tmpl, Vec3(1.1, 0.9, 0.8)), 600, 4);
        FitChain frozen;
        frozen.stages.push_back(fixture::random_gated_stage<double>(fixture::cube_grid(5, -1.25, 1.25), 3, 0.5, rng));
        const LossWeights w{1.3, 0.7};
        const auto grid = fixture::cube_grid(7, -1.25, 1.25);
        const StageContext ctx(grid, 5, tmpl, frozen, w, 600);
        for (int trial = 0; trial < 5; ++trial) {
            const auto params = fixture::random_gated_stage<double>(grid, 5, 0.6, rng).field();
            const auto state = forward_loss(params, ctx, target_cloud, 100 + trial);

            FitChain chain = frozen;
            chain.stages.emplace_back(params, 5);
            const TriangleMesh moved = apply_chain(chain, tmpl);
            const SampledCloud cloud = replay_samples(moved, state.predicted_cloud);
            const double expected = w.chamfer * chamfer(cloud, target_cloud, ChamferMode::SquaredDistance) +
                                    w.edge * edge_loss(moved);
            CHECK(std::abs(state.total - expected) <= 1e-12);
        }
    }

    TEST_CASE("single point closed form")
    {
        // 3^3 grid: only the centre node is a parameter
        const auto grid = fixture::cube_grid(3, -1, 1);
        const Vec3 x(0.3, -0.2, 0.55), q(1.0, 0.5, -0.25);
        const double w_centre = (1 - 0.3) * (1 - 0.2) * (1 - 0.55);
        for (int steps : {1, 4}) {
            const FlowFieldd zero(grid);
            const auto trajectory = integrate_trajectory(zero, steps, {x});
            const auto grad = backpropagate_trajectory(zero, trajectory, {2.0 * (x - q)});
            const Vec3 expected = 2.0 * (x - q) * w_centre;
            CHECK((grad.node(1, 1, 1) - expected).norm() < 1e-15);
            for (int idx = 0; idx < 27; ++idx)
                if (idx != grid.node_index(1, 1, 1))
                    CHECK(grad.node(idx) == Vec3::Zero());
        }

        // through the chamfer with one sample and one target point
        TriangleMesh tri;
        tri.vertices = {Vec3(0.1, 0.1, 0.1), Vec3(0.5, 0.1, 0.1), Vec3(0.1, 0.5, 0.2)};
        tri.faces = {{0, 1, 2}};
        const StageContext ctx(grid, 1, tri, FitChain{}, LossWeights{1.0, 0.0}, 1);
        const auto target = make_cloud({q});
        const auto state = forward_loss(FlowFieldd(grid), ctx, target, 5);
        const Vec3 p = state.predicted_cloud.points[0];
        const auto grad = backward(state, ctx, target);
        Vec3 expected = Vec3::Zero();
        for (int k = 0; k < 3; ++k) {
            const Vec3 g = (tri.vertices[k] - grid.origin).cwiseQuotient(grid.spacing);
            const double w = (1 - std::abs(g[0] - 1)) * (1 - std::abs(g[1] - 1)) * (1 - std::abs(g[2] - 1));
            expected += state.predicted_cloud.barycentric[0][k] * 2.0 * (p - q) * w;
        }
        CHECK((grad.node(1, 1, 1) - expected).norm() < 1e-14);
    }

    TEST_CASE("analytic gradient matches central differences")
    {
        std::mt19937_64 rng(4);
        const auto grid = fixture::cube_grid(4, -1.25, 1.25);
        double worst = 0;
        for (int trial = 0; trial < 8; ++trial) {
            auto tmpl = cube_mesh(0.5);
            std::normal_distribution<double> jitter(0, 0.05);
            for (auto& v : tmpl.vertices)
                v += Vec3(jitter(rng), jitter(rng), jitter(rng));
            const auto target = sample_surface(fixture::scaled(icosphere(1, 0.7), Vec3(1, 0.8, 1.2)), 50, trial);
            const StageContext ctx(grid, 2, tmpl, FitChain{}, LossWeights{1.0, 0.5}, 40);
            const auto params = fixture::random_gated_stage<double>(grid, 2, 0.5, rng).field();
            const auto state = forward_loss(params, ctx, target, 7 + trial);
            const auto grad = backward(state, ctx, target);

            std::vector<double> analytic, numeric;
            const double eps = 1e-6;
            for (int i = 1; i <= 2; ++i)
                for (int j = 1; j <= 2; ++j)
                    for (int k = 1; k <= 2; ++k)
                        for (int c = 0; c < 3; ++c) {
                            FlowFieldd plus = params, minus = params;
                            plus.node(i, j, k)[c] += eps;
                            minus.node(i, j, k)[c] -= eps;
                            const double fp = forward_loss(plus, ctx, target, 0, &state.predicted_cloud).total;
                            const double fm = forward_loss(minus, ctx, target, 0, &state.predicted_cloud).total;
                            numeric.push_back((fp - fm) / (2 * eps));
                            analytic.push_back(grad.node(i, j, k)[c]);
                        }
            worst = std::max(worst, max_relative_error(analytic, numeric));
        }
        CHECK(worst < 1e-5);
    }

    TEST_CASE("gradient vanishes where the loss is locally constant")
    {
        const auto grid = fixture::cube_grid(5, -1.25, 1.25);
        const auto tmpl = icosphere(1, 0.5, Vec3(5, 5, 5));
        const StageContext ctx(grid, 2, tmpl, FitChain{}, LossWeights{}, 100);
        std::mt19937_64 rng(5);
        const auto params = fixture::random_gated_stage<double>(grid, 2, 0.5, rng).field();
        const auto target = sample_surface(icosphere(1, 0.5), 100, 1);
        const auto state = forward_loss(params, ctx, target, 1);
        const auto grad = backward(state, ctx, target);
        for (double g : grad.data())
            CHECK(g == 0);
    }

    TEST_CASE("boundary nodes carry zero gradient")
    {
        std::mt19937_64 rng(6);
        const auto grid = fixture::cube_grid(5, -1.0, 1.0);
        const auto tmpl = icosphere(2, 0.95);
        const StageContext ctx(grid, 2, tmpl, FitChain{}, LossWeights{}, 300);
        const auto params = fixture::random_gated_stage<double>(grid, 2, 0.5, rng).field();
        const auto target = sample_surface(icosphere(2, 0.6), 300, 1);
        const auto grad = backward(forward_loss(params, ctx, target, 1), ctx, target);
        CHECK(has_zero_boundary(grad));
    }
}

TEST_SUITE("fit_optimizer")
{
    TEST_CASE("target equal to template does not get worse")
    {
        const auto tmpl = icosphere(2, 0.9);
        auto config = small_config(30);
        const auto r = fit_stage(config, 0, FitChain{}, tmpl, tmpl);
        REQUIRE(!r.trace.empty());
        CHECK(r.best_total <= r.trace.front().total);
        CHECK(r.stage.satisfies_gate());
        CHECK(has_zero_boundary(r.stage.field()));

        // without the edge term zero velocity is a minimizer up to sampling noise
        config.weights.edge = 0;
        const auto plain = fit_stage(config, 0, FitChain{}, tmpl, tmpl);
        CHECK(plain.best_total <= plain.trace.front().total);
        CHECK(plain.stage.stability().max_speed < 0.1);
    }

    TEST_CASE("stage fit reduces the loss and is deterministic")
    {
        const auto tmpl = icosphere(2, 0.9);
        const auto target = fixture::scaled(icosphere(2, 0.9), Vec3(1.0, 0.8, 0.65));
        const auto config = small_config(40);
        const auto a = fit_stage(config, 0, FitChain{}, tmpl, target);
        const auto b = fit_stage(config, 0, FitChain{}, tmpl, target);
        CHECK(a.best_total < 0.7 * a.trace.front().total);
        REQUIRE(a.trace.size() == b.trace.size());
        for (std::size_t i = 0; i < a.trace.size(); ++i) {
            CHECK(a.trace[i].total == b.trace[i].total);
            CHECK(a.trace[i].grad_norm == b.trace[i].grad_norm);
        }
        CHECK(a.stage.field().data() == b.stage.field().data());
        CHECK(a.stage.satisfies_gate());
        double best_so_far = std::numeric_limits<double>::infinity();
        for (const auto& r : a.trace) {
            CHECK(r.gate_margin > 0);
            if (r.accepted)
                best_so_far = std::min(best_so_far, r.total);
        }
        CHECK(a.best_total == best_so_far);
        CHECK(a.trace[a.best_iteration].total == a.best_total);
    }

    TEST_CASE("one-stage pipeline is a stage fit on normalized meshes")
    {
        const auto tmpl = icosphere(2, 2.0, Vec3(1, 1, 1));
        const auto target = fixture::scaled(icosphere(2, 2.0), Vec3(1.0, 0.8, 0.65));
        auto shifted = target;
        for (auto& v : shifted.vertices)
            v += Vec3(1, 1, 1);
        const auto config = small_config(10);
        const auto p = fit_pipeline(config, tmpl, shifted);
        const auto n = joint_normalization(tmpl, shifted);
        const auto s = fit_stage(config, 0, FitChain{}, to_unit(tmpl, n), to_unit(shifted, n));
        REQUIRE(p.unit_chain.stages.size() == 1);
        CHECK(p.unit_chain.stages[0].field().data() == s.stage.field().data());
        CHECK(p.chamfer_history.size() == 2);
        CHECK(p.traces.size() == 1);
        CHECK(p.final_mesh.faces == tmpl.faces);
        const auto moved = apply_chain(p.chain, tmpl);
        CHECK(moved.vertices == p.final_mesh.vertices);
    }

    TEST_CASE("loss reports serialize")
    {
        LossReport r;
        r.stage = 1;
        r.iteration = 7;
        r.total = 0.5;
        r.accepted = false;
        const auto j = to_json(r);
        CHECK(j.at("stage") == 1);
        CHECK(j.at("iteration") == 7);
        CHECK(j.at("accepted") == false);
        CHECK(j.at("total").get<double>() == 0.5);
    }
}

TEST_SUITE("fit_pipeline")
{
    TEST_CASE("three stages never raise the chamfer on the ellipsoid task")
    {
        FitConfig config;
        const auto stage = [](int dims, int iterations, int level) {
            StageConfig s;
            s.grid_dims = Vec3i::Constant(dims);
            s.steps = 8;
            s.iterations = iterations;
            s.step_size = 1.0;
            s.template_subdivision_level = level;
            return s;
        };
        config.stages = {stage(8, 300, 0), stage(12, 150, 1), stage(16, 100, 1)};
        const auto result = fit_pipeline(config, icosphere(3), fixture::scaled(icosphere(3), Vec3(1, 0.8, 0.65)));
        const auto& ch = result.chamfer_history;
        REQUIRE(ch.size() == 4);
        for (std::size_t i = 0; i + 1 < ch.size(); ++i)
            CHECK(ch[i + 1] <= ch[i]);
        CHECK(ch[3] < 0.25 * ch[0]);
        for (const auto& s : result.chain.stages)
            CHECK(s.satisfies_gate());
        CHECK(self_intersecting_faces(result.final_mesh).count == 0);
    }
}
