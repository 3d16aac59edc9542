#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "dmd/flow_field.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dmd;

TEST_SUITE("flow_field")
{
    TEST_CASE("sample of a zero field is zero everywhere")
    {
        const FlowField field(fixture::cube_grid(5, -1, 1));
        std::mt19937_64 rng(1);
        for (const Vec3& p : fixture::random_points(100, -2, 2, rng))
            CHECK(sample(field, p) == Vec3::Zero());
    }

    TEST_CASE("sample reproduces node values exactly")
    {
        std::mt19937_64 rng(7);
        std::uniform_real_distribution<double> u(0.1, 2.0);
        for (int trial = 0; trial < 20; ++trial) {
            GridGeometry g;
            g.dims = Vec3i(4 + trial % 3, 5, 3 + trial % 4);
            g.origin = Vec3(u(rng) - 1, u(rng) - 1, u(rng) - 1);
            g.spacing = Vec3(u(rng), u(rng), u(rng));
            const auto field = fixture::random_field(g, rng);
            for (int i = 0; i < g.dims[0]; ++i)
                for (int j = 0; j < g.dims[1]; ++j)
                    for (int k = 0; k < g.dims[2]; ++k)
                        REQUIRE(sample(field, g.node_position(i, j, k)) ==
                                field.node(i, j, k).cast<double>());
        }
    }

    TEST_CASE("2x2x2 grid is all boundary so the centre samples to zero")
    {
        FlowField field(fixture::cube_grid(2, 0, 1));
        for (auto& x : field.data())
            x = 1.0f;
        field = enforce_zero_boundary(field);
        CHECK(sample(field, Vec3(0.5, 0.5, 0.5)) == Vec3::Zero());
    }

    TEST_CASE("cell-centre blend matches the scalar oracle")
    {
        FlowField field(fixture::cube_grid(4, 0, 3));
        field.node(1, 1, 1) = Eigen::Vector3f(2.0f, -1.0f, 0.5f);
        const Vec3 p(1.5, 1.5, 1.5);
        const Vec3 expected = oracle::trilinear(field.data(), 4, 4, 4, Vec3::Zero(), Vec3::Ones(), p);
        // one of the eight corners carries the value, weight 1/8
        CHECK(expected == Vec3(0.25, -0.125, 0.0625));
        CHECK(sample(field, p) == expected);

        std::mt19937_64 rng(3);
        const auto random = fixture::random_field(fixture::cube_grid(6, -1, 2), rng);
        for (const Vec3& q : fixture::random_points(500, -1.5, 2.5, rng)) {
            const Vec3 ref = oracle::trilinear(random.data(), 6, 6, 6, Vec3::Constant(-1), Vec3::Constant(0.6), q);
            CHECK((sample(random, q) - ref).norm() <= 1e-12);
        }
    }

    TEST_CASE("sample outside the support is exactly zero")
    {
        std::mt19937_64 rng(11);
        const auto field = fixture::random_field(fixture::cube_grid(6, 0, 1), rng);
        for (const Vec3& p : fixture::random_points(10000, -1, 2, rng))
            if (!field.geometry().contains(p))
                REQUIRE(sample(field, p) == Vec3::Zero());
    }

    TEST_CASE("stability constants of reference fields")
    {
        const FlowField zero(fixture::cube_grid(4, 0, 3));
        const auto z = stability_estimate(zero);
        CHECK(z.lipschitz == 0);
        CHECK(z.max_speed == 0);

        FlowField spike(fixture::cube_grid(4, 0, 3));
        spike.node(1, 1, 1) = Eigen::Vector3f(2, 0, 0);
        const auto s = stability_estimate(spike);
        CHECK(s.max_speed == 2);
        CHECK(s.lipschitz == 2);
        CHECK(s.per_axis_lipschitz == Vec3(2, 2, 2));
        CHECK(s.lipschitz_safe == doctest::Approx(2 * std::sqrt(3.0)));

        GridGeometry wide = spike.geometry();
        wide.spacing *= 4.0;
        const FlowField scaled(wide, spike.data());
        const auto w = stability_estimate(scaled);
        CHECK(w.lipschitz == doctest::Approx(0.5));
        CHECK(w.max_speed == 2);
    }

    TEST_CASE("stability estimate equals exhaustive enumeration")
    {
        std::mt19937_64 rng(5);
        for (int trial = 0; trial < 10; ++trial) {
            GridGeometry g = fixture::cube_grid(4 + trial % 5, -1, 1);
            g.spacing[1] *= 1.5;
            const auto field = fixture::random_field(g, rng, 0.3);
            const auto est = stability_estimate(field);
            const auto ref = oracle::exhaustive_lipschitz(field);
            CHECK(est.per_axis_lipschitz == ref.per_axis);
            CHECK(est.max_speed == ref.max_speed);
            CHECK(est.lipschitz == ref.per_axis.maxCoeff());
            CHECK(est.lipschitz_safe >= est.lipschitz);
        }
    }

    TEST_CASE("Lipschitz and boundedness properties of the interpolant")
    {
        std::mt19937_64 rng(21);
        GridGeometry g = fixture::cube_grid(7, -1, 1);
        g.spacing[2] = 0.25;
        const auto field = fixture::random_field(g, rng);
        const auto est = stability_estimate(field);
        std::uniform_real_distribution<double> u(-1.2, 1.5);
        std::uniform_int_distribution<int> axis_pick(0, 2);
        for (int n = 0; n < 10000; ++n) {
            const Vec3 x(u(rng), u(rng), u(rng));
            Vec3 y = x;
            const int axis = axis_pick(rng);
            y[axis] = u(rng);
            const double along = (sample(field, x) - sample(field, y)).norm();
            REQUIRE(along <= est.per_axis_lipschitz[axis] * std::abs(x[axis] - y[axis]) + 1e-6 * est.max_speed);

            const Vec3 z(u(rng), u(rng), u(rng));
            const double any = (sample(field, x) - sample(field, z)).norm();
            REQUIRE(any <= est.lipschitz_safe * (x - z).norm() + 1e-6 * est.max_speed);
            REQUIRE(sample(field, z).norm() <= est.max_speed * (1 + 1e-12));
        }
    }

    TEST_CASE("enforce_zero_boundary")
    {
        FlowField ones(fixture::cube_grid(3, 0, 2));
        for (auto& x : ones.data())
            x = 1.0f;
        const FlowField cleared = enforce_zero_boundary(ones);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) {
                    const bool centre = i == 1 && j == 1 && k == 1;
                    CHECK(cleared.node(i, j, k) == (centre ? Eigen::Vector3f(1, 1, 1) : Eigen::Vector3f::Zero()));
                }

        std::mt19937_64 rng(2);
        const auto valid = fixture::random_field(fixture::cube_grid(5, 0, 1), rng);
        CHECK(enforce_zero_boundary(valid).data() == valid.data());

        FlowField tiny(fixture::cube_grid(2, 0, 1));
        for (auto& x : tiny.data())
            x = 3.0f;
        const FlowField cleared_tiny = enforce_zero_boundary(tiny);
        for (float x : cleared_tiny.data())
            CHECK(x == 0.0f);
    }

    TEST_CASE("geometry validation")
    {
        GridGeometry g;
        g.dims = Vec3i(1, 4, 4);
        CHECK_THROWS_AS(FlowField{g}, PreconditionError);
        g.dims = Vec3i(4, 4, 4);
        g.spacing = Vec3(1, 0, 1);
        CHECK_THROWS_AS(FlowField{g}, PreconditionError);
    }
}

TEST_SUITE("flow_io")
{
    TEST_CASE("DFF1 store then load is bit-identical")
    {
        const auto dir = fixture::scratch_dir("dff_roundtrip");
        std::mt19937_64 rng(9);
        GridGeometry g;
        g.dims = Vec3i(5, 6, 7);
        g.origin = Vec3(-0.3, 1.7, 2.25);
        g.spacing = Vec3(0.1, 0.2, 0.3);
        const auto field = fixture::random_field(g, rng);
        const auto path = (dir / "f.dff").string();
        store_flow(field, path);
        const FlowField back = load_flow(path);
        CHECK(back.geometry() == field.geometry());
        CHECK(std::memcmp(back.data().data(), field.data().data(), field.data().size() * sizeof(float)) == 0);
        CHECK(std::filesystem::file_size(path) == 4 + 12 + 48 + g.node_count() * 3 * 4);
    }

    TEST_CASE("DFF1 header layout is little-endian")
    {
        const auto dir = fixture::scratch_dir("dff_layout");
        FlowField field(fixture::cube_grid(3, 0, 2));
        field.node(1, 1, 1) = Eigen::Vector3f(1.5f, 0, 0);
        const auto path = (dir / "f.dff").string();
        store_flow(field, path);
        std::ifstream in(path, std::ios::binary);
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        REQUIRE(bytes.size() == 64 + 27 * 12);
        CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DFF1");
        CHECK(bytes[4] == 3);
        CHECK(bytes[5] == 0);
        // spacing[0] = 1.0 as an IEEE double starts at byte 40
        CHECK(bytes[46] == 0xF0);
        CHECK(bytes[47] == 0x3F);
    }

    TEST_CASE("DFF1 structured errors")
    {
        const auto dir = fixture::scratch_dir("dff_errors");
        std::mt19937_64 rng(4);
        const auto field = fixture::random_field(fixture::cube_grid(4, 0, 1), rng);
        const auto good = (dir / "good.dff").string();
        store_flow(field, good);
        std::ifstream in(good, std::ios::binary);
        const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

        auto write = [&](const std::string& name, const std::string& content) {
            const auto p = (dir / name).string();
            std::ofstream(p, std::ios::binary) << content;
            return p;
        };
        auto code_of = [](const std::string& path, FlowLoadOptions opt = {}) {
            try {
                load_flow(path, opt);
            } catch (const FlowFileError& e) {
                return e.code();
            }
            FAIL("expected a FlowFileError");
            return FlowFileError::Code::Io;
        };

        std::string bad = bytes;
        bad[0] = 'X';
        CHECK(code_of(write("magic.dff", bad)) == FlowFileError::Code::BadMagic);
        CHECK(code_of(write("short.dff", bytes.substr(0, bytes.size() - 5))) == FlowFileError::Code::Truncated);
        CHECK(code_of(write("header.dff", bytes.substr(0, 10))) == FlowFileError::Code::Truncated);

        std::string dims = bytes;
        dims[4] = 1;
        CHECK(code_of(write("dims.dff", dims)) == FlowFileError::Code::BadDims);

        FlowField nan_field = field;
        nan_field.node(1, 1, 1)[0] = std::numeric_limits<float>::quiet_NaN();
        store_flow(nan_field, (dir / "nan.dff").string());
        CHECK(code_of((dir / "nan.dff").string()) == FlowFileError::Code::NonFinite);

        CHECK(code_of((dir / "missing.dff").string()) == FlowFileError::Code::Io);
    }

    TEST_CASE("nonzero boundary is rejected unless repaired with a warning")
    {
        const auto dir = fixture::scratch_dir("dff_repair");
        FlowField field(fixture::cube_grid(4, 0, 1));
        for (auto& x : field.data())
            x = 0.5f;
        const auto path = (dir / "b.dff").string();
        store_flow(field, path);
        CHECK_THROWS_AS(load_flow(path), FlowFileError);

        std::vector<std::string> warnings;
        set_warning_handler([&](const std::string& m) { warnings.push_back(m); });
        const FlowField repaired = load_flow(path, FlowLoadOptions{true});
        set_warning_handler(nullptr);
        CHECK(warnings.size() == 1);
        CHECK(has_zero_boundary(repaired));
        CHECK(repaired.node(1, 2, 1) == Eigen::Vector3f::Constant(0.5f));
    }
}
