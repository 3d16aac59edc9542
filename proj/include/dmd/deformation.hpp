#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dmd/flow_field.hpp"
#include "dmd/mesh.hpp"

namespace dmd {

/// What to do when a stage violates h * L_safe < 1.
enum class GatePolicy { Strict, Warn, Off };

GatePolicy parse_gate_policy(std::string_view name);
std::string to_string(GatePolicy policy);

class GateViolation : public PreconditionError {
public:
    GateViolation(double step, double lipschitz, double lipschitz_safe, int suggested_steps, int stage_index = -1);

    double step() const noexcept { return step_; }
    double lipschitz() const noexcept { return lipschitz_; }
    double lipschitz_safe() const noexcept { return lipschitz_safe_; }
    int suggested_steps() const noexcept { return suggested_steps_; }
    int stage_index() const noexcept { return stage_index_; }

private:
    double step_, lipschitz_, lipschitz_safe_;
    int suggested_steps_, stage_index_;
};

class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, double residual) : NumericalError(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// One application of the deformation module: a validated field integrated with
/// n forward Euler steps of size h = 1/n over unit time.
template <typename Scalar>
class BasicDeformationStage {
public:
    BasicDeformationStage(BasicFlowField<Scalar> field, int steps) : field_(std::move(field)), steps_(steps)
    {
        if (steps_ < 1)
            throw PreconditionError("integration steps must be >= 1");
        check_field(field_);
        stability_ = stability_estimate(field_);
    }

    const BasicFlowField<Scalar>& field() const { return field_; }
    int steps() const { return steps_; }
    double step_size() const { return 1.0 / steps_; }
    const StabilityEstimate& stability() const { return stability_; }

    /// h * L_safe; the stage is a homeomorphism when this is below one.
    double gate_product() const { return step_size() * stability_.lipschitz_safe; }
    double gate_margin() const { return 1.0 - gate_product(); }
    bool satisfies_gate() const { return gate_product() < 1.0; }
    /// The looser rule of thumb h * L <= 1.
    bool satisfies_nominal_gate() const { return step_size() * stability_.lipschitz <= 1.0; }

    int minimal_compliant_steps() const { return static_cast<int>(std::ceil(stability_.lipschitz_safe)) + 1; }

private:
    BasicFlowField<Scalar> field_;
    int steps_;
    StabilityEstimate stability_;
};

using DeformationStage = BasicDeformationStage<float>;

template <typename Scalar>
struct BasicDeformationChain {
    std::vector<BasicDeformationStage<Scalar>> stages;
};

using DeformationChain = BasicDeformationChain<float>;

struct InverseOptions {
    double tolerance = 1e-12;
    int max_iterations = 100;
};

struct InverseStep {
    Vec3 point = Vec3::Zero();
    int iterations = 0;
    double residual = 0; // |y - x - h v(x)| at the returned point bound
};

enum class Direction { Forward, Inverse };

/// x + h v(x)
template <typename Scalar>
Vec3 euler_step(const BasicFlowField<Scalar>& field, const Vec3& x, double h)
{
    return x + h * sample(field, x);
}

/// Applies the gate policy. Throws GateViolation under Strict, warns under Warn.
template <typename Scalar>
void check_gate(const BasicDeformationStage<Scalar>& stage, GatePolicy policy, int stage_index = -1)
{
    if (policy == GatePolicy::Off || stage.satisfies_gate())
        return;
    GateViolation violation(stage.step_size(), stage.stability().lipschitz, stage.stability().lipschitz_safe,
                            stage.minimal_compliant_steps(), stage_index);
    if (policy == GatePolicy::Strict)
        throw violation;
    warn(violation.what());
}

template <typename Scalar>
Vec3 integrate_point(const BasicDeformationStage<Scalar>& stage, Vec3 x)
{
    const double h = stage.step_size();
    for (int step = 0; step < stage.steps(); ++step)
        x = euler_step(stage.field(), x, h);
    return x;
}

/// Advances every point through n Euler steps. Output order matches input.
template <typename Scalar>
Points integrate(const BasicDeformationStage<Scalar>& stage, const Points& points, GatePolicy gate = GatePolicy::Strict)
{
    check_gate(stage, gate);
    Points out(points.size());
    const long count = static_cast<long>(points.size());
#pragma omp parallel for schedule(static) if (count > 1024)
    for (long i = 0; i < count; ++i)
        out[i] = integrate_point(stage, points[i]);
    return out;
}

/// Solves y = x + h v(x) by the contraction x <- y - h v(x) started at x = y.
/// Does not check the gate; callers holding a violating stage get no convergence guarantee.
template <typename Scalar>
InverseStep invert_step(const BasicDeformationStage<Scalar>& stage, const Vec3& y, const InverseOptions& options = {})
{
    const double h = stage.step_size();
    InverseStep result;
    Vec3 x = y;
    double change = 0;
    for (int it = 1; it <= options.max_iterations; ++it) {
        const Vec3 next = y - h * sample(stage.field(), x);
        change = (next - x).norm();
        x = next;
        if (change <= options.tolerance) {
            result.point = x;
            result.iterations = it;
            result.residual = change;
            return result;
        }
    }
    std::ostringstream msg;
    msg << "fixed-point inversion did not converge in " << options.max_iterations
        << " iterations (residual " << change << ")";
    throw ConvergenceError(msg.str(), change);
}

template <typename Scalar>
Vec3 integrate_inverse_point(const BasicDeformationStage<Scalar>& stage, Vec3 y, const InverseOptions& options)
{
    for (int step = 0; step < stage.steps(); ++step)
        y = invert_step(stage, y, options).point;
    return y;
}

/// Undoes integrate() by inverting the n discrete steps in reverse order.
/// Requires h * L_safe < 1 regardless of policy.
template <typename Scalar>
Points integrate_inverse(const BasicDeformationStage<Scalar>& stage, const Points& points,
                         const InverseOptions& options = {})
{
    check_gate(stage, GatePolicy::Strict);
    Points out(points.size());
    const long count = static_cast<long>(points.size());
    std::vector<char> failed(points.size(), 0);
    std::vector<double> residual(points.size(), 0.0);
#pragma omp parallel for schedule(static) if (count > 1024)
    for (long i = 0; i < count; ++i) {
        try {
            out[i] = integrate_inverse_point(stage, points[i], options);
        } catch (const ConvergenceError& e) {
            failed[i] = 1;
            residual[i] = e.residual();
        }
    }
    for (long i = 0; i < count; ++i)
        if (failed[i]) {
            std::ostringstream msg;
            msg << "inversion of point " << i << " did not converge in " << options.max_iterations
                << " iterations (residual " << residual[i] << ")";
            throw ConvergenceError(msg.str(), residual[i]);
        }
    return out;
}

/// Moves the mesh vertices through every stage in order (or, for Direction::Inverse,
/// through the inverted stages in reverse order). Faces are copied unchanged.
template <typename Scalar>
TriangleMesh apply_chain(const BasicDeformationChain<Scalar>& chain, const TriangleMesh& mesh,
                         GatePolicy gate = GatePolicy::Strict, Direction direction = Direction::Forward,
                         const InverseOptions& options = {})
{
    TriangleMesh out = mesh;
    const int count = static_cast<int>(chain.stages.size());
    for (int s = 0; s < count; ++s) {
        const int index = direction == Direction::Forward ? s : count - 1 - s;
        const auto& stage = chain.stages[index];
        try {
            if (direction == Direction::Forward) {
                check_gate(stage, gate, index);
                out.vertices = integrate(stage, out.vertices, GatePolicy::Off);
            } else {
                check_gate(stage, GatePolicy::Strict, index);
                out.vertices = integrate_inverse(stage, out.vertices, options);
            }
        } catch (const ConvergenceError& e) {
            throw ConvergenceError("stage " + std::to_string(index) + ": " + e.what(), e.residual());
        }
    }
    return out;
}

} // namespace dmd
