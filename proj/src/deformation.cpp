#include "dmd/deformation.hpp"

#include <iomanip>

namespace dmd {

namespace {

std::string gate_message(double step, double lipschitz, double lipschitz_safe, int suggested_steps, int stage_index)
{
    std::ostringstream msg;
    msg << std::setprecision(6);
    if (stage_index >= 0)
        msg << "stage " << stage_index << ": ";
    msg << "step-size gate violated: h = " << step << ", L = " << lipschitz << ", L_safe = " << lipschitz_safe
        << ", h*L_safe = " << step * lipschitz_safe << " >= 1; use at least " << suggested_steps << " steps";
    return msg.str();
}

} // namespace

GateViolation::GateViolation(double step, double lipschitz, double lipschitz_safe, int suggested_steps, int stage_index)
    : PreconditionError(gate_message(step, lipschitz, lipschitz_safe, suggested_steps, stage_index)),
      step_(step),
      lipschitz_(lipschitz),
      lipschitz_safe_(lipschitz_safe),
      suggested_steps_(suggested_steps),
      stage_index_(stage_index)
{
}

GatePolicy parse_gate_policy(std::string_view name)
{
    if (name == "strict")
        return GatePolicy::Strict;
    if (name == "warn")
        return GatePolicy::Warn;
    if (name == "off")
        return GatePolicy::Off;
    throw FormatError("unknown gate policy '" + std::string(name) + "' (expected strict, warn or off)");
}

std::string to_string(GatePolicy policy)
{
    switch (policy) {
    case GatePolicy::Strict:
        return "strict";
    case GatePolicy::Warn:
        return "warn";
    case GatePolicy::Off:
        return "off";
    }
    return "strict";
}

} // namespace dmd
