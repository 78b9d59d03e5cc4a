#include "flowlab/schedule.hpp"

#include <cmath>
#include <numbers>

#include "flowlab/errors.hpp"

namespace flowlab {

SchedulePoint eval_schedule(ScheduleKind kind, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw DomainError("schedule time must lie in [0, 1], got " + std::to_string(t));
    }
    SchedulePoint sp;
    sp.t = t;
    switch (kind) {
    case ScheduleKind::Linear:
        sp.alpha = 1.0 - t;
        sp.beta = t;
        sp.alpha_dot = -1.0;
        sp.beta_dot = 1.0;
        sp.wronskian = 1.0;
        break;
    case ScheduleKind::Trigonometric: {
        constexpr double half_pi = std::numbers::pi / 2.0;
        if (t == 0.0) {
            sp.alpha = 1.0;
            sp.beta = 0.0;
        } else if (t == 1.0) {
            // cos(π/2) is 6e-17 in floating point; pin the endpoint.
            sp.alpha = 0.0;
            sp.beta = 1.0;
        } else {
            sp.alpha = std::cos(half_pi * t);
            sp.beta = std::sin(half_pi * t);
        }
        sp.alpha_dot = -half_pi * sp.beta;
        sp.beta_dot = half_pi * sp.alpha;
        sp.wronskian = half_pi;
        break;
    }
    }
    return sp;
}

ScheduleKind parse_schedule(std::string_view name) {
    if (name == "linear") return ScheduleKind::Linear;
    if (name == "trig") return ScheduleKind::Trigonometric;
    throw UsageError("unknown schedule '" + std::string(name) + "' (expected linear|trig)");
}

std::string to_string(ScheduleKind kind) {
    return kind == ScheduleKind::Linear ? "linear" : "trig";
}

}  // namespace flowlab
