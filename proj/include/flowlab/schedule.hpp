#pragma once

#include <string>
#include <string_view>

namespace flowlab {

// Interpolation schedules x_t = α(t) x0 + β(t) x1. Closed set: the flow
// coefficients rely on each kind's closed-form Wronskian near α(1) = 0.
enum class ScheduleKind { Linear, Trigonometric };

struct SchedulePoint {
    double t = 0.0;
    double alpha = 1.0;
    double beta = 0.0;
    double alpha_dot = 0.0;
    double beta_dot = 0.0;
    // β̇α − α̇β, exact per kind (1 for Linear, π/2 for Trigonometric).
    double wronskian = 1.0;
};

// Throws DomainError when t ∉ [0, 1]. Endpoints are exact: α(0) = β(1) = 1,
// α(1) = β(0) = 0.
SchedulePoint eval_schedule(ScheduleKind kind, double t);

// "linear" | "trig"
ScheduleKind parse_schedule(std::string_view name);
std::string to_string(ScheduleKind kind);

}  // namespace flowlab
