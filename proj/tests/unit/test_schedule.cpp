#include <cmath>
#include <numbers>

#include "doctest.h"
#include "flowlab/errors.hpp"
#include "flowlab/schedule.hpp"

using namespace flowlab;
using doctest::Approx;

TEST_CASE("linear endpoints and midpoint") {
    auto p0 = eval_schedule(ScheduleKind::Linear, 0.0);
    CHECK(p0.alpha == 1.0);
    CHECK(p0.beta == 0.0);
    CHECK(p0.alpha_dot == -1.0);
    CHECK(p0.beta_dot == 1.0);
    auto p1 = eval_schedule(ScheduleKind::Linear, 1.0);
    CHECK(p1.alpha == 0.0);
    CHECK(p1.beta == 1.0);
    auto ph = eval_schedule(ScheduleKind::Linear, 0.5);
    CHECK(ph.alpha == 0.5);
    CHECK(ph.beta == 0.5);
}

TEST_CASE("trig endpoints are exact") {
    auto p0 = eval_schedule(ScheduleKind::Trigonometric, 0.0);
    CHECK(p0.alpha == 1.0);
    CHECK(p0.beta == 0.0);
    auto p1 = eval_schedule(ScheduleKind::Trigonometric, 1.0);
    CHECK(p1.alpha == 0.0);
    CHECK(p1.beta == 1.0);
    auto ph = eval_schedule(ScheduleKind::Trigonometric, 0.5);
    CHECK(ph.alpha == Approx(0.70711).epsilon(1e-5));
    CHECK(ph.beta == Approx(0.70711).epsilon(1e-5));
    CHECK(ph.alpha_dot == Approx(-1.11072).epsilon(1e-5));
    CHECK(ph.beta_dot == Approx(1.11072).epsilon(1e-5));
}

TEST_CASE("wronskian and positivity on a dense grid") {
    for (auto kind : {ScheduleKind::Linear, ScheduleKind::Trigonometric}) {
        for (int k = 0; k <= 1000; ++k) {
            const double t = k / 1000.0;
            auto p = eval_schedule(kind, t);
            CHECK(p.alpha * p.alpha + p.beta * p.beta > 0.0);
            const double w = p.beta_dot * p.alpha - p.alpha_dot * p.beta;
            if (kind == ScheduleKind::Linear) {
                CHECK(std::abs(w - 1.0) < 1e-15);
                CHECK(p.wronskian == 1.0);
            } else {
                CHECK(std::abs(w - std::numbers::pi / 2) < 1e-12);
                CHECK(p.wronskian == std::numbers::pi / 2);
            }
        }
    }
}

TEST_CASE("derivatives match central differences") {
    const double h = 1e-5;
    for (auto kind : {ScheduleKind::Linear, ScheduleKind::Trigonometric}) {
        for (double t : {0.1, 0.3, 0.5, 0.77, 0.99}) {
            auto lo = eval_schedule(kind, t - h);
            auto hi = eval_schedule(kind, t + h);
            auto p = eval_schedule(kind, t);
            CHECK(std::abs((hi.alpha - lo.alpha) / (2 * h) - p.alpha_dot) < 1e-8);
            CHECK(std::abs((hi.beta - lo.beta) / (2 * h) - p.beta_dot) < 1e-8);
        }
    }
}

TEST_CASE("domain and parsing") {
    CHECK_THROWS_AS(eval_schedule(ScheduleKind::Linear, -1e-9), DomainError);
    CHECK_THROWS_AS(eval_schedule(ScheduleKind::Trigonometric, 1.5), DomainError);
    CHECK_THROWS_AS(eval_schedule(ScheduleKind::Linear, std::nan("")), DomainError);
    CHECK(parse_schedule("linear") == ScheduleKind::Linear);
    CHECK(parse_schedule("trig") == ScheduleKind::Trigonometric);
    CHECK_THROWS_AS(parse_schedule("cosine"), UsageError);
    CHECK(to_string(ScheduleKind::Trigonometric) == "trig");
}
