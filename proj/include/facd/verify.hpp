#pragma once

#include "facd/scorer.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace facd::verify {

using ad::Mat;
using ad::Var;
using nn::json;

struct CheckResult {
    std::string name;
    bool passed = false;
    double residual = 0;
    double tolerance = 0;
    json detail = json::object();

    json to_json() const;
};

// Continuous pairwise weight used by the relaxation checks; replaceable for fault injection.
using GammaFn = std::function<double(double, double, double, double, score::GammaVariant)>;
GammaFn default_gamma();
// Cross terms with the wrong sign: a deliberately broken relaxation.
GammaFn corrupted_gamma();

// Relative gradient error ||g - g_fd|| / max(||g|| + ||g_fd||, floor) over every
// input, using central differences of step h.
double gradient_check(const std::function<Var(std::span<const Var>)>& f, std::span<const Var> inputs, double h = 1e-6);

CheckResult check_pair_weight_sum(std::uint64_t seed, int instances = 100);
CheckResult check_gamma_limits(const GammaFn& gamma, double m = 30, double n = 10);
CheckResult check_relaxed_equivalence(const GammaFn& gamma, std::uint64_t seed, int trials = 20);
CheckResult check_scorer_bruteforce(const GammaFn& gamma, std::uint64_t seed, int trials = 20);
std::vector<CheckResult> check_gradients(std::uint64_t seed);
CheckResult check_trend(const score::TrendSpec& spec);
CheckResult check_eigengap_blocks();
CheckResult check_eigengap_gaussian(std::uint64_t seed, int seeds = 5);
CheckResult check_attention_rows(std::uint64_t seed);

struct VerifyOptions {
    std::uint64_t seed = 0;
    bool inject_gamma_fault = false;
    int trend_trials = 200;
};

// Full property suite; the report has "passed" and a "checks" array.
json run_verify(const VerifyOptions& opt);

}  // namespace facd::verify
