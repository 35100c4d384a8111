#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sara/autodiff.hpp"
#include "sara/rng.hpp"

// Central finite-difference verification of the autodiff rules.
namespace sara::gradcheck {

struct Options {
    double h = 1e-5;
    double tolerance = 1e-4;
    std::size_t instances = 20;
    std::uint64_t seed = 0;
    // Per-instance coordinate budget for network cases (0: every coordinate).
    std::size_t network_coords = 48;
};

// Scalar functional of the parameters; must bind them through the tape.
using Functional = std::function<Var<double>(Tape<double>&)>;

// Largest componentwise |g_auto - g_fd| / max(|g_auto|, |g_fd|, 1e-8) over
// the selected coordinates of `params` (all when coords == 0).
double max_relative_error(const std::vector<Parameter<double>*>& params, const Functional& f, double h,
                          std::size_t coords = 0, Rng* coord_rng = nullptr);

struct CaseResult {
    std::string name;
    std::size_t instances = 0;
    std::size_t coordinates = 0;
    double max_rel_err = 0;
    bool passed = false;
};

std::vector<std::string> case_names();

// Runs every case (or only those whose name contains `filter`).
std::vector<CaseResult> run_suite(const Options& opts, const std::string& filter = "");

}  // namespace sara::gradcheck
