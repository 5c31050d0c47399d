#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Brute-force reference implementations and the kernel verification suite.
// Every reference is an independent nested-loop computation at double
// precision; none of them call the fast kernels they check.
namespace burstforge::selfcheck {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

std::vector<std::string> check_names();

// Runs every registered check with `instances` random cases each. When
// `perturb` names a check, a small error is injected into that check's
// kernel output so the harness itself can be validated.
std::vector<CheckResult> run_all(uint64_t seed, int instances = 100,
                                 const std::string& perturb = "");

}  // namespace burstforge::selfcheck
