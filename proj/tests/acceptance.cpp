// Acceptance suite: runs every verification criterion at its fixed tolerance
// and prints one pass/fail line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "rfa/verify.hpp"

#ifndef RFA_CLI_PATH
#error "RFA_CLI_PATH must point at the built binary"
#endif

namespace {

constexpr std::uint64_t kSeed = 42;

struct CriterionLine {
    std::string label;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

using rfa::CheckResult;

CriterionLine combine(const std::string& label, const std::vector<CheckResult>& results,
                      double seconds, double budget_seconds) {
    CriterionLine line;
    line.label = label;
    line.seconds = seconds;
    line.pass = rfa::all_pass(results);
    for (const CheckResult& r : results) {
        line.detail += (r.pass ? "" : "FAILED:") + r.name + "[" + r.detail + "] ";
    }
    if (budget_seconds > 0.0 && seconds > budget_seconds) {
        line.pass = false;
        line.detail += "runtime_exceeded(" + std::to_string(seconds) + "s > " +
                       std::to_string(budget_seconds) + "s) ";
    }
    return line;
}

template <typename Fn>
std::pair<std::vector<CheckResult>, double> timed(Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<CheckResult> results = fn();
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(results), seconds};
}

std::vector<CheckResult> pick(const std::vector<CheckResult>& results,
                              const std::vector<std::string>& names) {
    std::vector<CheckResult> out;
    for (const std::string& name : names) {
        for (const CheckResult& r : results) {
            if (r.name == name) {
                out.push_back(r);
            }
        }
    }
    return out;
}

}  // namespace

int main() {
    std::vector<CriterionLine> lines;

    {
        const auto [results, secs] = timed([] { return rfa::check_kernel_statistics(kSeed); });
        lines.push_back(combine("criterion 1: kernel unbiasedness",
                                pick(results, {"kernel-unbiasedness"}), secs, 120.0));
        lines.push_back(
            combine("criterion 2: variance law", pick(results, {"variance-law"}), secs, 120.0));
    }
    {
        rfa::RecurrenceOptions opt;
        opt.seed = kSeed;
        const auto [results, secs] = timed([&] { return rfa::check_recurrence(opt); });
        lines.push_back(combine("criterion 3: exact recurrence",
                                pick(results, {"recurrence-causal-cross"}), secs, 60.0));
        lines.push_back(
            combine("criterion 4: stateful carry", pick(results, {"stateful-carry"}), secs, 60.0));
        lines.push_back(combine("criterion 5: unnormalized consistency",
                                pick(results, {"unnormalized-consistency"}), secs, 60.0));
    }
    {
        const auto [results, secs] = timed([] { return rfa::check_gradients(kSeed); });
        lines.push_back(combine("criterion 6: gradient correctness", results, secs, 120.0));
    }
    {
        const auto [results, secs] = timed([] { return rfa::check_convergence(kSeed); });
        lines.push_back(combine("criterion 7: convergence in D", results, secs, 180.0));
    }
    {
        const auto [results, secs] = timed([] { return rfa::check_scaling(kSeed); });
        lines.push_back(combine("criterion 8: scaling trends",
                                pick(results, {"scaling-slopes", "memory-ratio"}), secs, 600.0));
    }
    {
        const auto [results, secs] = timed([] { return rfa::check_toy_training(kSeed); });
        lines.push_back(combine("criterion 9: toy trainability and gating", results, secs, 900.0));
    }
    {
        const auto start = std::chrono::steady_clock::now();
        const std::string cmd = std::string(RFA_CLI_PATH) +
                                " verify-all --seed 42 > /tmp/rfa_acceptance_verify_all.log 2>&1";
        const int status = std::system(cmd.c_str());
        const int code = WEXITSTATUS(status);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        CriterionLine line;
        line.label = "criterion 10: verify-all exits 0";
        line.pass = code == 0;
        line.seconds = secs;
        line.detail = "command='rfa verify-all --seed 42' exit=" + std::to_string(code);
        lines.push_back(line);
    }

    int failures = 0;
    for (const CriterionLine& line : lines) {
        std::printf("[%s] %s (%.1fs) %s\n", line.pass ? "PASS" : "FAIL", line.label.c_str(),
                    line.seconds, line.detail.c_str());
        if (!line.pass) {
            ++failures;
        }
    }
    std::printf("acceptance: %zu criteria, %d failed\n", lines.size(), failures);
    return failures == 0 ? 0 : 1;
}
