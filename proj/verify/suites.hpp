#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace spiro::verify {

struct CheckResult {
    std::string name;
    bool pass = false;
    double observed = 0;   // max error, or a count for exact checks
    double tolerance = 0;
    std::string detail;
};

struct SuiteReport {
    std::string name;
    std::vector<CheckResult> checks;
    double seconds = 0;

    bool pass() const;
    double max_observed() const;
    const CheckResult* find(const std::string& check) const;
};

struct VerifyOptions {
    std::uint64_t seed = 0;
    /// Test hook: one of fault_names(). The named suite perturbs a computed value before comparing.
    std::string inject_fault;
    std::size_t fft_cases = 112;
    std::filesystem::path scratch;  // empty: a fresh directory under the system temp dir
};

const std::vector<std::string>& suite_names();
const std::vector<std::string>& fault_names();

SuiteReport fft_suite(const VerifyOptions& opt);
SuiteReport gradient_suite(const VerifyOptions& opt);
SuiteReport frequency_identity_suite(const VerifyOptions& opt);
SuiteReport tci_identity_suite(const VerifyOptions& opt);
SuiteReport attention_graph_suite(const VerifyOptions& opt);
SuiteReport metric_suite(const VerifyOptions& opt);
SuiteReport roundtrip_suite(const VerifyOptions& opt);

/// Runs one suite by name; throws std::invalid_argument for an unknown name.
SuiteReport run_suite(const std::string& name, const VerifyOptions& opt);

void print_report(std::ostream& os, const SuiteReport& report);

}  // namespace spiro::verify
