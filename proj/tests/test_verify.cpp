#include <doctest.h>

#include "suites.hpp"

using namespace spiro::verify;

TEST_CASE("every suite passes clean and fails under its own fault") {
    for (const auto& name : suite_names()) {
        CAPTURE(name);
        VerifyOptions opt;
        const SuiteReport clean = run_suite(name, opt);
        CHECK(clean.pass());
        CHECK_FALSE(clean.checks.empty());
        opt.inject_fault = name;
        CHECK_FALSE(run_suite(name, opt).pass());
    }
    CHECK_THROWS_AS(run_suite("nope", {}), std::invalid_argument);
}

TEST_CASE("suite reports expose named checks") {
    const SuiteReport r = metric_suite({});
    REQUIRE(r.find("hand_cases") != nullptr);
    CHECK(r.find("hand_cases")->pass);
    CHECK(r.find("missing") == nullptr);
}
