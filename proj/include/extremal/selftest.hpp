#ifndef EXTREMAL_SELFTEST_HPP
#define EXTREMAL_SELFTEST_HPP

#include <cstdint>
#include <ostream>
#include <string>

namespace extremal {

struct SuiteReport {
    bool ok = true;
    int checks = 0;
    std::string first_failure;

    void count() { ++checks; }
    void fail(const std::string& what) {
        if (ok) first_failure = what;
        ok = false;
    }
};

// Finite-difference integrity of every differentiable op and every zoo model
// over `cases` seeded random inputs (rel < 1e-3 on 99% of coordinates,
// abs < 1e-5 on the rest).
SuiteReport gradient_suite(std::uint64_t seed, int cases);

// Masking guarantees of the hard max-convolution on random coarse masks:
// expansion dominates the upsampled parameters, saturated parameters stay
// saturated, and the output never changes faster than the sampled kernel.
SuiteReport lemma_suite(std::uint64_t seed, int mask_count);

// Soft-max pooling limits: mean as T -> inf, max as T -> 0, bounded between
// both and monotone in T; the near-zero-temperature expansion matches the
// hard max-convolution reference.
SuiteReport smax_suite(std::uint64_t seed);

// Runs the three suites, printing one line per suite and the first
// counterexample on failure. Returns 0 when everything holds.
int run_selftest(std::ostream& out, std::uint64_t seed = 7);

} // namespace extremal

#endif
