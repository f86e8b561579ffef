#pragma once

#include <string>
#include <vector>

#include "omnifuse/model.hpp"

namespace omnifuse {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    bool all_pass = false;
    double tolerance = 0.0;
};

struct GradCheckOptions {
    std::size_t samples_per_tensor = 4; // coordinates probed per parameter
    double tolerance = 1e-4;
    double fd_step = 1e-5;
    std::uint64_t seed = 0;
    std::size_t max_params = 200000; // cost guard: larger models are refused
    /// Test hook: corrupt this group's analytic gradient so the audit must
    /// report a failure (negative control).
    std::string corrupt_group;
};

/// Central finite-difference audit over every trainable parameter group:
/// adapter, decoder (LoRA factors included when injected), and the special
/// tokens. Frozen encoders are exempt by design.
GradCheckReport grad_check(OmniModel& model, const GradCheckOptions& options);

} // namespace omnifuse
