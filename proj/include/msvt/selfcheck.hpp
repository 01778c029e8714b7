#pragma once

#include <string>
#include <vector>

namespace msvt::selfcheck {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;   // failure explanation or a short success note
    double seconds = 0.0;
};

// Oracle-equivalence and invariant suite. Each check is self-seeded and
// deterministic.
CheckResult check_hash_gather_equivalence();
CheckResult check_window_partition();
CheckResult check_fps_oracle();
CheckResult check_cbs_coverage();
CheckResult check_attention_oracle();
CheckResult check_block_oracle();
CheckResult check_vote_math();
CheckResult check_voting_end_to_end();
CheckResult check_cbs_efficiency();   // heavy: ~50k-voxel scene, timed sweep
CheckResult check_determinism();

// Integrity of a weights container against a config (shape + finiteness).
CheckResult check_weights_file(const std::string& path, const std::string& config_path);

// Runs every check whose name contains `filter` (empty = all).
std::vector<CheckResult> run_suite(const std::string& filter = "");

}  // namespace msvt::selfcheck
