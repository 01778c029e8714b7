// Acceptance suite: one criterion per line, nonzero exit on any failure.
#include "msvt/selfcheck.hpp"

#include <cstdio>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    using msvt::selfcheck::CheckResult;
    const std::string filter = argc > 1 ? argv[1] : "";

    struct Criterion {
        const char* label;
        CheckResult (*run)();
    };
    const std::vector<Criterion> criteria = {
        {"1 hash-table equivalence", msvt::selfcheck::check_hash_gather_equivalence},
        {"2 window partition", msvt::selfcheck::check_window_partition},
        {"3 FPS equivalence", msvt::selfcheck::check_fps_oracle},
        {"4 chessboard coverage", msvt::selfcheck::check_cbs_coverage},
        {"5 attention oracle", msvt::selfcheck::check_attention_oracle},
        {"6 full-block oracle", msvt::selfcheck::check_block_oracle},
        {"7 vote math", msvt::selfcheck::check_vote_math},
        {"8 center-voting end-to-end", msvt::selfcheck::check_voting_end_to_end},
        {"9 efficiency trend", msvt::selfcheck::check_cbs_efficiency},
        {"10 determinism", msvt::selfcheck::check_determinism},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        if (!filter.empty() && std::string(criterion.label).find(filter) == std::string::npos) {
            continue;
        }
        const CheckResult result = criterion.run();
        failures += result.passed ? 0 : 1;
        std::printf("[%s] criterion %-28s (%.2fs) %s\n", result.passed ? "PASS" : "FAIL",
                    criterion.label, result.seconds, result.detail.c_str());
        std::fflush(stdout);
    }
    if (failures > 0) {
        std::printf("%d criterion(s) FAILED\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
