#pragma once

#include <cstddef>
#include <vector>

#include "echo/tree_encoding.hpp"

namespace echo {

struct MinerConfig {
    double min_support = 0.8;
    /// Compare support > min_support instead of >=.
    bool strict_support = false;
    /// Abort once more patterns than this are found; 0 disables the cap.
    std::size_t max_patterns = 0;
};

class PatternExplosion : public Error {
public:
    explicit PatternExplosion(std::size_t limit, std::string annotation_id = {})
        : Error("PatternExplosion",
                "more than " + std::to_string(limit) + " frequent patterns" +
                    (annotation_id.empty() ? std::string() : " for annotation '" + annotation_id + "'")),
          limit_(limit),
          annotation_id_(std::move(annotation_id)) {}

    std::size_t limit() const noexcept { return limit_; }
    const std::string& annotation_id() const noexcept { return annotation_id_; }

private:
    std::size_t limit_;
    std::string annotation_id_;
};

struct MinedPattern {
    Pattern pattern;
    /// Number of forest trees that contain the pattern.
    std::size_t support = 0;
};

/// Smallest per-tree count that satisfies the threshold for a forest of `n` trees.
std::size_t min_support_count(double min_support, std::size_t n, bool strict);

/// All frequent embedded subtrees of `forest` under per-tree (distinct)
/// support, in ascending item order. Uses vertical scope lists and
/// equivalence-class extension along the rightmost path.
std::vector<MinedPattern> mine_patterns_with_support(const std::vector<EncodedTree>& forest,
                                                     const MinerConfig& config);

std::vector<Pattern> mine_patterns(const std::vector<EncodedTree>& forest, const MinerConfig& config);

}  // namespace echo
