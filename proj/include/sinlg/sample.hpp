#pragma once

#include <string>
#include <vector>

namespace sinlg {

// One response-selection instance: persona, context, candidate responses and
// their 0/1 labels.
struct MrsSample {
  std::vector<std::string> persona;
  std::vector<std::string> context;
  std::vector<std::string> candidates;
  std::vector<int> labels;

  // Index of the first positive candidate, or candidates.size() when none.
  std::size_t positive_index() const {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == 1) return i;
    return candidates.size();
  }
};

}  // namespace sinlg
