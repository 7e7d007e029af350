#pragma once

#include <vector>

namespace hks {

// One labelled example. Features are a flat real vector; the label is a class
// index in [0, C).
struct Sample {
  std::vector<double> x;
  int label = 0;
};

}  // namespace hks
