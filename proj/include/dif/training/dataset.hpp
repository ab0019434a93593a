#pragma once

#include "dif/geometry/sampling.hpp"
#include "dif/losses/losses.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dif::training {

losses::SampleSet to_sample_set(const geometry::ShapeSamples& s);

struct Dataset {
  std::vector<losses::SampleSet> shapes;
  std::vector<std::string> ids;  // file stems
};

/// Every *.difs cache in a directory, ordered by file name.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dif::training
