#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dms/model.hpp"

namespace dms {

/// Deterministic class-separable images. Each class owns a smooth random
/// template (a few low-frequency cosines per channel); samples add bounded
/// uniform noise and round to {0..255}. Labels are assigned round-robin.
std::vector<LabeledSample> synth_dataset(std::size_t count, const InputSpec& spec,
                                         std::uint64_t seed);

/// Loads every .ppm / .pgm file in `dir`, sorted by file name. A file's label
/// is the integer prefix of its name up to the first '_' (e.g. "3_cat.ppm").
std::vector<LabeledSample> load_image_directory(const std::filesystem::path& dir);

}  // namespace dms
