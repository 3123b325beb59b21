#pragma once

#include <string>

#include "motret/model.hpp"

namespace motret {

// Versioned binary: config JSON, vocabularies, teacher state, all weight
// tensors (f32, registration order), trailing CRC-32.
void save_checkpoint(const RetrievalModel& model, const std::string& path);
RetrievalModel load_checkpoint(const std::string& path);

}  // namespace motret
