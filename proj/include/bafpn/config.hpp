#pragma once

#include <string>

#include "bafpn/neck.hpp"

namespace bafpn {

// Parses the JSON run configuration. Unknown keys are rejected; absent
// optional keys take the NeckConfig/ExperimentConfig defaults. The returned
// config has passed validate_neck_config.
NeckConfig load_config(const std::string& path);
NeckConfig parse_config_text(const std::string& text);

}  // namespace bafpn
