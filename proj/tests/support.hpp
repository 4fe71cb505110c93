#pragma once

#include <memory>
#include <string>

#include "droopguard/config.hpp"

namespace droopguard::fixtures {

inline RunConfig preset(const std::string& name) {
  RunConfig c = load_config(std::string(DROOPGUARD_PRESET_DIR) + "/" + name + ".ini");
  finalize(c);
  return c;
}

inline std::shared_ptr<const FeederModel> ieee37() {
  static const auto m = std::make_shared<const FeederModel>(
      load_feeder(std::string(DROOPGUARD_DATA_DIR) + "/feeders/ieee37_balanced.feeder"));
  return m;
}

inline std::shared_ptr<const FeederModel> two_bus() {
  static const auto m = std::make_shared<const FeederModel>(
      load_feeder(std::string(DROOPGUARD_DATA_DIR) + "/feeders/two_bus.feeder"));
  return m;
}

}  // namespace droopguard::fixtures
