#pragma once

#include <cmath>
#include <map>
#include <ostream>
#include <string>

#include <json.hpp>

#include "bafpn/errors.hpp"

namespace bafpn {

struct MetricsRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double align_err = 0.0;
  double wall_ms = 0.0;
  std::map<std::string, double> extra;
};

// Line-delimited JSON, one record per line. Wall time is measured and
// reported on the console but not serialized: the stream for a fixed seed is
// byte-identical across runs.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream& os) : os_(os) {}

  void write(const MetricsRecord& r) {
    if (!std::isfinite(r.loss) || !std::isfinite(r.align_err)) {
      throw ContractError("metrics record at step " + std::to_string(r.step) +
                          " has non-finite values");
    }
    nlohmann::ordered_json line;
    line["step"] = r.step;
    line["loss"] = r.loss;
    line["align_err"] = r.align_err;
    for (const auto& [k, v] : r.extra) {
      if (!std::isfinite(v)) {
        throw ContractError("metrics extra '" + k + "' is non-finite at step " +
                            std::to_string(r.step));
      }
      line[k] = v;
    }
    os_ << line.dump() << "\n";
  }

 private:
  std::ostream& os_;
};

}  // namespace bafpn
