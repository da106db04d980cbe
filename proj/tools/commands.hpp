#ifndef LEARN_COMMANDS_HPP
#define LEARN_COMMANDS_HPP

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "run_config.hpp"

namespace learn {

/// A contract the pipeline promises (frozen backbone, clean preservation)
/// did not hold. Maps to exit code 2.
struct InvariantViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunLayout {
  std::filesystem::path data, backbone, learn, eval;
  explicit RunLayout(const std::filesystem::path& root)
      : data(root / "data"), backbone(root / "backbone"), learn(root / "learn"),
        eval(root / "eval") {}
};

/// Each command writes its outputs, the resolved config and the hashes of its
/// inputs into its own stage directory under `config.root`.
void cmd_generate_data(const RunConfig& config, std::ostream& log);
void cmd_train_backbone(const RunConfig& config, std::ostream& log);
void cmd_train_learn(const RunConfig& config, std::ostream& log);
std::vector<ResultsTable> cmd_evaluate(const RunConfig& config, std::ostream& log);
void cmd_report(const RunConfig& config, std::ostream& out);

}  // namespace learn

#endif  // LEARN_COMMANDS_HPP
