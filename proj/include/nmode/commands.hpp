#pragma once

// Command layer behind the nmode executable: each command validates its
// inputs, runs the corresponding computation and returns a JSON result
// envelope. Tabular payloads go to CSV side files; grid fields can also be
// written as a raw little-endian float64 block behind a JSON header line.

#include <json.hpp>

#include <string>
#include <vector>

#include "nmode/continuation.hpp"
#include "nmode/dynamics.hpp"
#include "nmode/lattice.hpp"
#include "nmode/potential.hpp"
#include "nmode/stationary.hpp"

namespace nmode::cli {

using json = nlohmann::json;

inline constexpr const char* kSchemaVersion = "1";
inline constexpr const char* kArtifactVersion = "nmode 0.1.0";

/// Command failure with a machine-readable kind; main() turns these into
/// error envelopes and a nonzero exit status.
class CommandError : public std::runtime_error {
 public:
  CommandError(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

/// Physical-unit inputs; the reduced defaults are lambda_d = 0, beta = 1,
/// hbar = 1, under which eta and eps*c coincide.
struct Units {
  bool raw = false;
  double lambda_d = 0.0;
  double beta = 1.0;
  double hbar = 1.0;
};

json make_envelope(const std::string& command, json parameters, json payload);
json make_error_envelope(const std::string& command, const std::string& kind, const std::string& message);

/// "parabola:<vmin>:<a>" or "table:<csv path>" (two columns r, f).
WellProfile parse_profile(const std::string& text);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows,
               const std::vector<std::string>& text_column = {});

json cmd_spectrum(int d, const Units& units, const std::string& method);
json cmd_solve(int d, int sigma, double eta, const std::string& seed_selector, double tol);
json cmd_continue(int d, int sigma, double eta_min, double eta_max, const StepControl& step,
                  const std::string& branches_csv, const std::string& events_csv, int threads);
json cmd_dynamics(int d, const Units& units, double epsilon_c, int sigma, double t0, double t1,
                  const std::string& initial, int samples, double rel_tol, double abs_tol,
                  const std::string& csv_path);
json cmd_reconstruct(int d, int sigma, double eta, const std::string& state_selector,
                     const std::string& profile_text, double spacing, double hbar, int grid_samples,
                     double grid_margin, const std::string& format, const std::string& out_path);
json cmd_agmon(const std::string& profile_text, double spacing);

}  // namespace nmode::cli
