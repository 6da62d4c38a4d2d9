#pragma once

// Experiment driver: resolves a run configuration, finds the MAP point, builds
// the metric, runs the chains and writes chain.csv, diagnostics.json and plotdata/.

#include "pdeinv/diagnostics.hpp"
#include "pdeinv/map_optimizer.hpp"
#include "pdeinv/metric.hpp"
#include "pdeinv/samplers.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pdeinv {

struct RunConfig {
  std::string preset;  // informational once resolved
  int mesh_elements = 1;
  double s = 0.6;
  double alpha = 0.1;
  double noise_std = 0.1;
  double biot = kDefaultBiot;
  std::vector<double> observation_locations{1.0};
  std::vector<double> data;  // empty: synthesize from the truth field
  std::string sampler = "srmhmc";
  double step_size = 0.02;
  int leapfrog_steps = 100;
  int n_samples = 5100;  // including burn-in
  int burn_in = 100;
  std::string metric = "auto";  // auto | exact | fixed_gn | fixed_full | fixed_lowrank
  int rank = 20;
  int oversample = 0;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int chains = 1;
  std::string execution = "parallel";  // parallel | serial

  void validate() const;
  /// Metric after resolving "auto" against the sampler.
  std::string resolved_metric() const;
};

/// Seed stream offsets from the master seed.
inline constexpr std::uint64_t kDataSeedOffset = 0;
inline constexpr std::uint64_t kRsvdSeedOffset = 1;
inline constexpr std::uint64_t kChainSeedOffset = 1000;

std::vector<std::string> preset_names();
/// Reference configurations; the step size and trajectory length depend on the sampler.
RunConfig preset_config(const std::string& name, const std::string& sampler = "");

nlohmann::json to_json(const RunConfig& config);
/// Strict parse: unknown keys and wrong types throw std::invalid_argument.
/// A "preset" key seeds the defaults before the other keys are applied.
RunConfig config_from_json(const nlohmann::json& j, const std::optional<std::string>& preset_override = {},
                           const std::optional<std::string>& sampler_override = {});
nlohmann::json load_json(const std::filesystem::path& path);

/// Field used to synthesize data: sin(pi x) + cos(2 pi x) / 2.
Vector truth_field(const Mesh& mesh);

/// Observations from config.data, or synthesized from the truth field with seeded noise.
ObservationSet make_observations(const RunConfig& config, const Mesh& mesh);

/// Mesh, prior, observations and MAP point shared by all chains of a run.
struct Problem {
  Mesh mesh{1};
  PriorBasis prior;
  ObservationSet obs;
  Vector truth;
  Vector u_map;
  MapResult map;
  std::int64_t map_solves = 0;
};

Problem setup_problem(const RunConfig& config);

struct ChainOutput {
  Chain chain;
  std::uint64_t seed = 0;
  std::int64_t metric_solves = 0;
  std::optional<Vector> low_rank_values;
};

struct RunResult {
  Problem problem;
  std::vector<ChainOutput> chains;
};

/// Builds the metric (per chain) and runs `config.chains` chains.
RunResult execute(const RunConfig& config);
RunResult execute(const RunConfig& config, Problem problem);

/// Writes artifacts for every chain under config.output_dir (chain_<k>/ when chains > 1).
void write_outputs(const RunConfig& config, const RunResult& result);

/// Column names of chain.csv for N parameters.
std::vector<std::string> chain_csv_header(Eigen::Index n);
void write_chain_csv(const std::filesystem::path& path, const Chain& chain);

nlohmann::json chain_diagnostics(const RunConfig& config, const Problem& problem, const ChainOutput& out);

struct GridResult {
  std::vector<double> u1, u2;
  Matrix log_post;  // log_post(i, j) at (u1[i], u2[j])
  std::int64_t solves = 0;
};

/// resolution x resolution log-posterior values over [a, b] x [c, d]; N must be 2.
GridResult posterior_grid(const RunConfig& config, const std::array<double, 4>& range, int resolution);
void write_grid_csv(const std::filesystem::path& path, const GridResult& grid);

std::string format_double(double v);

}  // namespace pdeinv
