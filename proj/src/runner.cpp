#include "pdeinv/runner.hpp"

#include "pdeinv/map_optimizer.hpp"

#include <omp.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

namespace pdeinv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_hmc(const std::string& sampler) { return sampler == "srmhmc" || sampler == "rmhmc"; }

std::vector<double> uniform_locations(int count, double spacing) {
  std::vector<double> x;
  for (int j = 0; j < count; ++j) x.push_back(j * spacing);
  return x;
}

template <class T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config key '" + key + "': " + e.what());
  }
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void RunConfig::validate() const {
  if (mesh_elements < 1) throw std::invalid_argument("mesh_elements must be at least 1");
  if (!(s > 0.5)) throw std::invalid_argument("s must exceed 1/2");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (!(noise_std > 0.0)) throw std::invalid_argument("noise_std must be positive");
  if (!(biot > 0.0)) throw std::invalid_argument("biot must be positive");
  if (observation_locations.empty()) throw std::invalid_argument("at least one observation location is required");
  for (double x : observation_locations)
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("observation locations must lie in [0, 1]");
  if (!data.empty() && data.size() != observation_locations.size())
    throw std::invalid_argument("data and observation_locations differ in length");
  const SamplerKind kind = parse_sampler_kind(sampler);
  ChainConfig cc{kind, step_size, leapfrog_steps, n_samples, burn_in, seed};
  cc.validate();
  const std::string m = resolved_metric();
  if (kind == SamplerKind::srmhmc) {
    parse_fixed_metric_kind(m);
  } else if (m != "exact") {
    throw std::invalid_argument(sampler + " uses the position-dependent metric; set metric to exact or auto");
  }
  if (m == "fixed_lowrank" && (rank < 1 || oversample < 0 || rank + oversample > mesh_elements + 1))
    throw std::invalid_argument("low-rank metric needs 1 <= rank and rank + oversample <= N");
  if (chains < 1) throw std::invalid_argument("chains must be at least 1");
  if (execution != "parallel" && execution != "serial") throw std::invalid_argument("execution must be parallel or serial");
  if (output_dir.empty()) throw std::invalid_argument("output_dir must not be empty");
}

std::string RunConfig::resolved_metric() const {
  if (metric != "auto") return metric;
  return sampler == "srmhmc" ? "fixed_gn" : "exact";
}

std::vector<std::string> preset_names() { return {"two-param-A", "two-param-B", "two-param-C", "multi-1025"}; }

RunConfig preset_config(const std::string& name, const std::string& sampler_in) {
  RunConfig c;
  c.preset = name;
  if (name == "multi-1025") {
    c.sampler = sampler_in.empty() ? "srmhmc" : sampler_in;
    c.mesh_elements = 1024;
    c.s = 0.6;
    c.alpha = 10.0;
    c.noise_std = 0.01;
    c.observation_locations = uniform_locations(64, 1.0 / 64.0);
    c.step_size = 0.1;
    c.leapfrog_steps = 16;
    c.n_samples = 5100;
    c.burn_in = 100;
    return c;
  }
  c.sampler = sampler_in.empty() ? "srmhmc" : sampler_in;
  c.mesh_elements = 1;
  c.s = 0.6;
  c.observation_locations = {1.0};
  c.n_samples = 5100;
  c.burn_in = 100;
  c.leapfrog_steps = 100;
  if (name == "two-param-A") {
    c.alpha = 0.1;
    c.noise_std = 0.1;
    c.step_size = is_hmc(c.sampler) ? 0.02 : 1.0;
  } else if (name == "two-param-B") {
    c.alpha = 1.0;
    c.noise_std = 0.01;
    c.step_size = is_hmc(c.sampler) ? 0.04 : 1.0;
  } else if (name == "two-param-C") {
    c.alpha = 0.1;
    c.noise_std = 0.01;
    c.step_size = is_hmc(c.sampler) ? 0.02 : 0.7;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["mesh_elements"] = c.mesh_elements;
  j["s"] = c.s;
  j["alpha"] = c.alpha;
  j["noise_std"] = c.noise_std;
  j["biot"] = c.biot;
  j["observation_locations"] = c.observation_locations;
  j["data"] = c.data;
  j["sampler"] = c.sampler;
  j["step_size"] = c.step_size;
  j["leapfrog_steps"] = c.leapfrog_steps;
  j["n_samples"] = c.n_samples;
  j["burn_in"] = c.burn_in;
  j["metric"] = c.metric;
  j["rank"] = c.rank;
  j["oversample"] = c.oversample;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["chains"] = c.chains;
  j["execution"] = c.execution;
  return j;
}

RunConfig config_from_json(const json& j, const std::optional<std::string>& preset_override,
                           const std::optional<std::string>& sampler_override) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  static const std::set<std::string> known = {
      "preset", "mesh_elements", "s",     "alpha",      "noise_std", "biot",   "observation_locations",
      "data",   "sampler",       "step_size", "leapfrog_steps", "n_samples", "burn_in", "metric",
      "rank",   "oversample",    "seed",  "output_dir", "chains",    "execution"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");

  std::string preset = preset_override.value_or(j.contains("preset") ? get_as<std::string>(j["preset"], "preset") : "");
  std::string sampler = sampler_override.value_or(j.contains("sampler") ? get_as<std::string>(j["sampler"], "sampler") : "");
  if (!sampler.empty()) parse_sampler_kind(sampler);

  RunConfig c = preset.empty() ? RunConfig{} : preset_config(preset, sampler);
  if (!sampler.empty()) c.sampler = sampler;
  c.preset = preset;

  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = get_as<std::decay_t<decltype(field)>>(j[key], key);
  };
  take("mesh_elements", c.mesh_elements);
  take("s", c.s);
  take("alpha", c.alpha);
  take("noise_std", c.noise_std);
  take("biot", c.biot);
  take("observation_locations", c.observation_locations);
  take("data", c.data);
  // A sampler override invalidates step settings written for another sampler.
  const bool keep_steps = !sampler_override || !j.contains("sampler") ||
                          get_as<std::string>(j["sampler"], "sampler") == *sampler_override;
  if (keep_steps) {
    take("step_size", c.step_size);
    take("leapfrog_steps", c.leapfrog_steps);
    take("metric", c.metric);
  }
  take("n_samples", c.n_samples);
  take("burn_in", c.burn_in);
  take("rank", c.rank);
  take("oversample", c.oversample);
  take("seed", c.seed);
  take("output_dir", c.output_dir);
  take("chains", c.chains);
  take("execution", c.execution);
  return c;
}

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
}

Vector truth_field(const Mesh& mesh) {
  Vector u(mesh.n_nodes());
  for (Eigen::Index i = 0; i < mesh.n_nodes(); ++i) {
    const double x = mesh.node(i);
    u[i] = std::sin(std::numbers::pi * x) + 0.5 * std::cos(2.0 * std::numbers::pi * x);
  }
  return u;
}

ObservationSet make_observations(const RunConfig& config, const Mesh& mesh) {
  ObservationSet obs;
  obs.locations = config.observation_locations;
  obs.noise_std = config.noise_std;
  if (config.data.empty()) {
    SolveCounter counter;
    const Vector clean = observe(mesh, solve_forward(mesh, truth_field(mesh), config.biot, counter), obs.locations);
    std::mt19937_64 rng(config.seed + kDataSeedOffset);
    obs.data = clean + config.noise_std * standard_normal(clean.size(), rng);
  } else {
    obs.data = Eigen::Map<const Vector>(config.data.data(), static_cast<Eigen::Index>(config.data.size()));
  }
  obs.validate();
  return obs;
}

Problem setup_problem(const RunConfig& config) {
  config.validate();
  Problem p{Mesh(config.mesh_elements), {}, {}, {}, {}, {}, 0};
  p.prior = build_prior(p.mesh, config.s, config.alpha);
  p.truth = truth_field(p.mesh);
  p.obs = make_observations(config, p.mesh);

  DerivativeWorkspace ws(p.mesh, p.obs, config.biot);
  MapOptions opt;
  opt.exec = config.execution == "serial" ? Execution::serial : Execution::parallel;
  p.map = find_map(ws, p.prior, Vector::Zero(p.mesh.n_nodes()), opt);
  p.u_map = p.map.u;
  p.map_solves = ws.solves();
  return p;
}

RunResult execute(const RunConfig& config) { return execute(config, setup_problem(config)); }

RunResult execute(const RunConfig& config, Problem problem) {
  config.validate();
  RunResult result;
  result.problem = std::move(problem);
  const Problem& p = result.problem;
  const SamplerKind kind = parse_sampler_kind(config.sampler);
  const std::string metric_name = config.resolved_metric();
  // Nested parallelism is avoided: either chains or kernels run in parallel.
  const Execution exec =
      config.execution == "serial" || config.chains > 1 ? Execution::serial : Execution::parallel;

  result.chains.resize(static_cast<std::size_t>(config.chains));
  std::vector<std::string> errors(result.chains.size());

#pragma omp parallel for schedule(dynamic, 1) if (config.chains > 1)
  for (int c = 0; c < config.chains; ++c) {
    ChainOutput& out = result.chains[static_cast<std::size_t>(c)];
    try {
      out.seed = config.seed + kChainSeedOffset + static_cast<std::uint64_t>(c);
      PosteriorModel model(p.mesh, p.obs, config.biot, p.prior, exec);
      std::optional<Metric> fixed;
      if (kind == SamplerKind::srmhmc) {
        FixedMetricSpec spec;
        spec.kind = parse_fixed_metric_kind(metric_name);
        spec.rank = config.rank;
        spec.oversample = config.oversample;
        spec.seed = config.seed + kRsvdSeedOffset;
        fixed = build_fixed(model.workspace(), p.prior, p.u_map, spec, exec);
        if (fixed->kind() == MetricKind::fixed_low_rank) out.low_rank_values = fixed->low_rank_values();
      }
      out.metric_solves = model.solves();
      ChainConfig cc{kind, config.step_size, config.leapfrog_steps, config.n_samples, config.burn_in, out.seed};
      const std::int64_t before = model.solves();
      out.chain = run_chain(cc, model, p.u_map, fixed ? &*fixed : nullptr);
      if (!out.chain.solve_counts.empty() && out.chain.solve_counts.back() != model.solves() - before)
        throw std::logic_error("solve accounting mismatch");
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(c)] = e.what();
    }
  }
  for (std::size_t c = 0; c < errors.size(); ++c)
    if (!errors[c].empty()) throw std::runtime_error("chain " + std::to_string(c) + ": " + errors[c]);
  return result;
}

std::vector<std::string> chain_csv_header(Eigen::Index n) {
  std::vector<std::string> h{"index"};
  for (Eigen::Index i = 1; i <= n; ++i) h.push_back("u_" + std::to_string(i));
  h.insert(h.end(), {"log_posterior", "accepted", "cumulative_solves"});
  return h;
}

void write_chain_csv(const fs::path& path, const Chain& chain) {
  const Eigen::Index n = chain.samples.empty() ? 0 : chain.samples.front().size();
  std::string text;
  const auto header = chain_csv_header(n);
  for (std::size_t i = 0; i < header.size(); ++i) text += (i ? "," : "") + header[i];
  text += '\n';
  for (std::size_t k = 0; k < chain.size(); ++k) {
    text += std::to_string(k);
    for (Eigen::Index i = 0; i < n; ++i) text += "," + format_double(chain.samples[k][i]);
    text += "," + format_double(chain.log_posteriors[k]);
    text += "," + std::to_string(static_cast<int>(chain.accepted[k]));
    text += "," + std::to_string(chain.solve_counts[k]);
    text += '\n';
  }
  write_text(path, text);
}

namespace {

std::vector<Vector> retained_samples(const Chain& chain) {
  return {chain.samples.begin() + chain.burn_in, chain.samples.end()};
}

// Coordinates shown in trace and ACF plots: all of them for small N, else the two at each end.
std::vector<Eigen::Index> plotted_coordinates(Eigen::Index n) {
  if (n <= 4) {
    std::vector<Eigen::Index> all;
    for (Eigen::Index i = 0; i < n; ++i) all.push_back(i);
    return all;
  }
  return {0, 1, n - 2, n - 1};
}

constexpr int kAcfLags = 100;

}  // namespace

json chain_diagnostics(const RunConfig& config, const Problem& problem, const ChainOutput& out) {
  const Chain& chain = out.chain;
  const auto kept = retained_samples(chain);
  const Eigen::Index n = problem.mesh.n_nodes();

  json j;
  j["acceptance_rate"] = chain.acceptance_rate;
  j["retained_acceptance_rate"] = chain.retained_acceptance_rate();
  j["n_samples"] = chain.size();
  j["burn_in"] = chain.burn_in;
  j["chain_seed"] = out.seed;

  std::vector<double> ess(static_cast<std::size_t>(n));
  std::vector<double> iact(static_cast<std::size_t>(n));
  json acf = json::array();
  const int lags = std::min<int>(kAcfLags, static_cast<int>(kept.size()) - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::vector<double> series = chain.retained(i);
    ess[static_cast<std::size_t>(i)] = effective_sample_size(series);
    iact[static_cast<std::size_t>(i)] = integrated_autocorrelation_time(series);
    acf.push_back(autocorrelation(series, lags));
  }
  j["ess"] = ess;
  j["iact"] = iact;
  j["acf"] = acf;

  j["mean"] = to_std(pointwise_mean(kept));
  j["std"] = to_std(pointwise_std(kept));
  if (kept.size() >= 40) {
    const Band band = credible_band(kept, 0.95);
    j["band_95"] = {{"lower", to_std(band.lower)}, {"upper", to_std(band.upper)}};
  }
  j["map"] = {{"u", to_std(problem.u_map)},
              {"iterations", problem.map.iterations},
              {"gradient_norm", problem.map.gradient_norm},
              {"objective", problem.map.objective}};
  j["truth"] = to_std(problem.truth);
  j["data"] = to_std(problem.obs.data);

  const SolveReport r = solve_report(problem.map_solves, out.metric_solves, chain.solve_counts);
  j["solves"] = {{"map", r.map}, {"metric", r.metric}, {"sampling", r.sampling},
                 {"total", r.total}, {"sampling_per_sample", r.per_sample}};
  if (!chain.newton_iterations.empty()) {
    int worst = 0;
    double mean = 0.0;
    for (int k : chain.newton_iterations) {
      worst = std::max(worst, k);
      mean += k;
    }
    j["newton"] = {{"stages", chain.newton_iterations.size()},
                   {"max_iterations", worst},
                   {"mean_iterations", mean / static_cast<double>(chain.newton_iterations.size())}};
  }
  if (out.low_rank_values) j["low_rank_values"] = to_std(*out.low_rank_values);

  // Resolved configuration: re-running with it reproduces chain.csv.
  RunConfig resolved = config;
  resolved.data = to_std(problem.obs.data);
  j["config"] = to_json(resolved);
  j["seed"] = config.seed;
  return j;
}

void write_outputs(const RunConfig& config, const RunResult& result) {
  const Problem& p = result.problem;
  for (std::size_t c = 0; c < result.chains.size(); ++c) {
    const ChainOutput& out = result.chains[c];
    const fs::path dir = result.chains.size() == 1 ? fs::path(config.output_dir)
                                                    : fs::path(config.output_dir) / ("chain_" + std::to_string(c));
    fs::create_directories(dir / "plotdata");
    write_chain_csv(dir / "chain.csv", out.chain);
    const json diag = chain_diagnostics(config, p, out);
    write_text(dir / "diagnostics.json", diag.dump(2) + "\n");

    const Chain& chain = out.chain;
    const auto kept = retained_samples(chain);
    const Eigen::Index n = p.mesh.n_nodes();

    // summary.csv: x, mean, lower, upper, truth, map
    {
      const Vector mean = pointwise_mean(kept);
      std::optional<Band> band;
      if (kept.size() >= 40) band = credible_band(kept, 0.95);
      std::string text = "x,mean,lower,upper,truth,map\n";
      for (Eigen::Index i = 0; i < n; ++i) {
        text += format_double(p.mesh.node(i)) + "," + format_double(mean[i]) + ",";
        text += band ? format_double(band->lower[i]) + "," + format_double(band->upper[i]) : std::string("nan,nan");
        text += "," + format_double(p.truth[i]) + "," + format_double(p.u_map[i]) + "\n";
      }
      write_text(dir / "plotdata" / "summary.csv", text);
    }
    const auto coords = plotted_coordinates(n);
    // trace.csv: index, selected coordinates over the whole chain
    {
      std::string text = "index";
      for (auto i : coords) text += ",u_" + std::to_string(i + 1);
      text += "\n";
      for (std::size_t k = 0; k < chain.size(); ++k) {
        text += std::to_string(k);
        for (auto i : coords) text += "," + format_double(chain.samples[k][i]);
        text += "\n";
      }
      write_text(dir / "plotdata" / "trace.csv", text);
    }
    // acf.csv: lag, selected coordinates over retained samples
    {
      const int lags = std::min<int>(kAcfLags, static_cast<int>(kept.size()) - 1);
      std::vector<std::vector<double>> acfs;
      for (auto i : coords) acfs.push_back(autocorrelation(chain.retained(i), lags));
      std::string text = "lag";
      for (auto i : coords) text += ",u_" + std::to_string(i + 1);
      text += "\n";
      for (int l = 0; l <= lags; ++l) {
        text += std::to_string(l);
        for (const auto& a : acfs) text += "," + format_double(a[static_cast<std::size_t>(l)]);
        text += "\n";
      }
      write_text(dir / "plotdata" / "acf.csv", text);
    }
    if (out.low_rank_values) {
      std::string text = "index,value\n";
      for (Eigen::Index k = 0; k < out.low_rank_values->size(); ++k)
        text += std::to_string(k + 1) + "," + format_double((*out.low_rank_values)[k]) + "\n";
      write_text(dir / "plotdata" / "low_rank_spectrum.csv", text);
    }
  }
}

GridResult posterior_grid(const RunConfig& config, const std::array<double, 4>& range, int resolution) {
  if (config.mesh_elements != 1) throw std::invalid_argument("posterior grid needs exactly two parameters");
  if (resolution < 2) throw std::invalid_argument("grid resolution must be at least 2");
  if (!(range[1] > range[0] && range[3] > range[2])) throw std::invalid_argument("grid range must be increasing");
  config.validate();
  const Mesh mesh(config.mesh_elements);
  const PriorBasis prior = build_prior(mesh, config.s, config.alpha);
  const ObservationSet obs = make_observations(config, mesh);

  GridResult g;
  for (int i = 0; i < resolution; ++i) {
    g.u1.push_back(range[0] + (range[1] - range[0]) * i / (resolution - 1));
    g.u2.push_back(range[2] + (range[3] - range[2]) * i / (resolution - 1));
  }
  g.log_post.resize(resolution, resolution);
  SolveCounter counter;
  for (int i = 0; i < resolution; ++i) {
    for (int k = 0; k < resolution; ++k) {
      const Vector u{{g.u1[static_cast<std::size_t>(i)], g.u2[static_cast<std::size_t>(k)]}};
      try {
        g.log_post(i, k) = log_posterior(mesh, u, obs, config.biot, prior, counter);
      } catch (const std::domain_error&) {
        g.log_post(i, k) = -std::numeric_limits<double>::infinity();
      }
    }
  }
  g.solves = counter.solves;
  return g;
}

void write_grid_csv(const fs::path& path, const GridResult& grid) {
  std::string text = "u_1,u_2,log_posterior\n";
  for (std::size_t i = 0; i < grid.u1.size(); ++i)
    for (std::size_t k = 0; k < grid.u2.size(); ++k)
      text += format_double(grid.u1[i]) + "," + format_double(grid.u2[k]) + "," +
              format_double(grid.log_post(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) + "\n";
  write_text(path, text);
}

}  // namespace pdeinv
